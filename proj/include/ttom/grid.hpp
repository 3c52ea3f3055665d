#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ttom {

/// Latent grid extents: temporal frames, rows, columns.
struct LatentDims {
    int tau = 4;
    int h = 8;
    int w = 8;

    std::size_t cells() const noexcept {
        return static_cast<std::size_t>(tau) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    std::size_t frame_cells() const noexcept {
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    bool operator==(const LatentDims&) const = default;
};

/// Dense (tau, h, w) grid stored row-major with the frame index outermost.
template <typename T>
class Grid3 {
public:
    Grid3() = default;
    explicit Grid3(LatentDims dims, T fill = T{}) : dims_(dims), data_(dims.cells(), fill) {}

    const LatentDims& dims() const noexcept { return dims_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t index(int t, int r, int c) const noexcept {
        return (static_cast<std::size_t>(t) * dims_.h + static_cast<std::size_t>(r)) * dims_.w +
               static_cast<std::size_t>(c);
    }

    T& at(int t, int r, int c) { return data_[index(t, r, c)]; }
    const T& at(int t, int r, int c) const { return data_[index(t, r, c)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    bool operator==(const Grid3&) const = default;

private:
    LatentDims dims_{};
    std::vector<T> data_;
};

using RealGrid = Grid3<double>;
using BinaryGrid = Grid3<unsigned char>;

inline void require_same_shape(const LatentDims& a, const LatentDims& b, const char* what) {
    if (!(a == b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

}  // namespace ttom
