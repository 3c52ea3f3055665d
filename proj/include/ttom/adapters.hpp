#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ttom/tape.hpp"

namespace ttom {

enum class Projection { Q = 0, K = 1, V = 2, O = 3 };
inline constexpr int kProjectionCount = 4;
const char* projection_name(Projection p) noexcept;

/// Low-rank update for one projection: y = x W + (x A) B / rank.
struct LowRankFactor {
    ad::Matrix down;  // A: (d, r)
    ad::Matrix up;    // B: (r, d)

    bool operator==(const LowRankFactor& o) const { return down == o.down && up == o.up; }
};

/// Low-rank adapters on the Q/K/V/O projections of every cross-attention block.
///
/// Factors are laid out block-major: (block 0: Q, K, V, O), (block 1: ...),
/// and flatten() emits A then B for each factor, both row-major. This is the
/// declaration order used by every serialized form.
class AdapterSet {
public:
    AdapterSet() = default;
    AdapterSet(int blocks, int dim, int rank);

    /// A ~ N(0, 0.02^2), B = 0, so a fresh set leaves the host network unchanged.
    static AdapterSet fresh(int blocks, int dim, int rank, std::uint64_t seed);

    int blocks() const noexcept { return blocks_; }
    int dim() const noexcept { return dim_; }
    int rank() const noexcept { return rank_; }
    int factor_count() const noexcept { return static_cast<int>(factors_.size()); }
    bool empty() const noexcept { return factors_.empty(); }

    LowRankFactor& at(int block, Projection p);
    const LowRankFactor& at(int block, Projection p) const;
    std::vector<LowRankFactor>& factors() noexcept { return factors_; }
    const std::vector<LowRankFactor>& factors() const noexcept { return factors_; }

    std::size_t parameter_count() const noexcept;
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
    bool same_shape(const AdapterSet& other) const noexcept;
    bool all_finite() const;

    bool operator==(const AdapterSet& other) const;

private:
    int blocks_ = 0;
    int dim_ = 0;
    int rank_ = 0;
    std::vector<LowRankFactor> factors_;
};

/// Element-wise arithmetic mean, accumulated in the order given.
AdapterSet average_adapters(std::span<const AdapterSet* const> sets);

/// Copy with every value rounded to the nearest float32.
AdapterSet round_to_float(const AdapterSet& set);

}  // namespace ttom
