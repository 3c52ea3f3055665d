#include "ttom/adapters.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace ttom {

const char* projection_name(Projection p) noexcept {
    switch (p) {
        case Projection::Q: return "q";
        case Projection::K: return "k";
        case Projection::V: return "v";
        case Projection::O: return "o";
    }
    return "?";
}

AdapterSet::AdapterSet(int blocks, int dim, int rank) : blocks_(blocks), dim_(dim), rank_(rank) {
    if (blocks <= 0 || dim <= 0 || rank <= 0) throw std::invalid_argument("AdapterSet: non-positive shape");
    factors_.resize(static_cast<std::size_t>(blocks * kProjectionCount));
    for (auto& f : factors_) {
        f.down = ad::Matrix::Zero(dim, rank);
        f.up = ad::Matrix::Zero(rank, dim);
    }
}

AdapterSet AdapterSet::fresh(int blocks, int dim, int rank, std::uint64_t seed) {
    AdapterSet set(blocks, dim, rank);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    for (auto& f : set.factors_) {
        for (Eigen::Index i = 0; i < f.down.size(); ++i) f.down.data()[i] = normal(rng);
    }
    return set;
}

LowRankFactor& AdapterSet::at(int block, Projection p) {
    return factors_.at(static_cast<std::size_t>(block * kProjectionCount + static_cast<int>(p)));
}

const LowRankFactor& AdapterSet::at(int block, Projection p) const {
    return factors_.at(static_cast<std::size_t>(block * kProjectionCount + static_cast<int>(p)));
}

std::size_t AdapterSet::parameter_count() const noexcept {
    return factors_.size() * 2u * static_cast<std::size_t>(dim_) * static_cast<std::size_t>(rank_);
}

std::vector<double> AdapterSet::flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& f : factors_) {
        flat.insert(flat.end(), f.down.data(), f.down.data() + f.down.size());
        flat.insert(flat.end(), f.up.data(), f.up.data() + f.up.size());
    }
    return flat;
}

void AdapterSet::assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw std::invalid_argument("AdapterSet::assign: size mismatch");
    std::size_t offset = 0;
    for (auto& f : factors_) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), f.down.size(), f.down.data());
        offset += static_cast<std::size_t>(f.down.size());
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), f.up.size(), f.up.data());
        offset += static_cast<std::size_t>(f.up.size());
    }
}

bool AdapterSet::same_shape(const AdapterSet& other) const noexcept {
    return blocks_ == other.blocks_ && dim_ == other.dim_ && rank_ == other.rank_ &&
           factors_.size() == other.factors_.size();
}

bool AdapterSet::all_finite() const {
    for (const auto& f : factors_) {
        if (!f.down.allFinite() || !f.up.allFinite()) return false;
    }
    return true;
}

bool AdapterSet::operator==(const AdapterSet& other) const {
    return same_shape(other) && factors_ == other.factors_;
}

AdapterSet average_adapters(std::span<const AdapterSet* const> sets) {
    if (sets.empty()) throw std::invalid_argument("average_adapters: no inputs");
    AdapterSet out = *sets[0];
    for (std::size_t s = 1; s < sets.size(); ++s) {
        if (!sets[s]->same_shape(out)) throw std::invalid_argument("average_adapters: shape mismatch");
        for (std::size_t f = 0; f < out.factors().size(); ++f) {
            out.factors()[f].down += sets[s]->factors()[f].down;
            out.factors()[f].up += sets[s]->factors()[f].up;
        }
    }
    if (sets.size() > 1) {
        const double n = static_cast<double>(sets.size());
        for (auto& f : out.factors()) {
            f.down /= n;
            f.up /= n;
        }
    }
    return out;
}

AdapterSet round_to_float(const AdapterSet& set) {
    AdapterSet out = set;
    for (auto& f : out.factors()) {
        f.down = f.down.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
        f.up = f.up.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
    }
    return out;
}

}  // namespace ttom
