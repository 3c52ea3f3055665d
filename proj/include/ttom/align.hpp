#pragma once

#include <span>
#include <string>
#include <vector>

#include "ttom/denoiser.hpp"
#include "ttom/mask.hpp"

namespace ttom {

enum class LossKind { Jsd, Ce, Com };

const char* loss_kind_name(LossKind kind) noexcept;
/// Accepts "jsd", "ce", "com"; throws std::invalid_argument otherwise.
LossKind parse_loss_kind(const std::string& name);

struct AlignmentConfig {
    LossKind loss_kind = LossKind::Jsd;
    std::vector<int> guided_blocks{1, 2};  // every object is weighted equally

    /// Throws std::invalid_argument when guided_blocks is empty or leaves [0, blocks).
    void validate(int blocks) const;
};

/// Jensen-Shannon divergence with natural log. Both grids must be non-negative
/// and sum to 1 within 1e-6.
double jsd(const RealGrid& p, const RealGrid& q);

/// Clamp used inside the cross-entropy logs.
inline constexpr double kCeClamp = 1e-7;

/// Alignment objective over pooled maps. Each pooled map is matched to the
/// target with the same object_id; the result is the mean over objects of the
/// mean over that object's blocks. The gradient is taken with respect to each
/// pooled map. Throws std::invalid_argument when an object has no pooled map
/// or a pooled map names an unknown object.
PooledLoss loss_align(std::span<const PooledAttention> pooled, std::span<const ObjectTarget> targets);

/// Binary cross-entropy between the max-rescaled pooled map and the object's
/// box mask, averaged over all grid cells.
PooledLoss ce_loss(std::span<const PooledAttention> pooled, std::span<const ObjectTarget> targets);

/// Squared distance between the per-frame attention center of mass and the box
/// center, averaged over the object's active latent frames. Cell (r, c) sits at
/// (c / (w - 1), r / (h - 1)) so the grid corners map to 0 and 1.
PooledLoss com_loss(std::span<const PooledAttention> pooled, std::span<const ObjectTarget> targets);

PooledLoss alignment_loss(LossKind kind, std::span<const PooledAttention> pooled,
                          std::span<const ObjectTarget> targets);

/// One request per (object, guided block), objects outermost.
std::vector<PoolRequest> pool_requests(std::span<const ObjectTarget> targets, const std::vector<int>& blocks);

/// Loss callback for Denoiser::grad_wrt_adapters. `targets` must outlive the callback.
PooledLossFn make_loss_fn(LossKind kind, std::span<const ObjectTarget> targets);

struct BlockPolicy {
    enum class Kind { TopK, Threshold };
    Kind kind = Kind::TopK;
    int k = 2;
    double threshold = 0.5;
};

/// TopK: the k best blocks, ties to the lower index. Threshold: every block
/// scoring at least the threshold, or the single best block when none does.
/// The result is sorted ascending.
std::vector<int> select_guided_blocks(const std::vector<double>& scores, const BlockPolicy& policy);

}  // namespace ttom
