#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ttom/denoiser.hpp"
#include "ttom/mask.hpp"

namespace ttom {

/// Marks exactly target_cells cells holding the largest values; equal values
/// are taken in row-major order. Throws std::invalid_argument when
/// target_cells is outside [1, cells].
BinaryGrid binarize_attention(const PooledAttention& pooled, int target_cells);

/// Mean per-frame IoU over the latent frames where either mask is set.
/// Throws std::invalid_argument on a shape mismatch or an empty truth mask.
double miou(const BinaryGrid& pred, const BinaryGrid& truth);

/// Mean over objects and the listed blocks of miou(binarized attention, box mask).
double layout_miou(const AttentionRecord& record, std::span<const ObjectTarget> targets,
                   const std::vector<int>& blocks, LatentDims dims);

struct ProbeReport {
    std::vector<double> block_scores;  // mean mIoU per block
    int prompt_count = 0;
    int sample_step = 0;
    std::string binarization = "area_matched_topk";

    std::string to_json() const;
    static ProbeReport from_json(const std::string& text);
    bool operator==(const ProbeReport&) const = default;
};

void write_probe_report(const ProbeReport& report, const std::string& path);
ProbeReport read_probe_report(const std::string& path);

/// One baseline pass per layout (seed + index) advanced to sample_step, where
/// every block is captured and scored against the layout's box masks.
ProbeReport probe_blocks(const Denoiser& denoiser, std::span<const SpatioTemporalLayout> layouts, int sample_step,
                         std::uint64_t seed);

}  // namespace ttom
