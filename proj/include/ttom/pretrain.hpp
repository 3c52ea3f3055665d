#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ttom/denoiser.hpp"

namespace ttom {

struct PretrainConfig {
    int steps = 500;
    double learning_rate = 1e-3;
    /// Weight of the attention term relative to the denoising term.
    double attention_weight = 4.0;
    /// Blocks whose cross-attention is pulled toward the object masks.
    std::vector<int> supervised_blocks{1};
    std::uint64_t seed = 0;
};

struct PretrainStats {
    int step = 0;
    double denoise_loss = 0.0;
    double attention_loss = 0.0;
};

/// Trains the base weights on synthetic clips built from grammar prompts: each
/// object paints a fixed per-phrase pattern into its box cells, and the network
/// learns to predict (noise - clip) at a random noise level while the supervised
/// blocks' pooled attention is pulled toward the object's soft mask.
/// Weights are rounded to float32 after the last step. Throws NonFiniteError
/// on a non-finite loss.
Denoiser pretrain_toy(const DenoiserConfig& config, const PretrainConfig& options,
                      const std::function<void(const PretrainStats&)>& progress = {});

/// Synthetic clip for a layout: for every object, its box cells receive a unit
/// vector derived from the object's phrase. Shape (tau*h*w, channels).
ad::Matrix synthetic_clip(const SpatioTemporalLayout& layout, int channels);

}  // namespace ttom
