#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ttom {

struct AdamWConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;

    /// Throws std::invalid_argument on a non-positive learning rate or betas outside [0, 1).
    void validate() const;
};

/// Moment accumulators for a flat parameter vector.
struct AdamWState {
    std::vector<double> first;
    std::vector<double> second;
    std::int64_t step = 0;

    AdamWState() = default;
    explicit AdamWState(std::size_t size) : first(size, 0.0), second(size, 0.0) {}
};

/// One AdamW update with bias correction and decoupled weight decay.
/// Throws NonFiniteError (denoiser.hpp) on a non-finite gradient, leaving
/// params and state untouched.
void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const AdamWConfig& config);

}  // namespace ttom
