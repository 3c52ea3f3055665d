#include "ttom/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "ttom/denoiser.hpp"

namespace ttom {

void AdamWConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("adamw: learning_rate must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw std::invalid_argument("adamw: betas must lie in [0, 1)");
    }
    if (epsilon < 0.0 || weight_decay < 0.0) throw std::invalid_argument("adamw: negative epsilon or weight decay");
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const AdamWConfig& config) {
    if (params.size() != grads.size() || state.first.size() != params.size() ||
        state.second.size() != params.size()) {
        throw std::invalid_argument("adamw: shape mismatch");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) throw NonFiniteError("adamw: non-finite gradient");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.first[i] = config.beta1 * state.first[i] + (1.0 - config.beta1) * g;
        state.second[i] = config.beta2 * state.second[i] + (1.0 - config.beta2) * g * g;
        const double m = state.first[i] / c1;
        const double denom = std::sqrt(state.second[i] / c2) + config.epsilon;
        const double adaptive = denom > 0.0 ? m / denom : 0.0;
        params[i] -= config.learning_rate * (adaptive + config.weight_decay * params[i]);
    }
}

}  // namespace ttom
