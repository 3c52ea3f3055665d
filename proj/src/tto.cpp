#include "ttom/tto.hpp"

#include <stdexcept>

namespace ttom {

void TTOConfig::validate(const DenoiserConfig& denoiser) const {
    if (guided_steps < 0 || guided_steps > denoiser.sampler_steps) {
        throw std::invalid_argument("tto: guided_steps must lie in [0, sampler_steps]");
    }
    if (iters_per_step < 1) throw std::invalid_argument("tto: iters_per_step must be >= 1");
    optimizer.validate();
    alignment.validate(denoiser.blocks);
}

StepTrace optimize_step(const Denoiser& denoiser, const LatentState& state, std::span<const int> tokens,
                        std::span<const ObjectTarget> targets, AdapterSet& adapters, AdamWState& optimizer,
                        const TTOConfig& config) {
    if (config.iters_per_step < 1) throw std::invalid_argument("tto: iters_per_step must be >= 1");
    if (targets.empty()) throw std::invalid_argument("tto: no object targets");
    if (optimizer.first.size() != adapters.parameter_count()) optimizer = AdamWState(adapters.parameter_count());

    const auto requests = pool_requests(targets, config.alignment.guided_blocks);
    const PooledLossFn loss_fn = make_loss_fn(config.alignment.loss_kind, targets);
    StepTrace trace;
    trace.step = state.step;
    std::vector<double> params = adapters.flatten();
    for (int it = 0; it < config.iters_per_step; ++it) {
        const AdapterGradient g = denoiser.grad_wrt_adapters(loss_fn, state, tokens, adapters, requests);
        trace.losses.push_back(g.loss);
        const std::vector<double> grads = g.grad.flatten();
        adamw_step(params, grads, optimizer, config.optimizer);
        adapters.assign(params);
    }
    return trace;
}

TTOResult run_tto(const Denoiser& denoiser, std::span<const int> tokens, std::span<const ObjectTarget> targets,
                  AdapterSet adapters_init, const TTOConfig& config, std::uint64_t seed,
                  const std::vector<int>& capture) {
    config.validate(denoiser.config());
    TTOResult result;
    result.adapters = std::move(adapters_init);
    AdamWState optimizer(result.adapters.parameter_count());

    StepHook hook = [&](int step, const LatentState& state, const AttentionRecord&, AdapterSet* adapters) {
        if (step >= config.guided_steps) return false;
        if (config.reset_optimizer_each_step) optimizer = AdamWState(adapters->parameter_count());
        result.traces.push_back(optimize_step(denoiser, state, tokens, targets, *adapters, optimizer, config));
        return true;
    };
    result.sample = denoiser.sample(tokens, &result.adapters, hook, seed, capture);
    return result;
}

}  // namespace ttom
