#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ttom/adapters.hpp"
#include "ttom/align.hpp"
#include "ttom/denoiser.hpp"
#include "ttom/mask.hpp"
#include "ttom/optim.hpp"

namespace ttom {

struct TTOConfig {
    int guided_steps = 5;    // leading sampler steps that are optimized
    int iters_per_step = 8;
    AdamWConfig optimizer;
    AlignmentConfig alignment;
    /// Start every guided step with fresh moments instead of carrying them over.
    bool reset_optimizer_each_step = false;

    /// Throws std::invalid_argument when a field is out of range for the denoiser.
    void validate(const DenoiserConfig& denoiser) const;
};

/// Losses recorded at one guided step, one per iteration, each evaluated
/// before that iteration's update.
struct StepTrace {
    int step = 0;
    std::vector<double> losses;
};

/// Runs iters_per_step rounds of {pooled attention -> loss -> adapter gradient
/// -> AdamW} on the live adapters. The latent is never touched.
StepTrace optimize_step(const Denoiser& denoiser, const LatentState& state, std::span<const int> tokens,
                        std::span<const ObjectTarget> targets, AdapterSet& adapters, AdamWState& optimizer,
                        const TTOConfig& config);

struct TTOResult {
    AdapterSet adapters;            // the optimized set after the last guided step
    std::vector<StepTrace> traces;  // one per guided step
    SampleResult sample;
};

/// Samples with optimize_step attached to steps [0, guided_steps); later steps
/// run on the frozen result. With guided_steps == 0 this is a plain sample call.
TTOResult run_tto(const Denoiser& denoiser, std::span<const int> tokens, std::span<const ObjectTarget> targets,
                  AdapterSet adapters_init, const TTOConfig& config, std::uint64_t seed,
                  const std::vector<int>& capture = {});

}  // namespace ttom
