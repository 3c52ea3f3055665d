#pragma once

#include <cstdint>
#include <string>

#include "ttom/align.hpp"
#include "ttom/denoiser.hpp"
#include "ttom/layout.hpp"
#include "ttom/tto.hpp"

namespace ttom {

enum class RunMode { Baseline, TtoOnly, Ttom, TtomReadonly };

const char* run_mode_name(RunMode mode) noexcept;
/// Accepts "baseline", "tto_only", "ttom", "ttom_readonly".
RunMode parse_run_mode(const std::string& name);

struct MemoryConfig {
    std::size_t capacity = 64;
    double threshold = 0.85;
    int top_k = 1;
    /// Also optimize samples initialized from a memory hit (and write the result back in ttom mode).
    bool continual_tto = true;
    int embed_dim = 256;
};

struct PlannerConfig {
    std::string kind = "rule";  // "rule" or "chat"
    PlannerClientConfig client;
};

struct RunConfig {
    RunMode mode = RunMode::Ttom;
    std::uint64_t seed = 0;
    DenoiserConfig denoiser;     // used when no checkpoint is given
    std::string checkpoint;      // empty: random weights from `denoiser`
    int adapter_rank = 8;
    TTOConfig tto;
    /// When set, guided blocks come from this probe report and block_policy.
    std::string probe_report;
    BlockPolicy block_policy;
    MemoryConfig memory;
    PlannerConfig planner;
    double mask_sigma = 1.0;
    int num_frames = 16;
    bool shuffle = false;  // seed-controlled reordering of the prompt stream
    /// Worker threads; values above 1 only apply to baseline and ttom_readonly.
    int workers = 1;

    std::string prompts_path;
    std::string memory_dir;
    std::string metrics_path;

    /// Throws std::invalid_argument on an inconsistent configuration.
    void validate() const;
};

/// Unknown keys are rejected so typos surface early.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::string& path);

}  // namespace ttom
