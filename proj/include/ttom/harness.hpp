#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ttom/config.hpp"
#include "ttom/denoiser.hpp"
#include "ttom/embed.hpp"
#include "ttom/memory.hpp"
#include "ttom/tto.hpp"

namespace ttom {

struct SampleMetrics {
    int sample_id = 0;
    std::string prompt;
    bool ok = true;
    std::string error;
    std::string key_id;
    std::string abstract_text;
    bool memory_hit = false;
    std::vector<std::string> matched_ids;
    double match_similarity = 0.0;  // best similarity among matches, 0 on a miss
    bool tto_ran = false;
    std::vector<int> guided_blocks;
    std::vector<StepTrace> traces;
    double initial_loss = 0.0;  // step-0 alignment loss with the initial adapters
    double final_loss = 0.0;    // step-0 alignment loss with the final adapters
    double pre_miou = 0.0;      // step-0 guided-block mIoU with the initial adapters
    double post_miou = 0.0;     // same latent, final adapters
    int forward_passes = 0;
    int optimizer_iterations = 0;
    std::size_t memory_size = 0;
    double latency_ms = 0.0;  // wall clock; kept out of the main metrics file

    /// One JSONL line with a fixed field order; latency is omitted.
    std::string to_jsonl() const;
};

/// Everything one stream needs besides the prompts.
class Pipeline {
public:
    /// Loads the checkpoint (or builds random weights) and resolves the guided
    /// blocks. Throws std::invalid_argument on a bad configuration.
    explicit Pipeline(RunConfig config);
    Pipeline(RunConfig config, std::shared_ptr<const Denoiser> denoiser);

    const RunConfig& config() const noexcept { return config_; }
    const Denoiser& denoiser() const noexcept { return *denoiser_; }
    const std::vector<int>& guided_blocks() const noexcept { return guided_blocks_; }
    const TextEmbedder& embedder() const noexcept { return embedder_; }

    /// Plans, initializes (memory or fresh), optimizes per mode and writes back
    /// per mode. `memory` may be null in baseline and tto_only modes. Never
    /// throws for per-sample failures; they come back as !ok records.
    SampleMetrics process(const std::string& prompt, int sample_id, MemoryStore* memory) const;

    MemoryStore make_memory() const;

    /// Memory key for a prompt: plan, verify, abstract, embed. Throws on a bad prompt.
    MemoryKey key_for(const std::string& prompt) const;

private:
    void resolve();

    RunConfig config_;
    std::shared_ptr<const Denoiser> denoiser_;
    std::vector<int> guided_blocks_;
    HashedNgramEmbedder embedder_;
};

struct StreamReport {
    std::vector<SampleMetrics> samples;
    std::size_t memory_size = 0;
};

/// Reads the prompt file (one prompt per line, blank lines skipped).
std::vector<std::string> read_prompts(const std::string& path);

/// Processes `prompts` in order under config.mode. Writes, when
/// config.metrics_path is set, the metrics JSONL plus `<metrics>.trace.jsonl`
/// (one line per optimizer iteration) and `<metrics>.timing.jsonl` (latency).
/// In ttom mode the memory starts from memory_dir when it holds a store and is
/// saved back there at the end; ttom_readonly only loads it.
StreamReport run_stream(const Pipeline& pipeline, const std::vector<std::string>& prompts);
/// Same, reading prompts from config.prompts_path.
StreamReport run_stream(const RunConfig& config);

struct PseudoMemoryReport {
    std::size_t memory_size = 0;
    std::vector<double> hit_rate;  // cumulative hit rate after each prompt
};

/// Runs ttom mode from an empty memory over n grammar prompts (or `prompts`
/// when non-empty) and saves the store to config.memory_dir when set.
/// Called after each prompt with the number processed so far and the store.
using MemorySnapshotFn = std::function<void(std::size_t, const MemoryStore&)>;

PseudoMemoryReport build_pseudo_memory(const Pipeline& pipeline, std::size_t n_prompts,
                                       const std::vector<std::string>& prompts, MemoryStore* out = nullptr,
                                       const MemorySnapshotFn& on_prompt = {});

struct AblationCell {
    std::string name;
    RunConfig config;
    std::size_t pseudo_prompts = 0;  // > 0: build a memory first, then run read-only on it
};

struct AblationRow {
    std::string cell;
    std::size_t samples = 0;
    std::size_t errors = 0;
    double mean_final_loss = 0.0;
    double mean_post_miou = 0.0;
    double mean_latency_ms = 0.0;
};

/// Presets: "loss" (jsd/ce/com), "topk" (top_k 5/10 x continual TTO on/off),
/// "steps_iters" (guided steps 1,3,5,7 x iterations 4,8,12,16), "pseudo"
/// (50/100/150/200 pseudo-training prompts).
std::vector<AblationCell> ablation_cells(const std::string& preset, const RunConfig& base);

/// Runs every cell on the same prompts and seed with metrics under out_dir,
/// then writes out_dir/summary.tsv.
std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const std::vector<std::string>& prompts,
                                      const std::string& out_dir);

std::string format_summary(const std::vector<AblationRow>& rows);

}  // namespace ttom
