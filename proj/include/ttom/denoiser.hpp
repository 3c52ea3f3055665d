#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttom/adapters.hpp"
#include "ttom/grid.hpp"
#include "ttom/layout.hpp"
#include "ttom/tape.hpp"

namespace ttom {

struct DenoiserConfig {
    LatentDims latent{4, 8, 8};
    int channels = 32;   // d
    int blocks = 4;      // L
    int heads = 4;       // H
    int text_len = 16;   // token cap
    int vocab = 512;
    int mlp_ratio = 4;
    int sampler_steps = 20;  // T
    std::string schedule = "rectified_flow";
    std::uint64_t seed = 0;

    int head_dim() const noexcept { return channels / heads; }
    int tokens() const noexcept { return static_cast<int>(latent.cells()); }
    /// Throws std::invalid_argument on an inconsistent configuration.
    void validate() const;
    bool operator==(const DenoiserConfig&) const = default;
};

struct BlockWeights {
    ad::Matrix self_q, self_k, self_v, self_o;      // (d, d)
    ad::Matrix cross_q, cross_k, cross_v, cross_o;  // (d, d)
    ad::Matrix mlp_in, mlp_in_bias;                 // (d, m), (1, m)
    ad::Matrix mlp_out, mlp_out_bias;               // (m, d), (1, d)
};

/// Base parameters theta. Declaration order (used by checkpoints and
/// checksums): token_embedding, then per block the fields of BlockWeights
/// in order, then out_proj, out_bias.
struct DenoiserWeights {
    ad::Matrix token_embedding;  // (vocab, d)
    std::vector<BlockWeights> blocks;
    ad::Matrix out_proj;         // (d, d)
    ad::Matrix out_bias;         // (1, d)

    /// Deterministic init from config.seed; every value is float32-representable.
    static DenoiserWeights random(const DenoiserConfig& config);

    std::vector<ad::Matrix*> parameters();
    std::vector<const ad::Matrix*> parameters() const;
    /// FNV-1a over the raw bytes of every parameter in declaration order.
    std::uint64_t checksum() const;
};

/// z_t laid out as (tau * h * w, d) with token index (t * h + r) * w + c.
struct LatentState {
    ad::Matrix z;
    int step = 0;
};

/// Cross-attention weights per captured block: one (tau*h*w, text) matrix per head.
struct AttentionRecord {
    std::map<int, std::vector<ad::Matrix>> blocks;

    bool empty() const noexcept { return blocks.empty(); }
    bool has(int block) const noexcept { return blocks.count(block) != 0; }
};

struct PooledAttention {
    RealGrid values;  // non-negative, sums to 1
    int object_id = 0;
    int block = 0;
};

/// Mean over heads and over the span's text columns, normalized over the grid.
/// Throws std::out_of_range for an uncaptured block, std::invalid_argument for
/// an empty or out-of-range span.
PooledAttention pool_object_attention(const AttentionRecord& record, int block, TokenSpan span, LatentDims dims,
                                      int object_id = 0);

struct ForwardResult {
    ad::Matrix prediction;  // (tau*h*w, d)
    AttentionRecord attention;
};

/// One pooled map the loss consumes: the object's token span in one block.
struct PoolRequest {
    int object_id = 0;
    int block = 0;
    TokenSpan span;
};

struct PooledLoss {
    double value = 0.0;
    std::vector<RealGrid> grad;  // d loss / d pooled, one per request
};

using PooledLossFn = std::function<PooledLoss(std::span<const PooledAttention>)>;

struct AdapterGradient {
    double loss = 0.0;
    AdapterSet grad;
    std::vector<PooledAttention> pooled;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sampler hook: may modify `adapters`; return true when it did so the step
/// prediction is recomputed with the new values.
using StepHook = std::function<bool(int step, const LatentState& state, const AttentionRecord& record,
                                    AdapterSet* adapters)>;

struct SampleResult {
    LatentState final_state;
    std::vector<AttentionRecord> records;  // one per step, taken from the forward that advanced the latent
    int forward_passes = 0;
};

/// Hash each token into [0, vocab).
std::vector<int> encode_tokens(const std::vector<std::string>& tokens, int vocab);

/// Toy diffusion transformer over a latent token grid with text cross-attention.
///
/// Each block is pre-norm self-attention, then cross-attention from latent
/// queries to text keys/values (the adapter host), then a GELU MLP. Sampling is
/// first-order Euler on a rectified flow: z_s = (1 - s) x + s e, the network
/// predicts e - x, and s runs from 1 down to 0 in T uniform steps.
///
/// The base weights are never modified after construction, so one instance may
/// be shared by concurrent sampling runs that each own their latent and adapters.
class Denoiser {
public:
    Denoiser(DenoiserConfig config, DenoiserWeights weights);

    static Denoiser random(const DenoiserConfig& config);

    const DenoiserConfig& config() const noexcept { return config_; }
    const DenoiserWeights& weights() const noexcept { return weights_; }

    /// Noise level s for sampler step `step`.
    double noise_level(int step) const noexcept;

    ForwardResult forward(const LatentState& state, std::span<const int> tokens, const AdapterSet* adapters,
                          const std::vector<int>& capture) const;

    /// Exact reverse-mode gradient of loss_fn with respect to every adapter factor.
    AdapterGradient grad_wrt_adapters(const PooledLossFn& loss_fn, const LatentState& state,
                                      std::span<const int> tokens, const AdapterSet& adapters,
                                      std::span<const PoolRequest> requests) const;

    /// Loss value only, on the same code path as grad_wrt_adapters.
    double evaluate_loss(const PooledLossFn& loss_fn, const LatentState& state, std::span<const int> tokens,
                         const AdapterSet* adapters, std::span<const PoolRequest> requests) const;

    /// Unit-Gaussian initial latent for a seed.
    LatentState initial_state(std::uint64_t seed) const;

    SampleResult sample(std::span<const int> tokens, AdapterSet* adapters, const StepHook& hook,
                        std::uint64_t seed, const std::vector<int>& capture) const;

    // Graph construction shared with pre-training.
    struct Graph {
        ad::Var prediction;
        std::map<int, std::vector<ad::Var>> attention;  // block -> per-head (N, T) probabilities
        std::vector<ad::Var> adapter_down;             // per factor, when adapters are parameters
        std::vector<ad::Var> adapter_up;
        std::vector<ad::Var> weight_vars;              // declaration order, when weights are parameters
    };
    struct GraphOptions {
        bool weights_trainable = false;
        bool adapters_trainable = false;
        /// Stop after the cross-attention probabilities of this block; -1 runs the full network.
        int stop_after_block = -1;
    };
    Graph build_graph(ad::Tape& tape, const ad::Matrix& z, double noise_level, std::span<const int> tokens,
                      const AdapterSet* adapters, const GraphOptions& options) const;

    /// Pooled maps for each request, read from a graph's attention probabilities.
    std::vector<PooledAttention> pool_graph(const ad::Tape& tape, const Graph& graph,
                                            std::span<const PoolRequest> requests) const;
    /// Seeds the per-head attention probabilities with the gradient implied by
    /// d loss / d pooled (one grid per request), chained through the pooling.
    void seed_pooled_gradient(ad::Tape& tape, const Graph& graph, std::span<const PoolRequest> requests,
                              std::span<const PooledAttention> pooled, std::span<const RealGrid> grads) const;

private:
    void check_inputs(const ad::Matrix& z, std::span<const int> tokens, const AdapterSet* adapters) const;

    DenoiserConfig config_;
    DenoiserWeights weights_;
    ad::Matrix position_embedding_;  // (N, d)
};

// ---------------------------------------------------------------------------
// checkpoints

/// Little-endian layout: 8-byte magic "TTOMDIT1", uint32 format version,
/// uint32 x 11 config fields (tau, h, w, channels, blocks, heads, text_len,
/// vocab, mlp_ratio, sampler_steps, reserved=0), uint64 seed, then every
/// parameter as float32 in declaration order, row-major.
void save_checkpoint(const Denoiser& denoiser, const std::string& path);
Denoiser load_checkpoint(const std::string& path);

}  // namespace ttom
