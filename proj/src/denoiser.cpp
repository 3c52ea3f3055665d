#include "ttom/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <stdexcept>

namespace ttom {

using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

Matrix gaussian(std::mt19937_64& rng, int rows, int cols, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<double>(static_cast<float>(normal(rng)));
    }
    return m;
}

// Fixed 3-axis embedding: channel c encodes axis c % 3 at frequency (c / 3) / 2 + 1.
Matrix make_position_embedding(const DenoiserConfig& cfg) {
    const LatentDims& dims = cfg.latent;
    Matrix pe(cfg.tokens(), cfg.channels);
    for (int t = 0; t < dims.tau; ++t) {
        for (int r = 0; r < dims.h; ++r) {
            for (int c = 0; c < dims.w; ++c) {
                const double coord[3] = {(t + 0.5) / dims.tau, (r + 0.5) / dims.h, (c + 0.5) / dims.w};
                const auto row = static_cast<Eigen::Index>((t * dims.h + r) * dims.w + c);
                for (int ch = 0; ch < cfg.channels; ++ch) {
                    const int axis = ch % 3;
                    const int k = ch / 3;
                    const double arg = std::numbers::pi * (k / 2 + 1) * coord[axis];
                    pe(row, ch) = (k % 2 == 0) ? std::sin(arg) : std::cos(arg);
                }
            }
        }
    }
    return pe;
}

Matrix sinusoid_row(double position, int channels) {
    Matrix row(1, channels);
    const int half = channels / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        row(0, 2 * i) = std::sin(position * freq);
        row(0, 2 * i + 1) = std::cos(position * freq);
    }
    if (channels % 2) row(0, channels - 1) = 0.0;
    return row;
}

Matrix text_position_embedding(int count, int channels) {
    Matrix m(count, channels);
    for (int p = 0; p < count; ++p) m.row(p) = sinusoid_row(static_cast<double>(p), channels).row(0);
    return m;
}

// Raw pooled map (mean over heads and span columns) before normalization.
std::vector<double> pooled_raw(const std::vector<const Matrix*>& heads, TokenSpan span) {
    const Eigen::Index rows = heads.front()->rows();
    std::vector<double> raw(static_cast<std::size_t>(rows), 0.0);
    const double inv = 1.0 / (static_cast<double>(heads.size()) * span.size());
    for (const Matrix* p : heads) {
        for (Eigen::Index n = 0; n < rows; ++n) {
            double acc = 0.0;
            for (int j = span.begin; j < span.end; ++j) acc += (*p)(n, j);
            raw[static_cast<std::size_t>(n)] += acc * inv;
        }
    }
    return raw;
}

PooledAttention normalize_pooled(std::vector<double> raw, LatentDims dims, int object_id, int block) {
    PooledAttention out{RealGrid(dims, 0.0), object_id, block};
    double total = 0.0;
    for (double v : raw) total += v;
    for (std::size_t i = 0; i < raw.size(); ++i) out.values[i] = raw[i] / total;
    return out;
}

void check_span(TokenSpan span, Eigen::Index text_len) {
    if (span.empty()) throw std::invalid_argument("pool_object_attention: empty token span");
    if (span.begin < 0 || span.end > text_len) {
        throw std::invalid_argument("pool_object_attention: token span outside the prompt");
    }
}

}  // namespace

void DenoiserConfig::validate() const {
    if (latent.tau <= 0 || latent.h <= 0 || latent.w <= 0) throw std::invalid_argument("denoiser: bad latent dims");
    if (channels <= 0 || heads <= 0 || channels % heads != 0) {
        throw std::invalid_argument("denoiser: channels must be divisible by heads");
    }
    if (blocks < 2) throw std::invalid_argument("denoiser: at least 2 blocks required");
    if (sampler_steps < 1) throw std::invalid_argument("denoiser: sampler_steps must be >= 1");
    if (text_len <= 0 || vocab <= 0 || mlp_ratio <= 0) throw std::invalid_argument("denoiser: bad sizes");
    if (schedule != "rectified_flow") throw std::invalid_argument("denoiser: unknown schedule " + schedule);
}

DenoiserWeights DenoiserWeights::random(const DenoiserConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int d = cfg.channels;
    const int m = cfg.channels * cfg.mlp_ratio;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    DenoiserWeights w;
    w.token_embedding = gaussian(rng, cfg.vocab, d, 1.0);
    w.blocks.resize(static_cast<std::size_t>(cfg.blocks));
    for (auto& b : w.blocks) {
        b.self_q = gaussian(rng, d, d, sd);
        b.self_k = gaussian(rng, d, d, sd);
        b.self_v = gaussian(rng, d, d, sd);
        b.self_o = gaussian(rng, d, d, sd);
        b.cross_q = gaussian(rng, d, d, sd);
        b.cross_k = gaussian(rng, d, d, sd);
        b.cross_v = gaussian(rng, d, d, sd);
        b.cross_o = gaussian(rng, d, d, sd);
        b.mlp_in = gaussian(rng, d, m, sd);
        b.mlp_in_bias = Matrix::Zero(1, m);
        b.mlp_out = gaussian(rng, m, d, 1.0 / std::sqrt(static_cast<double>(m)));
        b.mlp_out_bias = Matrix::Zero(1, d);
    }
    w.out_proj = gaussian(rng, d, d, sd);
    w.out_bias = Matrix::Zero(1, d);
    return w;
}

std::vector<Matrix*> DenoiserWeights::parameters() {
    std::vector<Matrix*> out{&token_embedding};
    for (auto& b : blocks) {
        for (Matrix* p : {&b.self_q, &b.self_k, &b.self_v, &b.self_o, &b.cross_q, &b.cross_k, &b.cross_v,
                          &b.cross_o, &b.mlp_in, &b.mlp_in_bias, &b.mlp_out, &b.mlp_out_bias}) {
            out.push_back(p);
        }
    }
    out.push_back(&out_proj);
    out.push_back(&out_bias);
    return out;
}

std::vector<const Matrix*> DenoiserWeights::parameters() const {
    auto mut = const_cast<DenoiserWeights*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::uint64_t DenoiserWeights::checksum() const {
    std::uint64_t h = 14695981039346656037ull;
    for (const Matrix* p : parameters()) {
        h = fnv1a(p->data(), static_cast<std::size_t>(p->size()) * sizeof(double), h);
    }
    return h;
}

std::vector<int> encode_tokens(const std::vector<std::string>& tokens, int vocab) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) {
        ids.push_back(static_cast<int>(fnv1a(t.data(), t.size()) % static_cast<std::uint64_t>(vocab)));
    }
    return ids;
}

PooledAttention pool_object_attention(const AttentionRecord& record, int block, TokenSpan span, LatentDims dims,
                                      int object_id) {
    auto it = record.blocks.find(block);
    if (it == record.blocks.end() || it->second.empty()) {
        throw std::out_of_range("pool_object_attention: block " + std::to_string(block) + " was not captured");
    }
    check_span(span, it->second.front().cols());
    std::vector<const Matrix*> heads;
    for (const auto& m : it->second) heads.push_back(&m);
    if (static_cast<std::size_t>(heads.front()->rows()) != dims.cells()) {
        throw std::invalid_argument("pool_object_attention: record does not match latent dims");
    }
    return normalize_pooled(pooled_raw(heads, span), dims, object_id, block);
}

Denoiser::Denoiser(DenoiserConfig config, DenoiserWeights weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
    config_.validate();
    const int d = config_.channels;
    const int m = d * config_.mlp_ratio;
    auto expect = [](const Matrix& mat, Eigen::Index r, Eigen::Index c, const char* name) {
        if (mat.rows() != r || mat.cols() != c) {
            throw std::invalid_argument(std::string("denoiser weights: bad shape for ") + name);
        }
    };
    expect(weights_.token_embedding, config_.vocab, d, "token_embedding");
    if (weights_.blocks.size() != static_cast<std::size_t>(config_.blocks)) {
        throw std::invalid_argument("denoiser weights: block count mismatch");
    }
    for (const auto& b : weights_.blocks) {
        for (const Matrix* p : {&b.self_q, &b.self_k, &b.self_v, &b.self_o, &b.cross_q, &b.cross_k, &b.cross_v,
                                &b.cross_o}) {
            expect(*p, d, d, "attention projection");
        }
        expect(b.mlp_in, d, m, "mlp_in");
        expect(b.mlp_in_bias, 1, m, "mlp_in_bias");
        expect(b.mlp_out, m, d, "mlp_out");
        expect(b.mlp_out_bias, 1, d, "mlp_out_bias");
    }
    expect(weights_.out_proj, d, d, "out_proj");
    expect(weights_.out_bias, 1, d, "out_bias");
    position_embedding_ = make_position_embedding(config_);
}

Denoiser Denoiser::random(const DenoiserConfig& config) { return Denoiser(config, DenoiserWeights::random(config)); }

double Denoiser::noise_level(int step) const noexcept {
    return 1.0 - static_cast<double>(step) / static_cast<double>(config_.sampler_steps);
}

void Denoiser::check_inputs(const Matrix& z, std::span<const int> tokens, const AdapterSet* adapters) const {
    if (z.rows() != config_.tokens() || z.cols() != config_.channels) {
        throw std::invalid_argument("denoiser: latent shape mismatch");
    }
    if (tokens.empty() || tokens.size() > static_cast<std::size_t>(config_.text_len)) {
        throw std::invalid_argument("denoiser: token count must be in [1, text_len]");
    }
    if (adapters && !adapters->empty() &&
        (adapters->blocks() != config_.blocks || adapters->dim() != config_.channels)) {
        throw std::invalid_argument("denoiser: adapter shape mismatch");
    }
}

Denoiser::Graph Denoiser::build_graph(Tape& tape, const Matrix& z, double noise_level, std::span<const int> tokens,
                                      const AdapterSet* adapters, const GraphOptions& options) const {
    check_inputs(z, tokens, adapters);
    const int d = config_.channels;
    const int heads = config_.heads;
    const int dh = config_.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool use_adapters = adapters && !adapters->empty();

    Graph g;
    auto weight = [&](const Matrix& m) {
        Var v = options.weights_trainable ? tape.parameter(m) : tape.constant(m);
        if (options.weights_trainable) g.weight_vars.push_back(v);
        return v;
    };

    // declaration order matters for weight_vars
    Var token_table = weight(weights_.token_embedding);
    struct BlockVars {
        Var sq, sk, sv, so, cq, ck, cv, co, w1, b1, w2, b2;
    };
    std::vector<BlockVars> bv;
    for (const auto& b : weights_.blocks) {
        bv.push_back({weight(b.self_q), weight(b.self_k), weight(b.self_v), weight(b.self_o), weight(b.cross_q),
                      weight(b.cross_k), weight(b.cross_v), weight(b.cross_o), weight(b.mlp_in),
                      weight(b.mlp_in_bias), weight(b.mlp_out), weight(b.mlp_out_bias)});
    }
    Var out_w = weight(weights_.out_proj);
    Var out_b = weight(weights_.out_bias);

    if (use_adapters) {
        for (const auto& f : adapters->factors()) {
            g.adapter_down.push_back(options.adapters_trainable ? tape.parameter(f.down) : tape.constant(f.down));
            g.adapter_up.push_back(options.adapters_trainable ? tape.parameter(f.up) : tape.constant(f.up));
        }
    }
    const double lora_scale = use_adapters ? 1.0 / adapters->rank() : 0.0;
    auto project = [&](Var x, Var w, int block, Projection p) {
        Var y = tape.matmul(x, w);
        if (!use_adapters) return y;
        const auto idx = static_cast<std::size_t>(block * kProjectionCount + static_cast<int>(p));
        Var low = tape.matmul(tape.matmul(x, g.adapter_down[idx]), g.adapter_up[idx]);
        return tape.add(y, tape.scale(low, lora_scale));
    };

    // text stream: embedding + position, normalized once and shared by every block
    const std::vector<int> ids(tokens.begin(), tokens.end());
    Var text = tape.add(tape.gather_rows(token_table, ids),
                        tape.constant(text_position_embedding(static_cast<int>(ids.size()), d)));
    Var text_norm = tape.layer_norm(text);

    Matrix x0 = z + position_embedding_;
    x0.rowwise() += sinusoid_row(1000.0 * noise_level, d).row(0);
    Var x = tape.constant(std::move(x0));

    auto split_heads = [&](Var m) {
        std::vector<Var> parts;
        for (int h = 0; h < heads; ++h) parts.push_back(tape.slice_cols(m, h * dh, dh));
        return parts;
    };

    for (int b = 0; b < config_.blocks; ++b) {
        const BlockVars& w = bv[static_cast<std::size_t>(b)];

        // self-attention
        Var a = tape.layer_norm(x);
        auto q = split_heads(tape.matmul(a, w.sq));
        auto k = split_heads(tape.matmul(a, w.sk));
        auto v = split_heads(tape.matmul(a, w.sv));
        std::vector<Var> outs;
        for (int h = 0; h < heads; ++h) {
            Var p = tape.softmax_rows(tape.scale(tape.matmul_nt(q[h], k[h]), attn_scale));
            outs.push_back(tape.matmul(p, v[h]));
        }
        x = tape.add(x, tape.matmul(tape.concat_cols(outs), w.so));

        // cross-attention
        Var a2 = tape.layer_norm(x);
        auto cq = split_heads(project(a2, w.cq, b, Projection::Q));
        auto ck = split_heads(project(text_norm, w.ck, b, Projection::K));
        std::vector<Var> probs;
        for (int h = 0; h < heads; ++h) {
            probs.push_back(tape.softmax_rows(tape.scale(tape.matmul_nt(cq[h], ck[h]), attn_scale)));
        }
        g.attention[b] = probs;
        if (b == options.stop_after_block) return g;

        auto cv = split_heads(project(text_norm, w.cv, b, Projection::V));
        std::vector<Var> couts;
        for (int h = 0; h < heads; ++h) couts.push_back(tape.matmul(probs[h], cv[h]));
        x = tape.add(x, project(tape.concat_cols(couts), w.co, b, Projection::O));

        // MLP
        Var a3 = tape.layer_norm(x);
        Var hidden = tape.gelu(tape.add_row(tape.matmul(a3, w.w1), w.b1));
        x = tape.add(x, tape.add_row(tape.matmul(hidden, w.w2), w.b2));
    }

    g.prediction = tape.add_row(tape.matmul(tape.layer_norm(x), out_w), out_b);
    return g;
}

ForwardResult Denoiser::forward(const LatentState& state, std::span<const int> tokens, const AdapterSet* adapters,
                                const std::vector<int>& capture) const {
    for (int b : capture) {
        if (b < 0 || b >= config_.blocks) throw std::invalid_argument("forward: capture block out of range");
    }
    Tape tape;
    const Graph g = build_graph(tape, state.z, noise_level(state.step), tokens, adapters, GraphOptions{});
    ForwardResult out;
    out.prediction = tape.value(g.prediction);
    for (int b : capture) {
        auto& heads = out.attention.blocks[b];
        for (Var p : g.attention.at(b)) heads.push_back(tape.value(p));
    }
    return out;
}

namespace {

int last_block(std::span<const PoolRequest> requests) {
    if (requests.empty()) throw std::invalid_argument("loss: no pool requests");
    int last = -1;
    for (const auto& r : requests) last = std::max(last, r.block);
    return last;
}

}  // namespace

std::vector<PooledAttention> Denoiser::pool_graph(const Tape& tape, const Graph& g,
                                                  std::span<const PoolRequest> requests) const {
    std::vector<PooledAttention> pooled;
    for (const auto& r : requests) {
        auto it = g.attention.find(r.block);
        if (it == g.attention.end()) throw std::out_of_range("pool_graph: block not evaluated");
        std::vector<const Matrix*> heads;
        for (Var p : it->second) heads.push_back(&tape.value(p));
        check_span(r.span, heads.front()->cols());
        pooled.push_back(normalize_pooled(pooled_raw(heads, r.span), config_.latent, r.object_id, r.block));
    }
    return pooled;
}

void Denoiser::seed_pooled_gradient(Tape& tape, const Graph& g, std::span<const PoolRequest> requests,
                                    std::span<const PooledAttention> pooled, std::span<const RealGrid> grads) const {
    if (pooled.size() != requests.size() || grads.size() != requests.size()) {
        throw std::invalid_argument("seed_pooled_gradient: count mismatch");
    }
    const int heads = config_.heads;
    for (std::size_t i = 0; i < requests.size(); ++i) {
        const PoolRequest& r = requests[i];
        const RealGrid& gp = grads[i];
        const auto& probs = g.attention.at(r.block);
        std::vector<const Matrix*> head_vals;
        for (Var p : probs) head_vals.push_back(&tape.value(p));
        const auto raw = pooled_raw(head_vals, r.span);
        double total = 0.0;
        for (double v : raw) total += v;
        double dot = 0.0;
        for (std::size_t n = 0; n < raw.size(); ++n) dot += gp[n] * pooled[i].values[n];
        const double coeff = 1.0 / (static_cast<double>(heads) * r.span.size() * total);

        Matrix seed = Matrix::Zero(head_vals.front()->rows(), head_vals.front()->cols());
        for (std::size_t n = 0; n < raw.size(); ++n) {
            const double d_raw = (gp[n] - dot) * coeff;
            for (int j = r.span.begin; j < r.span.end; ++j) seed(static_cast<Eigen::Index>(n), j) = d_raw;
        }
        for (Var p : probs) tape.seed(p, seed);
    }
}

double Denoiser::evaluate_loss(const PooledLossFn& loss_fn, const LatentState& state, std::span<const int> tokens,
                               const AdapterSet* adapters, std::span<const PoolRequest> requests) const {
    Tape tape;
    GraphOptions opts;
    opts.stop_after_block = last_block(requests);
    const Graph g = build_graph(tape, state.z, noise_level(state.step), tokens, adapters, opts);
    const auto pooled = pool_graph(tape, g, requests);
    return loss_fn(pooled).value;
}

AdapterGradient Denoiser::grad_wrt_adapters(const PooledLossFn& loss_fn, const LatentState& state,
                                            std::span<const int> tokens, const AdapterSet& adapters,
                                            std::span<const PoolRequest> requests) const {
    if (adapters.empty()) throw std::invalid_argument("grad_wrt_adapters: no adapters");
    Tape tape;
    GraphOptions opts;
    opts.adapters_trainable = true;
    opts.stop_after_block = last_block(requests);
    const Graph g = build_graph(tape, state.z, noise_level(state.step), tokens, &adapters, opts);

    AdapterGradient out;
    out.pooled = pool_graph(tape, g, requests);
    PooledLoss loss = loss_fn(out.pooled);
    if (!std::isfinite(loss.value)) throw NonFiniteError("grad_wrt_adapters: non-finite loss");
    if (loss.grad.size() != requests.size()) throw std::invalid_argument("loss_fn: gradient count mismatch");
    out.loss = loss.value;
    seed_pooled_gradient(tape, g, requests, out.pooled, loss.grad);
    tape.backward();

    out.grad = AdapterSet(adapters.blocks(), adapters.dim(), adapters.rank());
    for (std::size_t f = 0; f < out.grad.factors().size(); ++f) {
        out.grad.factors()[f].down = tape.grad(g.adapter_down[f]);
        out.grad.factors()[f].up = tape.grad(g.adapter_up[f]);
    }
    if (!out.grad.all_finite()) throw NonFiniteError("grad_wrt_adapters: non-finite gradient");
    return out;
}

LatentState Denoiser::initial_state(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    LatentState s;
    s.z.resize(config_.tokens(), config_.channels);
    for (Eigen::Index i = 0; i < s.z.size(); ++i) s.z.data()[i] = normal(rng);
    s.step = 0;
    return s;
}

SampleResult Denoiser::sample(std::span<const int> tokens, AdapterSet* adapters, const StepHook& hook,
                              std::uint64_t seed, const std::vector<int>& capture) const {
    SampleResult result;
    result.final_state = initial_state(seed);
    LatentState& state = result.final_state;
    const double dt = 1.0 / static_cast<double>(config_.sampler_steps);
    for (int step = 0; step < config_.sampler_steps; ++step) {
        state.step = step;
        ForwardResult fr = forward(state, tokens, adapters, capture);
        ++result.forward_passes;
        if (hook && hook(step, state, fr.attention, adapters)) {
            fr = forward(state, tokens, adapters, capture);
            ++result.forward_passes;
        }
        state.z -= dt * fr.prediction;
        result.records.push_back(std::move(fr.attention));
    }
    state.step = config_.sampler_steps;
    return result;
}

}  // namespace ttom
