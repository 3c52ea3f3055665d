#include "ttom/pretrain.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "ttom/align.hpp"
#include "ttom/grammar.hpp"
#include "ttom/mask.hpp"
#include "ttom/optim.hpp"

namespace ttom {

using ad::Matrix;

namespace {

Eigen::RowVectorXd phrase_pattern(const std::string& phrase, int channels) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : phrase) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::mt19937_64 rng(h);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::RowVectorXd v(channels);
    for (int i = 0; i < channels; ++i) v(i) = normal(rng);
    return v / v.norm() * std::sqrt(static_cast<double>(channels));
}

}  // namespace

Matrix synthetic_clip(const SpatioTemporalLayout& layout, int channels) {
    const LatentDims& dims = layout.latent_dims;
    Matrix x = Matrix::Zero(static_cast<Eigen::Index>(dims.cells()), channels);
    const auto targets = build_targets(layout);
    for (std::size_t k = 0; k < targets.size(); ++k) {
        const Eigen::RowVectorXd pattern = phrase_pattern(layout.objects[k].phrase, channels);
        for (std::size_t n = 0; n < dims.cells(); ++n) {
            if (targets[k].box_mask[n]) x.row(static_cast<Eigen::Index>(n)) += pattern;
        }
    }
    return x;
}

Denoiser pretrain_toy(const DenoiserConfig& config, const PretrainConfig& options,
                      const std::function<void(const PretrainStats&)>& progress) {
    if (options.steps < 0) throw std::invalid_argument("pretrain: steps must be >= 0");
    for (int b : options.supervised_blocks) {
        if (b < 0 || b >= config.blocks) throw std::invalid_argument("pretrain: supervised block out of range");
    }
    Denoiser model = Denoiser::random(config);
    if (options.steps == 0) return model;

    DenoiserWeights weights = model.weights();
    std::vector<Matrix*> params = weights.parameters();
    std::size_t total = 0;
    for (const Matrix* p : params) total += static_cast<std::size_t>(p->size());
    AdamWState state(total);
    AdamWConfig adam;
    adam.learning_rate = options.learning_rate;
    adam.weight_decay = 0.0;

    PromptGrammar grammar(options.seed);
    RuleBasedPlanner planner;
    std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const Eigen::Index n_cells = static_cast<Eigen::Index>(config.latent.cells());

    for (int step = 0; step < options.steps; ++step) {
        const Denoiser current(config, weights);
        const std::string prompt = grammar.next();
        const auto layout = verify_layout(plan_layout(prompt, planner, 4 * config.latent.tau, config.latent)).layout;
        const auto targets = build_targets(layout);
        const auto tokens = encode_tokens(tokenize(prompt), config.vocab);
        const Matrix x = synthetic_clip(layout, config.channels);
        Matrix noise(n_cells, config.channels);
        for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
        const double s = uniform(rng);
        const Matrix z = (1.0 - s) * x + s * noise;

        ad::Tape tape;
        Denoiser::GraphOptions opts;
        opts.weights_trainable = true;
        const Denoiser::Graph g = current.build_graph(tape, z, s, tokens, nullptr, opts);

        PretrainStats stats;
        stats.step = step;
        const Matrix diff = tape.value(g.prediction) - (noise - x);
        stats.denoise_loss = diff.squaredNorm() / static_cast<double>(diff.size());
        tape.seed(g.prediction, diff * (2.0 / static_cast<double>(diff.size())));

        if (!options.supervised_blocks.empty() && options.attention_weight > 0.0) {
            const auto requests = pool_requests(targets, options.supervised_blocks);
            const auto pooled = current.pool_graph(tape, g, requests);
            PooledLoss loss = loss_align(pooled, targets);
            stats.attention_loss = loss.value;
            for (auto& grid : loss.grad) {
                for (double& v : grid.values()) v *= options.attention_weight;
            }
            current.seed_pooled_gradient(tape, g, requests, pooled, loss.grad);
        }
        if (!std::isfinite(stats.denoise_loss) || !std::isfinite(stats.attention_loss)) {
            throw NonFiniteError("pretrain: non-finite loss at step " + std::to_string(step));
        }
        tape.backward();

        std::vector<double> flat;
        std::vector<double> grads;
        flat.reserve(total);
        grads.reserve(total);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Matrix grad = tape.grad(g.weight_vars[i]);
            flat.insert(flat.end(), params[i]->data(), params[i]->data() + params[i]->size());
            grads.insert(grads.end(), grad.data(), grad.data() + grad.size());
        }
        adamw_step(flat, grads, state, adam);
        std::size_t offset = 0;
        for (Matrix* p : params) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), p->size(), p->data());
            offset += static_cast<std::size_t>(p->size());
        }
        if (progress) progress(stats);
    }
    for (Matrix* p : params) *p = p->unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
    return Denoiser(config, std::move(weights));
}

}  // namespace ttom
