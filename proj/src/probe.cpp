#include "ttom/probe.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ttom {

using json = nlohmann::ordered_json;

BinaryGrid binarize_attention(const PooledAttention& pooled, int target_cells) {
    const std::size_t n = pooled.values.size();
    if (target_cells < 1 || static_cast<std::size_t>(target_cells) > n) {
        throw std::invalid_argument("binarize_attention: target_cells out of range");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto& v = pooled.values.values();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    BinaryGrid out(pooled.values.dims(), 0);
    for (int i = 0; i < target_cells; ++i) out[order[static_cast<std::size_t>(i)]] = 1;
    return out;
}

double miou(const BinaryGrid& pred, const BinaryGrid& truth) {
    require_same_shape(pred.dims(), truth.dims(), "miou");
    if (std::none_of(truth.values().begin(), truth.values().end(), [](unsigned char c) { return c != 0; })) {
        throw std::invalid_argument("miou: empty truth mask");
    }
    const LatentDims& d = truth.dims();
    double total = 0.0;
    int frames = 0;
    for (int t = 0; t < d.tau; ++t) {
        int inter = 0;
        int uni = 0;
        for (int r = 0; r < d.h; ++r) {
            for (int c = 0; c < d.w; ++c) {
                const bool a = pred.at(t, r, c) != 0;
                const bool b = truth.at(t, r, c) != 0;
                inter += (a && b) ? 1 : 0;
                uni += (a || b) ? 1 : 0;
            }
        }
        if (uni == 0) continue;
        total += static_cast<double>(inter) / uni;
        ++frames;
    }
    return total / frames;
}

double layout_miou(const AttentionRecord& record, std::span<const ObjectTarget> targets,
                   const std::vector<int>& blocks, LatentDims dims) {
    if (targets.empty() || blocks.empty()) throw std::invalid_argument("layout_miou: nothing to score");
    double total = 0.0;
    for (const auto& t : targets) {
        for (int b : blocks) {
            const PooledAttention pooled = pool_object_attention(record, b, t.span, dims, t.object_id);
            total += miou(binarize_attention(pooled, t.target_cells), t.box_mask);
        }
    }
    return total / static_cast<double>(targets.size() * blocks.size());
}

std::string ProbeReport::to_json() const {
    json j;
    j["block_scores"] = block_scores;
    j["prompt_count"] = prompt_count;
    j["sample_step"] = sample_step;
    j["binarization"] = binarization;
    return j.dump(2);
}

ProbeReport ProbeReport::from_json(const std::string& text) {
    const json j = json::parse(text);
    ProbeReport r;
    r.block_scores = j.at("block_scores").get<std::vector<double>>();
    r.prompt_count = j.at("prompt_count").get<int>();
    r.sample_step = j.at("sample_step").get<int>();
    r.binarization = j.at("binarization").get<std::string>();
    return r;
}

void write_probe_report(const ProbeReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write probe report: " + path);
    out << report.to_json() << "\n";
}

ProbeReport read_probe_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read probe report: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ProbeReport::from_json(ss.str());
}

ProbeReport probe_blocks(const Denoiser& denoiser, std::span<const SpatioTemporalLayout> layouts, int sample_step,
                         std::uint64_t seed) {
    const DenoiserConfig& cfg = denoiser.config();
    if (sample_step < 0 || sample_step >= cfg.sampler_steps) {
        throw std::invalid_argument("probe_blocks: sample_step must lie in [0, sampler_steps)");
    }
    if (layouts.empty()) throw std::invalid_argument("probe_blocks: no prompts");
    std::vector<int> all_blocks(static_cast<std::size_t>(cfg.blocks));
    std::iota(all_blocks.begin(), all_blocks.end(), 0);

    ProbeReport report;
    report.sample_step = sample_step;
    report.prompt_count = static_cast<int>(layouts.size());
    report.block_scores.assign(all_blocks.size(), 0.0);
    const double dt = 1.0 / cfg.sampler_steps;
    for (std::size_t i = 0; i < layouts.size(); ++i) {
        const SpatioTemporalLayout& layout = layouts[i];
        require_same_shape(layout.latent_dims, cfg.latent, "probe_blocks");
        const auto tokens = encode_tokens(tokenize(layout.prompt), cfg.vocab);
        const auto targets = build_targets(layout);
        LatentState state = denoiser.initial_state(seed + i);
        for (int s = 0; s < sample_step; ++s) {
            state.step = s;
            state.z -= dt * denoiser.forward(state, tokens, nullptr, {}).prediction;
        }
        state.step = sample_step;
        const ForwardResult fr = denoiser.forward(state, tokens, nullptr, all_blocks);
        for (int b : all_blocks) {
            report.block_scores[static_cast<std::size_t>(b)] += layout_miou(fr.attention, targets, {b}, cfg.latent);
        }
    }
    for (double& s : report.block_scores) s /= static_cast<double>(layouts.size());
    return report;
}

}  // namespace ttom
