#include "ttom/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ttom {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw std::invalid_argument(std::string("config: ") + section + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
        if (!ok.count(k)) throw std::invalid_argument(std::string("config: unknown key ") + section + "." + k);
    }
}

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

const char* run_mode_name(RunMode mode) noexcept {
    switch (mode) {
        case RunMode::Baseline: return "baseline";
        case RunMode::TtoOnly: return "tto_only";
        case RunMode::Ttom: return "ttom";
        case RunMode::TtomReadonly: return "ttom_readonly";
    }
    return "?";
}

RunMode parse_run_mode(const std::string& name) {
    if (name == "baseline") return RunMode::Baseline;
    if (name == "tto_only") return RunMode::TtoOnly;
    if (name == "ttom") return RunMode::Ttom;
    if (name == "ttom_readonly") return RunMode::TtomReadonly;
    throw std::invalid_argument("unknown mode: " + name);
}

void RunConfig::validate() const {
    denoiser.validate();
    if (adapter_rank < 1) throw std::invalid_argument("config: adapter_rank must be >= 1");
    // guided blocks and step bounds are checked against the loaded denoiser by the harness
    if (tto.guided_steps < 0 || tto.iters_per_step < 1) throw std::invalid_argument("config: bad tto step counts");
    tto.optimizer.validate();
    if (memory.top_k < 1) throw std::invalid_argument("config: memory.top_k must be >= 1");
    if (memory.capacity < 1) throw std::invalid_argument("config: memory.capacity must be >= 1");
    if (!(memory.threshold > 0.0 && memory.threshold <= 1.0)) {
        throw std::invalid_argument("config: memory.threshold must lie in (0, 1]");
    }
    if (!(mask_sigma > 0.0)) throw std::invalid_argument("config: mask_sigma must be > 0");
    if (num_frames < denoiser.latent.tau || num_frames % denoiser.latent.tau != 0) {
        throw std::invalid_argument("config: num_frames must be a positive multiple of the latent frame count");
    }
    if (planner.kind != "rule" && planner.kind != "chat") throw std::invalid_argument("config: planner.kind must be rule or chat");
    if (planner.kind == "chat" && planner.client.endpoint.empty()) {
        throw std::invalid_argument("config: planner.endpoint is required for the chat planner");
    }
    if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
    if (mode == RunMode::TtomReadonly && memory_dir.empty()) {
        throw std::invalid_argument("config: ttom_readonly needs a memory directory");
    }
}

RunConfig run_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    check_keys(j, "root",
               {"mode", "seed", "denoiser", "checkpoint", "adapter_rank", "tto", "alignment", "memory", "planner",
                "mask_sigma", "num_frames", "shuffle", "workers", "prompts", "memory_dir", "metrics"});
    RunConfig c;
    if (j.contains("mode")) c.mode = parse_run_mode(j.at("mode").get<std::string>());
    take(j, "seed", c.seed);
    take(j, "checkpoint", c.checkpoint);
    take(j, "adapter_rank", c.adapter_rank);
    take(j, "mask_sigma", c.mask_sigma);
    take(j, "num_frames", c.num_frames);
    take(j, "shuffle", c.shuffle);
    take(j, "workers", c.workers);
    take(j, "prompts", c.prompts_path);
    take(j, "memory_dir", c.memory_dir);
    take(j, "metrics", c.metrics_path);

    if (j.contains("denoiser")) {
        const json& d = j.at("denoiser");
        check_keys(d, "denoiser",
                   {"tau", "h", "w", "channels", "blocks", "heads", "text_len", "vocab", "mlp_ratio", "sampler_steps",
                    "schedule", "seed"});
        take(d, "tau", c.denoiser.latent.tau);
        take(d, "h", c.denoiser.latent.h);
        take(d, "w", c.denoiser.latent.w);
        take(d, "channels", c.denoiser.channels);
        take(d, "blocks", c.denoiser.blocks);
        take(d, "heads", c.denoiser.heads);
        take(d, "text_len", c.denoiser.text_len);
        take(d, "vocab", c.denoiser.vocab);
        take(d, "mlp_ratio", c.denoiser.mlp_ratio);
        take(d, "sampler_steps", c.denoiser.sampler_steps);
        take(d, "schedule", c.denoiser.schedule);
        take(d, "seed", c.denoiser.seed);
    }
    if (j.contains("tto")) {
        const json& t = j.at("tto");
        check_keys(t, "tto",
                   {"guided_steps", "iters_per_step", "learning_rate", "beta1", "beta2", "epsilon", "weight_decay",
                    "reset_optimizer_each_step"});
        take(t, "guided_steps", c.tto.guided_steps);
        take(t, "iters_per_step", c.tto.iters_per_step);
        take(t, "learning_rate", c.tto.optimizer.learning_rate);
        take(t, "beta1", c.tto.optimizer.beta1);
        take(t, "beta2", c.tto.optimizer.beta2);
        take(t, "epsilon", c.tto.optimizer.epsilon);
        take(t, "weight_decay", c.tto.optimizer.weight_decay);
        take(t, "reset_optimizer_each_step", c.tto.reset_optimizer_each_step);
    }
    if (j.contains("alignment")) {
        const json& a = j.at("alignment");
        check_keys(a, "alignment", {"loss", "guided_blocks", "probe_report", "policy", "top_k_blocks", "threshold"});
        if (a.contains("loss")) c.tto.alignment.loss_kind = parse_loss_kind(a.at("loss").get<std::string>());
        take(a, "guided_blocks", c.tto.alignment.guided_blocks);
        take(a, "probe_report", c.probe_report);
        if (a.contains("policy")) {
            const auto p = a.at("policy").get<std::string>();
            if (p == "top_k") {
                c.block_policy.kind = BlockPolicy::Kind::TopK;
            } else if (p == "threshold") {
                c.block_policy.kind = BlockPolicy::Kind::Threshold;
            } else {
                throw std::invalid_argument("config: alignment.policy must be top_k or threshold");
            }
        }
        take(a, "top_k_blocks", c.block_policy.k);
        take(a, "threshold", c.block_policy.threshold);
    }
    if (j.contains("memory")) {
        const json& m = j.at("memory");
        check_keys(m, "memory", {"capacity", "threshold", "top_k", "continual_tto", "embed_dim"});
        take(m, "capacity", c.memory.capacity);
        take(m, "threshold", c.memory.threshold);
        take(m, "top_k", c.memory.top_k);
        take(m, "continual_tto", c.memory.continual_tto);
        take(m, "embed_dim", c.memory.embed_dim);
    }
    if (j.contains("planner")) {
        const json& p = j.at("planner");
        check_keys(p, "planner", {"kind", "endpoint", "model", "api_key_env", "timeout_seconds"});
        take(p, "kind", c.planner.kind);
        take(p, "endpoint", c.planner.client.endpoint);
        take(p, "model", c.planner.client.model);
        take(p, "api_key_env", c.planner.client.api_key_env);
        take(p, "timeout_seconds", c.planner.client.timeout_seconds);
    }
    return c;
}

std::string run_config_to_json(const RunConfig& c) {
    json j;
    j["mode"] = run_mode_name(c.mode);
    j["seed"] = c.seed;
    j["denoiser"] = {{"tau", c.denoiser.latent.tau},
                     {"h", c.denoiser.latent.h},
                     {"w", c.denoiser.latent.w},
                     {"channels", c.denoiser.channels},
                     {"blocks", c.denoiser.blocks},
                     {"heads", c.denoiser.heads},
                     {"text_len", c.denoiser.text_len},
                     {"vocab", c.denoiser.vocab},
                     {"mlp_ratio", c.denoiser.mlp_ratio},
                     {"sampler_steps", c.denoiser.sampler_steps},
                     {"schedule", c.denoiser.schedule},
                     {"seed", c.denoiser.seed}};
    j["checkpoint"] = c.checkpoint;
    j["adapter_rank"] = c.adapter_rank;
    j["tto"] = {{"guided_steps", c.tto.guided_steps},
                {"iters_per_step", c.tto.iters_per_step},
                {"learning_rate", c.tto.optimizer.learning_rate},
                {"beta1", c.tto.optimizer.beta1},
                {"beta2", c.tto.optimizer.beta2},
                {"epsilon", c.tto.optimizer.epsilon},
                {"weight_decay", c.tto.optimizer.weight_decay},
                {"reset_optimizer_each_step", c.tto.reset_optimizer_each_step}};
    j["alignment"] = {{"loss", loss_kind_name(c.tto.alignment.loss_kind)},
                      {"guided_blocks", c.tto.alignment.guided_blocks},
                      {"probe_report", c.probe_report},
                      {"policy", c.block_policy.kind == BlockPolicy::Kind::TopK ? "top_k" : "threshold"},
                      {"top_k_blocks", c.block_policy.k},
                      {"threshold", c.block_policy.threshold}};
    j["memory"] = {{"capacity", c.memory.capacity},
                   {"threshold", c.memory.threshold},
                   {"top_k", c.memory.top_k},
                   {"continual_tto", c.memory.continual_tto},
                   {"embed_dim", c.memory.embed_dim}};
    j["planner"] = {{"kind", c.planner.kind},
                    {"endpoint", c.planner.client.endpoint},
                    {"model", c.planner.client.model},
                    {"api_key_env", c.planner.client.api_key_env},
                    {"timeout_seconds", c.planner.client.timeout_seconds}};
    j["mask_sigma"] = c.mask_sigma;
    j["num_frames"] = c.num_frames;
    j["shuffle"] = c.shuffle;
    j["workers"] = c.workers;
    j["prompts"] = c.prompts_path;
    j["memory_dir"] = c.memory_dir;
    j["metrics"] = c.metrics_path;
    return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return run_config_from_json(ss.str());
}

}  // namespace ttom
