#include "ttom/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "ttom/grammar.hpp"
#include "ttom/mask.hpp"
#include "ttom/probe.hpp"

namespace ttom {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kAdapterSeedSalt = 0xada7e5eedull;
constexpr std::uint64_t kPseudoPromptSalt = 0x5eed0f9e5eedull;

std::unique_ptr<LayoutPlanner> make_planner(const PlannerConfig& cfg) {
    if (cfg.kind == "chat") return std::make_unique<ChatCompletionPlanner>(cfg.client);
    return std::make_unique<RuleBasedPlanner>();
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& l : lines) out << l << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

void write_metrics(const std::vector<SampleMetrics>& samples, const std::string& path) {
    std::vector<std::string> metrics;
    std::vector<std::string> trace;
    std::vector<std::string> timing;
    for (const auto& s : samples) {
        metrics.push_back(s.to_jsonl());
        for (const auto& t : s.traces) {
            for (std::size_t i = 0; i < t.losses.size(); ++i) {
                json j;
                j["sample_id"] = s.sample_id;
                j["step"] = t.step;
                j["iter"] = i;
                j["loss"] = t.losses[i];
                trace.push_back(j.dump());
            }
        }
        json j;
        j["sample_id"] = s.sample_id;
        j["latency_ms"] = s.latency_ms;
        timing.push_back(j.dump());
    }
    write_lines(path, metrics);
    write_lines(path + ".trace.jsonl", trace);
    write_lines(path + ".timing.jsonl", timing);
}

bool has_store(const std::string& dir) { return !dir.empty() && fs::exists(fs::path(dir) / "manifest.json"); }

std::vector<SampleMetrics> run_prompts(const Pipeline& pipeline, const std::vector<std::string>& prompts,
                                       MemoryStore* memory) {
    const RunConfig& cfg = pipeline.config();
    std::vector<std::size_t> order(prompts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), std::mt19937_64(cfg.seed));

    std::vector<SampleMetrics> out(prompts.size());
    const bool parallel =
        cfg.workers > 1 && (cfg.mode == RunMode::Baseline || cfg.mode == RunMode::TtomReadonly);
    if (!parallel) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            out[i] = pipeline.process(prompts[order[i]], static_cast<int>(i), memory);
        }
        return out;
    }
    // memory is only peeked in these modes, so workers share it without locking
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < order.size(); i = next++) {
            out[i] = pipeline.process(prompts[order[i]], static_cast<int>(i), memory);
        }
    };
    std::vector<std::thread> threads;
    for (int t = 0; t < cfg.workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    return out;
}

}  // namespace

std::string SampleMetrics::to_jsonl() const {
    json j;
    j["sample_id"] = sample_id;
    j["prompt"] = prompt;
    j["status"] = ok ? "ok" : "error";
    j["error"] = error;
    j["key_id"] = key_id;
    j["abstract_text"] = abstract_text;
    j["memory_hit"] = memory_hit;
    j["matched_ids"] = matched_ids;
    j["match_similarity"] = match_similarity;
    j["tto_ran"] = tto_ran;
    j["guided_blocks"] = guided_blocks;
    j["initial_loss"] = initial_loss;
    j["final_loss"] = final_loss;
    j["pre_miou"] = pre_miou;
    j["post_miou"] = post_miou;
    json trace = json::array();
    for (const auto& t : traces) trace.push_back({{"step", t.step}, {"losses", t.losses}});
    j["loss_trace"] = std::move(trace);
    j["forward_passes"] = forward_passes;
    j["optimizer_iterations"] = optimizer_iterations;
    j["memory_size"] = memory_size;
    return j.dump();
}

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)), embedder_(config_.memory.embed_dim) {
    config_.validate();
    if (config_.checkpoint.empty()) {
        denoiser_ = std::make_shared<const Denoiser>(Denoiser::random(config_.denoiser));
    } else {
        denoiser_ = std::make_shared<const Denoiser>(load_checkpoint(config_.checkpoint));
    }
    resolve();
}

Pipeline::Pipeline(RunConfig config, std::shared_ptr<const Denoiser> denoiser)
    : config_(std::move(config)), denoiser_(std::move(denoiser)), embedder_(config_.memory.embed_dim) {
    if (!denoiser_) throw std::invalid_argument("Pipeline: null denoiser");
    config_.validate();
    resolve();
}

void Pipeline::resolve() {
    // the loaded network is authoritative for shapes
    config_.denoiser = denoiser_->config();
    if (!config_.probe_report.empty()) {
        const ProbeReport report = read_probe_report(config_.probe_report);
        if (report.block_scores.size() != static_cast<std::size_t>(config_.denoiser.blocks)) {
            throw std::invalid_argument("probe report does not match the denoiser's block count");
        }
        config_.tto.alignment.guided_blocks = select_guided_blocks(report.block_scores, config_.block_policy);
    }
    guided_blocks_ = config_.tto.alignment.guided_blocks;
    config_.tto.validate(config_.denoiser);
    if (config_.num_frames % config_.denoiser.latent.tau != 0) {
        throw std::invalid_argument("num_frames must be a multiple of the latent frame count");
    }
}

MemoryStore Pipeline::make_memory() const {
    return MemoryStore(config_.memory.capacity, config_.memory.threshold, config_.memory.embed_dim);
}

MemoryKey Pipeline::key_for(const std::string& prompt) const {
    auto planner = make_planner(config_.planner);
    const SpatioTemporalLayout layout =
        verify_layout(plan_layout(prompt, *planner, config_.num_frames, denoiser_->config().latent)).layout;
    return make_key(abstract_prompt(layout), embedder_);
}

SampleMetrics Pipeline::process(const std::string& prompt, int sample_id, MemoryStore* memory) const {
    const auto start = std::chrono::steady_clock::now();
    const DenoiserConfig& dc = denoiser_->config();
    SampleMetrics m;
    m.sample_id = sample_id;
    m.prompt = prompt;
    m.guided_blocks = guided_blocks_;
    try {
        auto planner = make_planner(config_.planner);
        const SpatioTemporalLayout layout =
            verify_layout(plan_layout(prompt, *planner, config_.num_frames, dc.latent)).layout;
        const auto targets = build_targets(layout, config_.mask_sigma);
        const auto words = tokenize(prompt);
        if (words.size() > static_cast<std::size_t>(dc.text_len)) {
            throw std::invalid_argument("prompt has " + std::to_string(words.size()) + " tokens, cap is " +
                                        std::to_string(dc.text_len));
        }
        const auto tokens = encode_tokens(words, dc.vocab);
        m.abstract_text = abstract_prompt(layout);
        const MemoryKey key = make_key(m.abstract_text, embedder_);
        m.key_id = key.id;

        const std::uint64_t seed = config_.seed + static_cast<std::uint64_t>(sample_id);
        AdapterSet init = AdapterSet::fresh(dc.blocks, dc.channels, config_.adapter_rank, seed ^ kAdapterSeedSalt);
        const bool uses_memory = config_.mode == RunMode::Ttom || config_.mode == RunMode::TtomReadonly;
        ReadResult read;
        if (uses_memory) {
            if (!memory) throw std::logic_error("memory mode without a memory store");
            read = config_.mode == RunMode::Ttom ? memory->read(key, config_.memory.top_k)
                                                 : memory->peek(key, config_.memory.top_k);
        }
        if (read.hit()) {
            init = *read.fused;
            m.memory_hit = true;
            for (const auto& match : read.matches) m.matched_ids.push_back(match.id);
            m.match_similarity = read.matches.front().similarity;
        }

        const bool optimize = config_.mode == RunMode::TtoOnly ||
                              (uses_memory && (!read.hit() || config_.memory.continual_tto));
        TTOConfig tto = config_.tto;
        if (!optimize) tto.guided_steps = 0;
        TTOResult result = run_tto(*denoiser_, tokens, targets, init, tto, seed);
        m.tto_ran = optimize && tto.guided_steps > 0;
        m.traces = result.traces;
        m.forward_passes = result.sample.forward_passes;
        for (const auto& t : result.traces) m.optimizer_iterations += static_cast<int>(t.losses.size());

        // diagnostics on the step-0 latent, before and after optimization
        const LatentState z0 = denoiser_->initial_state(seed);
        const auto requests = pool_requests(targets, guided_blocks_);
        const PooledLossFn loss_fn = make_loss_fn(tto.alignment.loss_kind, targets);
        m.initial_loss = denoiser_->evaluate_loss(loss_fn, z0, tokens, &init, requests);
        m.final_loss = denoiser_->evaluate_loss(loss_fn, z0, tokens, &result.adapters, requests);
        m.pre_miou = layout_miou(denoiser_->forward(z0, tokens, &init, guided_blocks_).attention, targets,
                                 guided_blocks_, dc.latent);
        m.post_miou = layout_miou(denoiser_->forward(z0, tokens, &result.adapters, guided_blocks_).attention,
                                  targets, guided_blocks_, dc.latent);

        if (config_.mode == RunMode::Ttom) {
            if (!read.hit()) {
                memory->insert(key, result.adapters);
            } else if (m.tto_ran) {
                memory->update(m.matched_ids, result.adapters);
            }
        }
    } catch (const std::exception& e) {
        m.ok = false;
        m.error = e.what();
    }
    m.memory_size = memory ? memory->size() : 0;
    m.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return m;
}

std::vector<std::string> read_prompts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read prompts file: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        out.push_back(line);
    }
    return out;
}

StreamReport run_stream(const Pipeline& pipeline, const std::vector<std::string>& prompts) {
    const RunConfig& cfg = pipeline.config();
    std::optional<MemoryStore> memory;
    if (cfg.mode == RunMode::Ttom) {
        memory = has_store(cfg.memory_dir) ? MemoryStore::load(cfg.memory_dir) : pipeline.make_memory();
    } else if (cfg.mode == RunMode::TtomReadonly) {
        if (!has_store(cfg.memory_dir)) throw std::invalid_argument("no memory store in " + cfg.memory_dir);
        memory = MemoryStore::load(cfg.memory_dir);
    }
    StreamReport report;
    report.samples = run_prompts(pipeline, prompts, memory ? &*memory : nullptr);
    report.memory_size = memory ? memory->size() : 0;
    if (!cfg.metrics_path.empty()) write_metrics(report.samples, cfg.metrics_path);
    if (cfg.mode == RunMode::Ttom && !cfg.memory_dir.empty()) memory->save(cfg.memory_dir);
    return report;
}

StreamReport run_stream(const RunConfig& config) {
    if (config.prompts_path.empty()) throw std::invalid_argument("run_stream: no prompts file");
    const Pipeline pipeline(config);
    return run_stream(pipeline, read_prompts(config.prompts_path));
}

PseudoMemoryReport build_pseudo_memory(const Pipeline& pipeline, std::size_t n_prompts,
                                       const std::vector<std::string>& prompts, MemoryStore* out,
                                       const MemorySnapshotFn& on_prompt) {
    if (prompts.empty() && n_prompts < 1) throw std::invalid_argument("build_pseudo_memory: n_prompts must be >= 1");
    RunConfig cfg = pipeline.config();
    cfg.mode = RunMode::Ttom;
    const Pipeline writer(cfg, std::make_shared<const Denoiser>(pipeline.denoiser()));

    std::vector<std::string> stream = prompts;
    if (stream.empty()) stream = PromptGrammar(cfg.seed ^ kPseudoPromptSalt).generate(n_prompts);
    MemoryStore memory = writer.make_memory();
    PseudoMemoryReport report;
    std::vector<SampleMetrics> samples;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        samples.push_back(writer.process(stream[i], static_cast<int>(i), &memory));
        hits += samples.back().memory_hit ? 1 : 0;
        report.hit_rate.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
        if (on_prompt) on_prompt(i + 1, memory);
    }
    report.memory_size = memory.size();
    if (!cfg.memory_dir.empty()) memory.save(cfg.memory_dir);
    if (!cfg.metrics_path.empty()) write_metrics(samples, cfg.metrics_path);
    if (out) *out = std::move(memory);
    return report;
}

std::vector<AblationCell> ablation_cells(const std::string& preset, const RunConfig& base) {
    std::vector<AblationCell> cells;
    if (preset == "loss") {
        for (LossKind k : {LossKind::Jsd, LossKind::Ce, LossKind::Com}) {
            AblationCell c{std::string("loss_") + loss_kind_name(k), base, 0};
            c.config.mode = RunMode::TtoOnly;
            c.config.tto.alignment.loss_kind = k;
            cells.push_back(std::move(c));
        }
    } else if (preset == "topk") {
        for (int k : {5, 10}) {
            for (bool continual : {false, true}) {
                AblationCell c{"topk_" + std::to_string(k) + (continual ? "_tto" : "_notto"), base, 200};
                c.config.mode = RunMode::TtomReadonly;
                c.config.memory.top_k = k;
                c.config.memory.continual_tto = continual;
                cells.push_back(std::move(c));
            }
        }
    } else if (preset == "steps_iters") {
        for (int steps : {1, 3, 5, 7}) {
            for (int iters : {4, 8, 12, 16}) {
                AblationCell c{"steps_" + std::to_string(steps) + "_iters_" + std::to_string(iters), base, 0};
                c.config.mode = RunMode::TtoOnly;
                c.config.tto.guided_steps = steps;
                c.config.tto.iters_per_step = iters;
                cells.push_back(std::move(c));
            }
        }
    } else if (preset == "pseudo") {
        for (std::size_t n : {50u, 100u, 150u, 200u}) {
            AblationCell c{"pseudo_" + std::to_string(n), base, n};
            c.config.mode = RunMode::TtomReadonly;
            cells.push_back(std::move(c));
        }
    } else {
        throw std::invalid_argument("unknown ablation preset: " + preset);
    }
    return cells;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const std::vector<std::string>& prompts,
                                      const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<AblationRow> rows;
    std::shared_ptr<const Denoiser> shared;
    std::map<std::size_t, std::string> memories;  // pseudo prompt count -> store directory
    for (const auto& cell : cells) {
        RunConfig cfg = cell.config;
        cfg.metrics_path = (fs::path(out_dir) / (cell.name + ".jsonl")).string();
        if (!shared) shared = std::make_shared<const Denoiser>(Pipeline(cfg).denoiser());
        if (cell.pseudo_prompts > 0) {
            auto it = memories.find(cell.pseudo_prompts);
            if (it == memories.end()) {
                RunConfig build = cfg;
                build.memory_dir = (fs::path(out_dir) / ("memory_" + std::to_string(cell.pseudo_prompts))).string();
                build.metrics_path.clear();
                build_pseudo_memory(Pipeline(build, shared), cell.pseudo_prompts, {});
                it = memories.emplace(cell.pseudo_prompts, build.memory_dir).first;
            }
            cfg.memory_dir = it->second;
        } else if (cfg.mode == RunMode::Ttom) {
            cfg.memory_dir = (fs::path(out_dir) / (cell.name + "_memory")).string();
        }
        const StreamReport report = run_stream(Pipeline(cfg, shared), prompts);

        AblationRow row;
        row.cell = cell.name;
        row.samples = report.samples.size();
        std::size_t ok = 0;
        for (const auto& s : report.samples) {
            row.mean_latency_ms += s.latency_ms;
            if (!s.ok) {
                ++row.errors;
                continue;
            }
            ++ok;
            row.mean_final_loss += s.final_loss;
            row.mean_post_miou += s.post_miou;
        }
        if (ok > 0) {
            row.mean_final_loss /= static_cast<double>(ok);
            row.mean_post_miou /= static_cast<double>(ok);
        }
        if (!report.samples.empty()) row.mean_latency_ms /= static_cast<double>(report.samples.size());
        rows.push_back(row);
    }
    std::ofstream out(fs::path(out_dir) / "summary.tsv", std::ios::trunc);
    out << format_summary(rows);
    return rows;
}

std::string format_summary(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "cell\tsamples\terrors\tmean_final_loss\tmean_post_miou\tmean_latency_ms\n";
    for (const auto& r : rows) {
        os << r.cell << '\t' << r.samples << '\t' << r.errors << '\t' << r.mean_final_loss << '\t'
           << r.mean_post_miou << '\t' << r.mean_latency_ms << '\n';
    }
    return os.str();
}

}  // namespace ttom
