#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ttom/config.hpp"
#include "ttom/grammar.hpp"
#include "ttom/harness.hpp"
#include "ttom/pretrain.hpp"
#include "ttom/probe.hpp"

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::string> mode;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> prompts;
    std::optional<std::string> memory;
    std::optional<std::string> metrics;
    std::optional<std::string> checkpoint;
    std::optional<int> top_k;
    std::optional<int> guided_steps;
    std::optional<int> iters;
    std::optional<std::string> loss;
    std::optional<std::size_t> capacity;
    std::optional<double> threshold;
    bool readonly = false;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON run configuration");
        app->add_option("--mode", mode, "baseline | tto_only | ttom | ttom_readonly");
        app->add_option("--seed", seed, "Base seed");
        app->add_option("--prompts", prompts, "Prompt file, one prompt per line");
        app->add_option("--memory", memory, "Memory directory");
        app->add_option("--metrics", metrics, "Metrics JSONL output");
        app->add_option("--checkpoint", checkpoint, "Denoiser checkpoint");
        app->add_option("--top-k", top_k, "Memory entries fused per read");
        app->add_option("--guided-steps", guided_steps, "Optimized sampler steps");
        app->add_option("--iters", iters, "Optimizer iterations per guided step");
        app->add_option("--loss", loss, "jsd | ce | com");
        app->add_option("--capacity", capacity, "Memory capacity");
        app->add_option("--threshold", threshold, "Memory similarity threshold");
        app->add_flag("--readonly", readonly, "Shorthand for --mode ttom_readonly");
    }

    ttom::RunConfig resolve() const {
        ttom::RunConfig c = config_path.empty() ? ttom::RunConfig{} : ttom::load_run_config(config_path);
        if (mode) c.mode = ttom::parse_run_mode(*mode);
        if (readonly) c.mode = ttom::RunMode::TtomReadonly;
        if (seed) c.seed = *seed;
        if (prompts) c.prompts_path = *prompts;
        if (memory) c.memory_dir = *memory;
        if (metrics) c.metrics_path = *metrics;
        if (checkpoint) c.checkpoint = *checkpoint;
        if (top_k) c.memory.top_k = *top_k;
        if (guided_steps) c.tto.guided_steps = *guided_steps;
        if (iters) c.tto.iters_per_step = *iters;
        if (loss) c.tto.alignment.loss_kind = ttom::parse_loss_kind(*loss);
        if (capacity) c.memory.capacity = *capacity;
        if (threshold) c.memory.threshold = *threshold;
        return c;
    }
};

std::vector<std::string> prompts_or_grammar(const std::string& path, std::size_t count, std::uint64_t seed) {
    if (!path.empty()) return ttom::read_prompts(path);
    return ttom::PromptGrammar(seed).generate(count);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layout-guided test-time optimization with a parametric adapter memory"};
    app.require_subcommand(1);

    // pretrain
    auto* pretrain = app.add_subcommand("pretrain", "Pre-train the toy denoiser and write a checkpoint");
    Overrides pretrain_opts;
    pretrain_opts.attach(pretrain);
    ttom::PretrainConfig pretrain_cfg;
    std::string pretrain_out = "toy.ckpt";
    pretrain->add_option("--steps", pretrain_cfg.steps, "Training steps");
    pretrain->add_option("--lr", pretrain_cfg.learning_rate, "Learning rate");
    pretrain->add_option("--attention-weight", pretrain_cfg.attention_weight, "Weight of the attention term");
    pretrain->add_option("--supervised-blocks", pretrain_cfg.supervised_blocks, "Blocks with attention supervision");
    pretrain->add_option("--out", pretrain_out, "Checkpoint path");

    // probe
    auto* probe = app.add_subcommand("probe", "Score attention-layout overlap per block");
    Overrides probe_opts;
    probe_opts.attach(probe);
    int probe_step = 2;
    std::size_t probe_count = 50;
    std::string probe_out = "probe.json";
    probe->add_option("--step", probe_step, "Sampler step whose attention is scored");
    probe->add_option("--count", probe_count, "Grammar prompts when no prompt file is given");
    probe->add_option("--out", probe_out, "Report path");

    // build-memory
    auto* build = app.add_subcommand("build-memory", "Fill a memory from pseudo-training prompts");
    Overrides build_opts;
    build_opts.attach(build);
    std::size_t build_n = 200;
    bool build_sweep = false;
    build->add_option("--n", build_n, "Number of grammar prompts");
    build->add_flag("--sweep", build_sweep, "Build memories for 50, 100, 150 and 200 prompts under --memory");

    // run
    auto* run = app.add_subcommand("run", "Process a prompt stream");
    Overrides run_opts;
    run_opts.attach(run);

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
    Overrides ablate_opts;
    ablate_opts.attach(ablate);
    std::string preset = "loss";
    std::string ablate_out = "ablation";
    std::size_t ablate_count = 20;
    ablate->add_option("--preset", preset, "loss | topk | steps_iters | pseudo")->required();
    ablate->add_option("--out", ablate_out, "Output directory");
    ablate->add_option("--count", ablate_count, "Grammar prompts when no prompt file is given");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pretrain) {
            ttom::RunConfig c = pretrain_opts.resolve();
            pretrain_cfg.seed = c.seed;
            c.denoiser.seed = c.seed;
            const ttom::Denoiser model = ttom::pretrain_toy(c.denoiser, pretrain_cfg, [&](const ttom::PretrainStats& s) {
                if ((s.step + 1) % 50 == 0) {
                    std::fprintf(stderr, "step %d denoise %.5f attention %.5f\n", s.step + 1, s.denoise_loss,
                                 s.attention_loss);
                }
            });
            ttom::save_checkpoint(model, pretrain_out);
            std::printf("wrote %s (checksum %016llx)\n", pretrain_out.c_str(),
                        static_cast<unsigned long long>(model.weights().checksum()));
        } else if (*probe) {
            const ttom::Pipeline pipeline(probe_opts.resolve());
            const auto& cfg = pipeline.config();
            const auto prompts = prompts_or_grammar(cfg.prompts_path, probe_count, cfg.seed);
            std::vector<ttom::SpatioTemporalLayout> layouts;
            ttom::RuleBasedPlanner planner;
            for (const auto& p : prompts) {
                layouts.push_back(ttom::verify_layout(ttom::plan_layout(p, planner, cfg.num_frames, cfg.denoiser.latent)).layout);
            }
            const auto report = ttom::probe_blocks(pipeline.denoiser(), layouts, probe_step, cfg.seed);
            ttom::write_probe_report(report, probe_out);
            std::cout << report.to_json() << "\n";
        } else if (*build) {
            ttom::RunConfig c = build_opts.resolve();
            if (c.memory_dir.empty()) throw std::invalid_argument("build-memory needs --memory");
            const ttom::Pipeline base(c);
            const std::vector<std::string> given =
                c.prompts_path.empty() ? std::vector<std::string>{} : ttom::read_prompts(c.prompts_path);
            std::vector<std::size_t> sizes = build_sweep ? std::vector<std::size_t>{50, 100, 150, 200}
                                                         : std::vector<std::size_t>{build_n};
            const auto shared = std::make_shared<const ttom::Denoiser>(base.denoiser());
            for (std::size_t n : sizes) {
                ttom::RunConfig cell = c;
                if (build_sweep) {
                    cell.memory_dir = (std::filesystem::path(c.memory_dir) / ("n" + std::to_string(n))).string();
                    if (!c.metrics_path.empty()) cell.metrics_path = c.metrics_path + ".n" + std::to_string(n);
                }
                const auto report = ttom::build_pseudo_memory(ttom::Pipeline(cell, shared), n, given);
                std::printf("n=%zu memory_size=%zu final_hit_rate=%.4f dir=%s\n", n, report.memory_size,
                            report.hit_rate.empty() ? 0.0 : report.hit_rate.back(), cell.memory_dir.c_str());
            }
        } else if (*run) {
            const auto report = ttom::run_stream(run_opts.resolve());
            std::size_t errors = 0;
            std::size_t hits = 0;
            for (const auto& s : report.samples) {
                errors += s.ok ? 0 : 1;
                hits += s.memory_hit ? 1 : 0;
            }
            std::printf("samples=%zu errors=%zu memory_hits=%zu memory_size=%zu\n", report.samples.size(), errors,
                        hits, report.memory_size);
        } else if (*ablate) {
            const ttom::RunConfig c = ablate_opts.resolve();
            const auto prompts = prompts_or_grammar(c.prompts_path, ablate_count, c.seed);
            const auto rows = ttom::run_ablation(ttom::ablation_cells(preset, c), prompts, ablate_out);
            std::cout << ttom::format_summary(rows);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
