#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ttom/config.hpp"
#include "ttom/grammar.hpp"
#include "ttom/harness.hpp"
#include "ttom/pretrain.hpp"

using namespace ttom;
namespace fs = std::filesystem;

namespace {

RunConfig small_run(RunMode mode) {
    RunConfig c;
    c.mode = mode;
    c.seed = 4;
    c.denoiser.latent = {2, 4, 4};
    c.denoiser.channels = 16;
    c.denoiser.blocks = 2;
    c.denoiser.heads = 2;
    c.denoiser.vocab = 64;
    c.denoiser.sampler_steps = 3;
    c.adapter_rank = 2;
    c.num_frames = 8;
    c.tto.guided_steps = 1;
    c.tto.iters_per_step = 2;
    c.tto.alignment.guided_blocks = {0, 1};
    c.memory.capacity = 8;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string dir_digest(const fs::path& dir) {
    std::string all;
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir)) files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) all += f.filename().string() + "\n" + slurp(f) + "\n";
    return fnv1a_hex(all);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("run configs round-trip through JSON and reject unknown keys") {
    RunConfig c = small_run(RunMode::TtomReadonly);
    c.memory_dir = "mem";
    c.memory.threshold = 0.9;
    c.block_policy.kind = BlockPolicy::Kind::Threshold;
    c.tto.alignment.loss_kind = LossKind::Com;
    const RunConfig back = run_config_from_json(run_config_to_json(c));
    CHECK(run_config_to_json(back) == run_config_to_json(c));
    CHECK_THROWS_AS(run_config_from_json(R"({"seeed": 3})"), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(R"({"memory": {"capcity": 3}})"), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(R"({"mode": "fast"})"), std::invalid_argument);
}

TEST_CASE("run config validation") {
    RunConfig c = small_run(RunMode::Ttom);
    CHECK_NOTHROW(c.validate());
    c.num_frames = 7;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_run(RunMode::TtomReadonly);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_run(RunMode::Ttom);
    c.memory.threshold = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_run(RunMode::Ttom);
    c.planner.kind = "chat";
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("baseline mode never optimizes or touches memory") {
    const Pipeline pipeline(small_run(RunMode::Baseline));
    const auto report = run_stream(pipeline, PromptGrammar(2).generate(3));
    REQUIRE(report.samples.size() == 3);
    for (const auto& s : report.samples) {
        CHECK(s.ok);
        CHECK_FALSE(s.memory_hit);
        CHECK_FALSE(s.tto_ran);
        CHECK(s.optimizer_iterations == 0);
        CHECK(s.initial_loss == s.final_loss);
        CHECK(s.pre_miou == s.post_miou);
    }
}

TEST_CASE("ttom mode matches a repeated prompt to its first occurrence") {
    const Pipeline pipeline(small_run(RunMode::Ttom));
    const std::string prompt = "a red ball moves left to right";
    const auto report = run_stream(pipeline, {prompt, "a cat sits beside a blue box", prompt});
    REQUIRE(report.samples.size() == 3);
    CHECK_FALSE(report.samples[0].memory_hit);
    CHECK(report.samples[0].tto_ran);
    CHECK(report.samples[2].memory_hit);
    REQUIRE_FALSE(report.samples[2].matched_ids.empty());
    CHECK(report.samples[2].matched_ids[0] == report.samples[0].key_id);
    CHECK(report.samples[2].match_similarity == doctest::Approx(1.0));
    CHECK(report.memory_size == 2);
}

TEST_CASE("memory is required in memory modes and per-sample errors are recorded") {
    const Pipeline pipeline(small_run(RunMode::Ttom));
    const auto m = pipeline.process("a red ball moves left to right", 0, nullptr);
    CHECK_FALSE(m.ok);
    CHECK_FALSE(m.error.empty());
    auto store = pipeline.make_memory();
    const auto long_prompt = pipeline.process(
        "a red ball moves left to right past a blue box and a green frog and a gray cat and more", 1, &store);
    CHECK_FALSE(long_prompt.ok);
    CHECK(store.empty());
}

TEST_CASE("identical runs write byte-identical metrics and readonly leaves memory untouched") {
    TempDir dir("ttom_harness_runs");
    const auto prompts = PromptGrammar(6).generate(4);
    RunConfig c = small_run(RunMode::Ttom);
    c.memory_dir = (dir.path / "mem_a").string();
    c.metrics_path = (dir.path / "a.jsonl").string();
    run_stream(Pipeline(c), prompts);
    c.memory_dir = (dir.path / "mem_b").string();
    c.metrics_path = (dir.path / "b.jsonl").string();
    run_stream(Pipeline(c), prompts);
    CHECK(slurp(dir.path / "a.jsonl") == slurp(dir.path / "b.jsonl"));
    CHECK(slurp(dir.path / "a.jsonl.trace.jsonl") == slurp(dir.path / "b.jsonl.trace.jsonl"));
    CHECK(dir_digest(dir.path / "mem_a") == dir_digest(dir.path / "mem_b"));

    RunConfig ro = small_run(RunMode::TtomReadonly);
    ro.memory_dir = (dir.path / "mem_a").string();
    ro.metrics_path = (dir.path / "ro.jsonl").string();
    const auto before = dir_digest(ro.memory_dir);
    const auto report = run_stream(Pipeline(ro), prompts);
    CHECK(dir_digest(ro.memory_dir) == before);
    for (const auto& s : report.samples) CHECK(s.memory_hit);
}

TEST_CASE("metrics lines carry the documented fields in order") {
    const Pipeline pipeline(small_run(RunMode::TtoOnly));
    const auto m = pipeline.process("a red ball moves left to right", 0, nullptr);
    REQUIRE(m.ok);
    const std::string line = m.to_jsonl();
    CHECK(line.find('\n') == std::string::npos);
    CHECK(line.rfind("{\"sample_id\":0,\"prompt\":", 0) == 0);
    CHECK(line.find("latency") == std::string::npos);
    CHECK(line.find("\"loss_trace\"") != std::string::npos);
    CHECK(m.tto_ran);
    CHECK(m.optimizer_iterations == 2);
}

TEST_CASE("pseudo-memory with one prompt holds one entry") {
    const Pipeline pipeline(small_run(RunMode::Ttom));
    MemoryStore out;
    const auto report = build_pseudo_memory(pipeline, 1, {}, &out);
    CHECK(report.memory_size == 1);
    CHECK(out.size() == 1);
    CHECK(report.hit_rate.size() == 1);
}

TEST_CASE("pseudo-memory snapshots see every prefix") {
    const Pipeline pipeline(small_run(RunMode::Ttom));
    std::vector<std::size_t> sizes;
    build_pseudo_memory(pipeline, 4, {}, nullptr, [&](std::size_t n, const MemoryStore& m) {
        CHECK(sizes.size() + 1 == n);
        sizes.push_back(m.size());
    });
    CHECK(sizes.size() == 4);
    CHECK(sizes.front() == 1);
}

TEST_CASE("pretraining with zero steps returns the random initialization") {
    DenoiserConfig c = small_run(RunMode::Baseline).denoiser;
    PretrainConfig p;
    p.steps = 0;
    p.supervised_blocks = {1};
    CHECK(pretrain_toy(c, p).weights().checksum() == Denoiser::random(c).weights().checksum());
}

TEST_CASE("pretraining is deterministic") {
    DenoiserConfig c = small_run(RunMode::Baseline).denoiser;
    PretrainConfig p;
    p.steps = 3;
    p.supervised_blocks = {1};
    const auto a = pretrain_toy(c, p);
    const auto b = pretrain_toy(c, p);
    CHECK(a.weights().checksum() == b.weights().checksum());
    CHECK(a.weights().checksum() != Denoiser::random(c).weights().checksum());
}
