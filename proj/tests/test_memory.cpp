#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "support/memory_oracle.hpp"
#include "ttom/embed.hpp"
#include "ttom/grammar.hpp"
#include "ttom/layout.hpp"
#include "ttom/memory.hpp"

using namespace ttom;
namespace fs = std::filesystem;

namespace {

AdapterSet constant_adapters(double value) {
    AdapterSet a(1, 4, 2);
    a.assign(std::vector<double>(a.parameter_count(), value));
    return a;
}

AdapterSet random_adapters(std::uint64_t seed) {
    AdapterSet a(2, 4, 2);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.3);
    std::vector<double> flat(a.parameter_count());
    for (double& v : flat) v = n(rng);
    a.assign(flat);
    return a;
}

MemoryKey text_key(const std::string& text) {
    static const HashedNgramEmbedder embedder(256);
    return make_key(text, embedder);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// A store whose entries carry the given use counts and last_used ticks.
MemoryStore store_with_usage(const std::vector<int>& counts) {
    MemoryStore s(8, 0.99);
    for (std::size_t i = 0; i < counts.size(); ++i) s.insert(text_key("<object A> scene " + std::to_string(i)), constant_adapters(0.0));
    for (std::size_t i = 0; i < counts.size(); ++i) {
        for (int c = 0; c < counts[i]; ++c) s.read(text_key("<object A> scene " + std::to_string(i)), 1);
    }
    return s;
}

}  // namespace

TEST_CASE("embedding is deterministic and unit norm") {
    const HashedNgramEmbedder e(256);
    const auto a = e.embed("<object A> drifts right to left above <object B>.");
    const auto b = e.embed("<object A> drifts right to left above <object B>.");
    CHECK(a == b);
    CHECK(cosine(a, b) == doctest::Approx(1.0).epsilon(1e-15));
    double norm = 0.0;
    for (double v : a) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_THROWS_AS(e.embed("  "), std::invalid_argument);
}

TEST_CASE("abstraction precedes embedding") {
    RuleBasedPlanner planner;
    const auto a = verify_layout(plan_layout("a red ball runs", planner, 16, {4, 8, 8})).layout;
    const auto b = verify_layout(plan_layout("a tiny gray mouse runs", planner, 16, {4, 8, 8})).layout;
    const auto ka = text_key(abstract_prompt(a));
    const auto kb = text_key(abstract_prompt(b));
    CHECK(ka.id == kb.id);
    CHECK(ka.embedding == kb.embedding);
}

TEST_CASE("texts with disjoint tokens and bigrams are nearly orthogonal") {
    // each text uses its own vocabulary, so no unigram or bigram is shared
    std::mt19937_64 rng(99);
    auto word = [&](char tag) {
        std::string w(1, tag);
        for (int i = 0; i < 6; ++i) w += static_cast<char>('a' + rng() % 26);
        return w;
    };
    const HashedNgramEmbedder e(256);
    double worst = 0.0;
    for (int pair = 0; pair < 100; ++pair) {
        std::string x, y;
        for (int i = 0; i < 8; ++i) {
            x += word('p') + " ";
            y += word('q') + " ";
        }
        worst = std::max(worst, std::abs(cosine(e.embed(x), e.embed(y))));
    }
    CHECK(worst <= 0.2);
}

TEST_CASE("grammar paraphrase pairs abstract to the same key") {
    PromptGrammar g(5);
    RuleBasedPlanner planner;
    for (int i = 0; i < 50; ++i) {
        const auto [a, b] = g.paraphrase_pair();
        CHECK(a != b);
        const auto la = verify_layout(plan_layout(a, planner, 16, {4, 8, 8})).layout;
        const auto lb = verify_layout(plan_layout(b, planner, 16, {4, 8, 8})).layout;
        CHECK(text_key(abstract_prompt(la)).id == text_key(abstract_prompt(lb)).id);
        for (const auto& oa : la.objects)
            for (const auto& ob : lb.objects) CHECK(oa.phrase != ob.phrase);
    }
}

TEST_CASE("grammar prompts are reproducible and fit the token cap") {
    PromptGrammar a(17), b(17);
    const auto pa = a.generate(100);
    CHECK(pa == b.generate(100));
    RuleBasedPlanner planner;
    for (const auto& p : pa) {
        CHECK(tokenize(p).size() <= 16);
        CHECK_NOTHROW(verify_layout(plan_layout(p, planner, 16, {4, 8, 8})));
    }
}

TEST_CASE("key ids are stable hashes of the normalized text") {
    CHECK(text_key("<object A> runs").id == text_key("  <OBJECT A>   runs ").id);
    CHECK(text_key("<object A> runs").id == fnv1a_hex(normalize_abstract("<object A> runs")));
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("insert fills, then evicts at capacity") {
    MemoryStore s(2, 0.85);
    CHECK(s.insert(text_key("<object A> runs"), constant_adapters(1.0)).empty());
    CHECK(s.size() == 1);
    s.insert(text_key("<object A> sits"), constant_adapters(2.0));
    const auto evicted = s.insert(text_key("<object A> jumps"), constant_adapters(3.0));
    CHECK(evicted.size() == 1);
    CHECK(s.size() == 2);
}

TEST_CASE("inserting an existing id overwrites adapters and keeps use_count") {
    MemoryStore s(4, 0.85);
    const auto k = text_key("<object A> runs");
    s.insert(k, constant_adapters(1.0));
    s.read(k, 1);
    s.read(k, 1);
    s.insert(k, constant_adapters(2.0));
    const auto* e = s.find(k.id);
    REQUIRE(e);
    CHECK(e->use_count == 2);
    CHECK(e->adapters == constant_adapters(2.0));
    CHECK(e->created == 1);
    CHECK(e->last_used == 4);
    CHECK(s.size() == 1);
}

TEST_CASE("read of an exact key returns its adapters bitwise") {
    MemoryStore s(4, 0.85);
    const auto k = text_key("<object A> drifts right to left above <object B>.");
    const AdapterSet a = round_to_float(random_adapters(1));
    s.insert(k, a);
    const auto r = s.read(k, 1);
    REQUIRE(r.hit());
    CHECK(*r.fused == a);
    CHECK(r.matches.size() == 1);
    CHECK(r.matches[0].similarity == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("two matched entries fuse to their exact mean") {
    MemoryStore s(4, 0.5, 32);
    auto k1 = oracle::lattice_key(1, 32, 4, 0);
    auto k2 = oracle::lattice_key(2, 32, 4, 0);  // spread 4 forces identical embeddings
    REQUIRE(k1.embedding == k2.embedding);
    const AdapterSet x = round_to_float(random_adapters(2));
    const AdapterSet y = round_to_float(random_adapters(3));
    s.insert(k1, x);
    s.insert(k2, y);
    const auto r = s.read(k1, 2);
    REQUIRE(r.hit());
    const auto fx = x.flatten(), fy = y.flatten(), ff = r.fused->flatten();
    for (std::size_t i = 0; i < ff.size(); ++i) CHECK(ff[i] == (fx[i] + fy[i]) / 2.0);
}

TEST_CASE("fusing identical adapters returns them exactly") {
    MemoryStore s(8, 0.5, 32);
    const AdapterSet a = round_to_float(random_adapters(4));
    for (int i = 0; i < 5; ++i) s.insert(oracle::lattice_key(i, 32, 4, 0), a);
    for (int k = 1; k <= 5; ++k) {
        const auto r = s.peek(oracle::lattice_key(0, 32, 4, 0), k);
        REQUIRE(r.hit());
        CHECK(r.matches.size() == static_cast<std::size_t>(k));
        CHECK(*r.fused == a);
    }
}

TEST_CASE("read on an empty store misses but still ticks") {
    MemoryStore s;
    const auto r = s.read(text_key("<object A> runs"), 1);
    CHECK_FALSE(r.hit());
    CHECK(r.matches.empty());
    CHECK(s.clock() == 1);
}

TEST_CASE("peek matches read without touching state") {
    MemoryStore s(4, 0.85);
    const auto k = text_key("<object A> runs");
    s.insert(k, constant_adapters(1.0));
    const MemoryStore before = s;
    const auto p = s.peek(k, 1);
    CHECK(s == before);
    const auto r = s.read(k, 1);
    CHECK(p.matches.size() == r.matches.size());
    CHECK(*p.fused == *r.fused);
}

TEST_CASE("update replaces adapters and keeps use_count") {
    MemoryStore s(4, 0.85);
    const auto k = text_key("<object A> runs");
    s.insert(k, constant_adapters(1.0));
    s.read(k, 1);
    const std::vector<std::string> ids{k.id};
    s.update(ids, constant_adapters(5.0));
    CHECK(s.find(k.id)->use_count == 1);
    const auto r = s.read(k, 1);
    CHECK(*r.fused == constant_adapters(5.0));

    const MemoryStore before = s;
    const std::vector<std::string> bad{k.id, "missing"};
    CHECK_THROWS_AS(s.update(bad, constant_adapters(9.0)), std::out_of_range);
    CHECK(s == before);
}

TEST_CASE("eviction takes the least used entry") {
    MemoryStore s = store_with_usage({3, 1, 2});
    const std::string victim = s.evict();
    CHECK(victim == text_key("<object A> scene 1").id);
}

TEST_CASE("eviction breaks use_count ties by the oldest last_used") {
    MemoryStore s(4, 0.99);
    const auto a = text_key("<object A> first");
    const auto b = text_key("<object A> second");
    s.insert(a, constant_adapters(0));
    s.insert(b, constant_adapters(0));
    s.read(b, 1);
    s.read(a, 1);
    s.read(b, 1);
    s.read(a, 1);
    // both have use_count 2; b was last used at tick 5, a at tick 6
    REQUIRE(s.find(a.id)->use_count == 2);
    REQUIRE(s.find(b.id)->use_count == 2);
    CHECK(s.find(b.id)->last_used < s.find(a.id)->last_used);
    CHECK(s.evict() == b.id);
    MemoryStore empty;
    CHECK_THROWS_AS(empty.evict(), std::logic_error);
}

TEST_CASE("scripted inserts with interleaved reads match the simulator") {
    MemoryStore store(4, 0.5, 32);
    oracle::Simulator sim(4, 0.5);
    const std::vector<int> script{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    for (int i : script) {
        const auto k = oracle::lattice_key(i, 32, 8, 42);
        AdapterSet a(1, 2, 1);
        a.assign(std::vector<double>(a.parameter_count(), 0.1 * i));
        CHECK(store.insert(k, a) == sim.insert(k.id, k.embedding, a.flatten()));
        if (i % 2 == 1) {
            const auto q = oracle::lattice_key(i / 2, 32, 8, 42);
            const auto r = store.read(q, 2);
            const auto w = sim.read(q.embedding, 2);
            std::vector<std::string> ids;
            for (const auto& m : r.matches) ids.push_back(m.id);
            CHECK(ids == w.ids);
        }
    }
    CHECK(store.size() == 4);
    for (const auto& e : sim.entries()) CHECK(store.find(e.id) != nullptr);
}

TEST_CASE("randomized op logs agree with the brute-force simulator") {
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        const std::string mismatch = oracle::replay_random_log(seed, 150);
        CHECK_MESSAGE(mismatch.empty(), mismatch);
    }
}

TEST_CASE("empty store round-trips") {
    TempDir dir("ttom_mem_empty");
    const MemoryStore s(7, 0.6);
    s.save(dir.path.string());
    const MemoryStore loaded = MemoryStore::load(dir.path.string());
    CHECK(loaded == s);
    CHECK(loaded.capacity() == 7);
    CHECK(loaded.threshold() == 0.6);
}

TEST_CASE("populated store round-trips bitwise") {
    TempDir dir("ttom_mem_three");
    MemoryStore s(4, 0.85);
    const std::vector<std::string> texts{"<object A> runs", "<object A> sits beside <object B>",
                                         "<object A> drifts right to left above <object B>."};
    for (std::size_t i = 0; i < texts.size(); ++i) s.insert(text_key(texts[i]), random_adapters(10 + i));
    s.read(text_key(texts[1]), 1);
    s.save(dir.path.string());
    const MemoryStore loaded = MemoryStore::load(dir.path.string());
    CHECK(loaded == s);
    for (const auto& [id, e] : s.entries()) CHECK(loaded.find(id)->adapters == e.adapters);

    // saving again after an eviction removes the stale blob
    s.insert(text_key("<object A> jumps"), random_adapters(20));
    s.insert(text_key("<object A> hops"), random_adapters(21));
    s.save(dir.path.string());
    int blobs = 0;
    for (const auto& f : fs::directory_iterator(dir.path)) blobs += f.path().extension() == ".bin" ? 1 : 0;
    CHECK(blobs == static_cast<int>(s.size()));
    CHECK(MemoryStore::load(dir.path.string()) == s);
}

TEST_CASE("a newer format version is refused") {
    TempDir dir("ttom_mem_version");
    MemoryStore s(4, 0.85);
    s.insert(text_key("<object A> runs"), random_adapters(1));
    s.save(dir.path.string());
    const fs::path manifest = dir.path / "manifest.json";
    std::ifstream in(manifest);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const auto pos = text.find("\"format_version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 19, "\"format_version\": 2");
    std::ofstream(manifest) << text;
    CHECK_THROWS_AS(MemoryStore::load(dir.path.string()), MemoryFormatError);
}

TEST_CASE("damaged blobs are refused") {
    TempDir dir("ttom_mem_damage");
    MemoryStore s(4, 0.85);
    const auto k = text_key("<object A> runs");
    s.insert(k, random_adapters(1));
    s.save(dir.path.string());
    const fs::path blob = dir.path / (k.id + ".bin");
    fs::resize_file(blob, fs::file_size(blob) - 2);
    CHECK_THROWS_AS(MemoryStore::load(dir.path.string()), MemoryFormatError);
    CHECK_THROWS_AS(MemoryStore::load((dir.path / "nowhere").string()), MemoryFormatError);
}
