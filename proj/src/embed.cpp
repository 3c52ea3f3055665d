#include "ttom/embed.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ttom/layout.hpp"

namespace ttom {

namespace {

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// splitmix64 finalizer, used to derive independent probes from one feature hash
std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

constexpr int kProbes = 8;

}  // namespace

HashedNgramEmbedder::HashedNgramEmbedder(int dim) : dim_(dim) {
    if (dim < 1) throw std::invalid_argument("HashedNgramEmbedder: dim must be >= 1");
}

std::vector<double> HashedNgramEmbedder::embed(std::string_view text) const {
    const auto tokens = tokenize(text);
    if (tokens.empty()) throw std::invalid_argument("embed: empty text");
    std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
    auto add = [&](const std::string& feature) {
        const std::uint64_t base = fnv1a(feature);
        for (int p = 0; p < kProbes; ++p) {
            const std::uint64_t h = mix(base + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(p + 1));
            const auto bucket = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim_));
            v[bucket] += (h >> 63) ? -1.0 : 1.0;
        }
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        add("u:" + tokens[i]);
        if (i + 1 < tokens.size()) add("b:" + tokens[i] + " " + tokens[i + 1]);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    // every feature cancelled out; fall back to a fixed direction
    if (norm == 0.0) {
        v[0] = 1.0;
        return v;
    }
    for (double& x : v) x /= norm;
    return v;
}

std::string normalize_abstract(std::string_view text) {
    std::string out;
    for (const auto& t : tokenize(text)) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

std::string fnv1a_hex(std::string_view text) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(text)));
    return buf;
}

MemoryKey make_key(std::string_view abstract_text, const TextEmbedder& embedder) {
    MemoryKey key;
    key.abstract_text = std::string(abstract_text);
    key.embedding = embedder.embed(abstract_text);
    key.id = fnv1a_hex(normalize_abstract(abstract_text));
    return key;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

}  // namespace ttom
