#include "ttom/memory.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

namespace ttom {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::uint32_t kBlobMagic = 0x414d5454;  // "TTMA" little-endian

void write_blob(const AdapterSet& a, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write memory blob: " + path.string());
    const std::uint32_t header[4] = {kBlobMagic, static_cast<std::uint32_t>(a.rank()),
                                     static_cast<std::uint32_t>(a.factor_count()),
                                     static_cast<std::uint32_t>(a.dim())};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    for (double v : a.flatten()) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof(f));
    }
    if (!out) throw std::runtime_error("failed writing memory blob: " + path.string());
}

AdapterSet read_blob(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MemoryFormatError("cannot open memory blob: " + path.string());
    std::uint32_t header[4];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in || header[0] != kBlobMagic) throw MemoryFormatError("bad memory blob header: " + path.string());
    const auto rank = static_cast<int>(header[1]);
    const auto factors = static_cast<int>(header[2]);
    const auto dim = static_cast<int>(header[3]);
    if (rank < 1 || dim < 1 || factors < kProjectionCount || factors % kProjectionCount != 0) {
        throw MemoryFormatError("bad memory blob shape: " + path.string());
    }
    AdapterSet a(factors / kProjectionCount, dim, rank);
    std::vector<float> raw(a.parameter_count());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!in) throw MemoryFormatError("truncated memory blob: " + path.string());
    in.peek();
    if (!in.eof()) throw MemoryFormatError("trailing bytes in memory blob: " + path.string());
    a.assign(std::vector<double>(raw.begin(), raw.end()));
    return a;
}

}  // namespace

MemoryStore::MemoryStore(std::size_t capacity, double threshold, int embed_dim)
    : capacity_(capacity), threshold_(threshold), embed_dim_(embed_dim) {
    if (capacity < 1) throw std::invalid_argument("MemoryStore: capacity must be >= 1");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("MemoryStore: threshold must lie in (0, 1]");
    if (embed_dim < 1) throw std::invalid_argument("MemoryStore: embed_dim must be >= 1");
}

const MemoryEntry* MemoryStore::find(const std::string& id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> MemoryStore::insert(const MemoryKey& key, const AdapterSet& adapters) {
    if (key.id.empty() || key.embedding.size() != static_cast<std::size_t>(embed_dim_)) {
        throw std::invalid_argument("MemoryStore::insert: malformed key");
    }
    if (adapters.empty()) throw std::invalid_argument("MemoryStore::insert: empty adapters");
    std::vector<std::string> evicted;
    const std::uint64_t now = ++clock_;
    auto it = entries_.find(key.id);
    if (it != entries_.end()) {
        it->second.adapters = round_to_float(adapters);
        it->second.last_used = now;
        return evicted;
    }
    while (entries_.size() >= capacity_) evicted.push_back(evict());
    MemoryEntry e;
    e.key = key;
    e.adapters = round_to_float(adapters);
    e.created = now;
    e.last_used = now;
    entries_.emplace(key.id, std::move(e));
    return evicted;
}

std::vector<MemoryMatch> MemoryStore::rank(const MemoryKey& query, int top_k) const {
    if (top_k < 1) throw std::invalid_argument("MemoryStore::read: top_k must be >= 1");
    if (query.embedding.size() != static_cast<std::size_t>(embed_dim_)) {
        throw std::invalid_argument("MemoryStore::read: embedding dimension mismatch");
    }
    std::vector<MemoryMatch> hits;
    for (const auto& [id, e] : entries_) {
        const double s = cosine(query.embedding, e.key.embedding);
        if (s >= threshold_) hits.push_back(MemoryMatch{id, s});
    }
    std::sort(hits.begin(), hits.end(), [&](const MemoryMatch& a, const MemoryMatch& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        const auto ua = entries_.at(a.id).use_count;
        const auto ub = entries_.at(b.id).use_count;
        if (ua != ub) return ua > ub;
        return a.id < b.id;
    });
    if (hits.size() > static_cast<std::size_t>(top_k)) hits.resize(static_cast<std::size_t>(top_k));
    return hits;
}

AdapterSet MemoryStore::fuse(const std::vector<MemoryMatch>& matches) const {
    std::vector<const AdapterSet*> sets;
    for (const auto& m : matches) sets.push_back(&entries_.at(m.id).adapters);
    return average_adapters(sets);
}

ReadResult MemoryStore::read(const MemoryKey& query, int top_k) {
    ReadResult out;
    out.matches = rank(query, top_k);
    const std::uint64_t now = ++clock_;
    if (out.matches.empty()) return out;
    out.fused = fuse(out.matches);
    for (const auto& m : out.matches) {
        MemoryEntry& e = entries_.at(m.id);
        ++e.use_count;
        e.last_used = now;
    }
    return out;
}

ReadResult MemoryStore::peek(const MemoryKey& query, int top_k) const {
    ReadResult out;
    out.matches = rank(query, top_k);
    if (!out.matches.empty()) out.fused = fuse(out.matches);
    return out;
}

void MemoryStore::update(std::span<const std::string> ids, const AdapterSet& adapters) {
    for (const auto& id : ids) {
        if (!entries_.count(id)) throw std::out_of_range("MemoryStore::update: unknown id " + id);
    }
    const AdapterSet stored = round_to_float(adapters);
    const std::uint64_t now = ++clock_;
    for (const auto& id : ids) {
        MemoryEntry& e = entries_.at(id);
        e.adapters = stored;
        e.last_used = now;
    }
}

std::string MemoryStore::evict() {
    if (entries_.empty()) throw std::logic_error("MemoryStore::evict: store is empty");
    auto victim = entries_.begin();
    for (auto it = std::next(entries_.begin()); it != entries_.end(); ++it) {
        const auto& a = it->second;
        const auto& v = victim->second;
        // entries_ iterates in id order, so strict comparison keeps the lowest id
        if (std::tie(a.use_count, a.last_used, a.created) < std::tie(v.use_count, v.last_used, v.created)) {
            victim = it;
        }
    }
    std::string id = victim->first;
    entries_.erase(victim);
    return id;
}

void MemoryStore::save(const std::string& dir) const {
    const fs::path root(dir);
    fs::create_directories(root);
    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["capacity"] = capacity_;
    manifest["threshold"] = threshold_;
    manifest["clock"] = clock_;
    manifest["embed_dim"] = embed_dim_;
    json list = json::array();
    for (const auto& [id, e] : entries_) {
        const std::string blob = id + ".bin";
        write_blob(e.adapters, root / blob);
        json j;
        j["id"] = id;
        j["abstract_text"] = e.key.abstract_text;
        j["use_count"] = e.use_count;
        j["last_used"] = e.last_used;
        j["created"] = e.created;
        j["blob_file"] = blob;
        list.push_back(std::move(j));
    }
    manifest["entries"] = std::move(list);
    // drop blobs of entries that no longer exist
    for (const auto& f : fs::directory_iterator(root)) {
        if (f.path().extension() == ".bin" && !entries_.count(f.path().stem().string())) fs::remove(f.path());
    }
    std::ofstream out(root / "manifest.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write memory manifest in " + dir);
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing memory manifest in " + dir);
}

MemoryStore MemoryStore::load(const std::string& dir, const TextEmbedder* embedder) {
    const fs::path root(dir);
    std::ifstream in(root / "manifest.json");
    if (!in) throw MemoryFormatError("cannot open memory manifest in " + dir);
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw MemoryFormatError(std::string("malformed memory manifest: ") + e.what());
    }
    try {
        const auto version = m.at("format_version").get<std::uint32_t>();
        if (version > kFormatVersion) {
            throw MemoryFormatError("memory format version " + std::to_string(version) + " is newer than supported " +
                                    std::to_string(kFormatVersion));
        }
        MemoryStore store(m.at("capacity").get<std::size_t>(), m.at("threshold").get<double>(),
                          m.at("embed_dim").get<int>());
        store.clock_ = m.at("clock").get<std::uint64_t>();
        const HashedNgramEmbedder fallback(store.embed_dim_);
        const TextEmbedder& emb = embedder ? *embedder : fallback;
        if (emb.dim() != store.embed_dim_) throw MemoryFormatError("embedder dimension does not match the store");
        for (const auto& j : m.at("entries")) {
            MemoryEntry e;
            e.key = make_key(j.at("abstract_text").get<std::string>(), emb);
            const auto id = j.at("id").get<std::string>();
            if (id != e.key.id) throw MemoryFormatError("memory entry id does not match its text: " + id);
            e.use_count = j.at("use_count").get<std::uint64_t>();
            e.last_used = j.at("last_used").get<std::uint64_t>();
            e.created = j.at("created").get<std::uint64_t>();
            e.adapters = read_blob(root / j.at("blob_file").get<std::string>());
            if (!store.entries_.emplace(id, std::move(e)).second) throw MemoryFormatError("duplicate memory id " + id);
        }
        if (store.entries_.size() > store.capacity_) throw MemoryFormatError("memory holds more entries than capacity");
        return store;
    } catch (const json::exception& e) {
        throw MemoryFormatError(std::string("malformed memory manifest: ") + e.what());
    }
}

}  // namespace ttom
