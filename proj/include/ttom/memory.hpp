#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttom/adapters.hpp"
#include "ttom/embed.hpp"

namespace ttom {

struct MemoryEntry {
    MemoryKey key;
    AdapterSet adapters;  // float32-representable
    std::uint64_t use_count = 0;
    std::uint64_t last_used = 0;
    std::uint64_t created = 0;

    bool operator==(const MemoryEntry&) const = default;
};

struct MemoryMatch {
    std::string id;
    double similarity = 0.0;
};

struct ReadResult {
    std::optional<AdapterSet> fused;   // mean of the matched entries, in rank order
    std::vector<MemoryMatch> matches;  // rank order

    bool hit() const noexcept { return fused.has_value(); }
};

class MemoryFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Capacity-bounded store of optimized adapters keyed by abstracted prompts.
///
/// A logical clock advances by one on every insert, read and update (a read
/// that matches nothing still ticks); evictions do not tick. Stored adapters
/// are rounded to float32 on the way in so that persistence is lossless.
///
/// Not internally synchronized. read() mutates usage statistics, so every
/// call except peek() and the const accessors is a write; callers must route
/// all of them through a single writer. Concurrent peek() calls are safe
/// while no writer is active.
class MemoryStore {
public:
    static constexpr std::uint32_t kFormatVersion = 1;

    explicit MemoryStore(std::size_t capacity = 64, double threshold = 0.85, int embed_dim = 256);

    std::size_t capacity() const noexcept { return capacity_; }
    double threshold() const noexcept { return threshold_; }
    int embed_dim() const noexcept { return embed_dim_; }
    std::uint64_t clock() const noexcept { return clock_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::map<std::string, MemoryEntry>& entries() const noexcept { return entries_; }
    const MemoryEntry* find(const std::string& id) const;

    /// New id: evicts first when full, then adds with use_count 0.
    /// Existing id: replaces the adapters and refreshes last_used, keeping use_count.
    /// Returns the evicted ids.
    std::vector<std::string> insert(const MemoryKey& key, const AdapterSet& adapters);

    /// Entries with cosine similarity >= threshold, best top_k first (ties to the
    /// higher use_count, then the lower id), fused by element-wise mean. Each
    /// matched entry gets use_count + 1 and last_used = now.
    ReadResult read(const MemoryKey& query, int top_k);

    /// Same ranking and fusion as read() without touching any state.
    ReadResult peek(const MemoryKey& query, int top_k) const;

    /// Replaces the adapters of every listed entry; use_count is unchanged.
    /// Throws std::out_of_range for an unknown id before changing anything.
    void update(std::span<const std::string> ids, const AdapterSet& adapters);

    /// Removes the entry with the lowest use_count, ties to the oldest last_used,
    /// then the oldest created, then the lowest id. Throws std::logic_error when empty.
    std::string evict();

    /// Writes manifest.json and one blob per entry into `dir` (created if needed).
    void save(const std::string& dir) const;
    /// Key embeddings are recomputed from the stored abstract text with
    /// `embedder` (the hashed n-gram embedder when null). Throws
    /// MemoryFormatError on a newer format version or a malformed file;
    /// nothing is returned unless every entry loaded.
    static MemoryStore load(const std::string& dir, const TextEmbedder* embedder = nullptr);

    bool operator==(const MemoryStore&) const = default;

private:
    std::vector<MemoryMatch> rank(const MemoryKey& query, int top_k) const;
    AdapterSet fuse(const std::vector<MemoryMatch>& matches) const;

    std::size_t capacity_;
    double threshold_;
    int embed_dim_;
    std::uint64_t clock_ = 0;
    std::map<std::string, MemoryEntry> entries_;
};

}  // namespace ttom
