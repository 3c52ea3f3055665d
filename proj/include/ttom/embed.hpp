#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace ttom {

/// Text feature extractor used to index memory keys.
class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    virtual int dim() const noexcept = 0;
    /// Unit-norm vector of length dim(). Throws std::invalid_argument on empty text.
    virtual std::vector<double> embed(std::string_view text) const = 0;
};

/// Signed feature hashing of unigrams and bigrams over the tokenized text,
/// L2-normalized. Each feature is spread over eight signed buckets so that
/// collision noise between unrelated texts stays close to Gaussian.
class HashedNgramEmbedder final : public TextEmbedder {
public:
    explicit HashedNgramEmbedder(int dim = 256);
    int dim() const noexcept override { return dim_; }
    std::vector<double> embed(std::string_view text) const override;

private:
    int dim_;
};

/// Lowercased tokens joined by single spaces.
std::string normalize_abstract(std::string_view text);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view text);

struct MemoryKey {
    std::string abstract_text;
    std::vector<double> embedding;
    std::string id;  // fnv1a_hex(normalize_abstract(abstract_text))

    bool operator==(const MemoryKey&) const = default;
};

MemoryKey make_key(std::string_view abstract_text, const TextEmbedder& embedder);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace ttom
