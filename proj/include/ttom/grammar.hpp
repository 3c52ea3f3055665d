#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ttom {

/// Seeded generator of short compositional scene prompts. Every prompt fits
/// the default 16-token text cap and is understood by RuleBasedPlanner.
class PromptGrammar {
public:
    explicit PromptGrammar(std::uint64_t seed);

    std::string next();
    std::vector<std::string> generate(std::size_t count);

    /// Two prompts on the same template, adverb and motion with disjoint object
    /// phrases, so they abstract to the same text.
    std::pair<std::string, std::string> paraphrase_pair();

    static std::size_t template_count() noexcept;

private:
    std::string object_phrase();
    std::string render(std::size_t tmpl, std::size_t adverb, const std::string& a, const std::string& b) const;

    std::mt19937_64 rng_;
};

}  // namespace ttom
