#include "ttom/grammar.hpp"

#include <array>

namespace ttom {

namespace {

constexpr std::array<const char*, 10> kColors = {"red",    "blue",  "green", "yellow", "white",
                                                 "black",  "brown", "gray",  "orange", "purple"};
constexpr std::array<const char*, 16> kNouns = {"balloon", "ball", "dog",   "cat",   "car",    "boat",
                                                "bird",    "kite", "horse", "robot", "bottle", "leaf",
                                                "fish",    "drone", "box",  "apple"};
constexpr std::array<const char*, 4> kAdverbs = {"", "slowly ", "quickly ", "gently "};

// {A} is the subject, {B} a second object; {V} receives the adverb.
constexpr std::array<const char*, 14> kTemplates = {
    "{A} {V}moves from left to right",
    "{A} {V}drifts from right to left",
    "{A} {V}falls from the top",
    "{A} {V}rises from the bottom",
    "{A} {V}approaches the camera",
    "{A} {V}circles around the center",
    "{A} {V}rests in the center",
    "{A} {V}moves from left to right above {B}",
    "{A} {V}rolls from right to left above {B}",
    "{A} {V}sits below {B}",
    "{A} {V}falls next to {B}",
    "{A} {V}rises beside {B}",
    "{A} {V}floats above {B}",
    "{A} {V}approaches {B}",
};

bool two_objects(std::size_t tmpl) { return std::string(kTemplates[tmpl]).find("{B}") != std::string::npos; }

void replace(std::string& s, const std::string& from, const std::string& to) {
    const auto pos = s.find(from);
    if (pos != std::string::npos) s.replace(pos, from.size(), to);
}

}  // namespace

PromptGrammar::PromptGrammar(std::uint64_t seed) : rng_(seed) {}

std::size_t PromptGrammar::template_count() noexcept { return kTemplates.size(); }

std::string PromptGrammar::object_phrase() {
    const std::string color = kColors[rng_() % kColors.size()];
    const std::string noun = kNouns[rng_() % kNouns.size()];
    const bool vowel = color.front() == 'o' || color.front() == 'a';
    return std::string(vowel ? "an " : "a ") + color + " " + noun;
}

std::string PromptGrammar::render(std::size_t tmpl, std::size_t adverb, const std::string& a,
                                  const std::string& b) const {
    std::string s = kTemplates[tmpl];
    replace(s, "{A}", a);
    replace(s, "{V}", kAdverbs[adverb]);
    replace(s, "{B}", b);
    return s;
}

std::string PromptGrammar::next() {
    const std::size_t tmpl = rng_() % kTemplates.size();
    const std::size_t adverb = rng_() % kAdverbs.size();
    const std::string a = object_phrase();
    std::string b = object_phrase();
    while (two_objects(tmpl) && b == a) b = object_phrase();
    return render(tmpl, adverb, a, b);
}

std::vector<std::string> PromptGrammar::generate(std::size_t count) {
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(next());
    return out;
}

std::pair<std::string, std::string> PromptGrammar::paraphrase_pair() {
    const std::size_t tmpl = rng_() % kTemplates.size();
    const std::size_t adverb = rng_() % kAdverbs.size();
    std::array<std::string, 4> phrases;
    // four distinct phrases, no shared words between the two prompts' objects
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        for (;;) {
            phrases[i] = object_phrase();
            bool clash = false;
            for (std::size_t j = 0; j < i; ++j) {
                const auto a = phrases[i].substr(phrases[i].find(' ') + 1);
                const auto b = phrases[j].substr(phrases[j].find(' ') + 1);
                const auto a_color = a.substr(0, a.find(' '));
                const auto b_color = b.substr(0, b.find(' '));
                const auto a_noun = a.substr(a.find(' ') + 1);
                const auto b_noun = b.substr(b.find(' ') + 1);
                if (a_color == b_color || a_noun == b_noun) clash = true;
            }
            if (!clash) break;
        }
    }
    return {render(tmpl, adverb, phrases[0], phrases[1]), render(tmpl, adverb, phrases[2], phrases[3])};
}

}  // namespace ttom
