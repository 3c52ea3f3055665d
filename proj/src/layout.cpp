#include "ttom/layout.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace ttom {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// True when [pos, pos + len) does not cut through a word.
bool on_word_boundary(std::string_view s, std::size_t pos, std::size_t len) {
    const bool left = pos == 0 || !word_char(s[pos - 1]) || !word_char(s[pos]);
    const std::size_t end = pos + len;
    const bool right = end >= s.size() || !word_char(s[end]) || !word_char(s[end - 1]);
    return left && right;
}

std::string describe(const BBox& b) {
    std::ostringstream os;
    os << "(" << b.x0 << ", " << b.y0 << ", " << b.x1 << ", " << b.y1 << ")";
    return os.str();
}

// Position of `needle` in `hay`, exact first, then ignoring ASCII case.
std::optional<std::size_t> find_phrase(std::string_view hay, std::string_view needle, bool* exact) {
    if (needle.empty()) return std::nullopt;
    if (auto pos = hay.find(needle); pos != std::string_view::npos) {
        if (exact) *exact = true;
        return pos;
    }
    const std::string lh = lower(hay);
    const std::string ln = lower(needle);
    if (auto pos = lh.find(ln); pos != std::string::npos) {
        if (exact) *exact = false;
        return pos;
    }
    return std::nullopt;
}

// Enforce the minimum side along one axis, keeping the lower edge fixed unless
// that would leave the frame.
bool inflate_axis(double& lo, double& hi, double min_side) {
    if (hi - lo >= min_side - 1e-12) return false;
    hi = lo + min_side;
    if (hi > 1.0) {
        hi = 1.0;
        lo = 1.0 - min_side;
    }
    return true;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) tokens.push_back(std::move(current));
        current.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (std::isalnum(c) || c == '<' || c == '>') {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return tokens;
}

std::optional<TokenSpan> find_token_span(const std::vector<std::string>& prompt_tokens, std::string_view phrase) {
    const auto needle = tokenize(phrase);
    if (needle.empty() || needle.size() > prompt_tokens.size()) return std::nullopt;
    auto it = std::search(prompt_tokens.begin(), prompt_tokens.end(), needle.begin(), needle.end());
    if (it == prompt_tokens.end()) return std::nullopt;
    const int begin = static_cast<int>(it - prompt_tokens.begin());
    return TokenSpan{begin, begin + static_cast<int>(needle.size())};
}

std::vector<BBox> interpolate_keyframes(const std::vector<Keyframe>& keyframes, int start_frame, int end_frame) {
    if (keyframes.empty()) {
        throw LayoutError(LayoutError::Kind::EmptyKeyframes, "interpolate_keyframes: no keyframes");
    }
    if (end_frame < start_frame) {
        throw LayoutError(LayoutError::Kind::Invalid, "interpolate_keyframes: end_frame < start_frame");
    }
    for (std::size_t i = 1; i < keyframes.size(); ++i) {
        if (keyframes[i].frame <= keyframes[i - 1].frame) {
            throw LayoutError(LayoutError::Kind::Invalid, "interpolate_keyframes: frames not strictly increasing");
        }
    }

    std::vector<BBox> out;
    out.reserve(static_cast<std::size_t>(end_frame - start_frame + 1));
    std::size_t seg = 0;
    for (int f = start_frame; f <= end_frame; ++f) {
        if (f <= keyframes.front().frame) {
            out.push_back(keyframes.front().box);
            continue;
        }
        if (f >= keyframes.back().frame) {
            out.push_back(keyframes.back().box);
            continue;
        }
        while (keyframes[seg + 1].frame < f) ++seg;
        const Keyframe& a = keyframes[seg];
        const Keyframe& b = keyframes[seg + 1];
        const double u = static_cast<double>(f - a.frame) / static_cast<double>(b.frame - a.frame);
        auto lerp = [u](double p, double q) { return p + (q - p) * u; };
        out.push_back(BBox{lerp(a.box.x0, b.box.x0), lerp(a.box.y0, b.box.y0), lerp(a.box.x1, b.box.x1),
                           lerp(a.box.y1, b.box.y1)});
    }
    return out;
}

double min_box_side(const LatentDims& dims) noexcept {
    return 1.0 / static_cast<double>(std::max(dims.h, dims.w));
}

VerifiedLayout verify_layout(const SpatioTemporalLayout& input) {
    VerifiedLayout result{input, {}};
    SpatioTemporalLayout& layout = result.layout;
    auto& corrections = result.corrections;

    if (layout.objects.empty()) {
        throw LayoutError(LayoutError::Kind::NoObjects, "verify_layout: layout has no objects");
    }
    if (layout.latent_dims.tau <= 0 || layout.latent_dims.h <= 0 || layout.latent_dims.w <= 0 ||
        layout.num_frames <= 0 || layout.num_frames % layout.latent_dims.tau != 0) {
        throw LayoutError(LayoutError::Kind::Invalid,
                          "verify_layout: num_frames must be a positive multiple of the latent frame count");
    }

    const auto prompt_tokens = tokenize(layout.prompt);
    const double min_side = min_box_side(layout.latent_dims);

    for (std::size_t k = 0; k < layout.objects.size(); ++k) {
        ObjectLayout& obj = layout.objects[k];
        const std::string tag = "object " + std::to_string(k) + " ('" + obj.phrase + "')";

        if (obj.boxes.size() != static_cast<std::size_t>(obj.end_frame - obj.start_frame + 1) ||
            obj.end_frame < obj.start_frame) {
            throw LayoutError(LayoutError::Kind::Invalid, "verify_layout: " + tag + " box count does not match frame range");
        }

        // frame range
        if (obj.start_frame < 0) {
            const auto drop = static_cast<std::size_t>(-obj.start_frame);
            if (drop >= obj.boxes.size()) {
                throw LayoutError(LayoutError::Kind::Unfixable, "verify_layout: " + tag + " lies before frame 0");
            }
            obj.boxes.erase(obj.boxes.begin(), obj.boxes.begin() + static_cast<std::ptrdiff_t>(drop));
            corrections.push_back(tag + ": start_frame " + std::to_string(obj.start_frame) + " clamped to 0");
            obj.start_frame = 0;
        }
        if (obj.end_frame >= layout.num_frames) {
            if (obj.start_frame >= layout.num_frames) {
                throw LayoutError(LayoutError::Kind::Unfixable, "verify_layout: " + tag + " lies after the last frame");
            }
            obj.boxes.resize(static_cast<std::size_t>(layout.num_frames - obj.start_frame));
            corrections.push_back(tag + ": end_frame " + std::to_string(obj.end_frame) + " clamped to " +
                                  std::to_string(layout.num_frames - 1));
            obj.end_frame = layout.num_frames - 1;
        }

        // boxes
        for (std::size_t f = 0; f < obj.boxes.size(); ++f) {
            BBox& b = obj.boxes[f];
            const BBox before = b;
            if (b.x0 > b.x1) std::swap(b.x0, b.x1);
            if (b.y0 > b.y1) std::swap(b.y0, b.y1);
            b.x0 = std::clamp(b.x0, 0.0, 1.0);
            b.x1 = std::clamp(b.x1, 0.0, 1.0);
            b.y0 = std::clamp(b.y0, 0.0, 1.0);
            b.y1 = std::clamp(b.y1, 0.0, 1.0);
            inflate_axis(b.x0, b.x1, min_side);
            inflate_axis(b.y0, b.y1, min_side);
            if (!(b == before)) {
                corrections.push_back(tag + ": frame " + std::to_string(obj.start_frame + static_cast<int>(f)) +
                                      " box " + describe(before) + " -> " + describe(b));
            }
        }

        // phrase anchoring
        bool exact = false;
        auto pos = find_phrase(layout.prompt, obj.phrase, &exact);
        if (!pos) {
            throw LayoutError(LayoutError::Kind::Unfixable,
                              "verify_layout: " + tag + " does not occur in the prompt");
        }
        if (!exact) {
            std::string verbatim = layout.prompt.substr(*pos, obj.phrase.size());
            corrections.push_back(tag + ": phrase re-matched as '" + verbatim + "'");
            obj.phrase = std::move(verbatim);
        }
        auto span = find_token_span(prompt_tokens, obj.phrase);
        if (!span) {
            throw LayoutError(LayoutError::Kind::Unfixable, "verify_layout: " + tag + " has no token match");
        }
        if (!(obj.token_span == *span)) {
            corrections.push_back(tag + ": token span [" + std::to_string(obj.token_span.begin) + ", " +
                                  std::to_string(obj.token_span.end) + ") -> [" + std::to_string(span->begin) +
                                  ", " + std::to_string(span->end) + ")");
            obj.token_span = *span;
        }
    }
    return result;
}

std::string abstract_prompt(const SpatioTemporalLayout& layout) {
    struct Claim {
        std::size_t pos;
        std::size_t len;
        std::size_t object;
    };

    std::vector<std::size_t> order(layout.objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return layout.objects[a].phrase.size() > layout.objects[b].phrase.size();
    });

    const std::string hay = lower(layout.prompt);
    std::vector<Claim> claims;
    for (std::size_t idx : order) {
        const std::string needle = lower(layout.objects[idx].phrase);
        if (needle.empty()) continue;
        for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
            const bool overlaps = std::any_of(claims.begin(), claims.end(), [&](const Claim& c) {
                return pos < c.pos + c.len && c.pos < pos + needle.size();
            });
            if (!overlaps && on_word_boundary(hay, pos, needle.size())) claims.push_back({pos, needle.size(), idx});
        }
    }
    std::sort(claims.begin(), claims.end(), [](const Claim& a, const Claim& b) { return a.pos < b.pos; });

    // letters follow first appearance; repeated phrases reuse their letter
    std::vector<int> letter(layout.objects.size(), -1);
    int next = 0;
    std::string out;
    std::size_t cursor = 0;
    for (const Claim& c : claims) {
        // identical phrases share a placeholder
        std::size_t key = c.object;
        for (std::size_t j = 0; j < layout.objects.size(); ++j) {
            if (lower(layout.objects[j].phrase) == lower(layout.objects[c.object].phrase)) {
                key = j;
                break;
            }
        }
        if (letter[key] < 0) letter[key] = next++;
        out.append(layout.prompt, cursor, c.pos - cursor);
        out += "<object ";
        out += static_cast<char>('A' + (letter[key] % 26));
        out += ">";
        cursor = c.pos + c.len;
    }
    out.append(layout.prompt, cursor, std::string::npos);
    return out;
}

SpatioTemporalLayout plan_layout(std::string_view prompt, LayoutPlanner& planner, int num_frames, LatentDims dims) {
    if (prompt.empty()) {
        throw LayoutError(LayoutError::Kind::Invalid, "plan_layout: empty prompt");
    }
    auto planned = planner.plan(prompt, num_frames);
    if (planned.empty()) {
        throw LayoutError(LayoutError::Kind::NoObjects, "plan_layout: no groundable phrases in '" + std::string(prompt) + "'");
    }

    SpatioTemporalLayout layout;
    layout.prompt = std::string(prompt);
    layout.num_frames = num_frames;
    layout.latent_dims = dims;
    const auto prompt_tokens = tokenize(prompt);
    for (auto& p : planned) {
        ObjectLayout obj;
        obj.phrase = p.phrase;
        obj.start_frame = p.start_frame;
        obj.end_frame = p.end_frame;
        obj.boxes = interpolate_keyframes(p.keyframes, p.start_frame, p.end_frame);
        if (auto span = find_token_span(prompt_tokens, p.phrase)) obj.token_span = *span;
        layout.objects.push_back(std::move(obj));
    }
    return layout;
}

}  // namespace ttom
