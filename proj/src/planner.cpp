#include "ttom/layout.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <set>

#include <httplib.h>
#include <json.hpp>

namespace ttom {

namespace {

using json = nlohmann::json;

const std::set<std::string>& determiners() {
    static const std::set<std::string> words = {"a", "an", "the", "one", "two", "three", "some"};
    return words;
}

// Words that end a noun phrase: motion verbs, prepositions, conjunctions.
const std::set<std::string>& phrase_breakers() {
    static const std::set<std::string> words = {
        "moves",  "move",    "drifts",  "drift",  "runs",    "run",     "walks",      "walk",    "flies",
        "fly",    "falls",   "fall",    "rises",  "rise",    "rolls",   "roll",       "swims",   "swim",
        "glides", "floats",  "travels", "slides", "jumps",   "sits",    "sit",        "stands",  "rests",
        "stays",  "hovers",  "sails",   "crawls", "races",   "circles", "orbits",     "spins",   "hops",
        "drops",  "climbs",  "sinks",   "dashes", "wanders", "bounces", "approaches", "comes",   "goes",
        "is",     "are",     "from",    "to",     "left",    "right",   "above",      "below",   "under",
        "over",   "near",    "next",    "beside", "behind",  "in",      "on",         "across",  "around",
        "toward", "towards", "into",    "at",     "by",      "and",     "while",      "with",    "beneath",
        "up",     "down",    "slowly",  "quickly", "steadily", "gently", "through",   "along",   "past"};
    return words;
}

// Heads that name regions of the frame rather than objects.
const std::set<std::string>& spatial_nouns() {
    static const std::set<std::string> words = {"top",   "bottom", "left",   "right", "center", "centre",
                                                "middle", "frame", "screen", "camera", "side",  "scene"};
    return words;
}

struct Word {
    std::size_t begin;  // byte range in the prompt, trailing punctuation excluded
    std::size_t end;
    std::string norm;
    bool ends_clause;   // punctuation followed the word
};

std::vector<Word> split_words(std::string_view prompt) {
    std::vector<Word> words;
    std::size_t i = 0;
    while (i < prompt.size()) {
        while (i < prompt.size() && std::isspace(static_cast<unsigned char>(prompt[i]))) ++i;
        if (i >= prompt.size()) break;
        std::size_t j = i;
        while (j < prompt.size() && !std::isspace(static_cast<unsigned char>(prompt[j]))) ++j;
        std::size_t end = j;
        while (end > i && !std::isalnum(static_cast<unsigned char>(prompt[end - 1]))) --end;
        auto toks = tokenize(prompt.substr(i, j - i));
        Word w{i, end, toks.empty() ? std::string{} : toks.front(), end < j};
        if (!w.norm.empty()) words.push_back(std::move(w));
        i = j;
    }
    return words;
}

bool contains_seq(const std::vector<std::string>& toks, std::initializer_list<const char*> seq) {
    const std::vector<std::string> needle(seq.begin(), seq.end());
    return std::search(toks.begin(), toks.end(), needle.begin(), needle.end()) != toks.end();
}

bool contains_any(const std::vector<std::string>& toks, std::initializer_list<const char*> words) {
    for (const char* w : words) {
        if (std::find(toks.begin(), toks.end(), w) != toks.end()) return true;
    }
    return false;
}

BBox box_at(double cx, double cy, double side_x, double side_y) {
    return BBox{cx - 0.5 * side_x, cy - 0.5 * side_y, cx + 0.5 * side_x, cy + 0.5 * side_y};
}

constexpr double kSide = 0.3;

std::vector<Keyframe> motion_keyframes(RuleBasedPlanner::Motion motion, double cx, double cy, int last) {
    using Motion = RuleBasedPlanner::Motion;
    switch (motion) {
        case Motion::LeftToRight:
            return {{0, box_at(0.2, cy, kSide, kSide)}, {last, box_at(0.8, cy, kSide, kSide)}};
        case Motion::RightToLeft:
            return {{0, box_at(0.8, cy, kSide, kSide)}, {last, box_at(0.2, cy, kSide, kSide)}};
        case Motion::TopToBottom:
            return {{0, box_at(cx, 0.2, kSide, kSide)}, {last, box_at(cx, 0.8, kSide, kSide)}};
        case Motion::BottomToTop:
            return {{0, box_at(cx, 0.8, kSide, kSide)}, {last, box_at(cx, 0.2, kSide, kSide)}};
        case Motion::Approach:
            return {{0, box_at(cx, cy, 0.2, 0.2)}, {last, box_at(cx, cy, 0.55, 0.55)}};
        case Motion::Orbit: {
            const double r = 0.22;
            const int a = std::max(1, last / 3);
            const int b = std::max(a + 1, (2 * last) / 3);
            std::vector<Keyframe> kf = {{0, box_at(0.5 + r, 0.5, 0.25, 0.25)},
                                        {a, box_at(0.5, 0.5 + r, 0.25, 0.25)},
                                        {b, box_at(0.5 - r, 0.5, 0.25, 0.25)},
                                        {last, box_at(0.5, 0.5 - r, 0.25, 0.25)}};
            // short clips cannot hold four distinct keyframes
            std::vector<Keyframe> out;
            for (auto& k : kf) {
                if (out.empty() || k.frame > out.back().frame) out.push_back(k);
            }
            return out;
        }
        case Motion::Static:
            break;
    }
    if (last == 0) return {{0, box_at(cx, cy, kSide, kSide)}};
    return {{0, box_at(cx, cy, kSide, kSide)}, {last, box_at(cx, cy, kSide, kSide)}};
}

}  // namespace

std::vector<std::string> RuleBasedPlanner::extract_phrases(std::string_view prompt) {
    const auto words = split_words(prompt);
    std::vector<std::string> phrases;
    std::size_t i = 0;
    while (i < words.size()) {
        if (!determiners().count(words[i].norm)) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (!words[j].ends_clause && j + 1 < words.size() && !phrase_breakers().count(words[j + 1].norm) &&
               !determiners().count(words[j + 1].norm)) {
            ++j;
        }
        if (j > i && !spatial_nouns().count(words[j].norm)) {
            phrases.emplace_back(prompt.substr(words[i].begin, words[j].end - words[i].begin));
        }
        i = j + 1;
    }
    return phrases;
}

RuleBasedPlanner::Motion RuleBasedPlanner::detect_motion(const std::vector<std::string>& t) {
    if (contains_seq(t, {"left", "to", "right"})) return Motion::LeftToRight;
    if (contains_seq(t, {"right", "to", "left"})) return Motion::RightToLeft;
    if (contains_seq(t, {"top", "to", "bottom"}) || contains_any(t, {"falls", "drops", "sinks", "down"}))
        return Motion::TopToBottom;
    if (contains_seq(t, {"bottom", "to", "top"}) || contains_any(t, {"rises", "climbs", "up"}))
        return Motion::BottomToTop;
    if (contains_any(t, {"approaches", "toward", "towards", "closer"})) return Motion::Approach;
    if (contains_any(t, {"circles", "orbits", "around"})) return Motion::Orbit;
    return Motion::Static;
}

std::vector<PlannedObject> RuleBasedPlanner::plan(std::string_view prompt, int num_frames) {
    const auto phrases = extract_phrases(prompt);
    if (phrases.empty()) return {};

    const auto tokens = tokenize(prompt);
    const Motion motion = detect_motion(tokens);
    const int last = num_frames - 1;

    // vertical placement from the relation between the first two objects
    double subject_cy = 0.5;
    double other_cy = 0.5;
    double subject_cx = 0.5;
    double other_cx = 0.5;
    if (phrases.size() > 1) {
        const bool vertical_motion = motion == Motion::TopToBottom || motion == Motion::BottomToTop;
        if (contains_any(tokens, {"below", "under", "beneath"})) {
            subject_cy = 0.75;
            other_cy = 0.25;
        } else if (vertical_motion) {
            subject_cx = 0.25;
            other_cx = 0.75;
        } else {
            subject_cy = 0.25;
            other_cy = 0.75;
        }
    }

    std::vector<PlannedObject> out;
    for (std::size_t k = 0; k < phrases.size(); ++k) {
        PlannedObject obj;
        obj.phrase = phrases[k];
        obj.start_frame = 0;
        obj.end_frame = last;
        if (k == 0) {
            obj.keyframes = motion_keyframes(motion, subject_cx, subject_cy, last);
        } else {
            // additional objects spread along their band
            const double spread = phrases.size() > 2 ? 0.2 + 0.6 * static_cast<double>(k - 1) /
                                                                  static_cast<double>(phrases.size() - 2)
                                                     : other_cx;
            obj.keyframes = motion_keyframes(Motion::Static, spread, other_cy, last);
        }
        out.push_back(std::move(obj));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kPlannerInstructions =
    "You plan spatiotemporal layouts for text-to-video generation. For the user prompt, first describe in one "
    "or two sentences how each object moves and how the camera behaves. Then output a fenced ```json block "
    "with an object list. Each object has: \"phrase\" (copied verbatim from the prompt), \"start_frame\", "
    "\"end_frame\" (0-based, inclusive, within the clip), and \"keyframes\": a list of {\"frame\", \"box\"} "
    "where box is [x0, y0, x1, y1] normalized to [0,1] with x to the right and y downward. Use 2 to 4 "
    "keyframes per object.";

struct Example {
    const char* prompt;
    const char* reply;
};

// three worked in-context examples for a 16-frame clip
constexpr Example kExamples[] = {
    {"A vibrant red balloon drifts right to left above a grand statue.",
     "The balloon floats from the right edge to the left edge in the upper half; the statue stays still below "
     "it. The camera is static.\n```json\n{\"objects\": [{\"phrase\": \"A vibrant red balloon\", "
     "\"start_frame\": 0, \"end_frame\": 15, \"keyframes\": [{\"frame\": 0, \"box\": [0.65, 0.1, 0.95, 0.4]}, "
     "{\"frame\": 15, \"box\": [0.05, 0.1, 0.35, 0.4]}]}, {\"phrase\": \"a grand statue\", \"start_frame\": 0, "
     "\"end_frame\": 15, \"keyframes\": [{\"frame\": 0, \"box\": [0.35, 0.55, 0.65, 0.95]}, {\"frame\": 15, "
     "\"box\": [0.35, 0.55, 0.65, 0.95]}]}]}\n```"},
    {"a yellow ball falls from the top to the bottom",
     "The ball drops vertically through the middle of the frame. The camera is static.\n```json\n{\"objects\": "
     "[{\"phrase\": \"a yellow ball\", \"start_frame\": 0, \"end_frame\": 15, \"keyframes\": [{\"frame\": 0, "
     "\"box\": [0.4, 0.05, 0.6, 0.25]}, {\"frame\": 8, \"box\": [0.4, 0.4, 0.6, 0.6]}, {\"frame\": 15, \"box\": "
     "[0.4, 0.75, 0.6, 0.95]}]}]}\n```"},
    {"a small dog approaches a wooden fence",
     "The dog walks toward the camera and the fence, growing larger; the fence is fixed at the back. The camera "
     "is static.\n```json\n{\"objects\": [{\"phrase\": \"a small dog\", \"start_frame\": 0, \"end_frame\": 15, "
     "\"keyframes\": [{\"frame\": 0, \"box\": [0.4, 0.3, 0.55, 0.45]}, {\"frame\": 15, \"box\": [0.3, 0.35, 0.7, "
     "0.85]}]}, {\"phrase\": \"a wooden fence\", \"start_frame\": 0, \"end_frame\": 15, \"keyframes\": "
     "[{\"frame\": 0, \"box\": [0.05, 0.15, 0.95, 0.4]}, {\"frame\": 15, \"box\": [0.05, 0.15, 0.95, 0.4]}]}]}\n```"},
};

struct Endpoint {
    std::string base;  // scheme://host[:port]
    std::string path;
};

Endpoint split_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw LayoutError(LayoutError::Kind::PlannerFailure, "planner endpoint is not a URL: " + url);
    }
    const auto path_begin = url.find('/', scheme_end + 3);
    if (path_begin == std::string::npos) return {url, "/"};
    return {url.substr(0, path_begin), url.substr(path_begin)};
}

}  // namespace

ChatCompletionPlanner::ChatCompletionPlanner(PlannerClientConfig config) : config_(std::move(config)) {}

std::string ChatCompletionPlanner::build_request_body(const std::string& model, std::string_view prompt,
                                                      int num_frames) {
    json messages = json::array();
    messages.push_back({{"role", "system"}, {"content", kPlannerInstructions}});
    for (const auto& ex : kExamples) {
        messages.push_back({{"role", "user"}, {"content", std::string("Clip length: 16 frames. Prompt: ") + ex.prompt}});
        messages.push_back({{"role", "assistant"}, {"content", ex.reply}});
    }
    messages.push_back({{"role", "user"},
                        {"content", "Clip length: " + std::to_string(num_frames) +
                                        " frames. Prompt: " + std::string(prompt)}});
    json body = {{"model", model}, {"temperature", 0}, {"messages", messages}};
    return body.dump();
}

std::vector<PlannedObject> ChatCompletionPlanner::parse_reply(std::string_view content) {
    std::string_view payload = content;
    if (auto fence = content.find("```json"); fence != std::string_view::npos) {
        const auto start = fence + 7;
        const auto close = content.find("```", start);
        payload = content.substr(start, close == std::string_view::npos ? std::string_view::npos : close - start);
    } else {
        const auto open = content.find('{');
        const auto close = content.rfind('}');
        if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
            throw LayoutError(LayoutError::Kind::PlannerFailure, "planner reply carries no JSON layout");
        }
        payload = content.substr(open, close - open + 1);
    }

    std::vector<PlannedObject> out;
    try {
        const json doc = json::parse(payload);
        for (const auto& o : doc.at("objects")) {
            PlannedObject obj;
            obj.phrase = o.at("phrase").get<std::string>();
            obj.start_frame = o.at("start_frame").get<int>();
            obj.end_frame = o.at("end_frame").get<int>();
            for (const auto& k : o.at("keyframes")) {
                const auto box = k.at("box").get<std::vector<double>>();
                if (box.size() != 4) throw LayoutError(LayoutError::Kind::PlannerFailure, "keyframe box needs 4 values");
                obj.keyframes.push_back({k.at("frame").get<int>(), BBox{box[0], box[1], box[2], box[3]}});
            }
            std::sort(obj.keyframes.begin(), obj.keyframes.end(),
                      [](const Keyframe& a, const Keyframe& b) { return a.frame < b.frame; });
            out.push_back(std::move(obj));
        }
    } catch (const json::exception& e) {
        throw LayoutError(LayoutError::Kind::PlannerFailure, std::string("planner reply unparseable: ") + e.what());
    }
    return out;
}

std::vector<PlannedObject> ChatCompletionPlanner::plan(std::string_view prompt, int num_frames) {
    const Endpoint ep = split_endpoint(config_.endpoint);
    httplib::Client client(ep.base);
    const auto seconds = static_cast<time_t>(config_.timeout_seconds);
    const auto usec = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(seconds)) * 1e6);
    client.set_connection_timeout(seconds, usec);
    client.set_read_timeout(seconds, usec);

    httplib::Headers headers;
    if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str())) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }
    const std::string body = build_request_body(config_.model, prompt, num_frames);

    std::string last_error;
    for (int attempt = 0; attempt < 2; ++attempt) {
        auto res = client.Post(ep.path, headers, body, "application/json");
        if (!res) {
            throw LayoutError(LayoutError::Kind::PlannerFailure,
                              "planner endpoint unreachable: " + httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            throw LayoutError(LayoutError::Kind::PlannerFailure,
                              "planner endpoint returned HTTP " + std::to_string(res->status));
        }
        try {
            const json doc = json::parse(res->body);
            const std::string content = doc.at("choices").at(0).at("message").at("content").get<std::string>();
            return parse_reply(content);
        } catch (const json::exception& e) {
            last_error = e.what();
        } catch (const LayoutError& e) {
            last_error = e.what();
        }
    }
    throw LayoutError(LayoutError::Kind::PlannerFailure, "planner reply unparseable after retry: " + last_error);
}

}  // namespace ttom
