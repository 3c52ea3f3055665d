#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ttom/grid.hpp"

namespace ttom {

/// Axis-aligned box in corner form, normalized to the frame: x is the
/// horizontal fraction of width, y the vertical fraction of height.
struct BBox {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 1.0;
    double y1 = 1.0;

    double width() const noexcept { return x1 - x0; }
    double height() const noexcept { return y1 - y0; }
    double area() const noexcept { return width() * height(); }
    double center_x() const noexcept { return 0.5 * (x0 + x1); }
    double center_y() const noexcept { return 0.5 * (y0 + y1); }
    bool valid() const noexcept {
        return 0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0;
    }
    bool operator==(const BBox&) const = default;
};

/// Half-open token index range [begin, end).
struct TokenSpan {
    int begin = 0;
    int end = 0;

    int size() const noexcept { return end - begin; }
    bool empty() const noexcept { return end <= begin; }
    bool operator==(const TokenSpan&) const = default;
};

struct Keyframe {
    int frame = 0;
    BBox box;
};

struct ObjectLayout {
    std::string phrase;
    TokenSpan token_span;
    std::vector<BBox> boxes;  // one per frame in [start_frame, end_frame]
    int start_frame = 0;
    int end_frame = 0;

    const BBox& box_at(int frame) const { return boxes.at(static_cast<std::size_t>(frame - start_frame)); }
    bool active(int frame) const noexcept { return frame >= start_frame && frame <= end_frame; }
    bool operator==(const ObjectLayout&) const = default;
};

struct SpatioTemporalLayout {
    std::string prompt;
    std::vector<ObjectLayout> objects;
    int num_frames = 16;
    LatentDims latent_dims{};

    int frames_per_latent() const noexcept { return num_frames / latent_dims.tau; }
    bool operator==(const SpatioTemporalLayout&) const = default;
};

class LayoutError : public std::runtime_error {
public:
    enum class Kind { PlannerFailure, NoObjects, Unfixable, EmptyKeyframes, Invalid };

    LayoutError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Shared tokenizer: lowercase, whitespace split, every character other than
/// ASCII letters, digits, '<' and '>' removed, empty tokens dropped.
std::vector<std::string> tokenize(std::string_view text);

/// First occurrence of the phrase's tokens as a contiguous run of prompt tokens.
std::optional<TokenSpan> find_token_span(const std::vector<std::string>& prompt_tokens, std::string_view phrase);

/// Per-frame boxes for [start_frame, end_frame] by coordinate-wise linear
/// interpolation between keyframes, held constant outside the keyframe range.
std::vector<BBox> interpolate_keyframes(const std::vector<Keyframe>& keyframes, int start_frame, int end_frame);

struct VerifiedLayout {
    SpatioTemporalLayout layout;
    std::vector<std::string> corrections;
};

/// Clamp, inflate, and re-anchor a layout; every change is listed in
/// `corrections`. Throws LayoutError::Unfixable when a phrase cannot be found.
VerifiedLayout verify_layout(const SpatioTemporalLayout& layout);

/// Minimum box side enforced by verify_layout for a latent grid.
double min_box_side(const LatentDims& dims) noexcept;

/// Replace each object phrase with "<object A>", "<object B>", ... in order of
/// first appearance. Longer phrases claim their text first.
std::string abstract_prompt(const SpatioTemporalLayout& layout);

// ---------------------------------------------------------------------------
// planning

struct PlannedObject {
    std::string phrase;
    int start_frame = 0;
    int end_frame = 0;
    std::vector<Keyframe> keyframes;
};

class LayoutPlanner {
public:
    virtual ~LayoutPlanner() = default;
    virtual std::vector<PlannedObject> plan(std::string_view prompt, int num_frames) = 0;
};

/// Deterministic offline planner: noun phrases are determiner-led spans of the
/// prompt, motion comes from a fixed set of verb/preposition templates.
class RuleBasedPlanner final : public LayoutPlanner {
public:
    enum class Motion { LeftToRight, RightToLeft, TopToBottom, BottomToTop, Approach, Orbit, Static };

    std::vector<PlannedObject> plan(std::string_view prompt, int num_frames) override;

    static Motion detect_motion(const std::vector<std::string>& tokens);
    static std::vector<std::string> extract_phrases(std::string_view prompt);
};

struct PlannerClientConfig {
    std::string endpoint;  // e.g. http://localhost:8080/v1/chat/completions
    std::string model;
    std::string api_key_env;
    double timeout_seconds = 60.0;
};

/// Chat-completion planner. Sends one request carrying the in-context
/// template, retries once on an unparseable reply.
class ChatCompletionPlanner final : public LayoutPlanner {
public:
    explicit ChatCompletionPlanner(PlannerClientConfig config);

    std::vector<PlannedObject> plan(std::string_view prompt, int num_frames) override;

    static std::string build_request_body(const std::string& model, std::string_view prompt, int num_frames);
    /// Parses the assistant reply; throws LayoutError::PlannerFailure on malformed text.
    static std::vector<PlannedObject> parse_reply(std::string_view content);

private:
    PlannerClientConfig config_;
};

/// Plan, interpolate keyframes, and attach token spans.
SpatioTemporalLayout plan_layout(std::string_view prompt, LayoutPlanner& planner, int num_frames, LatentDims dims);

// ---------------------------------------------------------------------------
// layout files

std::string layout_to_json(const SpatioTemporalLayout& layout);
SpatioTemporalLayout layout_from_json(std::string_view text);
void write_layout_file(const SpatioTemporalLayout& layout, const std::string& path);
SpatioTemporalLayout read_layout_file(const std::string& path);

}  // namespace ttom
