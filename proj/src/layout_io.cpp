#include "ttom/layout.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ttom {

using json = nlohmann::ordered_json;

std::string layout_to_json(const SpatioTemporalLayout& layout) {
    json doc;
    doc["prompt"] = layout.prompt;
    doc["num_frames"] = layout.num_frames;
    doc["latent_dims"] = {layout.latent_dims.tau, layout.latent_dims.h, layout.latent_dims.w};
    json objects = json::array();
    for (const auto& obj : layout.objects) {
        json o;
        o["phrase"] = obj.phrase;
        o["start_frame"] = obj.start_frame;
        o["end_frame"] = obj.end_frame;
        // every frame is written as a keyframe so reading back is lossless
        json kf = json::array();
        for (int f = obj.start_frame; f <= obj.end_frame; ++f) {
            const BBox& b = obj.box_at(f);
            kf.push_back({{"frame", f}, {"box", {b.x0, b.y0, b.x1, b.y1}}});
        }
        o["keyframes"] = std::move(kf);
        objects.push_back(std::move(o));
    }
    doc["objects"] = std::move(objects);
    return doc.dump(2);
}

SpatioTemporalLayout layout_from_json(std::string_view text) {
    SpatioTemporalLayout layout;
    try {
        const json doc = json::parse(text);
        layout.prompt = doc.at("prompt").get<std::string>();
        layout.num_frames = doc.at("num_frames").get<int>();
        const auto dims = doc.at("latent_dims").get<std::vector<int>>();
        if (dims.size() != 3) throw LayoutError(LayoutError::Kind::Invalid, "latent_dims needs 3 entries");
        layout.latent_dims = LatentDims{dims[0], dims[1], dims[2]};
        const auto prompt_tokens = tokenize(layout.prompt);
        for (const auto& o : doc.at("objects")) {
            ObjectLayout obj;
            obj.phrase = o.at("phrase").get<std::string>();
            obj.start_frame = o.at("start_frame").get<int>();
            obj.end_frame = o.at("end_frame").get<int>();
            std::vector<Keyframe> keyframes;
            for (const auto& k : o.at("keyframes")) {
                const auto box = k.at("box").get<std::vector<double>>();
                if (box.size() != 4) throw LayoutError(LayoutError::Kind::Invalid, "box needs 4 values");
                keyframes.push_back({k.at("frame").get<int>(), BBox{box[0], box[1], box[2], box[3]}});
            }
            obj.boxes = interpolate_keyframes(keyframes, obj.start_frame, obj.end_frame);
            if (auto span = find_token_span(prompt_tokens, obj.phrase)) obj.token_span = *span;
            layout.objects.push_back(std::move(obj));
        }
    } catch (const nlohmann::json::exception& e) {
        throw LayoutError(LayoutError::Kind::Invalid, std::string("layout file: ") + e.what());
    }
    return layout;
}

void write_layout_file(const SpatioTemporalLayout& layout, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write layout file " + path);
    out << layout_to_json(layout) << "\n";
}

SpatioTemporalLayout read_layout_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read layout file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return layout_from_json(ss.str());
}

}  // namespace ttom
