#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "ttom/denoiser.hpp"

namespace ttom {

namespace {

constexpr char kMagic[8] = {'T', 'T', 'O', 'M', 'D', 'I', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint truncated: " + path);
    return v;
}

}  // namespace

void save_checkpoint(const Denoiser& denoiser, const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    const DenoiserConfig& c = denoiser.config();
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    const std::array<int, 11> fields = {c.latent.tau, c.latent.h, c.latent.w, c.channels, c.blocks, c.heads,
                                        c.text_len, c.vocab, c.mlp_ratio, c.sampler_steps, 0};
    for (int f : fields) put<std::uint32_t>(out, static_cast<std::uint32_t>(f));
    put<std::uint64_t>(out, c.seed);
    for (const ad::Matrix* p : denoiser.weights().parameters()) {
        for (Eigen::Index i = 0; i < p->size(); ++i) put<float>(out, static_cast<float>(p->data()[i]));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Denoiser load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a denoiser checkpoint: " + path);
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    }
    std::array<int, 11> f{};
    for (int& v : f) v = static_cast<int>(get<std::uint32_t>(in, path));
    DenoiserConfig c;
    c.latent = LatentDims{f[0], f[1], f[2]};
    c.channels = f[3];
    c.blocks = f[4];
    c.heads = f[5];
    c.text_len = f[6];
    c.vocab = f[7];
    c.mlp_ratio = f[8];
    c.sampler_steps = f[9];
    c.seed = get<std::uint64_t>(in, path);
    c.validate();

    // shapes come from a freshly initialized set of the same config
    DenoiserWeights w = DenoiserWeights::random(c);
    for (ad::Matrix* p : w.parameters()) {
        for (Eigen::Index i = 0; i < p->size(); ++i) p->data()[i] = static_cast<double>(get<float>(in, path));
    }
    in.peek();
    if (!in.eof()) throw std::runtime_error("trailing bytes in checkpoint: " + path);
    return Denoiser(c, std::move(w));
}

}  // namespace ttom
