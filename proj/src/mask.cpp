#include "ttom/mask.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ttom {

namespace {

// Half-sample symmetric reflection: -1 -> 0, n -> n-1.
int mirror(int i, int n) {
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

void blur_frame(std::vector<double>& frame, int h, int w, const std::vector<double>& kernel) {
    const int radius = static_cast<int>(kernel.size() / 2);
    std::vector<double> tmp(frame.size(), 0.0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += kernel[static_cast<std::size_t>(k + radius)] *
                       frame[static_cast<std::size_t>(r * w + mirror(c + k, w))];
            }
            tmp[static_cast<std::size_t>(r * w + c)] = acc;
        }
    }
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += kernel[static_cast<std::size_t>(k + radius)] *
                       tmp[static_cast<std::size_t>(mirror(r + k, h) * w + c)];
            }
            frame[static_cast<std::size_t>(r * w + c)] = acc;
        }
    }
}

void check_frames(int num_frames, const LatentDims& dims) {
    if (dims.tau <= 0 || dims.h <= 0 || dims.w <= 0 || num_frames <= 0 || num_frames % dims.tau != 0) {
        throw std::invalid_argument("mask: num_frames must be a positive multiple of tau");
    }
}

}  // namespace

BinaryGrid rasterize_box(const BBox& box, int h, int w) {
    BinaryGrid grid(LatentDims{1, h, w}, 0);
    bool any = false;
    for (int r = 0; r < h; ++r) {
        const double cy = (r + 0.5) / h;
        if (cy < box.y0 || cy >= box.y1) continue;
        for (int c = 0; c < w; ++c) {
            const double cx = (c + 0.5) / w;
            if (cx >= box.x0 && cx < box.x1) {
                grid.at(0, r, c) = 1;
                any = true;
            }
        }
    }
    if (!any) {
        const int r = std::clamp(static_cast<int>(box.center_y() * h), 0, h - 1);
        const int c = std::clamp(static_cast<int>(box.center_x() * w), 0, w - 1);
        grid.at(0, r, c) = 1;
    }
    return grid;
}

SoftMask soft_mask(const ObjectLayout& obj, int num_frames, LatentDims dims, double sigma, int object_id) {
    check_frames(num_frames, dims);
    if (!(sigma > 0.0)) throw std::invalid_argument("soft_mask: sigma must be positive");

    const int per_latent = num_frames / dims.tau;
    const std::size_t plane = dims.frame_cells();
    SoftMask mask{RealGrid(dims, 0.0), object_id};
    auto& values = mask.values.values();

    bool any = false;
    for (int f = std::max(0, obj.start_frame); f <= std::min(obj.end_frame, num_frames - 1); ++f) {
        const BinaryGrid raster = rasterize_box(obj.box_at(f), dims.h, dims.w);
        const std::size_t offset = static_cast<std::size_t>(f / per_latent) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            values[offset + i] += static_cast<double>(raster[i]) / per_latent;
        }
        any = true;
    }
    if (!any) {
        throw std::invalid_argument("soft_mask: object '" + obj.phrase + "' overlaps no latent frame");
    }

    const auto kernel = gaussian_kernel(sigma);
    std::vector<double> frame(plane);
    for (int t = 0; t < dims.tau; ++t) {
        const auto first = values.begin() + static_cast<std::ptrdiff_t>(t * plane);
        std::copy(first, first + static_cast<std::ptrdiff_t>(plane), frame.begin());
        blur_frame(frame, dims.h, dims.w, kernel);
        std::copy(frame.begin(), frame.end(), first);
    }

    double total = 0.0;
    for (double& v : values) {
        v = std::max(v, kMaskEpsilonFloor);
        total += v;
    }
    for (double& v : values) v /= total;
    return mask;
}

ObjectTarget build_target(const SpatioTemporalLayout& layout, int object_index, double sigma) {
    const LatentDims dims = layout.latent_dims;
    check_frames(layout.num_frames, dims);
    const ObjectLayout& obj = layout.objects.at(static_cast<std::size_t>(object_index));
    const int per_latent = layout.num_frames / dims.tau;

    ObjectTarget target;
    target.object_id = object_index;
    target.span = obj.token_span;
    target.soft = soft_mask(obj, layout.num_frames, dims, sigma, object_index);
    target.box_mask = BinaryGrid(dims, 0);
    target.active.assign(static_cast<std::size_t>(dims.tau), false);
    target.center_x.assign(static_cast<std::size_t>(dims.tau), 0.5);
    target.center_y.assign(static_cast<std::size_t>(dims.tau), 0.5);

    for (int t = 0; t < dims.tau; ++t) {
        BBox mean{0.0, 0.0, 0.0, 0.0};
        int count = 0;
        for (int f = t * per_latent; f < (t + 1) * per_latent; ++f) {
            if (!obj.active(f)) continue;
            const BBox& b = obj.box_at(f);
            mean.x0 += b.x0;
            mean.y0 += b.y0;
            mean.x1 += b.x1;
            mean.y1 += b.y1;
            ++count;
        }
        if (count == 0) continue;
        mean.x0 /= count;
        mean.y0 /= count;
        mean.x1 /= count;
        mean.y1 /= count;
        target.active[static_cast<std::size_t>(t)] = true;
        target.center_x[static_cast<std::size_t>(t)] = mean.center_x();
        target.center_y[static_cast<std::size_t>(t)] = mean.center_y();
        const BinaryGrid raster = rasterize_box(mean, dims.h, dims.w);
        for (int r = 0; r < dims.h; ++r) {
            for (int c = 0; c < dims.w; ++c) {
                if (raster.at(0, r, c)) {
                    target.box_mask.at(t, r, c) = 1;
                    ++target.target_cells;
                }
            }
        }
    }
    return target;
}

std::vector<ObjectTarget> build_targets(const SpatioTemporalLayout& layout, double sigma) {
    std::vector<ObjectTarget> out;
    out.reserve(layout.objects.size());
    for (std::size_t i = 0; i < layout.objects.size(); ++i) {
        out.push_back(build_target(layout, static_cast<int>(i), sigma));
    }
    return out;
}

}  // namespace ttom
