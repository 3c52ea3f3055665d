#pragma once

#include <vector>

#include "ttom/grid.hpp"
#include "ttom/layout.hpp"

namespace ttom {

inline constexpr double kMaskEpsilonFloor = 1e-8;
inline constexpr double kDefaultMaskSigma = 1.0;

/// Globally normalized spatiotemporal target distribution for one object.
struct SoftMask {
    RealGrid values;
    int object_id = 0;
};

/// Cell (r, c) is set iff its center ((c+0.5)/w, (r+0.5)/h) lies in the
/// half-open box [x0, x1) x [y0, y1). A box that covers no center marks the
/// cell holding its own center. Result has shape (1, h, w).
BinaryGrid rasterize_box(const BBox& box, int h, int w);

/// Rasterize every frame, block-average onto the latent frames, blur each
/// latent frame with a truncated Gaussian (radius ceil(3 sigma), mirrored
/// borders), floor at kMaskEpsilonFloor and normalize over the whole grid.
SoftMask soft_mask(const ObjectLayout& obj, int num_frames, LatentDims dims, double sigma, int object_id = 0);

/// Everything the alignment losses and the probe need to score one object.
struct ObjectTarget {
    int object_id = 0;
    TokenSpan span;
    SoftMask soft;
    BinaryGrid box_mask;            // (tau, h, w); empty on inactive latent frames
    std::vector<bool> active;       // per latent frame
    std::vector<double> center_x;   // per latent frame, normalized
    std::vector<double> center_y;
    int target_cells = 0;           // set cells in box_mask
};

/// Latent frame t covers video frames [t * F, (t + 1) * F) with F = num_frames / tau.
/// Its box is the coordinate mean of the object's boxes over the covered frames
/// where the object is present.
ObjectTarget build_target(const SpatioTemporalLayout& layout, int object_index, double sigma = kDefaultMaskSigma);
std::vector<ObjectTarget> build_targets(const SpatioTemporalLayout& layout, double sigma = kDefaultMaskSigma);

}  // namespace ttom
