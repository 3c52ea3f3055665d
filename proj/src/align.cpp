#include "ttom/align.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace ttom {

namespace {

void check_distribution(const RealGrid& g, const char* what) {
    double total = 0.0;
    for (double v : g.values()) {
        if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative or NaN entry");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument(std::string(what) + ": does not sum to 1");
}

// Value and d/dp of jsd(p, q).
double jsd_with_grad(const RealGrid& p, const RealGrid& q, RealGrid* grad) {
    double kl_p = 0.0;
    double kl_q = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) kl_p += p[i] * std::log(p[i] / m);
        if (q[i] > 0.0) kl_q += q[i] * std::log(q[i] / m);
        if (grad) {
            (*grad)[i] = p[i] > 0.0 ? 0.5 * std::log(p[i] / m) : 0.5 * std::log(1e-300 / std::max(m, 1e-300));
        }
    }
    return std::max(0.0, 0.5 * kl_p + 0.5 * kl_q);
}

double ce_with_grad(const RealGrid& p, const BinaryGrid& mask, RealGrid* grad) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
        if (p[i] > p[arg]) arg = i;
    }
    const double peak = p[arg];
    if (!(peak > 0.0)) throw std::invalid_argument("ce_loss: pooled attention has no mass");
    const double n = static_cast<double>(p.size());
    double loss = 0.0;
    double weighted = 0.0;  // sum of dL/da_i * p_i, for the argmax term
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double raw = p[i] / peak;
        const double a = std::clamp(raw, kCeClamp, 1.0 - kCeClamp);
        const bool clamped = raw <= kCeClamp || raw >= 1.0 - kCeClamp;
        const double y = mask[i] ? 1.0 : 0.0;
        loss -= (y * std::log(a) + (1.0 - y) * std::log(1.0 - a)) / n;
        if (grad) {
            const double da = clamped ? 0.0 : -(y / a - (1.0 - y) / (1.0 - a)) / n;
            (*grad)[i] = da / peak;
            weighted += da * p[i];
        }
    }
    if (grad) (*grad)[arg] -= weighted / (peak * peak);
    return loss;
}

double com_with_grad(const RealGrid& p, const ObjectTarget& target, RealGrid* grad) {
    const LatentDims& d = p.dims();
    auto coord = [](int i, int n) { return n > 1 ? static_cast<double>(i) / (n - 1) : 0.5; };
    int frames = 0;
    for (int t = 0; t < d.tau; ++t) frames += target.active[static_cast<std::size_t>(t)] ? 1 : 0;
    if (frames == 0) throw std::invalid_argument("com_loss: object has no active frame");
    if (grad) std::fill(grad->values().begin(), grad->values().end(), 0.0);

    double loss = 0.0;
    for (int t = 0; t < d.tau; ++t) {
        if (!target.active[static_cast<std::size_t>(t)]) continue;
        double mass = 0.0;
        double mx = 0.0;
        double my = 0.0;
        for (int r = 0; r < d.h; ++r) {
            for (int c = 0; c < d.w; ++c) {
                const double v = p.at(t, r, c);
                mass += v;
                mx += v * coord(c, d.w);
                my += v * coord(r, d.h);
            }
        }
        if (!(mass > 0.0)) throw std::invalid_argument("com_loss: latent frame has no attention mass");
        const double cx = mx / mass;
        const double cy = my / mass;
        const double ex = cx - target.center_x[static_cast<std::size_t>(t)];
        const double ey = cy - target.center_y[static_cast<std::size_t>(t)];
        loss += (ex * ex + ey * ey) / frames;
        if (grad) {
            for (int r = 0; r < d.h; ++r) {
                for (int c = 0; c < d.w; ++c) {
                    grad->at(t, r, c) =
                        2.0 * (ex * (coord(c, d.w) - cx) + ey * (coord(r, d.h) - cy)) / (mass * frames);
                }
            }
        }
    }
    return loss;
}

template <typename PairLoss>
PooledLoss mean_over_objects(std::span<const PooledAttention> pooled, std::span<const ObjectTarget> targets,
                             PairLoss pair_loss) {
    if (targets.empty()) throw std::invalid_argument("alignment loss: no objects");
    std::map<int, std::size_t> target_index;
    for (std::size_t i = 0; i < targets.size(); ++i) target_index[targets[i].object_id] = i;
    std::vector<int> per_object(targets.size(), 0);
    for (const auto& a : pooled) {
        auto it = target_index.find(a.object_id);
        if (it == target_index.end()) {
            throw std::invalid_argument("alignment loss: pooled map for unknown object " +
                                        std::to_string(a.object_id));
        }
        require_same_shape(a.values.dims(), targets[it->second].soft.values.dims(), "alignment loss");
        ++per_object[it->second];
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (per_object[i] == 0) {
            throw std::invalid_argument("alignment loss: missing object " + std::to_string(targets[i].object_id));
        }
    }

    PooledLoss out;
    const double n_objects = static_cast<double>(targets.size());
    for (const auto& a : pooled) {
        const std::size_t k = target_index.at(a.object_id);
        const double weight = 1.0 / (n_objects * per_object[k]);
        RealGrid g(a.values.dims(), 0.0);
        out.value += weight * pair_loss(a.values, targets[k], &g);
        for (double& v : g.values()) v *= weight;
        out.grad.push_back(std::move(g));
    }
    return out;
}

}  // namespace

const char* loss_kind_name(LossKind kind) noexcept {
    switch (kind) {
        case LossKind::Jsd: return "jsd";
        case LossKind::Ce: return "ce";
        case LossKind::Com: return "com";
    }
    return "?";
}

LossKind parse_loss_kind(const std::string& name) {
    if (name == "jsd") return LossKind::Jsd;
    if (name == "ce") return LossKind::Ce;
    if (name == "com") return LossKind::Com;
    throw std::invalid_argument("unknown loss kind: " + name);
}

void AlignmentConfig::validate(int blocks) const {
    if (guided_blocks.empty()) throw std::invalid_argument("alignment: guided_blocks is empty");
    for (int b : guided_blocks) {
        if (b < 0 || b >= blocks) throw std::invalid_argument("alignment: guided block out of range");
    }
}

double jsd(const RealGrid& p, const RealGrid& q) {
    require_same_shape(p.dims(), q.dims(), "jsd");
    if (p.size() != q.size()) throw std::invalid_argument("jsd: shape mismatch");
    check_distribution(p, "jsd");
    check_distribution(q, "jsd");
    return jsd_with_grad(p, q, nullptr);
}

PooledLoss loss_align(std::span<const PooledAttention> pooled, std::span<const ObjectTarget> targets) {
    return mean_over_objects(pooled, targets, [](const RealGrid& p, const ObjectTarget& t, RealGrid* g) {
        return jsd_with_grad(p, t.soft.values, g);
    });
}

PooledLoss ce_loss(std::span<const PooledAttention> pooled, std::span<const ObjectTarget> targets) {
    return mean_over_objects(pooled, targets, [](const RealGrid& p, const ObjectTarget& t, RealGrid* g) {
        return ce_with_grad(p, t.box_mask, g);
    });
}

PooledLoss com_loss(std::span<const PooledAttention> pooled, std::span<const ObjectTarget> targets) {
    return mean_over_objects(pooled, targets, [](const RealGrid& p, const ObjectTarget& t, RealGrid* g) {
        return com_with_grad(p, t, g);
    });
}

PooledLoss alignment_loss(LossKind kind, std::span<const PooledAttention> pooled,
                          std::span<const ObjectTarget> targets) {
    switch (kind) {
        case LossKind::Jsd: return loss_align(pooled, targets);
        case LossKind::Ce: return ce_loss(pooled, targets);
        case LossKind::Com: return com_loss(pooled, targets);
    }
    throw std::invalid_argument("alignment_loss: bad loss kind");
}

std::vector<PoolRequest> pool_requests(std::span<const ObjectTarget> targets, const std::vector<int>& blocks) {
    std::vector<PoolRequest> out;
    for (const auto& t : targets) {
        for (int b : blocks) out.push_back(PoolRequest{t.object_id, b, t.span});
    }
    return out;
}

PooledLossFn make_loss_fn(LossKind kind, std::span<const ObjectTarget> targets) {
    return [kind, targets](std::span<const PooledAttention> pooled) { return alignment_loss(kind, pooled, targets); };
}

std::vector<int> select_guided_blocks(const std::vector<double>& scores, const BlockPolicy& policy) {
    if (scores.empty()) return {};
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    std::vector<int> out;
    if (policy.kind == BlockPolicy::Kind::TopK) {
        if (policy.k < 1) throw std::invalid_argument("select_guided_blocks: k must be >= 1");
        const std::size_t k = std::min(order.size(), static_cast<std::size_t>(policy.k));
        out.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
        for (std::size_t b = 0; b < scores.size(); ++b) {
            if (scores[b] >= policy.threshold) out.push_back(static_cast<int>(b));
        }
        if (out.empty()) out.push_back(order.front());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace ttom
