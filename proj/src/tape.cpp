#include "ttom/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace ttom::ad {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::any_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars) {
        if (requires_grad(v)) return true;
    }
    return false;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(Matrix value) { return push(std::move(value), true, nullptr); }

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.has_grad) return n.grad;
    return Matrix::Zero(n.value.rows(), n.value.cols());
}

void Tape::accumulate(Var v, const Matrix& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.has_grad) {
        n.grad += g;
    } else {
        n.grad = g;
        n.has_grad = true;
    }
}

void Tape::seed(Var v, const Matrix& g) {
    require(g.rows() == value(v).rows() && g.cols() == value(v).cols(), "tape seed: shape mismatch");
    accumulate(v, g);
}

void Tape::backward() {
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.backprop) continue;
        // closures only write into parents, which sit at lower indices
        n.backprop(*this, n.grad);
    }
}

Var Tape::matmul(Var a, Var b) {
    require(value(a).cols() == value(b).rows(), "matmul: shape mismatch");
    Matrix out = value(a) * value(b);
    return push(std::move(out), any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
        if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    require(value(a).cols() == value(b).cols(), "matmul_nt: shape mismatch");
    Matrix out = value(a) * value(b).transpose();
    return push(std::move(out), any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, g * t.value(b));
        if (t.requires_grad(b)) t.accumulate(b, g.transpose() * t.value(a));
    });
}

Var Tape::add(Var a, Var b) {
    require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add: shape mismatch");
    Matrix out = value(a) + value(b);
    return push(std::move(out), any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var Tape::add_row(Var a, Var row) {
    require(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row: shape mismatch");
    Matrix out = value(a).rowwise() + value(row).row(0);
    return push(std::move(out), any_grad({a, row}), [a, row](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
    });
}

Var Tape::scale(Var a, double s) {
    Matrix out = value(a) * s;
    return push(std::move(out), requires_grad(a), [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var Tape::layer_norm(Var a, double eps) {
    const Matrix& x = value(a);
    const auto cols = static_cast<double>(x.cols());
    Matrix y(x.rows(), x.cols());
    Eigen::VectorXd inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).sum() / cols;
        const double var = (x.row(r).array() - mean).square().sum() / cols;
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        y.row(r) = (x.row(r).array() - mean) * inv_std(r);
    }
    Var out = push(std::move(y), requires_grad(a), nullptr);
    if (requires_grad(a)) {
        nodes_.back().backprop = [a, out, inv_std, cols](Tape& t, const Matrix& g) {
            const Matrix& yv = t.value(out);
            Matrix dx(g.rows(), g.cols());
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                const double mg = g.row(r).sum() / cols;
                const double mgy = g.row(r).dot(yv.row(r)) / cols;
                dx.row(r) = (g.row(r).array() - mg - yv.row(r).array() * mgy) * inv_std(r);
            }
            t.accumulate(a, dx);
        };
    }
    return out;
}

Var Tape::softmax_rows(Var a) {
    const Matrix& x = value(a);
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double m = x.row(r).maxCoeff();
        y.row(r) = (x.row(r).array() - m).exp();
        y.row(r) /= y.row(r).sum();
    }
    Var out = push(std::move(y), requires_grad(a), nullptr);
    if (requires_grad(a)) {
        nodes_.back().backprop = [a, out](Tape& t, const Matrix& g) {
            const Matrix& yv = t.value(out);
            const Eigen::VectorXd dots = (g.array() * yv.array()).rowwise().sum();
            Matrix dx = yv.array() * (g.colwise() - dots).array();
            t.accumulate(a, dx);
        };
    }
    return out;
}

Var Tape::gelu(Var a) {
    const Matrix& x = value(a);
    Matrix y = x.unaryExpr([](double v) {
        return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    });
    return push(std::move(y), requires_grad(a), [a](Tape& t, const Matrix& g) {
        const Matrix d = t.value(a).unaryExpr([](double v) {
            const double u = kGeluC * (v + kGeluA * v * v * v);
            const double th = std::tanh(u);
            const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
        });
        t.accumulate(a, g.cwiseProduct(d));
    });
}

Var Tape::slice_cols(Var a, int begin, int count) {
    require(begin >= 0 && count > 0 && begin + count <= value(a).cols(), "slice_cols: range out of bounds");
    Matrix out = value(a).middleCols(begin, count);
    return push(std::move(out), requires_grad(a), [a, begin, count](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
        full.middleCols(begin, count) = g;
        t.accumulate(a, full);
    });
}

Var Tape::concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const Eigen::Index rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    bool grad = false;
    for (Var p : parts) {
        require(value(p).rows() == rows, "concat_cols: row mismatch");
        cols += value(p).cols();
        grad = grad || requires_grad(p);
    }
    Matrix out(rows, cols);
    Eigen::Index offset = 0;
    for (Var p : parts) {
        out.middleCols(offset, value(p).cols()) = value(p);
        offset += value(p).cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return push(std::move(out), grad, [inputs](Tape& t, const Matrix& g) {
        Eigen::Index off = 0;
        for (Var p : inputs) {
            const Eigen::Index c = t.value(p).cols();
            if (t.requires_grad(p)) t.accumulate(p, g.middleCols(off, c));
            off += c;
        }
    });
}

Var Tape::gather_rows(Var table, std::span<const int> rows) {
    const Matrix& src = value(table);
    Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < src.rows(), "gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
    }
    std::vector<int> idx(rows.begin(), rows.end());
    return push(std::move(out), requires_grad(table), [table, idx](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(t.value(table).rows(), t.value(table).cols());
        for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
        t.accumulate(table, full);
    });
}

}  // namespace ttom::ad
