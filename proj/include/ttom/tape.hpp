#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace ttom::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode tape over dense row-major matrices.
///
/// Nodes are appended in evaluation order, so a reverse sweep visits every
/// node after all of its consumers. Gradients are only materialized for nodes
/// that depend on at least one parameter.
class Tape {
public:
    Var constant(Matrix value);
    Var parameter(Matrix value);

    const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
    bool has_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].has_grad; }
    /// Gradient of the seeded objective; zero matrix when nothing reached the node.
    Matrix grad(Var v) const;

    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var add(Var a, Var b);
    Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
    Var scale(Var a, double s);
    Var layer_norm(Var a, double eps = 1e-5);
    Var softmax_rows(Var a);
    Var gelu(Var a);
    Var slice_cols(Var a, int begin, int count);
    Var concat_cols(std::span<const Var> parts);
    Var gather_rows(Var table, std::span<const int> rows);

    /// Add `g` into the gradient of `v`; use to seed one or more outputs.
    void seed(Var v, const Matrix& g);
    /// Propagate every seeded gradient back to the leaves.
    void backward();

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        std::function<void(Tape&, const Matrix&)> backprop;
    };

    Var push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> backprop);
    void accumulate(Var v, const Matrix& g);
    bool any_grad(std::initializer_list<Var> vars) const;

    std::vector<Node> nodes_;
};

}  // namespace ttom::ad
