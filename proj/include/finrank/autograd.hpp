#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace finrank::neural {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named tensors with deterministic (name-sorted) iteration order.
class ParameterStore {
public:
    Matrix& add(const std::string& name, Matrix value);
    Matrix& at(const std::string& name);
    const Matrix& at(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    std::size_t size() const { return tensors_.size(); }
    std::size_t parameter_count() const;
    void erase(const std::string& name) { tensors_.erase(name); }

    /// Same names and shapes, all zeros.
    ParameterStore zeros_like() const;

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

    bool operator==(const ParameterStore& o) const;

private:
    std::map<std::string, Matrix> tensors_;
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }
};

/// Records a forward computation and replays it backwards.
///
/// Nodes are appended in evaluation order, so reverse creation order is a
/// valid topological order for the backward sweep. Parameters are bound by
/// reference; the store must outlive the tape and stay unmodified until
/// backward() has run.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

    Var constant(Matrix value);
    Var parameter(const ParameterStore& store, const std::string& name);

    /// Low-level: append a node computed from `parents`.
    Var push(Matrix value, std::initializer_list<int> parents, BackwardFn backward);
    Var push(Matrix value, const std::vector<int>& parents, BackwardFn backward);

    const Matrix& value(int id) const;
    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
    void accumulate(int id, const Matrix& grad);
    template <typename Fn>
    void accumulate_with(int id, Fn&& fn);

    /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
    void backward(Var root);

    /// Gradient for every bound parameter; NaN/Inf raises NumericalError.
    ParameterStore gradients() const;
    /// Same, accumulated into an existing store with matching names.
    void add_gradients_to(ParameterStore& grads) const;

    std::size_t size() const { return nodes_.size(); }
    /// Id the next pushed node will receive; lets a backward closure read its own output.
    int next_id() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Matrix own;
        const Matrix* bound = nullptr;
        Matrix grad;
        bool needs_grad = false;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::map<std::string, int> params_;
};

template <typename Fn>
void Tape::accumulate_with(int id, Fn&& fn) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.needs_grad) {
        return;
    }
    if (node.grad.size() == 0) {
        node.grad = Matrix::Zero(value(id).rows(), value(id).cols());
    }
    fn(node.grad);
}

// Elementwise / linear algebra. Shapes must agree; mismatches throw InvalidArgument.
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
/// Exact (erf) GELU.
Var gelu(Var a);
Var log(Var a);
/// Clamps to [lo, hi]; gradient passes only strictly inside.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);

/// Rows of `table` selected by ids (embedding lookup).
Var gather_rows(Var table, std::span<const std::int32_t> ids);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);

/// Row-wise softmax. Columns with key_mask == 0 get exactly zero weight.
Var softmax_rows(Var a, std::span<const std::uint8_t> key_mask = {});
Var log_softmax_rows(Var a);
/// Row-wise layer normalization with learned gain/bias rows.
Var layer_norm(Var x, Var gain, Var bias, double eps);
/// Column-wise max over rows; returns 1 x cols.
Var max_rows(Var a);
/// Entry (row_i, col_i) for each i, as a k x 1 column.
Var pick(Var a, std::span<const std::pair<Eigen::Index, Eigen::Index>> entries);
/// Multiplies by a fixed 0/scale mask (inverted dropout when scale = 1/keep).
Var apply_mask(Var a, const Matrix& mask);
/// u.v / (|u||v|) for two same-shaped tensors; zero norm throws.
Var cosine(Var u, Var v);

/// x W + b with W (in x out) and b (1 x out).
Var linear(Var x, Var weight, Var bias);

} // namespace finrank::neural
