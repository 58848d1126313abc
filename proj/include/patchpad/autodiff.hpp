#pragma once

// Minimal reverse-mode differentiation over dense double tensors.
//
// A Tape records one forward pass; backward() walks it in reverse and
// accumulates adjoints. Parameters live outside the tape and receive their
// gradients at the end of backward(); a fresh Tape is built per step.
// Every op views its operands as matrices: the last axis is the column
// axis and all leading axes are folded into rows.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace patchpad::ad {

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }
    static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
    std::size_t rows() const noexcept { return cols() ? data_.size() / cols() : 0; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& vec() noexcept { return data_; }
    const std::vector<double>& vec() const noexcept { return data_; }

    bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }
    bool all_finite() const noexcept;
    std::string shape_str() const;

    void fill(double v);
    Tensor& operator+=(const Tensor& o);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}
    void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a tape node.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    /// Adjoint after Tape::backward (zeros if the node received none).
    const Tensor& grad() const;
};

class Tape {
public:
    /// Called with the id of the node being processed and its adjoint.
    using Backward = std::function<void(Tape&, int self, const Tensor& out_grad)>;

    Var constant(Tensor value);
    Var leaf(Tensor value);
    Var param(Parameter& p);

    /// Records an op. Throws numeric_error naming the node if `value` holds
    /// NaN or infinities (-inf is tolerated when allow_neg_inf is true).
    Var record(std::string op, Tensor value, std::vector<int> inputs, Backward backward, bool allow_neg_inf = false);

    /// Seeds d(loss)/d(loss) = 1 and propagates; loss must be 1 x 1. Parameter
    /// gradients are accumulated (+=) into Parameter::grad.
    void backward(Var loss);

    const Tensor& value(int id) const { return nodes_[id].value; }
    const Tensor& grad(int id) const;
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    /// Adjoint buffer of an input, or nullptr if that input needs no gradient.
    Tensor* grad_sink(int id);

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::string& op(int id) const { return nodes_[id].op; }

private:
    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;
        std::vector<int> inputs;
        Backward backward;
        bool needs_grad = false;
        Parameter* param = nullptr;
    };
    std::deque<Node> nodes_;  // stable references to values across record()
    Tensor empty_;
};

// ---------------------------------------------------------------------------
// Primitives. Shape errors throw invalid_argument naming both shapes.

Var matmul(Var a, Var b);
Var transpose(Var a);
/// b must have a's shape, or be 1 x cols to broadcast over rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var row_softmax(Var a);
/// Row-wise normalization with affine gamma, beta of shape 1 x cols.
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
Var sigmoid(Var a);
Var log(Var a);
/// Sets column j of every row to `value` where fill_cols[j] is nonzero.
Var masked_fill(Var a, std::vector<std::uint8_t> fill_cols, double value);
/// Zeroes row i wherever keep_rows[i] is zero.
Var mask_rows(Var a, std::vector<std::uint8_t> keep_rows);
Var concat_cols(const std::vector<Var>& parts);
Var mean(Var a);
Var sum(Var a);
/// Divides each row by its L2 norm; throws numeric_error on a zero row.
Var row_l2_normalize(Var a);
/// Per-row -log softmax(a)[label], shape rows x 1, via log-sum-exp.
Var softmax_cross_entropy(Var logits, std::vector<int> labels);

}  // namespace patchpad::ad
