#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// Every backward rule is itself written in terms of differentiable ops, so
// gradients can be differentiated again (needed for gradient penalties).
// Tensors are 2-D; row index is the batch dimension throughout.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace emodiff::ag {

using Matrix = Eigen::MatrixXd;

class Tensor;

namespace detail {

using BackwardFn = std::function<std::vector<Tensor>(const Tensor& out, const Tensor& grad_out)>;

struct Node {
    Matrix value;
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<Tensor> inputs;
    BackwardFn backward;
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    /// Leaf that never receives gradients.
    static Tensor constant(Matrix value);
    /// Leaf that gradients are taken with respect to.
    static Tensor leaf(Matrix value);
    static Tensor scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

    bool defined() const { return node_ != nullptr; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Matrix& value() const { return node_->value; }
    /// In-place access for optimizers; does not invalidate recorded graphs' semantics.
    Matrix& mutable_value() { return node_->value; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double item() const;

    detail::Node* node() const { return node_.get(); }

private:
    friend Tensor make_result(Matrix, std::vector<Tensor>, detail::BackwardFn);
    std::shared_ptr<detail::Node> node_;
};

/// Records `value` as the output of an op over `inputs` when grad mode is on
/// and any input requires grad; otherwise returns a constant.
Tensor make_result(Matrix value, std::vector<Tensor> inputs, detail::BackwardFn backward);

bool grad_enabled();

/// Disables graph recording in its scope.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);     // a b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T b

// Elementwise arithmetic (same shapes).
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_const(const Tensor& a, const Matrix& m);
Tensor add_const(const Tensor& a, const Matrix& m);

// Broadcasting and reductions.
Tensor add_rowvec(const Tensor& a, const Tensor& row);  // row is 1 x cols
Tensor expand_rows(const Tensor& row, Eigen::Index n);  // 1 x m -> n x m
Tensor expand_cols(const Tensor& col, Eigen::Index m);  // n x 1 -> n x m
Tensor col_sum(const Tensor& a);                        // n x m -> 1 x m
Tensor row_sum(const Tensor& a);                        // n x m -> n x 1
Tensor sum(const Tensor& a);                            // -> 1 x 1
Tensor mean(const Tensor& a);
Tensor mul_colvec(const Tensor& a, const Tensor& col);  // scales row i by col(i)

// Nonlinearities.
Tensor leaky_relu(const Tensor& a, double slope);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);
Tensor reciprocal(const Tensor& a);

// Structural.
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor pad_cols(const Tensor& a, Eigen::Index start, Eigen::Index total);
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
Tensor scatter_rows(const Tensor& a, std::span<const int> ids, Eigen::Index n_rows);
Tensor pick(const Tensor& a, std::span<const int> cols);  // a(i, cols[i]) -> n x 1
Tensor place(const Tensor& a, std::span<const int> cols, Eigen::Index n_cols);

Tensor log_softmax_rows(const Tensor& a);
Tensor softmax_rows(const Tensor& a);

/// Gradients of scalar `output` with respect to each tensor in `wrt`.
/// Tensors the output does not depend on receive zero gradients. With
/// `create_graph`, the returned gradients are themselves differentiable.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, bool create_graph = false);

}  // namespace emodiff::ag
