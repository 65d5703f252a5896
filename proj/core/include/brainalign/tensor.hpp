#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "brainalign/common.hpp"

namespace brainalign {

namespace detail {

struct Node {
    Mat value;
    Mat grad;  // allocated on first accumulation
    bool grad_alloc = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (!grad_alloc) {
            grad = Mat::Zero(value.rows(), value.cols());
            grad_alloc = true;
        }
    }
};

}  // namespace detail

// Reverse-mode autodiff handle over a dense 2-D float64 array. Tensors are
// immutable after creation except for their grad buffer; gradients accumulate
// across backward() calls until zero_grad().
class Tensor {
public:
    Tensor() = default;

    static Tensor leaf(Mat value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Mat& value() const { return node_->value; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    Eigen::Index size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    // Scalar payload of a 1x1 tensor.
    double item() const;

    // Gradient buffer (zeros until populated by backward()).
    const Mat& grad() const;
    void zero_grad();

    // Reverse-mode sweep from this scalar root. Each reachable node is
    // visited exactly once in reverse topological order; leaf gradients
    // accumulate across repeated calls.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Disables graph construction in scope; forward passes produce constant
// tensors. Thread-local.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// -------------------------- primitive operations --------------------------
// Every primitive keeps finite inputs finite (log/division guarded) and has
// an analytic backward rule checked against central finite differences.

Tensor add(const Tensor& a, const Tensor& b);            // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& bias);  // bias [1, C] broadcast over rows
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor mul_scalar(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor block(const Tensor& a, Eigen::Index r0, Eigen::Index nr, Eigen::Index c0, Eigen::Index nc);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // [N, C] -> [1, C]
Tensor gelu(const Tensor& a);

// Row-wise softmax. A nonempty mask (same shape, nonzero = keep) restricts
// the distribution to kept entries; excluded entries get probability 0 and
// zero gradient. Each row must keep at least one entry.
Tensor softmax_rows(const Tensor& a, const Mat* mask = nullptr);

// Row-wise layer normalization with learnable gain/bias [1, C].
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Gather rows of a parameter table: out.row(i) = table.row(ids[i]).
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Gather rows of an activation.
Tensor select_rows(const Tensor& a, const std::vector<int>& ids);

// Mean cross-entropy of row-wise logits against integer targets.
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets);

// Gradient reversal: identity forward, -lambda * upstream gradient backward.
// lambda must be positive.
Tensor grl(const Tensor& x, double lambda);

// Sample Pearson correlation of two equal-length vectors (any 2-D shape,
// flattened; n >= 2), differentiable w.r.t. both arguments. Zero variance in
// either argument yields 0, a zero gradient, and bumps the thread-local
// degeneracy counter.
Tensor pearson(const Tensor& x, const Tensor& y);

// Thread-local count of degenerate pearson() evaluations since last reset.
std::uint64_t pearson_degeneracy_count();
void reset_pearson_degeneracy_count();

}  // namespace brainalign
