#include "brainalign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace brainalign {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_pearson_degenerate = 0;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_leaf(Mat value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && g_grad_enabled;
    return n;
}

// Wires an op node. Drops the tape when grads are globally disabled or no
// parent participates in differentiation.
Tensor make_op(Mat value, std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
    const bool track = g_grad_enabled &&
                       std::any_of(parents.begin(), parents.end(),
                                   [](const NodePtr& p) { return p->requires_grad; });
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward);
    }
    return Tensor(std::move(n));
}

void accumulate(const NodePtr& p, const Mat& g) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    p->grad += g;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ContractError(std::string(op) + ": shape mismatch");
}

Mat softmax_forward(const Mat& x, const Mat* mask) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            if (!mask || (*mask)(r, c) != 0.0) mx = std::max(mx, x(r, c));
        if (!std::isfinite(mx)) throw ContractError("softmax_rows: a row masks out every entry");
        double denom = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            if (!mask || (*mask)(r, c) != 0.0) {
                out(r, c) = std::exp(x(r, c) - mx);
                denom += out(r, c);
            } else {
                out(r, c) = 0.0;
            }
        }
        out.row(r) /= denom;
    }
    return out;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Tensor Tensor::leaf(Mat value, bool requires_grad) { return Tensor(make_leaf(std::move(value), requires_grad)); }

Tensor Tensor::scalar(double value, bool requires_grad) {
    Mat m(1, 1);
    m(0, 0) = value;
    return leaf(std::move(m), requires_grad);
}

Tensor Tensor::zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad) {
    return leaf(Mat::Zero(rows, cols), requires_grad);
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("Tensor::item: tensor is not scalar");
    return node_->value(0, 0);
}

const Mat& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_->grad_alloc) node_->grad.setZero();
}

void Tensor::backward() const {
    if (size() != 1) throw ContractError("backward: root must be scalar");

    // Iterative post-order DFS: topological order with each node visited once.
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad(0, 0) += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// -------------------------------- primitives --------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto pa = a.node(), pb = b.node();
    return make_op(a.value() + b.value(), {pa, pb}, [pa, pb](Node& self) {
        accumulate(pa, self.grad);
        accumulate(pb, self.grad);
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw ContractError("add_rowvec: bias must be [1, cols]");
    auto pa = a.node(), pb = bias.node();
    Mat out = a.value();
    out.rowwise() += Eigen::RowVectorXd(bias.value().row(0));
    return make_op(std::move(out), {pa, pb}, [pa, pb](Node& self) {
        accumulate(pa, self.grad);
        if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad.row(0) += self.grad.colwise().sum();
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto pa = a.node(), pb = b.node();
    return make_op(a.value() - b.value(), {pa, pb}, [pa, pb](Node& self) {
        accumulate(pa, self.grad);
        if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad -= self.grad;
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto pa = a.node(), pb = b.node();
    return make_op(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) accumulate(pa, self.grad.cwiseProduct(pb->value));
        if (pb->requires_grad) accumulate(pb, self.grad.cwiseProduct(pa->value));
    });
}

Tensor mul_scalar(const Tensor& a, double c) {
    auto pa = a.node();
    return make_op(a.value() * c, {pa}, [pa, c](Node& self) { accumulate(pa, self.grad * c); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw ContractError("matmul: inner dimensions differ");
    auto pa = a.node(), pb = b.node();
    return make_op(a.value() * b.value(), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) accumulate(pa, self.grad * pb->value.transpose());
        if (pb->requires_grad) accumulate(pb, pa->value.transpose() * self.grad);
    });
}

Tensor transpose(const Tensor& a) {
    auto pa = a.node();
    return make_op(a.value().transpose(), {pa},
                   [pa](Node& self) { accumulate(pa, self.grad.transpose()); });
}

Tensor block(const Tensor& a, Eigen::Index r0, Eigen::Index nr, Eigen::Index c0, Eigen::Index nc) {
    if (r0 < 0 || c0 < 0 || nr <= 0 || nc <= 0 || r0 + nr > a.rows() || c0 + nc > a.cols())
        throw ContractError("block: range out of bounds");
    auto pa = a.node();
    return make_op(a.value().block(r0, c0, nr, nc), {pa}, [pa, r0, c0, nr, nc](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            pa->grad.block(r0, c0, nr, nc) += self.grad;
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty input");
    Eigen::Index cols = parts.front().cols(), rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ContractError("concat_rows: column mismatch");
        rows += p.rows();
    }
    Mat out(rows, cols);
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
        parents.push_back(p.node());
    }
    return make_op(std::move(out), parents, [parents](Node& self) {
        Eigen::Index r = 0;
        for (const auto& p : parents) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += self.grad.middleRows(r, p->value.rows());
            }
            r += p->value.rows();
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty input");
    Eigen::Index rows = parts.front().rows(), cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ContractError("concat_cols: row mismatch");
        cols += p.cols();
    }
    Mat out(rows, cols);
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        c += p.cols();
        parents.push_back(p.node());
    }
    return make_op(std::move(out), parents, [parents](Node& self) {
        Eigen::Index c = 0;
        for (const auto& p : parents) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += self.grad.middleCols(c, p->value.cols());
            }
            c += p->value.cols();
        }
    });
}

Tensor mean_all(const Tensor& a) {
    auto pa = a.node();
    Mat out(1, 1);
    out(0, 0) = a.value().mean();
    const double inv = 1.0 / static_cast<double>(a.size());
    return make_op(std::move(out), {pa}, [pa, inv](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            pa->grad.array() += self.grad(0, 0) * inv;
        }
    });
}

Tensor sum_all(const Tensor& a) {
    auto pa = a.node();
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return make_op(std::move(out), {pa}, [pa](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            pa->grad.array() += self.grad(0, 0);
        }
    });
}

Tensor mean_rows(const Tensor& a) {
    auto pa = a.node();
    Mat out = a.value().colwise().mean();
    const double inv = 1.0 / static_cast<double>(a.rows());
    return make_op(std::move(out), {pa}, [pa, inv](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            pa->grad += (self.grad.row(0) * inv).replicate(pa->value.rows(), 1);
        }
    });
}

Tensor gelu(const Tensor& a) {
    auto pa = a.node();
    const Mat& x = a.value();
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x(i);
        out(i) = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
    }
    return make_op(std::move(out), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const Mat& x = pa->value;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double v = x(i);
            const double u = kGeluC * (v + 0.044715 * v * v * v);
            const double t = std::tanh(u);
            const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
            pa->grad(i) += self.grad(i) * d;
        }
    });
}

Tensor softmax_rows(const Tensor& a, const Mat* mask) {
    if (mask && (mask->rows() != a.rows() || mask->cols() != a.cols()))
        throw ContractError("softmax_rows: mask shape mismatch");
    auto pa = a.node();
    Mat out = softmax_forward(a.value(), mask);
    Mat s = out;  // captured for backward
    return make_op(std::move(out), {pa}, [pa, s = std::move(s)](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            const double dot = self.grad.row(r).dot(s.row(r));
            pa->grad.row(r) += (s.row(r).array() * (self.grad.row(r).array() - dot)).matrix();
        }
    });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols())
        throw ContractError("layer_norm_rows: gain/bias must be [1, cols]");
    auto px = x.node(), pg = gain.node(), pb = bias.node();
    const Mat& v = x.value();
    const Eigen::Index n = v.cols();
    Mat xhat(v.rows(), n);
    Vec inv_std(v.rows());
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        const double mu = v.row(r).mean();
        const double var = (v.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (v.row(r).array() - mu) * inv_std(r);
    }
    Mat out = xhat;
    out.array().rowwise() *= gain.value().row(0).array();
    out.rowwise() += Eigen::RowVectorXd(bias.value().row(0));
    return make_op(std::move(out), {px, pg, pb},
                   [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const Eigen::Index n = xhat.cols();
                       if (pg->requires_grad) {
                           pg->ensure_grad();
                           pg->grad.row(0) += self.grad.cwiseProduct(xhat).colwise().sum();
                       }
                       if (pb->requires_grad) {
                           pb->ensure_grad();
                           pb->grad.row(0) += self.grad.colwise().sum();
                       }
                       if (px->requires_grad) {
                           px->ensure_grad();
                           for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                               Eigen::RowVectorXd gy =
                                   self.grad.row(r).cwiseProduct(pg->value.row(0));
                               const double m1 = gy.mean();
                               const double m2 = gy.cwiseProduct(xhat.row(r)).mean();
                               px->grad.row(r) +=
                                   inv_std(r) *
                                   (gy.array() - m1 - xhat.row(r).array() * m2).matrix();
                           }
                       }
                       (void)n;
                   });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    const Eigen::Index v = table.rows();
    for (int id : ids)
        if (id < 0 || id >= v) throw ContractError("embedding: id out of range");
    if (ids.empty()) throw ContractError("embedding: empty id list");
    auto pt = table.node();
    Mat out(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    return make_op(std::move(out), {pt}, [pt, ids](Node& self) {
        if (!pt->requires_grad) return;
        pt->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            pt->grad.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    });
}

Tensor select_rows(const Tensor& a, const std::vector<int>& ids) {
    const Eigen::Index n = a.rows();
    for (int id : ids)
        if (id < 0 || id >= n) throw ContractError("select_rows: index out of range");
    if (ids.empty()) throw ContractError("select_rows: empty index list");
    auto pa = a.node();
    Mat out(static_cast<Eigen::Index>(ids.size()), a.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.value().row(ids[i]);
    return make_op(std::move(out), {pa}, [pa, ids](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            pa->grad.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    });
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets) {
    if (targets.empty()) throw ContractError("cross_entropy_mean: empty target list");
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
        throw ContractError("cross_entropy_mean: one target per logits row required");
    const Eigen::Index v = logits.cols();
    for (int t : targets)
        if (t < 0 || t >= v) throw ContractError("cross_entropy_mean: target out of range");

    auto pl = logits.node();
    const Mat& l = logits.value();
    const Eigen::Index n = l.rows();
    Mat probs(n, v);
    double loss = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mx = l.row(r).maxCoeff();
        probs.row(r) = (l.row(r).array() - mx).exp();
        const double denom = probs.row(r).sum();
        probs.row(r) /= denom;
        loss += std::log(denom) + mx - l(r, targets[static_cast<std::size_t>(r)]);
    }
    Mat out(1, 1);
    out(0, 0) = loss / static_cast<double>(n);
    return make_op(std::move(out), {pl}, [pl, targets, probs = std::move(probs)](Node& self) {
        if (!pl->requires_grad) return;
        pl->ensure_grad();
        const double scale = self.grad(0, 0) / static_cast<double>(targets.size());
        pl->grad += probs * scale;
        for (std::size_t i = 0; i < targets.size(); ++i)
            pl->grad(static_cast<Eigen::Index>(i), targets[i]) -= scale;
    });
}

Tensor grl(const Tensor& x, double lambda) {
    if (!(lambda > 0.0)) throw ConfigError("grl: lambda must be positive");
    auto px = x.node();
    return make_op(x.value(), {px}, [px, lambda](Node& self) {
        if (px->requires_grad) {
            px->ensure_grad();
            px->grad -= lambda * self.grad;
        }
    });
}

Tensor pearson(const Tensor& x, const Tensor& y) {
    if (x.size() != y.size()) throw ContractError("pearson: length mismatch");
    const Eigen::Index n = x.size();
    if (n < 2) throw ContractError("pearson: need at least 2 samples");

    // Flatten both arguments (row-major order).
    Eigen::Map<const Eigen::VectorXd> xv(x.value().data(), n);
    Eigen::Map<const Eigen::VectorXd> yv(y.value().data(), n);
    const double mx = xv.mean(), my = yv.mean();
    Vec a = xv.array() - mx;
    Vec b = yv.array() - my;
    const double saa = a.squaredNorm(), sbb = b.squaredNorm(), sab = a.dot(b);

    const double tol2 = static_cast<double>(n) * 1e-24;
    const bool degenerate = saa <= tol2 * std::max(1.0, mx * mx) || sbb <= tol2 * std::max(1.0, my * my);

    auto px = x.node(), py = y.node();
    Mat out(1, 1);
    if (degenerate) {
        ++g_pearson_degenerate;
        out(0, 0) = 0.0;
        return make_op(std::move(out), {px, py}, [](Node&) {});
    }

    const double denom = std::sqrt(saa * sbb);
    out(0, 0) = sab / denom;
    return make_op(std::move(out), {px, py},
                   [px, py, a = std::move(a), b = std::move(b), saa, sbb, sab, denom](Node& self) {
                       const double g = self.grad(0, 0);
                       // d r / d x_i = (b_i - (sab/saa) a_i) / denom; the
                       // centering term vanishes because a and b are centered.
                       if (px->requires_grad) {
                           px->ensure_grad();
                           Eigen::Map<Eigen::VectorXd> gx(px->grad.data(), px->grad.size());
                           gx += g * (b - (sab / saa) * a) / denom;
                       }
                       if (py->requires_grad) {
                           py->ensure_grad();
                           Eigen::Map<Eigen::VectorXd> gy(py->grad.data(), py->grad.size());
                           gy += g * (a - (sab / sbb) * b) / denom;
                       }
                   });
}

std::uint64_t pearson_degeneracy_count() { return g_pearson_degenerate; }
void reset_pearson_degeneracy_count() { g_pearson_degenerate = 0; }

}  // namespace brainalign
