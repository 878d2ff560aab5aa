#include "swav/autograd.hpp"

#include "swav/kernels.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace swav::ag {

namespace {

using kernels::GemmShape;

Var make(Mat value, std::vector<std::shared_ptr<Node>> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(fn);
    }
    return Var(std::move(node));
}

void check_same(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

}  // namespace

Mat& Node::ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Mat(value.rows(), value.cols());
    return grad;
}

Var Var::leaf(Mat value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    const GemmShape s{a.rows(), a.cols(), b.cols()};
    Mat out(s.m, s.n);
    kernels::gemm(a.value().values(), b.value().values(), out.values(), s, false);
    auto an = a.node();
    auto bn = b.node();
    return make(std::move(out), {an, bn}, [an, bn, s](Node& self) {
        if (an->requires_grad) {
            // dA (m x k) += dC (m x n) * B^T, B is k x n
            kernels::gemm_a_bt(self.grad.values(), bn->value.values(), an->ensure_grad().values(),
                               GemmShape{s.m, s.n, s.k}, true);
        }
        if (bn->requires_grad) {
            // dB (k x n) += A^T * dC, A is m x k
            kernels::gemm_at_b(an->value.values(), self.grad.values(), bn->ensure_grad().values(),
                               GemmShape{s.k, s.m, s.n}, true);
        }
    });
}

Var add(const Var& a, const Var& b) {
    check_same(a, b, "add");
    Mat out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += b.value().values()[i];
    auto an = a.node();
    auto bn = b.node();
    return make(std::move(out), {an, bn}, [an, bn](Node& self) {
        for (auto* p : {an.get(), bn.get()}) {
            if (!p->requires_grad) continue;
            auto& g = p->ensure_grad().values();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.values()[i];
        }
    });
}

Var add_row(const Var& a, const Var& r) {
    if (r.rows() != 1 || r.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
    Mat out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += r.value()(0, j);
    }
    auto an = a.node();
    auto rn = r.node();
    return make(std::move(out), {an, rn}, [an, rn](Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad().values();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.values()[i];
        }
        if (rn->requires_grad) {
            auto& g = rn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.rows(); ++i) {
                for (std::size_t j = 0; j < self.grad.cols(); ++j) g(0, j) += self.grad(i, j);
            }
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) { return add_row(matmul(x, weight), bias); }

Var scale(const Var& a, double s) {
    Mat out = a.value();
    for (auto& v : out.values()) v *= s;
    auto an = a.node();
    return make(std::move(out), {an}, [an, s](Node& self) {
        auto& g = an->ensure_grad().values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad.values()[i];
    });
}

Var gather_mean(const Var& table, const std::vector<std::vector<int>>& groups) {
    const std::size_t n = table.cols();
    Mat out(groups.size(), n);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) throw std::invalid_argument("gather_mean: empty group");
        const double w = 1.0 / static_cast<double>(groups[g].size());
        for (int r : groups[g]) {
            if (r < 0 || static_cast<std::size_t>(r) >= table.rows()) {
                throw std::out_of_range("gather_mean: row index out of range");
            }
            for (std::size_t j = 0; j < n; ++j) out(g, j) += w * table.value()(r, j);
        }
    }
    auto tn = table.node();
    return make(std::move(out), {tn}, [tn, groups](Node& self) {
        auto& g = tn->ensure_grad();
        for (std::size_t k = 0; k < groups.size(); ++k) {
            const double w = 1.0 / static_cast<double>(groups[k].size());
            for (int r : groups[k]) {
                for (std::size_t j = 0; j < g.cols(); ++j) g(r, j) += w * self.grad(k, j);
            }
        }
    });
}

Var gather_rows(const Var& table, const std::vector<int>& rows) {
    std::vector<std::vector<int>> groups;
    groups.reserve(rows.size());
    for (int r : rows) groups.push_back({r});
    return gather_mean(table, groups);
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const std::size_t n = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != n) throw std::invalid_argument("concat_rows: column mismatch");
        rows += p.rows();
    }
    Mat out(rows, n);
    std::vector<std::shared_ptr<Node>> nodes;
    std::size_t at = 0;
    for (const auto& p : parts) {
        std::copy(p.value().values().begin(), p.value().values().end(), out.values().begin() + at * n);
        at += p.rows();
        nodes.push_back(p.node());
    }
    return make(std::move(out), nodes, [nodes](Node& self) {
        std::size_t offset = 0;
        for (const auto& p : nodes) {
            const std::size_t count = p->value.size();
            if (p->requires_grad) {
                auto& g = p->ensure_grad().values();
                for (std::size_t i = 0; i < count; ++i) g[i] += self.grad.values()[offset + i];
            }
            offset += count;
        }
    });
}

Var select_row(const Var& a, std::size_t r) {
    if (r >= a.rows()) throw std::out_of_range("select_row");
    Mat out(1, a.cols());
    for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) = a.value()(r, j);
    auto an = a.node();
    return make(std::move(out), {an}, [an, r](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t j = 0; j < g.cols(); ++j) g(r, j) += self.grad(0, j);
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const std::size_t rows = x.rows();
    const std::size_t n = x.cols();
    if (gamma.cols() != n || beta.cols() != n) throw std::invalid_argument("layer_norm: shape mismatch");
    Mat out(rows, n);
    auto xhat = std::make_shared<Mat>(rows, n);
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += x.value()(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = x.value()(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (x.value()(i, j) - mean) * is;
            (*xhat)(i, j) = h;
            out(i, j) = gamma.value()(0, j) * h + beta.value()(0, j);
        }
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return make(std::move(out), {xn, gn, bn}, [xn, gn, bn, xhat, inv_std](Node& self) {
        const std::size_t rows = self.grad.rows();
        const std::size_t n = self.grad.cols();
        if (gn->requires_grad || bn->requires_grad) {
            auto& gg = gn->ensure_grad();
            auto& gb = bn->ensure_grad();
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (gn->requires_grad) gg(0, j) += self.grad(i, j) * (*xhat)(i, j);
                    if (bn->requires_grad) gb(0, j) += self.grad(i, j);
                }
            }
        }
        if (!xn->requires_grad) return;
        auto& gx = xn->ensure_grad();
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < rows; ++i) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dxhat[j] = self.grad(i, j) * gn->value(0, j);
                mean_d += dxhat[j];
                mean_dx += dxhat[j] * (*xhat)(i, j);
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
                gx(i, j) += (*inv_std)[i] * (dxhat[j] - mean_d - (*xhat)(i, j) * mean_dx);
            }
        }
    });
}

Var gelu(const Var& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    Mat out = x.value();
    for (auto& v : out.values()) {
        const double u = c * (v + a * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    auto xn = x.node();
    return make(std::move(out), {xn}, [xn](Node& self) {
        auto& g = xn->ensure_grad().values();
        const auto& xv = xn->value.values();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv[i];
            const double u = c * (v + a * v * v * v);
            const double t = std::tanh(u);
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
            g[i] += d * self.grad.values()[i];
        }
    });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, const std::vector<char>& key_mask) {
    check_same(q, k, "attention");
    check_same(q, v, "attention");
    const std::size_t L = q.rows();
    const std::size_t d = q.cols();
    if (heads == 0 || d % heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
    if (!key_mask.empty() && key_mask.size() != L) throw std::invalid_argument("attention: mask length");
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    auto probs = std::make_shared<std::vector<Mat>>(heads, Mat(L, L));
    Mat out(L, d);
    const auto& Q = q.value();
    const auto& K = k.value();
    const auto& V = v.value();
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        Mat& P = (*probs)[h];
        for (std::size_t i = 0; i < L; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < L; ++j) {
                if (!key_mask.empty() && !key_mask[j]) {
                    P(i, j) = -std::numeric_limits<double>::infinity();
                    continue;
                }
                double s = 0.0;
                for (std::size_t p = 0; p < dh; ++p) s += Q(i, off + p) * K(j, off + p);
                P(i, j) = s * inv_sqrt;
                mx = std::max(mx, P(i, j));
            }
            double z = 0.0;
            for (std::size_t j = 0; j < L; ++j) {
                const double e = std::isinf(P(i, j)) ? 0.0 : std::exp(P(i, j) - mx);
                P(i, j) = e;
                z += e;
            }
            for (std::size_t j = 0; j < L; ++j) P(i, j) /= z;
            for (std::size_t j = 0; j < L; ++j) {
                const double w = P(i, j);
                if (w == 0.0) continue;
                for (std::size_t p = 0; p < dh; ++p) out(i, off + p) += w * V(j, off + p);
            }
        }
    }
    auto qn = q.node();
    auto kn = k.node();
    auto vn = v.node();
    return make(std::move(out), {qn, kn, vn}, [qn, kn, vn, probs, heads, dh, inv_sqrt](Node& self) {
        const std::size_t L = self.grad.rows();
        const auto& Q = qn->value;
        const auto& K = kn->value;
        const auto& V = vn->value;
        Mat& gq = qn->ensure_grad();
        Mat& gk = kn->ensure_grad();
        Mat& gv = vn->ensure_grad();
        std::vector<double> dp(L);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            const Mat& P = (*probs)[h];
            for (std::size_t i = 0; i < L; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < L; ++j) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < dh; ++p) s += self.grad(i, off + p) * V(j, off + p);
                    dp[j] = s;
                    dot += s * P(i, j);
                }
                for (std::size_t j = 0; j < L; ++j) {
                    const double w = P(i, j);
                    if (w == 0.0) continue;
                    for (std::size_t p = 0; p < dh; ++p) gv(j, off + p) += w * self.grad(i, off + p);
                    const double ds = w * (dp[j] - dot) * inv_sqrt;
                    for (std::size_t p = 0; p < dh; ++p) {
                        gq(i, off + p) += ds * K(j, off + p);
                        gk(j, off + p) += ds * Q(i, off + p);
                    }
                }
            }
        }
    });
}

Var cross_entropy(const Var& logits, std::size_t target) {
    if (logits.rows() != 1 || target >= logits.cols()) throw std::invalid_argument("cross_entropy: bad input");
    const auto& z = logits.value();
    double mx = z(0, 0);
    for (std::size_t j = 1; j < z.cols(); ++j) mx = std::max(mx, z(0, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) sum += std::exp(z(0, j) - mx);
    const double lse = mx + std::log(sum);
    Mat out(1, 1, lse - z(0, target));
    auto ln = logits.node();
    return make(std::move(out), {ln}, [ln, target, lse](Node& self) {
        auto& g = ln->ensure_grad();
        const double up = self.grad(0, 0);
        for (std::size_t j = 0; j < g.cols(); ++j) {
            const double p = std::exp(ln->value(0, j) - lse);
            g(0, j) += up * (p - (j == target ? 1.0 : 0.0));
        }
    });
}

Var axpy(const Var& a, const Var& b, double w) {
    check_same(a, b, "axpy");
    Mat out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += w * b.value().values()[i];
    auto an = a.node();
    auto bn = b.node();
    return make(std::move(out), {an, bn}, [an, bn, w](Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad().values();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.values()[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad().values();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += w * self.grad.values()[i];
        }
    });
}

void backward(const Var& loss) {
    if (!loss.valid() || loss.value().size() != 1) throw std::invalid_argument("backward: loss must be 1 x 1");
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && p->backward_fn && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Interior gradients are scratch space for this pass.
    for (Node* n : order) n->grad = Mat(n->value.rows(), n->value.cols());
    loss.node()->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

}  // namespace swav::ag
