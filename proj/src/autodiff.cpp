#include "patchpad/autodiff.hpp"

#include "patchpad/error.hpp"
#include "patchpad/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace patchpad::ad {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 3) throw invalid_argument("tensor rank must be 1, 2 or 3");
    std::size_t n = 1;
    for (auto d : shape_) n *= d;
    data_.assign(n, fill);
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : shape_{rows, cols}, data_(std::move(values)) {
    if (data_.size() != rows * cols) {
        throw invalid_argument("tensor of shape " + shape_str() + " given " + std::to_string(data_.size()) + " values");
    }
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "x" : "") + std::to_string(shape_[i]);
    return s + "]";
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
    if (o.size() != size()) throw invalid_argument("cannot accumulate " + o.shape_str() + " into " + shape_str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) throw numeric_error("non-finite constant at node #" + std::to_string(nodes_.size()));
    nodes_.push_back({"constant", std::move(value), {}, {}, {}, false, nullptr});
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
    if (!value.all_finite()) throw numeric_error("non-finite leaf at node #" + std::to_string(nodes_.size()));
    nodes_.push_back({"leaf", std::move(value), {}, {}, {}, true, nullptr});
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
    if (!p.value.all_finite()) throw numeric_error("parameter '" + p.name + "' holds non-finite values");
    if (!p.grad.same_shape(p.value)) p.grad = Tensor::zeros_like(p.value);
    nodes_.push_back({"param:" + p.name, p.value, {}, {}, {}, true, &p});
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(std::string op, Tensor value, std::vector<int> inputs, Backward backward, bool allow_neg_inf) {
    for (double v : value.data()) {
        if (!std::isfinite(v) && !(allow_neg_inf && v == -std::numeric_limits<double>::infinity())) {
            throw numeric_error("non-finite value produced by node #" + std::to_string(nodes_.size()) + " (" + op + ")");
        }
    }
    bool needs = false;
    for (int i : inputs) needs = needs || nodes_[i].needs_grad;
    nodes_.push_back({std::move(op), std::move(value), {}, std::move(inputs), std::move(backward), needs, nullptr});
    return {this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::grad(int id) const {
    const Node& n = nodes_[id];
    return n.grad.size() ? n.grad : empty_;
}

Tensor* Tape::grad_sink(int id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (!n.grad.same_shape(n.value)) n.grad = Tensor::zeros_like(n.value);
    return &n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw invalid_argument("backward() called with a variable from another tape");
    if (nodes_[loss.id].value.size() != 1) {
        throw invalid_argument("backward() needs a scalar loss, got " + nodes_[loss.id].value.shape_str());
    }
    for (auto& n : nodes_) n.grad = Tensor();
    grad_sink(loss.id)->fill(1.0);
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        // Inputs always precede their consumer, so this node's buffer stays put.
        if (n.backward) n.backward(*this, id, n.grad);
        if (n.param) {
            if (!n.grad.all_finite()) throw numeric_error("non-finite gradient for parameter '" + n.param->name + "'");
            n.param->grad += n.grad;
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw invalid_argument("operands belong to different tapes");
}

}  // namespace

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.cols() != B.rows()) shape_error("matmul", A, B);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C = Tensor::zeros(m, n);
    kernels::gemm_nn(m, n, k, A.data(), B.data(), C.data());
    return a.tape->record("matmul", std::move(C), {a.id, b.id}, [ia = a.id, ib = b.id, m, n, k](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
        if (Tensor* ga = t.grad_sink(ia)) kernels::gemm_nt(m, k, n, g.data(), t.value(ib).data(), ga->data());
        if (Tensor* gb = t.grad_sink(ib)) kernels::gemm_tn(k, n, m, t.value(ia).data(), g.data(), gb->data());
    });
}

Var transpose(Var a) {
    const Tensor& A = a.value();
    const std::size_t r = A.rows(), c = A.cols();
    Tensor out = Tensor::zeros(c, r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(j, i) = A(i, j);
    return a.tape->record("transpose", std::move(out), {a.id}, [ia = a.id, r, c](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
        if (Tensor* ga = t.grad_sink(ia)) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) (*ga)(i, j) += g(j, i);
        }
    });
}

Var add(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const bool broadcast = !A.same_shape(B);
    if (broadcast && !(B.rows() == 1 && B.cols() == A.cols())) shape_error("add", A, B);
    Tensor out = A;
    const std::size_t c = A.cols();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += broadcast ? B[i % c] : B[i];
    return a.tape->record("add", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, broadcast, c](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
        if (Tensor* ga = t.grad_sink(ia)) *ga += g;
        if (Tensor* gb = t.grad_sink(ib)) {
            if (!broadcast) {
                *gb += g;
            } else {
                for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % c] += g[i];
            }
        }
    });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (!A.same_shape(B)) shape_error("mul", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return a.tape->record("mul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
        if (Tensor* ga = t.grad_sink(ia)) {
            const Tensor& B = t.value(ib);
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
        }
        if (Tensor* gb = t.grad_sink(ib)) {
            const Tensor& A = t.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
        }
    });
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= s;
    return a.tape->record("scale", std::move(out), {a.id}, [ia = a.id, s](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
        if (Tensor* ga = t.grad_sink(ia))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * s;
    });
}

Var row_softmax(Var a) {
    const Tensor& A = a.value();
    const std::size_t r = A.rows(), c = A.cols();
    Tensor out = Tensor::zeros_like(A);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, A(i, j));
        if (mx == -std::numeric_limits<double>::infinity()) {
            throw numeric_error("row_softmax: row " + std::to_string(i) + " has no finite entry");
        }
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += out(i, j) = std::exp(A(i, j) - mx);
        for (std::size_t j = 0; j < c; ++j) out(i, j) /= z;
    }
    return a.tape->record("row_softmax", std::move(out), {a.id}, [ia = a.id, r, c](Tape& t, int self, const Tensor& g) {
        if (Tensor* ga = t.grad_sink(ia)) {
            const Tensor& Y = t.value(self);
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * Y(i, j);
                for (std::size_t j = 0; j < c; ++j) (*ga)(i, j) += Y(i, j) * (g(i, j) - dot);
            }
        }
    });
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
    require_same_tape(a, gamma);
    require_same_tape(a, beta);
    const Tensor& A = a.value();
    const std::size_t r = A.rows(), c = A.cols();
    if (gamma.value().size() != c) shape_error("layer_norm gamma", A, gamma.value());
    if (beta.value().size() != c) shape_error("layer_norm beta", A, beta.value());
    Tensor xhat = Tensor::zeros_like(A);
    std::vector<double> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += A(i, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (A(i, j) - mu) * (A(i, j) - mu);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) xhat(i, j) = (A(i, j) - mu) * inv_std[i];
    }
    Tensor out = xhat;
    const Tensor& G = gamma.value();
    const Tensor& B = beta.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) = G[j] * xhat(i, j) + B[j];
    return a.tape->record(
        "layer_norm", std::move(out), {a.id, gamma.id, beta.id},
        [ia = a.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat), inv_std = std::move(inv_std), r, c](
            Tape& t, [[maybe_unused]] int self, const Tensor& g) {
            if (Tensor* gg = t.grad_sink(ig))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) (*gg)[j] += g(i, j) * xhat(i, j);
            if (Tensor* gb = t.grad_sink(ib))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g(i, j);
            if (Tensor* ga = t.grad_sink(ia)) {
                const Tensor& G = t.value(ig);
                std::vector<double> dxhat(c);
                for (std::size_t i = 0; i < r; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        dxhat[j] = g(i, j) * G[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xhat(i, j);
                    }
                    m1 /= static_cast<double>(c);
                    m2 /= static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) (*ga)(i, j) += inv_std[i] * (dxhat[j] - m1 - xhat(i, j) * m2);
                }
            }
        });
}

Var sigmoid(Var a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return a.tape->record("sigmoid", std::move(out), {a.id}, [ia = a.id](Tape& t, int self, const Tensor& g) {
        if (Tensor* ga = t.grad_sink(ia)) {
            const Tensor& Y = t.value(self);
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * Y[i] * (1.0 - Y[i]);
        }
    });
}

Var log(Var a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::log(v);
    return a.tape->record("log", std::move(out), {a.id}, [ia = a.id](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
        if (Tensor* ga = t.grad_sink(ia)) {
            const Tensor& A = t.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / A[i];
        }
    });
}

Var masked_fill(Var a, std::vector<std::uint8_t> fill_cols, double value) {
    const Tensor& A = a.value();
    const std::size_t c = A.cols();
    if (fill_cols.size() != c) {
        throw invalid_argument("masked_fill: mask of length " + std::to_string(fill_cols.size()) + " for " + A.shape_str());
    }
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (fill_cols[i % c]) out[i] = value;
    return a.tape->record(
        "masked_fill", std::move(out), {a.id},
        [ia = a.id, mask = std::move(fill_cols), c](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
            if (Tensor* ga = t.grad_sink(ia))
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (!mask[i % c]) (*ga)[i] += g[i];
        },
        true);
}

Var mask_rows(Var a, std::vector<std::uint8_t> keep_rows) {
    const Tensor& A = a.value();
    const std::size_t r = A.rows(), c = A.cols();
    if (keep_rows.size() != r) {
        throw invalid_argument("mask_rows: mask of length " + std::to_string(keep_rows.size()) + " for " + A.shape_str());
    }
    Tensor out = A;
    for (std::size_t i = 0; i < r; ++i)
        if (!keep_rows[i])
            for (std::size_t j = 0; j < c; ++j) out(i, j) = 0.0;
    return a.tape->record("mask_rows", std::move(out), {a.id}, [ia = a.id, keep = std::move(keep_rows), c](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
        if (Tensor* ga = t.grad_sink(ia))
            for (std::size_t i = 0; i < g.size(); ++i)
                if (keep[i / c]) (*ga)[i] += g[i];
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw invalid_argument("concat_cols of zero tensors");
    const std::size_t r = parts[0].value().rows();
    std::vector<std::size_t> widths;
    std::vector<int> ids;
    std::size_t total = 0;
    for (Var p : parts) {
        require_same_tape(parts[0], p);
        if (p.value().rows() != r) shape_error("concat_cols", parts[0].value(), p.value());
        widths.push_back(p.value().cols());
        ids.push_back(p.id);
        total += p.value().cols();
    }
    Tensor out = Tensor::zeros(r, total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& P = parts[k].value();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) out(i, off + j) = P(i, j);
        off += widths[k];
    }
    return parts[0].tape->record("concat_cols", std::move(out), ids, [ids, widths, r, total](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (Tensor* gp = t.grad_sink(ids[k]))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) (*gp)(i, j) += g[i * total + off + j];
            off += widths[k];
        }
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape->record("sum", Tensor::scalar(s), {a.id}, [ia = a.id](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
        if (Tensor* ga = t.grad_sink(ia))
            for (double& v : ga->data()) v += g[0];
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw invalid_argument("mean of an empty tensor");
    return scale(sum(a), 1.0 / n);
}

Var row_l2_normalize(Var a) {
    const Tensor& A = a.value();
    const std::size_t r = A.rows(), c = A.cols();
    Tensor out = A;
    std::vector<double> norms(r);
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += A(i, j) * A(i, j);
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0) throw numeric_error("row_l2_normalize: row " + std::to_string(i) + " has zero norm");
        for (std::size_t j = 0; j < c; ++j) out(i, j) /= norms[i];
    }
    return a.tape->record("row_l2_normalize", std::move(out), {a.id},
                          [ia = a.id, norms = std::move(norms), r, c](Tape& t, int self, const Tensor& g) {
                              if (Tensor* ga = t.grad_sink(ia)) {
                                  const Tensor& Y = t.value(self);
                                  for (std::size_t i = 0; i < r; ++i) {
                                      double dot = 0.0;
                                      for (std::size_t j = 0; j < c; ++j) dot += Y(i, j) * g(i, j);
                                      for (std::size_t j = 0; j < c; ++j) (*ga)(i, j) += (g(i, j) - Y(i, j) * dot) / norms[i];
                                  }
                              }
                          });
}

Var softmax_cross_entropy(Var logits, std::vector<int> labels) {
    const Tensor& X = logits.value();
    const std::size_t r = X.rows(), c = X.cols();
    if (labels.size() != r) {
        throw invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " + X.shape_str());
    }
    Tensor probs = Tensor::zeros_like(X);
    Tensor out = Tensor::zeros(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c) throw invalid_argument("label " + std::to_string(y) + " out of range");
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, X(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += probs(i, j) = std::exp(X(i, j) - mx);
        for (std::size_t j = 0; j < c; ++j) probs(i, j) /= z;
        out(i, 0) = (mx + std::log(z)) - X(i, y);
    }
    return logits.tape->record("softmax_cross_entropy", std::move(out), {logits.id},
                               [ix = logits.id, probs = std::move(probs), labels = std::move(labels), r, c](Tape& t, [[maybe_unused]] int self, const Tensor& g) {
                                   if (Tensor* gx = t.grad_sink(ix)) {
                                       for (std::size_t i = 0; i < r; ++i) {
                                           for (std::size_t j = 0; j < c; ++j) (*gx)(i, j) += g[i] * probs(i, j);
                                           (*gx)(i, labels[i]) -= g[i];
                                       }
                                   }
                               });
}

}  // namespace patchpad::ad
