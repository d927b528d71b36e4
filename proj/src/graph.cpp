#include "ircan/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

#include "ircan/errors.hpp"

namespace ircan {

namespace {

void check_same_graph(Var a, Var b, const char* op) {
    if (a.graph == nullptr || a.graph != b.graph) {
        throw DimensionError(std::string(op) + ": operands belong to different graphs");
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

// a[m x k] . b[k x n], i-k-j loop order.
void matmul_into(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    std::fill(out, out + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

Tensor transposed(const Tensor& a) {
    const auto m = a.rows(), n = a.cols();
    Tensor t({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
    return t;
}

// a^T . g without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& g) {
    const auto m = a.rows(), k = a.cols(), n = g.cols();
    Tensor out({k, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &a.raw()[i * k];
        const double* grow = &g.raw()[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* orow = &out.raw()[p * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
        }
    }
    return out;
}

// g . b^T
Tensor matmul_nt(const Tensor& g, const Tensor& b) {
    const auto m = g.rows(), n = g.cols(), k = b.rows();
    Tensor out({m, k});
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g.raw()[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = &b.raw()[p * n];
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            out.raw()[i * k + p] = s;
        }
    }
    return out;
}

template <class F>
Var unary(Var a, const char* op, F&& fwd, std::function<double(double x, double y)> dydx) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = fwd(x[i]);
    auto xs = a.graph->shared_value(a.id);
    auto yv = std::make_shared<Tensor>(y);
    return a.graph->record(std::move(y), {a},
                           [xs, yv, dydx](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gi(g.shape());
                               for (std::size_t i = 0; i < g.numel(); ++i) gi[i] = g[i] * dydx((*xs)[i], (*yv)[i]);
                               sink(0, std::move(gi));
                           },
                           op);
}

void softmax_row_inplace(std::span<double> r, std::size_t valid) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < valid; ++j) mx = std::max(mx, r[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < valid; ++j) {
        r[j] = std::exp(r[j] - mx);
        s += r[j];
    }
    for (std::size_t j = 0; j < valid; ++j) r[j] /= s;
    for (std::size_t j = valid; j < r.size(); ++j) r[j] = 0.0;
}

Var softmax_impl(Var a, bool causal, const char* op) {
    Tensor y = a.value();
    const auto rows = y.rows(), cols = y.cols();
    if (cols == 0) throw DimensionError(std::string(op) + ": empty input");
    if (causal && rows != cols) throw DimensionError(std::string(op) + ": expects a square matrix");
    for (std::size_t r = 0; r < rows; ++r) softmax_row_inplace(y.row(r), causal ? r + 1 : cols);
    auto yv = std::make_shared<Tensor>(y);
    return a.graph->record(std::move(y), {a},
                           [yv](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gi(g.shape());
                               const auto rows = yv->rows(), cols = yv->cols();
                               for (std::size_t r = 0; r < rows; ++r) {
                                   auto yr = yv->row(r);
                                   auto gr = g.row(r);
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
                                   auto out = gi.row(r);
                                   for (std::size_t j = 0; j < cols; ++j) out[j] = yr[j] * (gr[j] - dot);
                               }
                               sink(0, std::move(gi));
                           },
                           op);
}

}  // namespace

// ---- Graph ------------------------------------------------------------------

Var Graph::leaf(Tensor value, bool requires_grad) {
    return leaf(std::make_shared<const Tensor>(std::move(value)), requires_grad);
}

Var Graph::leaf(std::shared_ptr<const Tensor> value, bool requires_grad) {
    if (!value) throw DimensionError("null leaf tensor");
    value->require_finite("leaf");
    Node n;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op) {
    value.require_finite(op);
    Node n;
    n.value = std::make_shared<const Tensor>(std::move(value));
    for (const auto& p : parents) {
        if (p.graph != this) throw DimensionError(std::string(op) + ": operand from another graph");
        n.parents.push_back(p.id);
        n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

std::vector<Tensor> Graph::backward(Var root, std::span<const Var> leaves) const {
    if (root.graph != this || root.id >= nodes_.size()) throw UnknownLeafError("root does not belong to this graph");
    if (value(root.id).numel() != 1) {
        throw DimensionError("backward requires a scalar root, got " + shape_str(value(root.id).shape()));
    }
    for (const auto& l : leaves) {
        if (l.graph != this || l.id >= nodes_.size() || !nodes_[l.id].is_leaf || !nodes_[l.id].needs_grad) {
            throw UnknownLeafError("requested leaf " + std::to_string(l.id) + " is not a gradient leaf of this graph");
        }
    }

    std::vector<std::optional<Tensor>> grads(root.id + 1);
    grads[root.id] = Tensor(value(root.id).shape(), 1.0);
    last_visits_ = 0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        if (!grads[i]) continue;
        const Node& n = nodes_[i];
        ++last_visits_;
        if (!n.backward) continue;
        const Tensor& g = *grads[i];
        n.backward(g, [&](std::size_t slot, Tensor&& contrib) {
            const std::size_t pid = n.parents.at(slot);
            if (!nodes_[pid].needs_grad) return;
            auto& dst = grads[pid];
            if (!dst) {
                dst = std::move(contrib);
            } else {
                auto& d = dst->raw();
                const auto& c = contrib.raw();
                for (std::size_t k = 0; k < d.size(); ++k) d[k] += c[k];
            }
        });
    }

    std::vector<Tensor> out;
    out.reserve(leaves.size());
    for (const auto& l : leaves) {
        if (l.id < grads.size() && grads[l.id]) {
            grads[l.id]->require_finite("backward");
            out.push_back(*grads[l.id]);
        } else {
            out.emplace_back(value(l.id).shape(), 0.0);
        }
    }
    return out;
}

Tensor Graph::backward(Var root, Var leaf) const {
    const Var one[1] = {leaf};
    return std::move(backward(root, one).front());
}

// ---- ops ----------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " . " +
                             shape_str(b.shape()));
    }
    Tensor out({a.rows(), b.cols()});
    matmul_into(a.raw().data(), b.raw().data(), out.raw().data(), a.rows(), a.cols(), b.cols());
    return out;
}

Var matmul(Var a, Var b) {
    check_same_graph(a, b, "matmul");
    Tensor out = matmul(a.value(), b.value());
    auto av = a.graph->shared_value(a.id);
    auto bv = b.graph->shared_value(b.id);
    const bool need_a = a.graph->needs_grad(a.id), need_b = b.graph->needs_grad(b.id);
    return a.graph->record(std::move(out), {a, b},
                           [av, bv, need_a, need_b](const Tensor& g, const Graph::Sink& sink) {
                               if (need_a) sink(0, matmul_nt(g, *bv));
                               if (need_b) sink(1, matmul_tn(*av, g));
                           },
                           "matmul");
}

Var transpose(Var a) {
    Tensor t = transposed(a.value());
    return a.graph->record(std::move(t), {a},
                           [](const Tensor& g, const Graph::Sink& sink) { sink(0, transposed(g)); },
                           "transpose");
}

Var add(Var a, Var b) {
    check_same_graph(a, b, "add");
    check_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    return a.graph->record(std::move(out), {a, b},
                           [](const Tensor& g, const Graph::Sink& sink) {
                               sink(0, Tensor(g));
                               sink(1, Tensor(g));
                           },
                           "add");
}

Var sub(Var a, Var b) {
    check_same_graph(a, b, "sub");
    check_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return a.graph->record(std::move(out), {a, b},
                           [](const Tensor& g, const Graph::Sink& sink) {
                               sink(0, Tensor(g));
                               Tensor n = g;
                               for (auto& v : n.raw()) v = -v;
                               sink(1, std::move(n));
                           },
                           "sub");
}

Var mul(Var a, Var b) {
    check_same_graph(a, b, "mul");
    check_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    auto av = a.graph->shared_value(a.id);
    auto bv = b.graph->shared_value(b.id);
    return a.graph->record(std::move(out), {a, b},
                           [av, bv](const Tensor& g, const Graph::Sink& sink) {
                               Tensor ga = g, gb = g;
                               for (std::size_t i = 0; i < g.numel(); ++i) {
                                   ga[i] *= (*bv)[i];
                                   gb[i] *= (*av)[i];
                               }
                               sink(0, std::move(ga));
                               sink(1, std::move(gb));
                           },
                           "mul");
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    for (auto& v : out.raw()) v *= s;
    return a.graph->record(std::move(out), {a},
                           [s](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gi = g;
                               for (auto& v : gi.raw()) v *= s;
                               sink(0, std::move(gi));
                           },
                           "scale");
}

Var add_row(Var a, Var v) {
    check_same_graph(a, v, "add_row");
    const Tensor& x = a.value();
    const Tensor& b = v.value();
    if (b.numel() != x.cols()) throw DimensionError("add_row: bias length " + std::to_string(b.numel()) +
                                                    " vs " + std::to_string(x.cols()) + " columns");
    Tensor out = x;
    const auto rows = x.rows(), cols = x.cols();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
    Shape bshape = b.shape();
    return a.graph->record(std::move(out), {a, v},
                           [bshape](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gb(bshape);
                               const auto rows = g.rows(), cols = g.cols();
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                               sink(0, Tensor(g));
                               sink(1, std::move(gb));
                           },
                           "add_row");
}

Var mul_row(Var a, Var v) {
    check_same_graph(a, v, "mul_row");
    const Tensor& x = a.value();
    const Tensor& w = v.value();
    if (w.numel() != x.cols()) throw DimensionError("mul_row: length mismatch");
    Tensor out = x;
    const auto rows = x.rows(), cols = x.cols();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= w[c];
    auto xv = a.graph->shared_value(a.id);
    auto wv = v.graph->shared_value(v.id);
    return a.graph->record(std::move(out), {a, v},
                           [xv, wv](const Tensor& g, const Graph::Sink& sink) {
                               const auto rows = g.rows(), cols = g.cols();
                               Tensor gx(g.shape());
                               Tensor gw(wv->shape());
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < cols; ++c) {
                                       gx[r * cols + c] = g[r * cols + c] * (*wv)[c];
                                       gw[c] += g[r * cols + c] * (*xv)[r * cols + c];
                                   }
                               sink(0, std::move(gx));
                               sink(1, std::move(gw));
                           },
                           "mul_row");
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
    return unary(
        a, "gelu",
        [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
        [](double x, double) {
            const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        });
}

Var silu(Var a) {
    return unary(
        a, "silu", [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var exp(Var a) {
    return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    for (double v : a.value().raw())
        if (!(v > 0.0)) throw NumericError("log of non-positive value");
    return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sum(Var a) {
    const Tensor& x = a.value();
    double s = 0.0;
    for (double v : x.raw()) s += v;
    Shape shape = x.shape();
    return a.graph->record(Tensor::scalar(s), {a},
                           [shape](const Tensor& g, const Graph::Sink& sink) { sink(0, Tensor(shape, g[0])); },
                           "sum");
}

Var softmax(Var a) {
    if (a.value().rank() != 1) throw DimensionError("softmax expects a rank-1 tensor");
    return softmax_impl(a, false, "softmax");
}

Var softmax_rows(Var a) { return softmax_impl(a, false, "softmax_rows"); }

Var causal_softmax_rows(Var a) { return softmax_impl(a, true, "causal_softmax_rows"); }

Var log_softmax_rows(Var a) {
    Tensor y = a.value();
    const auto rows = y.rows(), cols = y.cols();
    if (cols == 0) throw DimensionError("log_softmax_rows: empty input");
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = y.row(r);
        double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        for (auto& v : row) v -= lse;
    }
    auto yv = std::make_shared<Tensor>(y);
    return a.graph->record(std::move(y), {a},
                           [yv](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gi(g.shape());
                               const auto rows = g.rows(), cols = g.cols();
                               for (std::size_t r = 0; r < rows; ++r) {
                                   auto gr = g.row(r);
                                   auto yr = yv->row(r);
                                   double gs = 0.0;
                                   for (double v : gr) gs += v;
                                   auto out = gi.row(r);
                                   for (std::size_t j = 0; j < cols; ++j) out[j] = gr[j] - std::exp(yr[j]) * gs;
                               }
                               sink(0, std::move(gi));
                           },
                           "log_softmax_rows");
}

Var layer_norm_rows(Var a, double eps) {
    Tensor y = a.value();
    const auto rows = y.rows(), cols = y.cols();
    std::vector<double> inv_sigma(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = y.row(r);
        double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(cols);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(cols);
        inv_sigma[r] = 1.0 / std::sqrt(var + eps);
        for (auto& v : row) v = (v - mean) * inv_sigma[r];
    }
    auto yv = std::make_shared<Tensor>(y);
    return a.graph->record(std::move(y), {a},
                           [yv, inv_sigma](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gi(g.shape());
                               const auto rows = g.rows(), cols = g.cols();
                               const double n = static_cast<double>(cols);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   auto gr = g.row(r);
                                   auto yr = yv->row(r);
                                   double gm = 0.0, gy = 0.0;
                                   for (std::size_t j = 0; j < cols; ++j) {
                                       gm += gr[j];
                                       gy += gr[j] * yr[j];
                                   }
                                   gm /= n;
                                   gy /= n;
                                   auto out = gi.row(r);
                                   for (std::size_t j = 0; j < cols; ++j)
                                       out[j] = inv_sigma[r] * (gr[j] - gm - yr[j] * gy);
                               }
                               sink(0, std::move(gi));
                           },
                           "layer_norm_rows");
}

Var rms_norm_rows(Var a, double eps) {
    Tensor y = a.value();
    const auto rows = y.rows(), cols = y.cols();
    std::vector<double> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = y.row(r);
        double ms = 0.0;
        for (double v : row) ms += v * v;
        ms /= static_cast<double>(cols);
        inv_rms[r] = 1.0 / std::sqrt(ms + eps);
        for (auto& v : row) v *= inv_rms[r];
    }
    auto yv = std::make_shared<Tensor>(y);
    return a.graph->record(std::move(y), {a},
                           [yv, inv_rms](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gi(g.shape());
                               const auto rows = g.rows(), cols = g.cols();
                               const double n = static_cast<double>(cols);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   auto gr = g.row(r);
                                   auto yr = yv->row(r);
                                   double gy = 0.0;
                                   for (std::size_t j = 0; j < cols; ++j) gy += gr[j] * yr[j];
                                   gy /= n;
                                   auto out = gi.row(r);
                                   for (std::size_t j = 0; j < cols; ++j) out[j] = inv_rms[r] * (gr[j] - yr[j] * gy);
                               }
                               sink(0, std::move(gi));
                           },
                           "rms_norm_rows");
}

Var embedding(Var table, std::span<const int> ids) {
    const Tensor& w = table.value();
    const auto vocab = w.rows(), d = w.cols();
    Tensor out({ids.size(), d});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
            throw DimensionError("embedding: id " + std::to_string(ids[t]) + " outside table of " +
                                 std::to_string(vocab));
        }
        auto src = w.row(static_cast<std::size_t>(ids[t]));
        std::copy(src.begin(), src.end(), out.row(t).begin());
    }
    std::vector<int> idv(ids.begin(), ids.end());
    Shape wshape = w.shape();
    return table.graph->record(std::move(out), {table},
                               [idv, wshape](const Tensor& g, const Graph::Sink& sink) {
                                   Tensor gw(wshape);
                                   const auto d = g.cols();
                                   for (std::size_t t = 0; t < idv.size(); ++t) {
                                       auto gr = g.row(t);
                                       double* dst = &gw.raw()[static_cast<std::size_t>(idv[t]) * d];
                                       for (std::size_t j = 0; j < d; ++j) dst[j] += gr[j];
                                   }
                                   sink(0, std::move(gw));
                               },
                               "embedding");
}

Var select_row(Var a, std::size_t r) {
    const Tensor& x = a.value();
    if (r >= x.rows()) throw DimensionError("select_row: row out of range");
    auto src = x.row(r);
    Tensor out({1, x.cols()}, std::vector<double>(src.begin(), src.end()));
    Shape shape = x.shape();
    return a.graph->record(std::move(out), {a},
                           [shape, r](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gi(shape);
                               auto dst = gi.row(r);
                               std::copy(g.raw().begin(), g.raw().end(), dst.begin());
                               sink(0, std::move(gi));
                           },
                           "select_row");
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
    const Tensor& x = a.value();
    const auto rows = x.rows(), cols = x.cols();
    if (start + count > cols) throw DimensionError("slice_cols: range out of bounds");
    Tensor out({rows, count});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < count; ++c) out[r * count + c] = x[r * cols + start + c];
    Shape shape = x.shape();
    return a.graph->record(std::move(out), {a},
                           [shape, start, count](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gi(shape);
                               const auto rows = g.rows(), cols = gi.cols();
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < count; ++c) gi[r * cols + start + c] = g[r * count + c];
                               sink(0, std::move(gi));
                           },
                           "slice_cols");
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    Graph* graph = parts.front().graph;
    const auto rows = parts.front().value().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.graph != graph) throw DimensionError("concat_cols: operands belong to different graphs");
        if (p.value().rows() != rows) throw DimensionError("concat_cols: row count mismatch");
        widths.push_back(p.value().cols());
        total += widths.back();
    }
    Tensor out({rows, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& x = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + off + c] = x[r * widths[k] + c];
        off += widths[k];
    }
    std::vector<Var> pv(parts.begin(), parts.end());
    return graph->record(std::move(out), pv,
                         [widths, total](const Tensor& g, const Graph::Sink& sink) {
                             const auto rows = g.rows();
                             std::size_t off = 0;
                             for (std::size_t k = 0; k < widths.size(); ++k) {
                                 Tensor gk({rows, widths[k]});
                                 for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t c = 0; c < widths[k]; ++c)
                                         gk[r * widths[k] + c] = g[r * total + off + c];
                                 off += widths[k];
                                 sink(k, std::move(gk));
                             }
                         },
                         "concat_cols");
}

Var pick(Var a, std::size_t flat_index) {
    const Tensor& x = a.value();
    if (flat_index >= x.numel()) throw DimensionError("pick: index out of range");
    Shape shape = x.shape();
    return a.graph->record(Tensor::scalar(x[flat_index]), {a},
                           [shape, flat_index](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gi(shape);
                               gi[flat_index] = g[0];
                               sink(0, std::move(gi));
                           },
                           "pick");
}

Var pick_rows(Var a, std::span<const int> cols) {
    const Tensor& x = a.value();
    const auto rows = x.rows(), width = x.cols();
    if (cols.size() != rows) throw DimensionError("pick_rows: one column index per row required");
    Tensor out({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= width) throw DimensionError("pick_rows: column out of range");
        out[r] = x[r * width + static_cast<std::size_t>(cols[r])];
    }
    std::vector<int> cv(cols.begin(), cols.end());
    Shape shape = x.shape();
    return a.graph->record(std::move(out), {a},
                           [cv, shape](const Tensor& g, const Graph::Sink& sink) {
                               Tensor gi(shape);
                               const auto width = gi.cols();
                               for (std::size_t r = 0; r < cv.size(); ++r)
                                   gi[r * width + static_cast<std::size_t>(cv[r])] = g[r];
                               sink(0, std::move(gi));
                           },
                           "pick_rows");
}

namespace {

// Rotate-half RoPE: pair (j, j + d/2) rotated by pos * base^(-2j/d).
Tensor rotate(const Tensor& x, double base, double sign) {
    const auto rows = x.rows(), d = x.cols();
    const auto half = d / 2;
    Tensor out = x;
    for (std::size_t p = 0; p < rows; ++p) {
        for (std::size_t j = 0; j < half; ++j) {
            const double theta = static_cast<double>(p) *
                                 std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
            const double c = std::cos(theta), s = sign * std::sin(theta);
            const double x1 = x[p * d + j], x2 = x[p * d + j + half];
            out[p * d + j] = x1 * c - x2 * s;
            out[p * d + j + half] = x2 * c + x1 * s;
        }
    }
    return out;
}

}  // namespace

Var rotary(Var a, double base) {
    if (a.value().cols() % 2 != 0) throw DimensionError("rotary: head dimension must be even");
    Tensor out = rotate(a.value(), base, 1.0);
    return a.graph->record(std::move(out), {a},
                           [base](const Tensor& g, const Graph::Sink& sink) { sink(0, rotate(g, base, -1.0)); },
                           "rotary");
}

Var override_row(Var a, std::size_t row, std::span<const int> cols, Var leaf) {
    check_same_graph(a, leaf, "override_row");
    const Tensor& x = a.value();
    const Tensor& v = leaf.value();
    const auto width = x.cols();
    if (row >= x.rows()) throw DimensionError("override_row: row out of range");
    if (v.numel() != cols.size()) throw DimensionError("override_row: one value per overridden column required");
    Tensor out = x;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= width) throw DimensionError("override_row: column out of range");
        out[row * width + static_cast<std::size_t>(cols[i])] = v[i];
    }
    std::vector<int> cv(cols.begin(), cols.end());
    Shape vshape = v.shape();
    return a.graph->record(std::move(out), {a, leaf},
                           [cv, vshape, row](const Tensor& g, const Graph::Sink& sink) {
                               Tensor ga = g;
                               Tensor gv(vshape);
                               const auto width = g.cols();
                               for (std::size_t i = 0; i < cv.size(); ++i) {
                                   const auto idx = row * width + static_cast<std::size_t>(cv[i]);
                                   gv[i] = g[idx];
                                   ga[idx] = 0.0;
                               }
                               sink(0, std::move(ga));
                               sink(1, std::move(gv));
                           },
                           "override_row");
}

Tensor softmax(const Tensor& x) {
    if (x.numel() == 0) throw DimensionError("softmax: empty input");
    x.require_finite("softmax input");
    Tensor y = x;
    softmax_row_inplace(y.raw(), y.numel());
    return y;
}

Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
    if (!(eps > 0.0)) throw NumericError("finite_difference: eps must be positive");
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double fp = f(probe);
        probe[i] = orig - eps;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_difference: non-finite evaluation at coordinate " + std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

}  // namespace ircan
