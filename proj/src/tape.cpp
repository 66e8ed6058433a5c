#include "grft/tape.hpp"

#include <algorithm>
#include <cmath>

namespace grft {

Var Tape::make(Tensor v, bool mark) {
    values_.push_back(std::move(v));
    grads_.emplace_back();
    marked_.push_back(mark ? 1 : 0);
    return Var{static_cast<int>(values_.size()) - 1};
}

Var Tape::input(Tensor v) { return make(std::move(v), true); }
Var Tape::constant(Tensor v) { return make(std::move(v), false); }

void Tape::check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(values_.size()))
        throw ValidationError("Tape: invalid variable handle");
}

Tensor& Tape::gr(Var v) {
    Tensor& g = grads_[static_cast<size_t>(v.id)];
    if (g.data.empty()) g = Tensor::zeros(values_[static_cast<size_t>(v.id)].shape);
    return g;
}

void Tape::add_node(std::function<void()> fwd, std::function<void()> bwd) {
    fwd();
    nodes_.push_back(Node{std::move(fwd), std::move(bwd)});
}

const Tensor& Tape::value(Var v) const {
    check(v);
    return values_[static_cast<size_t>(v.id)];
}

double Tape::scalar(Var v) const {
    const Tensor& t = value(v);
    if (t.numel() != 1) throw ValidationError("Tape::scalar: not a scalar");
    return t.data[0];
}

bool Tape::marked(Var v) const {
    check(v);
    return marked_[static_cast<size_t>(v.id)] != 0;
}

void Tape::backward(Var loss) {
    check(loss);
    if (value(loss).numel() != 1) throw ValidationError("Tape::backward: loss must be scalar");
    for (auto& g : grads_) g = Tensor();
    grads_live_ = true;
    gr(loss).data[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

const Tensor& Tape::grad(Var v) const {
    check(v);
    if (!grads_live_) throw ValidationError("Tape::grad: no backward pass has run");
    const Tensor& g = grads_[static_cast<size_t>(v.id)];
    if (g.data.empty()) {
        static thread_local Tensor zero;
        zero = Tensor::zeros(values_[static_cast<size_t>(v.id)].shape);
        return zero;
    }
    return g;
}

std::vector<Tensor> Tape::gradients(Var loss, const std::vector<Var>& inputs) {
    for (Var v : inputs)
        if (!marked(v)) throw ValidationError("Tape::gradients: variable was not marked as input");
    backward(loss);
    std::vector<Tensor> out;
    out.reserve(inputs.size());
    for (Var v : inputs) out.push_back(grad(v));
    return out;
}

void Tape::replay() {
    for (auto& n : nodes_) n.forward();
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
    check(a);
    check(b);
    if (!value(a).same_shape(value(b)))
        throw ValidationError("Tape::add: shape mismatch " + value(a).shape_str() + " vs " + value(b).shape_str());
    Var out = make(Tensor::zeros(value(a).shape), marked(a) || marked(b));
    add_node(
        [this, a, b, out] {
            const auto& x = val(a).data;
            const auto& y = val(b).data;
            auto& o = val(out).data;
            for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
        },
        [this, a, b, out] {
            const auto& go = gr(out).data;
            if (marked_[a.id]) {
                auto& ga = gr(a).data;
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (marked_[b.id]) {
                auto& gb = gr(b).data;
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    return out;
}

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Tape::mul(Var a, Var b) {
    check(a);
    check(b);
    if (!value(a).same_shape(value(b))) throw ValidationError("Tape::mul: shape mismatch");
    Var out = make(Tensor::zeros(value(a).shape), marked(a) || marked(b));
    add_node(
        [this, a, b, out] {
            const auto& x = val(a).data;
            const auto& y = val(b).data;
            auto& o = val(out).data;
            for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
        },
        [this, a, b, out] {
            const auto& go = gr(out).data;
            if (marked_[a.id]) {
                auto& ga = gr(a).data;
                const auto& y = val(b).data;
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
            }
            if (marked_[b.id]) {
                auto& gb = gr(b).data;
                const auto& x = val(a).data;
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * x[i];
            }
        });
    return out;
}

Var Tape::scale(Var a, double s) { return affine(a, s, 0.0); }

Var Tape::affine(Var a, double m, double c) {
    check(a);
    Var out = make(Tensor::zeros(value(a).shape), marked(a));
    add_node(
        [this, a, out, m, c] {
            const auto& x = val(a).data;
            auto& o = val(out).data;
            for (size_t i = 0; i < o.size(); ++i) o[i] = m * x[i] + c;
        },
        [this, a, out, m] {
            if (!marked_[a.id]) return;
            const auto& go = gr(out).data;
            auto& ga = gr(a).data;
            for (size_t i = 0; i < go.size(); ++i) ga[i] += m * go[i];
        });
    return out;
}

Var Tape::log_of(Var a) {
    check(a);
    Var out = make(Tensor::zeros(value(a).shape), marked(a));
    add_node(
        [this, a, out] {
            const auto& x = val(a).data;
            auto& o = val(out).data;
            for (size_t i = 0; i < o.size(); ++i) o[i] = std::log(x[i]);
        },
        [this, a, out] {
            if (!marked_[a.id]) return;
            const auto& go = gr(out).data;
            const auto& x = val(a).data;
            auto& ga = gr(a).data;
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / x[i];
        });
    return out;
}

Var Tape::sigmoid(Var a) {
    check(a);
    Var out = make(Tensor::zeros(value(a).shape), marked(a));
    add_node(
        [this, a, out] {
            const auto& x = val(a).data;
            auto& o = val(out).data;
            for (size_t i = 0; i < o.size(); ++i) o[i] = sigmoid_scalar(x[i]);
        },
        [this, a, out] {
            if (!marked_[a.id]) return;
            const auto& go = gr(out).data;
            const auto& o = val(out).data;
            auto& ga = gr(a).data;
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * o[i] * (1.0 - o[i]);
        });
    return out;
}

Var Tape::gelu(Var a) {
    check(a);
    Var out = make(Tensor::zeros(value(a).shape), marked(a));
    add_node(
        [this, a, out] {
            const auto& x = val(a).data;
            auto& o = val(out).data;
            for (size_t i = 0; i < o.size(); ++i) o[i] = gelu_scalar(x[i]);
        },
        [this, a, out] {
            if (!marked_[a.id]) return;
            const auto& go = gr(out).data;
            const auto& x = val(a).data;
            auto& ga = gr(a).data;
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * gelu_grad_scalar(x[i]);
        });
    return out;
}

Var Tape::sum(Var a) {
    check(a);
    Var out = make(Tensor::zeros({1}), marked(a));
    add_node(
        [this, a, out] {
            double s = 0.0;
            for (double v : val(a).data) s += v;
            val(out).data[0] = s;
        },
        [this, a, out] {
            if (!marked_[a.id]) return;
            const double go = gr(out).data[0];
            auto& ga = gr(a).data;
            for (double& g : ga) g += go;
        });
    return out;
}

Var Tape::matmul(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
        throw ValidationError("Tape::matmul: incompatible shapes " + ta.shape_str() + " vs " + tb.shape_str());
    const int m = ta.rows(), k = ta.cols(), n = tb.cols();
    Var out = make(Tensor::zeros({m, n}), marked(a) || marked(b));
    add_node(
        [this, a, b, out, m, k, n] {
            mm(val(a).data.data(), val(b).data.data(), val(out).data.data(), m, k, n);
        },
        [this, a, b, out, m, k, n] {
            const double* go = gr(out).data.data();
            if (marked_[a.id])  // dA = dC * B^T
                mm_nt_acc_via_t(go, val(b).data.data(), gr(a).data.data(), m, n, k);
            if (marked_[b.id])  // dB = A^T * dC
                mm_tn_acc(val(a).data.data(), go, gr(b).data.data(), m, k, n);
        });
    return out;
}

Var Tape::matmul_nt(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols())
        throw ValidationError("Tape::matmul_nt: incompatible shapes " + ta.shape_str() + " vs " + tb.shape_str());
    const int m = ta.rows(), k = ta.cols(), n = tb.rows();
    Var out = make(Tensor::zeros({m, n}), marked(a) || marked(b));
    add_node(
        [this, a, b, out, m, k, n] {
            mm_nt(val(a).data.data(), val(b).data.data(), val(out).data.data(), m, k, n);
        },
        [this, a, b, out, m, k, n] {
            const double* go = gr(out).data.data();
            if (marked_[a.id])  // dA = dC * B
                mm_acc(go, val(b).data.data(), gr(a).data.data(), m, n, k);
            if (marked_[b.id])  // dB = dC^T * A
                mm_tn_acc(go, val(a).data.data(), gr(b).data.data(), m, n, k);
        });
    return out;
}

Var Tape::add_row(Var m, Var row) {
    check(m);
    check(row);
    const Tensor& tm = value(m);
    const Tensor& tr = value(row);
    if (tm.rank() != 2 || tr.rank() != 1 || tr.shape[0] != tm.cols())
        throw ValidationError("Tape::add_row: incompatible shapes");
    const int rows = tm.rows(), n = tm.cols();
    Var out = make(Tensor::zeros(tm.shape), marked(m) || marked(row));
    add_node(
        [this, m, row, out, rows, n] {
            const auto& x = val(m).data;
            const auto& r = val(row).data;
            auto& o = val(out).data;
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < n; ++j) o[static_cast<size_t>(i) * n + j] = x[static_cast<size_t>(i) * n + j] + r[j];
        },
        [this, m, row, out, rows, n] {
            const auto& go = gr(out).data;
            if (marked_[m.id]) {
                auto& gm = gr(m).data;
                for (size_t i = 0; i < go.size(); ++i) gm[i] += go[i];
            }
            if (marked_[row.id]) {
                auto& grow = gr(row).data;
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < n; ++j) grow[j] += go[static_cast<size_t>(i) * n + j];
            }
        });
    return out;
}

Var Tape::mul_rows(Var m, Var s) {
    check(m);
    check(s);
    const Tensor& tm = value(m);
    const Tensor& ts = value(s);
    if (tm.rank() != 2 || ts.rank() != 1 || ts.shape[0] != tm.rows())
        throw ValidationError("Tape::mul_rows: incompatible shapes");
    const int rows = tm.rows(), n = tm.cols();
    Var out = make(Tensor::zeros(tm.shape), marked(m) || marked(s));
    add_node(
        [this, m, s, out, rows, n] {
            const auto& x = val(m).data;
            const auto& sc = val(s).data;
            auto& o = val(out).data;
            for (int i = 0; i < rows; ++i) {
                const double f = sc[i];
                for (int j = 0; j < n; ++j) o[static_cast<size_t>(i) * n + j] = f * x[static_cast<size_t>(i) * n + j];
            }
        },
        [this, m, s, out, rows, n] {
            const auto& go = gr(out).data;
            if (marked_[m.id]) {
                auto& gm = gr(m).data;
                const auto& sc = val(s).data;
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < n; ++j)
                        gm[static_cast<size_t>(i) * n + j] += sc[i] * go[static_cast<size_t>(i) * n + j];
            }
            if (marked_[s.id]) {
                auto& gs = gr(s).data;
                const auto& x = val(m).data;
                for (int i = 0; i < rows; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j)
                        acc += x[static_cast<size_t>(i) * n + j] * go[static_cast<size_t>(i) * n + j];
                    gs[i] += acc;
                }
            }
        });
    return out;
}

Var Tape::slice_cols(Var m, int c0, int c1) {
    check(m);
    const Tensor& tm = value(m);
    if (tm.rank() != 2 || c0 < 0 || c1 > tm.cols() || c0 >= c1)
        throw ValidationError("Tape::slice_cols: bad column range");
    const int rows = tm.rows(), n = tm.cols(), w = c1 - c0;
    Var out = make(Tensor::zeros({rows, w}), marked(m));
    add_node(
        [this, m, out, rows, n, c0, w] {
            const auto& x = val(m).data;
            auto& o = val(out).data;
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < w; ++j)
                    o[static_cast<size_t>(i) * w + j] = x[static_cast<size_t>(i) * n + c0 + j];
        },
        [this, m, out, rows, n, c0, w] {
            if (!marked_[m.id]) return;
            const auto& go = gr(out).data;
            auto& gm = gr(m).data;
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < w; ++j)
                    gm[static_cast<size_t>(i) * n + c0 + j] += go[static_cast<size_t>(i) * w + j];
        });
    return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ValidationError("Tape::concat_cols: no parts");
    int rows = value(parts[0]).rows();
    int total = 0;
    bool mark = false;
    for (Var p : parts) {
        const Tensor& t = value(p);
        if (t.rank() != 2 || t.rows() != rows) throw ValidationError("Tape::concat_cols: row mismatch");
        total += t.cols();
        mark = mark || marked(p);
    }
    Var out = make(Tensor::zeros({rows, total}), mark);
    std::vector<Var> ps = parts;
    add_node(
        [this, ps, out, rows, total] {
            auto& o = val(out).data;
            int off = 0;
            for (Var p : ps) {
                const Tensor& t = val(p);
                const int w = t.cols();
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < w; ++j)
                        o[static_cast<size_t>(i) * total + off + j] = t.data[static_cast<size_t>(i) * w + j];
                off += w;
            }
        },
        [this, ps, out, rows, total] {
            const auto& go = gr(out).data;
            int off = 0;
            for (Var p : ps) {
                const int w = val(p).cols();
                if (marked_[p.id]) {
                    auto& gp = gr(p).data;
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < w; ++j)
                            gp[static_cast<size_t>(i) * w + j] += go[static_cast<size_t>(i) * total + off + j];
                }
                off += w;
            }
        });
    return out;
}

Var Tape::gather_rows(Var m, std::vector<int> rows) {
    check(m);
    const Tensor& tm = value(m);
    if (tm.rank() != 2) throw ValidationError("Tape::gather_rows: expected 2-D");
    for (int r : rows)
        if (r < 0 || r >= tm.rows()) throw ValidationError("Tape::gather_rows: row index out of range");
    const int n = tm.cols(), k = static_cast<int>(rows.size());
    Var out = make(Tensor::zeros({k, n}), marked(m));
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    add_node(
        [this, m, out, idx, n, k] {
            const auto& x = val(m).data;
            auto& o = val(out).data;
            for (int i = 0; i < k; ++i) {
                const int r = (*idx)[static_cast<size_t>(i)];
                for (int j = 0; j < n; ++j) o[static_cast<size_t>(i) * n + j] = x[static_cast<size_t>(r) * n + j];
            }
        },
        [this, m, out, idx, n, k] {
            if (!marked_[m.id]) return;
            const auto& go = gr(out).data;
            auto& gm = gr(m).data;
            for (int i = 0; i < k; ++i) {
                const int r = (*idx)[static_cast<size_t>(i)];
                for (int j = 0; j < n; ++j) gm[static_cast<size_t>(r) * n + j] += go[static_cast<size_t>(i) * n + j];
            }
        });
    return out;
}

Var Tape::pick(Var v, int flat_index) {
    check(v);
    if (flat_index < 0 || flat_index >= value(v).numel())
        throw ValidationError("Tape::pick: index out of range");
    Var out = make(Tensor::zeros({1}), marked(v));
    add_node([this, v, out, flat_index] { val(out).data[0] = val(v).data[static_cast<size_t>(flat_index)]; },
             [this, v, out, flat_index] {
                 if (!marked_[v.id]) return;
                 gr(v).data[static_cast<size_t>(flat_index)] += gr(out).data[0];
             });
    return out;
}

Var Tape::reshape(Var v, std::vector<int> shape) {
    check(v);
    int64_t n = 1;
    for (int dim : shape) n *= dim;
    if (n != value(v).numel()) throw ValidationError("Tape::reshape: element count mismatch");
    Var out = make(Tensor(shape, value(v).data), marked(v));
    add_node([this, v, out] { val(out).data = val(v).data; },
             [this, v, out] {
                 if (!marked_[v.id]) return;
                 const auto& go = gr(out).data;
                 auto& gv = gr(v).data;
                 for (size_t i = 0; i < go.size(); ++i) gv[i] += go[i];
             });
    return out;
}

Var Tape::layer_norm_rows(Var x, Var gain, Var shift) {
    check(x);
    check(gain);
    check(shift);
    const Tensor& tx = value(x);
    if (tx.rank() != 2) throw ValidationError("Tape::layer_norm_rows: expected 2-D input");
    const int rows = tx.rows(), n = tx.cols();
    if (n < 2) throw ValidationError("Tape::layer_norm_rows: need at least 2 columns");
    if (value(gain).shape != std::vector<int>{n} || value(shift).shape != std::vector<int>{n})
        throw ValidationError("Tape::layer_norm_rows: gain/shift shape mismatch");
    constexpr double eps = 1e-5;
    Var out = make(Tensor::zeros(tx.shape), marked(x) || marked(gain) || marked(shift));
    auto xhat = std::make_shared<Tensor>();
    auto inv_std = std::make_shared<std::vector<double>>();
    add_node(
        [this, x, gain, shift, out, xhat, inv_std, rows, n] {
            *xhat = Tensor::zeros({rows, n});
            inv_std->assign(static_cast<size_t>(rows), 0.0);
            const auto& xi = val(x).data;
            const auto& g = val(gain).data;
            const auto& b = val(shift).data;
            auto& o = val(out).data;
            for (int i = 0; i < rows; ++i) {
                const double* xr = xi.data() + static_cast<size_t>(i) * n;
                double mean = 0.0;
                for (int j = 0; j < n; ++j) mean += xr[j];
                mean /= n;
                double var = 0.0;
                for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
                var /= n;
                const double inv = 1.0 / std::sqrt(var + eps);
                (*inv_std)[static_cast<size_t>(i)] = inv;
                for (int j = 0; j < n; ++j) {
                    const double xh = (xr[j] - mean) * inv;
                    xhat->data[static_cast<size_t>(i) * n + j] = xh;
                    o[static_cast<size_t>(i) * n + j] = xh * g[j] + b[j];
                }
            }
        },
        [this, x, gain, shift, out, xhat, inv_std, rows, n] {
            const auto& go = gr(out).data;
            const auto& g = val(gain).data;
            if (marked_[gain.id]) {
                auto& gg = gr(gain).data;
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < n; ++j)
                        gg[j] += go[static_cast<size_t>(i) * n + j] * xhat->data[static_cast<size_t>(i) * n + j];
            }
            if (marked_[shift.id]) {
                auto& gb = gr(shift).data;
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < n; ++j) gb[j] += go[static_cast<size_t>(i) * n + j];
            }
            if (marked_[x.id]) {
                auto& gx = gr(x).data;
                for (int i = 0; i < rows; ++i) {
                    const double* gor = go.data() + static_cast<size_t>(i) * n;
                    const double* xhr = xhat->data.data() + static_cast<size_t>(i) * n;
                    double sum_dy = 0.0, sum_dy_xh = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double dy = gor[j] * g[j];
                        sum_dy += dy;
                        sum_dy_xh += dy * xhr[j];
                    }
                    const double inv = (*inv_std)[static_cast<size_t>(i)];
                    for (int j = 0; j < n; ++j) {
                        const double dy = gor[j] * g[j];
                        gx[static_cast<size_t>(i) * n + j] +=
                            inv * (dy - sum_dy / n - xhr[j] * sum_dy_xh / n);
                    }
                }
            }
        });
    return out;
}

Var Tape::causal_softmax_rows(Var scores) {
    check(scores);
    const Tensor& ts = value(scores);
    if (ts.rank() != 2 || ts.rows() != ts.cols())
        throw ValidationError("Tape::causal_softmax_rows: expected square score matrix");
    const int n = ts.rows();
    Var out = make(Tensor::zeros(ts.shape), marked(scores));
    add_node(
        [this, scores, out, n] {
            const auto& s = val(scores).data;
            auto& o = val(out).data;
            for (int i = 0; i < n; ++i) {
                const double* sr = s.data() + static_cast<size_t>(i) * n;
                double* orow = o.data() + static_cast<size_t>(i) * n;
                double mx = sr[0];
                for (int j = 1; j <= i; ++j) mx = std::max(mx, sr[j]);
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    orow[j] = std::exp(sr[j] - mx);
                    sum += orow[j];
                }
                const double inv = 1.0 / sum;
                for (int j = 0; j <= i; ++j) orow[j] *= inv;
                for (int j = i + 1; j < n; ++j) orow[j] = 0.0;
            }
        },
        [this, scores, out, n] {
            if (!marked_[scores.id]) return;
            const auto& go = gr(out).data;
            const auto& p = val(out).data;
            auto& gs = gr(scores).data;
            for (int i = 0; i < n; ++i) {
                const double* pr = p.data() + static_cast<size_t>(i) * n;
                const double* gor = go.data() + static_cast<size_t>(i) * n;
                double dotv = 0.0;
                for (int j = 0; j <= i; ++j) dotv += gor[j] * pr[j];
                for (int j = 0; j <= i; ++j) gs[static_cast<size_t>(i) * n + j] += pr[j] * (gor[j] - dotv);
            }
        });
    return out;
}

Var Tape::cross_entropy(Var logits, std::vector<int> targets, std::vector<uint8_t> mask) {
    check(logits);
    const Tensor& tl = value(logits);
    if (tl.rank() != 2) throw ValidationError("Tape::cross_entropy: expected 2-D logits");
    const int t_len = tl.rows(), vocab = tl.cols();
    if (static_cast<int>(targets.size()) != t_len || static_cast<int>(mask.size()) != t_len)
        throw ValidationError("Tape::cross_entropy: targets/mask length mismatch");
    int count = 0;
    for (int t = 0; t < t_len; ++t) {
        if (!mask[t]) continue;
        if (targets[t] < 0 || targets[t] >= vocab)
            throw ValidationError("Tape::cross_entropy: target index out of vocabulary");
        ++count;
    }
    if (count == 0) throw ValidationError("Tape::cross_entropy: empty mask");
    Var out = make(Tensor::zeros({1}), marked(logits));
    auto tg = std::make_shared<std::vector<int>>(std::move(targets));
    auto mk = std::make_shared<std::vector<uint8_t>>(std::move(mask));
    auto probs = std::make_shared<Tensor>();
    add_node(
        [this, logits, out, tg, mk, probs, t_len, vocab, count] {
            *probs = Tensor::zeros({t_len, vocab});
            const auto& l = val(logits).data;
            double total = 0.0;
            for (int t = 0; t < t_len; ++t) {
                if (!(*mk)[t]) continue;
                const double* row = l.data() + static_cast<size_t>(t) * vocab;
                double* pr = probs->data.data() + static_cast<size_t>(t) * vocab;
                double mx = row[0];
                for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
                double sum = 0.0;
                for (int j = 0; j < vocab; ++j) {
                    pr[j] = std::exp(row[j] - mx);
                    sum += pr[j];
                }
                const double inv = 1.0 / sum;
                for (int j = 0; j < vocab; ++j) pr[j] *= inv;
                total += (std::log(sum) + mx) - row[(*tg)[t]];
            }
            val(out).data[0] = total / count;
        },
        [this, logits, out, tg, mk, probs, t_len, vocab, count] {
            if (!marked_[logits.id]) return;
            const double go = gr(out).data[0] / count;
            auto& gl = gr(logits).data;
            for (int t = 0; t < t_len; ++t) {
                if (!(*mk)[t]) continue;
                const double* pr = probs->data.data() + static_cast<size_t>(t) * vocab;
                double* gr_row = gl.data() + static_cast<size_t>(t) * vocab;
                for (int j = 0; j < vocab; ++j) gr_row[j] += go * pr[j];
                gr_row[(*tg)[t]] -= go;
            }
        });
    return out;
}

Var Tape::bce(Var gate, int label) {
    check(gate);
    if (value(gate).numel() != 1) throw ValidationError("Tape::bce: gate must be scalar");
    const double g = value(gate).data[0];
    if (!(g > 0.0 && g < 1.0)) throw ValidationError("Tape::bce: gate outside (0,1)");
    if (label != 0 && label != 1) throw ValidationError("Tape::bce: label must be 0 or 1");
    Var out = make(Tensor::zeros({1}), marked(gate));
    add_node(
        [this, gate, out, label] {
            const double gv = val(gate).data[0];
            val(out).data[0] = label ? -std::log(gv) : -std::log(1.0 - gv);
        },
        [this, gate, out, label] {
            if (!marked_[gate.id]) return;
            const double gv = val(gate).data[0];
            const double go = gr(out).data[0];
            gr(gate).data[0] += go * (label ? -1.0 / gv : 1.0 / (1.0 - gv));
        });
    return out;
}

Var Tape::mean(const std::vector<Var>& vs) {
    if (vs.empty()) throw ValidationError("Tape::mean: empty list");
    Var acc = vs[0];
    for (size_t i = 1; i < vs.size(); ++i) acc = add(acc, vs[i]);
    return scale(acc, 1.0 / static_cast<double>(vs.size()));
}

// ---------------------------------------------------------------------------

double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& theta,
                         const Tensor& analytic) {
    if (!theta.same_shape(analytic))
        throw ValidationError("finite_diff_check: analytic gradient shape mismatch");
    Tensor probe = theta;
    double worst = 0.0;
    for (size_t j = 0; j < probe.data.size(); ++j) {
        const double orig = probe.data[j];
        const double step = 1e-5 * std::max(1.0, std::fabs(orig));
        probe.data[j] = orig + step;
        const double fp = f(probe);
        probe.data[j] = orig - step;
        const double fm = f(probe);
        probe.data[j] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_check: non-finite function value");
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic.data[j];
        const double err = std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace grft
