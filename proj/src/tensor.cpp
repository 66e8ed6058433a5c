#include "grft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace grft {

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    int64_t n = 1;
    for (int dim : shape) {
        if (dim <= 0) throw ValidationError("Tensor: non-positive dimension");
        n *= dim;
    }
    if (n != static_cast<int64_t>(data.size()))
        throw ValidationError("Tensor: data length does not match shape");
}

Tensor Tensor::zeros(std::vector<int> shape) {
    int64_t n = 1;
    for (int dim : shape) {
        if (dim <= 0) throw ValidationError("Tensor::zeros: non-positive dimension");
        n *= dim;
    }
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::identity(int n) {
    Tensor t = zeros({n, n});
    for (int i = 0; i < n; ++i) t.data[static_cast<size_t>(i) * n + i] = 1.0;
    return t;
}

int64_t Tensor::numel() const {
    int64_t n = 1;
    for (int dim : shape) n *= dim;
    return n;
}

int Tensor::rows() const {
    if (shape.size() != 2) throw ValidationError("Tensor::rows: not 2-D (" + shape_str() + ")");
    return shape[0];
}

int Tensor::cols() const {
    if (shape.size() != 2) throw ValidationError("Tensor::cols: not 2-D (" + shape_str() + ")");
    return shape[1];
}

double& Tensor::at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
double Tensor::at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

void check_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) throw NumericError(what + ": non-finite value");
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void mm(const double* a, const double* b, double* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    mm_acc(a, b, c, m, k, n);
}

void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] += dot_unrolled(ai, b + static_cast<size_t>(j) * k, k);
    }
}

void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    mm_nt_acc(a, b, c, m, k, n);
}

void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int p = 0; p < m; ++p) {
        const double* ap = a + static_cast<size_t>(p) * k;
        const double* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < k; ++i) {
            const double av = ap[i];
            double* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(k) * n);
    mm_tn_acc(a, b, c, m, k, n);
}

void mm_nt_acc_via_t(const double* a, const double* b, double* c, int m, int k, int n) {
    std::vector<double> bt(static_cast<size_t>(k) * n);
    for (int j = 0; j < n; ++j)
        for (int p = 0; p < k; ++p) bt[static_cast<size_t>(p) * n + j] = b[static_cast<size_t>(j) * k + p];
    mm_acc(a, bt.data(), c, m, k, n);
}

// ---------------------------------------------------------------------------
// plain operations
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ValidationError("matmul: operands must be 2-D, got " + a.shape_str() + " and " + b.shape_str());
    if (a.cols() != b.rows())
        throw ValidationError("matmul: inner dimensions differ, " + a.shape_str() + " vs " + b.shape_str());
    Tensor out = Tensor::zeros({a.rows(), b.cols()});
    mm_acc(a.data.data(), b.data.data(), out.data.data(), a.rows(), a.cols(), b.cols());
    return out;
}

double sigmoid_scalar(double x) {
    double s;
    if (x >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        s = e / (1.0 + e);
    }
    // keep the contract of a strictly open range in 64-bit arithmetic
    const double hi = std::nextafter(1.0, 0.0);
    const double lo = std::numeric_limits<double>::denorm_min();
    return std::min(hi, std::max(lo, s));
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = sigmoid_scalar(v);
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        const double* xi = x.data.data() + static_cast<size_t>(i) * n;
        double* oi = out.data.data() + static_cast<size_t>(i) * n;
        double mx = xi[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) oi[j] *= inv;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    if (x.rank() != 1) throw ValidationError("layer_norm: expected 1-D input, got " + x.shape_str());
    const int n = x.shape[0];
    if (n < 2) throw ValidationError("layer_norm: need at least 2 elements");
    if (gain.shape != x.shape || shift.shape != x.shape)
        throw ValidationError("layer_norm: gain/shift shape mismatch");
    double mean = 0.0;
    for (double v : x.data) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x.data) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    Tensor out = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) out.data[i] = (x.data[i] - mean) * inv * gain.data[i] + shift.data[i];
    return out;
}

double gelu_scalar(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    const double t = std::tanh(c * (x + 0.044715 * x * x * x));
    return 0.5 * x * (1.0 + t);
}

double gelu_grad_scalar(double x) {
    constexpr double c = 0.7978845608028654;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double sech2 = 1.0 - t * t;
    const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * du;
}

std::vector<double> singular_values(const Tensor& a) {
    // one-sided Jacobi: rotate column pairs until mutually orthogonal; the
    // singular values are the final column norms. Resolves tiny singular
    // values that a Gram-matrix route would lose to squaring.
    const int m = a.rows(), n = a.cols();
    std::vector<double> w(a.data);  // row-major copy
    auto col_dot = [&](int p, int q) {
        double s = 0.0;
        for (int i = 0; i < m; ++i)
            s += w[static_cast<size_t>(i) * n + p] * w[static_cast<size_t>(i) * n + q];
        return s;
    };
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double alpha = col_dot(p, p);
                const double beta = col_dot(q, q);
                const double gamma = col_dot(p, q);
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::fabs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    double& wp = w[static_cast<size_t>(i) * n + p];
                    double& wq = w[static_cast<size_t>(i) * n + q];
                    const double vp = wp, vq = wq;
                    wp = c * vp - s * vq;
                    wq = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }
    std::vector<double> sv(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) sv[static_cast<size_t>(j)] = std::sqrt(col_dot(j, j));
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

int numerical_rank(const Tensor& a, double rel_threshold) {
    const std::vector<double> sv = singular_values(a);
    if (sv.empty() || sv[0] == 0.0) return 0;
    const double cut = rel_threshold * sv[0];
    int rank = 0;
    for (double s : sv)
        if (s > cut) ++rank;
    return rank;
}

double cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<uint8_t>& mask) {
    const int t_len = logits.rows(), vocab = logits.cols();
    if (static_cast<int>(targets.size()) != t_len || static_cast<int>(mask.size()) != t_len)
        throw ValidationError("cross_entropy: targets/mask length mismatch");
    double total = 0.0;
    int count = 0;
    for (int t = 0; t < t_len; ++t) {
        if (!mask[t]) continue;
        if (targets[t] < 0 || targets[t] >= vocab)
            throw ValidationError("cross_entropy: target index out of vocabulary");
        const double* row = logits.data.data() + static_cast<size_t>(t) * vocab;
        double mx = row[0];
        for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < vocab; ++j) sum += std::exp(row[j] - mx);
        total += (std::log(sum) + mx) - row[targets[t]];
        ++count;
    }
    if (count == 0) throw ValidationError("cross_entropy: empty mask");
    return total / count;
}

}  // namespace grft
