#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "grft/common.hpp"

namespace grft {

// Dense row-major tensor of 64-bit floats. Everything in this project is
// small enough that value semantics are fine.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor scalar(double v);
    static Tensor identity(int n);

    int64_t numel() const;
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const;
    int cols() const;

    double& at(int i, int j);
    double at(int i, int j) const;

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    std::string shape_str() const;
};

// ---------------------------------------------------------------------------
// raw kernels (fixed summation order; shared by plain ops and the tape)
// ---------------------------------------------------------------------------

// four-way unrolled dot product; the single definition keeps summation order
// identical wherever row dots appear
inline double dot_unrolled(const double* a, const double* b, int k) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int p = 0;
    for (; p + 4 <= k; p += 4) {
        s0 += a[p] * b[p];
        s1 += a[p + 1] * b[p + 1];
        s2 += a[p + 2] * b[p + 2];
        s3 += a[p + 3] * b[p + 3];
    }
    for (; p < k; ++p) s0 += a[p] * b[p];
    return (s0 + s1) + (s2 + s3);
}

// c = a[m x k] * b[k x n]
void mm(const double* a, const double* b, double* c, int m, int k, int n);
// c += a[m x k] * b[k x n]
void mm_acc(const double* a, const double* b, double* c, int m, int k, int n);
// c = a[m x k] * b[n x k]^T
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n);
// c += a[m x k] * b[n x k]^T
void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);
// c = a[m x k]^T * b[m x n]   (result k x n)
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n);
// c += a[m x k]^T * b[m x n]
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);
// c += a[m x k] * b[n x k]^T, materializing b^T first (fast for large k)
void mm_nt_acc_via_t(const double* a, const double* b, double* c, int m, int k, int n);

// ---------------------------------------------------------------------------
// plain operations
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// elementwise logistic, clamped to the open interval (0,1) in double precision
double sigmoid_scalar(double x);
Tensor sigmoid(const Tensor& x);

// row-stabilized softmax over the last dimension of a [m x n] tensor
Tensor softmax_rows(const Tensor& x);

// normalize to zero mean / unit variance (eps inside the sqrt), then affine
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

// tanh-approximation GELU (smooth; keeps gradient checks clean)
double gelu_scalar(double x);
double gelu_grad_scalar(double x);

// mean over masked-in positions of -log softmax(logits)[target]
double cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<uint8_t>& mask);

void check_finite(const Tensor& t, const std::string& what);

// singular values of a [m x n] matrix (descending), via Jacobi eigenvalues of
// the n x n Gram matrix; adequate for the small matrices used here
std::vector<double> singular_values(const Tensor& a);

// count of singular values above rel_threshold * sigma_max
int numerical_rank(const Tensor& a, double rel_threshold);

}  // namespace grft
