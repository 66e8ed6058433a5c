#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "grft/tensor.hpp"

namespace grft {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops compute their value immediately and record forward
// and backward closures; backward() walks the record in reverse. Replaying
// the record reproduces every forward value bit-identically (fixed kernels,
// fixed order).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(Tensor v);     // marked: gradients are tracked
    Var constant(Tensor v);  // unmarked leaf

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var affine(Var a, double m, double c);
    Var log_of(Var a);
    Var sigmoid(Var a);
    Var gelu(Var a);
    Var sum(Var a);
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var add_row(Var m, Var row);
    Var mul_rows(Var m, Var s);  // scale row i of m by s[i]
    Var slice_cols(Var m, int c0, int c1);
    Var concat_cols(const std::vector<Var>& parts);
    Var gather_rows(Var m, std::vector<int> rows);
    Var pick(Var v, int flat_index);
    Var reshape(Var v, std::vector<int> shape);
    Var layer_norm_rows(Var x, Var gain, Var shift);
    Var causal_softmax_rows(Var scores);
    Var cross_entropy(Var logits, std::vector<int> targets, std::vector<uint8_t> mask);
    Var bce(Var gate, int label);
    Var mean(const std::vector<Var>& vs);

    const Tensor& value(Var v) const;
    double scalar(Var v) const;
    bool marked(Var v) const;

    // reverse pass from a scalar loss; gradients retrievable via grad()
    void backward(Var loss);
    const Tensor& grad(Var v) const;

    // gradient of loss w.r.t. each marked input; requesting an unmarked
    // variable is a usage error
    std::vector<Tensor> gradients(Var loss, const std::vector<Var>& inputs);

    // recompute every recorded value from the leaves, in order
    void replay();

    size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        std::function<void()> forward;
        std::function<void()> backward;
    };

    Var make(Tensor v, bool mark);
    Tensor& val(Var v) { return values_[static_cast<size_t>(v.id)]; }
    Tensor& gr(Var v);
    void add_node(std::function<void()> fwd, std::function<void()> bwd);
    void check(Var v) const;

    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
    std::vector<char> marked_;
    std::vector<Node> nodes_;
    bool grads_live_ = false;
};

// Central-difference oracle: step 1e-5 * max(1, |theta_j|) per coordinate;
// returns max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& theta,
                         const Tensor& analytic);

}  // namespace grft
