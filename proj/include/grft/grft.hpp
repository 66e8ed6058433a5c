#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "grft/model.hpp"
#include "grft/tape.hpp"
#include "grft/tensor.hpp"

namespace grft {

enum class GrftMode { grft, reft_no_gate, grft_no_gate_loss };

std::string mode_name(GrftMode mode);
GrftMode parse_mode(const std::string& name);

struct GrftConfig {
    int d = 64;
    int rank = 4;
    int layer_index = 1;
    GrftMode mode = GrftMode::grft;
    uint64_t seed = 0;

    void validate(int n_layers = -1) const;
};

// The trainable edit: gate weights/bias plus the low-rank intervention.
struct GrftParams {
    Tensor w_g;  // [1 x d]
    Tensor b_g;  // [1]
    Tensor w;    // [r x d]
    Tensor r;    // [r x d]
    Tensor b;    // [r]

    int d() const { return w_g.cols(); }
    int rank() const { return w.rows(); }
    int64_t count() const;
    std::vector<Tensor*> all();
    std::vector<const Tensor*> all() const;
};

// starts near the identity edit: gate 0.5 everywhere, near-zero intervention
GrftParams init_grft(const GrftConfig& cfg);

// sigma(W_g h + b_g), strictly inside (0,1)
double gate(const GrftParams& p, std::span<const double> h);

// R^T (W h + b - R h)
std::vector<double> intervention(const GrftParams& p, std::span<const double> h);

// h + Gate(h) * Intervention(h); reft_no_gate drops the gate factor entirely
Tensor grft_apply(const GrftParams& p, const Tensor& h, GrftMode mode);
void grft_apply_inplace(const GrftParams& p, GrftMode mode, std::span<double> h, double* gate_out);

struct ParamCount {
    int64_t gate = 0;
    int64_t intervention = 0;
    int64_t total = 0;
};

// gate d+1, intervention 2rd + r
ParamCount param_count(int d, int r);

// trainable-parameter share of a base model with `base_params` parameters
double param_ratio(int64_t total, double base_params);

// per-position gate values observed during the most recent forward pass
struct GateTrace {
    std::vector<double> values;
};

// Hook wrapping grft_apply at every position of cfg.layer_index. The trace,
// when given, is reset at position 0 of each forward pass.
Hook make_hook(const GrftParams& p, const GrftConfig& cfg, int n_layers,
               std::shared_ptr<GateTrace> trace = nullptr);

// ---------------------------------------------------------------------------
// taped version (training)
// ---------------------------------------------------------------------------

struct GrftVars {
    Var w_g, b_g, w, r, b;
    std::vector<Var> all() const { return {w_g, b_g, w, r, b}; }
};

GrftVars grft_inputs(Tape& tape, const GrftParams& p);

// rows: [T x d] residual block; returns the edited block. gate_out (when not
// null and mode has a gate) receives the [T] per-position gate variable.
Var grft_apply_tape(Tape& tape, const GrftVars& v, Var rows, GrftMode mode, Var* gate_out);

// ---------------------------------------------------------------------------
// checkpoint io (magic "GRFT")
// ---------------------------------------------------------------------------

void save_grft(const GrftParams& p, const GrftConfig& cfg, const std::string& path);
std::pair<GrftParams, GrftConfig> load_grft(const std::string& path, int expected_d = -1);

}  // namespace grft
