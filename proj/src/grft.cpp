#include "grft/grft.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace grft {

std::string mode_name(GrftMode mode) {
    switch (mode) {
        case GrftMode::grft: return "grft";
        case GrftMode::reft_no_gate: return "reft_no_gate";
        case GrftMode::grft_no_gate_loss: return "grft_no_gate_loss";
    }
    throw ValidationError("mode_name: bad mode value");
}

GrftMode parse_mode(const std::string& name) {
    if (name == "grft") return GrftMode::grft;
    if (name == "reft_no_gate") return GrftMode::reft_no_gate;
    if (name == "grft_no_gate_loss") return GrftMode::grft_no_gate_loss;
    throw ValidationError("parse_mode: unknown mode '" + name +
                          "' (valid: grft, reft_no_gate, grft_no_gate_loss)");
}

void GrftConfig::validate(int n_layers) const {
    if (d <= 0) throw ValidationError("GrftConfig: d must be positive");
    if (rank <= 0 || rank > d) throw ValidationError("GrftConfig: need 1 <= rank <= d");
    if (layer_index < 0) throw ValidationError("GrftConfig: layer_index must be non-negative");
    if (n_layers >= 0 && layer_index >= n_layers)
        throw ValidationError("GrftConfig: layer_index " + std::to_string(layer_index) +
                              " out of range for " + std::to_string(n_layers) + " layers");
}

int64_t GrftParams::count() const {
    return w_g.numel() + b_g.numel() + w.numel() + r.numel() + b.numel();
}

std::vector<Tensor*> GrftParams::all() { return {&w_g, &b_g, &w, &r, &b}; }
std::vector<const Tensor*> GrftParams::all() const { return {&w_g, &b_g, &w, &r, &b}; }

GrftParams init_grft(const GrftConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, 0x6FD7));
    GrftParams p;
    p.w_g = Tensor::zeros({1, cfg.d});
    p.b_g = Tensor::zeros({1});
    p.w = Tensor::zeros({cfg.rank, cfg.d});
    p.r = Tensor::zeros({cfg.rank, cfg.d});
    p.b = Tensor::zeros({cfg.rank});
    const double std_dev = 0.02 / std::sqrt(static_cast<double>(cfg.d));
    for (double& v : p.w.data) v = std_dev * rng.normal();
    for (double& v : p.r.data) v = std_dev * rng.normal();
    return p;
}

double gate(const GrftParams& p, std::span<const double> h) {
    if (static_cast<int>(h.size()) != p.d())
        throw ValidationError("gate: hidden size " + std::to_string(h.size()) + " != d " +
                              std::to_string(p.d()));
    const double z = dot_unrolled(h.data(), p.w_g.data.data(), p.d()) + p.b_g.data[0];
    return sigmoid_scalar(z);
}

std::vector<double> intervention(const GrftParams& p, std::span<const double> h) {
    const int d = p.d(), r = p.rank();
    if (static_cast<int>(h.size()) != d)
        throw ValidationError("intervention: hidden size " + std::to_string(h.size()) + " != d " +
                              std::to_string(d));
    // t = (W h - R h) + b, low-rank coefficients
    std::vector<double> t(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        const double wh = dot_unrolled(p.w.data.data() + static_cast<size_t>(i) * d, h.data(), d);
        const double rh = dot_unrolled(p.r.data.data() + static_cast<size_t>(i) * d, h.data(), d);
        t[static_cast<size_t>(i)] = (wh - rh) + p.b.data[static_cast<size_t>(i)];
    }
    // out = R^T t
    std::vector<double> out(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < r; ++i) {
        const double ti = t[static_cast<size_t>(i)];
        const double* ri = p.r.data.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += ti * ri[j];
    }
    return out;
}

void grft_apply_inplace(const GrftParams& p, GrftMode mode, std::span<double> h, double* gate_out) {
    const std::vector<double> delta = intervention(p, h);
    double g = 1.0;
    if (mode != GrftMode::reft_no_gate) {
        g = gate(p, h);
        if (gate_out) *gate_out = g;
    }
    for (size_t j = 0; j < h.size(); ++j) h[j] += g * delta[j];
}

Tensor grft_apply(const GrftParams& p, const Tensor& h, GrftMode mode) {
    if (h.rank() != 1) throw ValidationError("grft_apply: expected a 1-D hidden state");
    Tensor out = h;
    grft_apply_inplace(p, mode, std::span<double>(out.data.data(), out.data.size()), nullptr);
    return out;
}

ParamCount param_count(int d, int r) {
    if (d < 1 || r < 1) throw ValidationError("param_count: d and r must be at least 1");
    ParamCount c;
    c.gate = static_cast<int64_t>(d) + 1;
    c.intervention = 2ll * r * d + r;
    c.total = c.gate + c.intervention;
    return c;
}

double param_ratio(int64_t total, double base_params) {
    return static_cast<double>(total) / base_params;
}

Hook make_hook(const GrftParams& p, const GrftConfig& cfg, int n_layers,
               std::shared_ptr<GateTrace> trace) {
    cfg.validate(n_layers);
    if (p.d() != cfg.d) throw ValidationError("make_hook: params d != config d");
    GrftParams params = p;  // hooks own a copy; inference params are immutable
    const GrftMode mode = cfg.mode;
    Hook hook;
    hook.layer_index = cfg.layer_index;
    hook.transform = [params, mode, trace](std::span<double> h, int pos) {
        double g = 0.0;
        grft_apply_inplace(params, mode, h, &g);
        if (trace) {
            if (pos == 0) trace->values.clear();
            trace->values.push_back(g);
        }
    };
    return hook;
}

// ---------------------------------------------------------------------------
// taped version
// ---------------------------------------------------------------------------

GrftVars grft_inputs(Tape& tape, const GrftParams& p) {
    GrftVars v;
    v.w_g = tape.input(p.w_g);
    v.b_g = tape.input(p.b_g);
    v.w = tape.input(p.w);
    v.r = tape.input(p.r);
    v.b = tape.input(p.b);
    return v;
}

Var grft_apply_tape(Tape& tape, const GrftVars& v, Var rows, GrftMode mode, Var* gate_out) {
    const int t_len = tape.value(rows).rows();
    Var wh = tape.matmul_nt(rows, v.w);                       // [T x r]
    Var rh = tape.matmul_nt(rows, v.r);                       // [T x r]
    Var coef = tape.add_row(tape.sub(wh, rh), v.b);           // [T x r]
    Var delta = tape.matmul(coef, v.r);                       // [T x d]
    if (mode == GrftMode::reft_no_gate) {
        if (gate_out) *gate_out = Var{};
        return tape.add(rows, delta);
    }
    Var z = tape.add_row(tape.matmul_nt(rows, v.w_g), v.b_g);  // [T x 1]
    Var gates = tape.reshape(tape.sigmoid(z), {t_len});        // [T]
    if (gate_out) *gate_out = gates;
    return tape.add(rows, tape.mul_rows(delta, gates));
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

namespace {

constexpr uint32_t kGrftVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("grft checkpoint: truncated file");
    return v;
}

void write_doubles(std::ostream& os, const Tensor& t) {
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

void read_doubles(std::istream& is, Tensor& t) {
    if (!is.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double))))
        throw FormatError("grft checkpoint: truncated tensor data");
}

}  // namespace

void save_grft(const GrftParams& p, const GrftConfig& cfg, const std::string& path) {
    if (p.d() != cfg.d || p.rank() != cfg.rank)
        throw ValidationError("save_grft: params do not match config");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_grft: cannot open " + path);
    os.write("GRFT", 4);
    write_u32(os, kGrftVersion);
    write_u32(os, static_cast<uint32_t>(cfg.d));
    write_u32(os, static_cast<uint32_t>(cfg.rank));
    write_u32(os, static_cast<uint32_t>(cfg.layer_index));
    const uint8_t mode_tag = static_cast<uint8_t>(cfg.mode);
    os.write(reinterpret_cast<const char*>(&mode_tag), 1);
    write_doubles(os, p.w_g);
    write_doubles(os, p.b_g);
    write_doubles(os, p.w);
    write_doubles(os, p.r);
    write_doubles(os, p.b);
    if (!os) throw IoError("save_grft: write failed for " + path);
}

std::pair<GrftParams, GrftConfig> load_grft(const std::string& path, int expected_d) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_grft: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "GRFT", 4) != 0)
        throw FormatError("load_grft: bad magic, not a grft checkpoint");
    if (read_u32(is) != kGrftVersion) throw FormatError("load_grft: unsupported version");
    GrftConfig cfg;
    cfg.d = static_cast<int>(read_u32(is));
    cfg.rank = static_cast<int>(read_u32(is));
    cfg.layer_index = static_cast<int>(read_u32(is));
    uint8_t mode_tag = 0;
    if (!is.read(reinterpret_cast<char*>(&mode_tag), 1)) throw FormatError("load_grft: truncated file");
    if (mode_tag > 2) throw FormatError("load_grft: bad mode tag");
    cfg.mode = static_cast<GrftMode>(mode_tag);
    cfg.validate();
    if (expected_d >= 0 && cfg.d != expected_d)
        throw FormatError("load_grft: checkpoint d=" + std::to_string(cfg.d) + " but expected d=" +
                          std::to_string(expected_d));

    GrftParams p;
    p.w_g = Tensor::zeros({1, cfg.d});
    p.b_g = Tensor::zeros({1});
    p.w = Tensor::zeros({cfg.rank, cfg.d});
    p.r = Tensor::zeros({cfg.rank, cfg.d});
    p.b = Tensor::zeros({cfg.rank});
    read_doubles(is, p.w_g);
    read_doubles(is, p.b_g);
    read_doubles(is, p.w);
    read_doubles(is, p.r);
    read_doubles(is, p.b);
    char extra;
    if (is.read(&extra, 1)) throw FormatError("load_grft: trailing bytes after tensors");
    return {std::move(p), cfg};
}

}  // namespace grft
