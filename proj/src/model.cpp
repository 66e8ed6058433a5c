#include "grft/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "grft/optim.hpp"

namespace grft {

void ModelConfig::validate() const {
    if (vocab_size <= 0) throw ValidationError("ModelConfig: vocab_size must be positive");
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0) throw ValidationError("ModelConfig: bad dimensions");
    if (d_model % n_heads != 0) throw ValidationError("ModelConfig: d_model must be divisible by n_heads");
    if (max_seq < 2) throw ValidationError("ModelConfig: max_seq must be at least 2");
}

const Tensor& TinyModel::p(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("TinyModel: unknown parameter " + name);
    return tensors[static_cast<size_t>(it->second)];
}

Tensor& TinyModel::p(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("TinyModel: unknown parameter " + name);
    return tensors[static_cast<size_t>(it->second)];
}

int64_t TinyModel::param_count() const {
    int64_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
}

uint64_t TinyModel::checksum() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, size_t len) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    mix(&config.vocab_size, sizeof(int));
    mix(&config.d_model, sizeof(int));
    mix(&config.n_layers, sizeof(int));
    mix(&config.n_heads, sizeof(int));
    for (const auto& t : tensors) mix(t.data.data(), t.data.size() * sizeof(double));
    return h;
}

namespace {

bool is_weight(const std::string& name) {
    return name == "wte" || name == "wpe" || name.ends_with(".w") || name.ends_with(".wqkv") ||
           name.ends_with(".wo") || name.ends_with(".w1") || name.ends_with(".w2");
}

bool is_ln_gain(const std::string& name) { return name.ends_with(".g"); }

std::vector<std::pair<std::string, std::vector<int>>> declared_tensors(const ModelConfig& c) {
    const int d = c.d_model;
    std::vector<std::pair<std::string, std::vector<int>>> out;
    out.push_back({"wte", {c.vocab_size, d}});
    out.push_back({"wpe", {c.max_seq, d}});
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string p = "l" + std::to_string(l) + ".";
        out.push_back({p + "ln1.g", {d}});
        out.push_back({p + "ln1.b", {d}});
        out.push_back({p + "attn.wqkv", {d, 3 * d}});
        out.push_back({p + "attn.bqkv", {3 * d}});
        out.push_back({p + "attn.wo", {d, d}});
        out.push_back({p + "attn.bo", {d}});
        out.push_back({p + "ln2.g", {d}});
        out.push_back({p + "ln2.b", {d}});
        out.push_back({p + "mlp.w1", {d, 4 * d}});
        out.push_back({p + "mlp.b1", {4 * d}});
        out.push_back({p + "mlp.w2", {4 * d, d}});
        out.push_back({p + "mlp.b2", {d}});
    }
    out.push_back({"lnf.g", {d}});
    out.push_back({"lnf.b", {d}});
    out.push_back({"head.w", {d, c.vocab_size}});
    out.push_back({"head.b", {c.vocab_size}});
    return out;
}

}  // namespace

TinyModel init_model(const ModelConfig& config) {
    config.validate();
    TinyModel m;
    m.config = config;
    Rng rng(config.seed);
    for (auto& [name, shape] : declared_tensors(config)) {
        Tensor t = Tensor::zeros(shape);
        if (is_weight(name)) {
            for (double& v : t.data) v = 0.02 * rng.normal();
        } else if (is_ln_gain(name)) {
            std::fill(t.data.begin(), t.data.end(), 1.0);
        }
        m.index[name] = static_cast<int>(m.tensors.size());
        m.names.push_back(name);
        m.tensors.push_back(std::move(t));
    }
    return m;
}

// ---------------------------------------------------------------------------
// plain forward
// ---------------------------------------------------------------------------

namespace {

// identical arithmetic to Tape::layer_norm_rows
void ln_rows_raw(const double* x, const double* g, const double* b, double* out, int rows, int n) {
    constexpr double eps = 1e-5;
    for (int i = 0; i < rows; ++i) {
        const double* xr = x + static_cast<size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += xr[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        double* orow = out + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] = (xr[j] - mean) * inv * g[j] + b[j];
    }
}

// identical arithmetic to Tape::causal_softmax_rows
void causal_softmax_raw(double* s, int n) {
    for (int i = 0; i < n; ++i) {
        double* sr = s + static_cast<size_t>(i) * n;
        double mx = sr[0];
        for (int j = 1; j <= i; ++j) mx = std::max(mx, sr[j]);
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
            sr[j] = std::exp(sr[j] - mx);
            sum += sr[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j <= i; ++j) sr[j] *= inv;
        for (int j = i + 1; j < n; ++j) sr[j] = 0.0;
    }
}

void check_tokens(const TinyModel& model, std::span<const int> tokens) {
    if (static_cast<int>(tokens.size()) > model.config.max_seq)
        throw ValidationError("forward: sequence length " + std::to_string(tokens.size()) +
                              " exceeds max_seq " + std::to_string(model.config.max_seq));
    for (int t : tokens)
        if (t < 0 || t >= model.config.vocab_size)
            throw ValidationError("forward: token id " + std::to_string(t) + " outside vocabulary");
}

// runs the residual stream through layers [0, upto]; x is [T x d]
void run_layers(const TinyModel& model, std::vector<double>& x, int t_len, int upto, const Hook* hook) {
    const int d = model.config.d_model;
    const int heads = model.config.n_heads;
    const int hd = d / heads;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<double> h(static_cast<size_t>(t_len) * d);
    std::vector<double> qkv(static_cast<size_t>(t_len) * 3 * d);
    std::vector<double> scores(static_cast<size_t>(t_len) * t_len);
    std::vector<double> qh(static_cast<size_t>(t_len) * hd), kh(qh.size()), vh(qh.size()), oh(qh.size());
    std::vector<double> attn(static_cast<size_t>(t_len) * d);
    std::vector<double> proj(static_cast<size_t>(t_len) * d);
    std::vector<double> mlp1(static_cast<size_t>(t_len) * 4 * d);

    for (int l = 0; l <= upto; ++l) {
        const std::string pre = "l" + std::to_string(l) + ".";
        ln_rows_raw(x.data(), model.p(pre + "ln1.g").data.data(), model.p(pre + "ln1.b").data.data(),
                    h.data(), t_len, d);
        mm(h.data(), model.p(pre + "attn.wqkv").data.data(), qkv.data(), t_len, d, 3 * d);
        {
            const double* bq = model.p(pre + "attn.bqkv").data.data();
            for (int i = 0; i < t_len; ++i)
                for (int j = 0; j < 3 * d; ++j) qkv[static_cast<size_t>(i) * 3 * d + j] += bq[j];
        }
        for (int head = 0; head < heads; ++head) {
            const int qo = head * hd, ko = d + head * hd, vo = 2 * d + head * hd;
            for (int i = 0; i < t_len; ++i)
                for (int j = 0; j < hd; ++j) {
                    qh[static_cast<size_t>(i) * hd + j] = qkv[static_cast<size_t>(i) * 3 * d + qo + j];
                    kh[static_cast<size_t>(i) * hd + j] = qkv[static_cast<size_t>(i) * 3 * d + ko + j];
                    vh[static_cast<size_t>(i) * hd + j] = qkv[static_cast<size_t>(i) * 3 * d + vo + j];
                }
            mm_nt(qh.data(), kh.data(), scores.data(), t_len, hd, t_len);
            for (double& s : scores) s *= inv_sqrt_hd;
            causal_softmax_raw(scores.data(), t_len);
            mm(scores.data(), vh.data(), oh.data(), t_len, t_len, hd);
            for (int i = 0; i < t_len; ++i)
                for (int j = 0; j < hd; ++j)
                    attn[static_cast<size_t>(i) * d + head * hd + j] = oh[static_cast<size_t>(i) * hd + j];
        }
        mm(attn.data(), model.p(pre + "attn.wo").data.data(), proj.data(), t_len, d, d);
        {
            const double* bo = model.p(pre + "attn.bo").data.data();
            for (int i = 0; i < t_len; ++i)
                for (int j = 0; j < d; ++j)
                    x[static_cast<size_t>(i) * d + j] += proj[static_cast<size_t>(i) * d + j] + bo[j];
        }
        ln_rows_raw(x.data(), model.p(pre + "ln2.g").data.data(), model.p(pre + "ln2.b").data.data(),
                    h.data(), t_len, d);
        mm(h.data(), model.p(pre + "mlp.w1").data.data(), mlp1.data(), t_len, d, 4 * d);
        {
            const double* b1 = model.p(pre + "mlp.b1").data.data();
            for (int i = 0; i < t_len; ++i)
                for (int j = 0; j < 4 * d; ++j) {
                    double& v = mlp1[static_cast<size_t>(i) * 4 * d + j];
                    v = gelu_scalar(v + b1[j]);
                }
        }
        mm(mlp1.data(), model.p(pre + "mlp.w2").data.data(), proj.data(), t_len, 4 * d, d);
        {
            const double* b2 = model.p(pre + "mlp.b2").data.data();
            for (int i = 0; i < t_len; ++i)
                for (int j = 0; j < d; ++j)
                    x[static_cast<size_t>(i) * d + j] += proj[static_cast<size_t>(i) * d + j] + b2[j];
        }
        if (hook && hook->layer_index == l && hook->transform) {
            for (int i = 0; i < t_len; ++i)
                hook->transform(std::span<double>(x.data() + static_cast<size_t>(i) * d, static_cast<size_t>(d)), i);
        }
    }
}

std::vector<double> embed_tokens(const TinyModel& model, std::span<const int> tokens) {
    const int d = model.config.d_model;
    const int t_len = static_cast<int>(tokens.size());
    const Tensor& wte = model.p("wte");
    const Tensor& wpe = model.p("wpe");
    std::vector<double> x(static_cast<size_t>(t_len) * d);
    for (int i = 0; i < t_len; ++i)
        for (int j = 0; j < d; ++j)
            x[static_cast<size_t>(i) * d + j] =
                wte.data[static_cast<size_t>(tokens[i]) * d + j] + wpe.data[static_cast<size_t>(i) * d + j];
    return x;
}

}  // namespace

Tensor forward(const TinyModel& model, std::span<const int> tokens, const Hook* hook, bool last_only) {
    check_tokens(model, tokens);
    if (tokens.empty()) throw ValidationError("forward: empty token sequence");
    if (hook && (hook->layer_index < 0 || hook->layer_index >= model.config.n_layers))
        throw ValidationError("forward: hook layer out of range");
    const int d = model.config.d_model;
    const int t_len = static_cast<int>(tokens.size());
    const int vocab = model.config.vocab_size;

    std::vector<double> x = embed_tokens(model, tokens);
    run_layers(model, x, t_len, model.config.n_layers - 1, hook);

    std::vector<double> h(static_cast<size_t>(t_len) * d);
    ln_rows_raw(x.data(), model.p("lnf.g").data.data(), model.p("lnf.b").data.data(), h.data(), t_len, d);

    const int row0 = last_only ? t_len - 1 : 0;
    const int out_rows = last_only ? 1 : t_len;
    Tensor logits = Tensor::zeros({out_rows, vocab});
    mm(h.data() + static_cast<size_t>(row0) * d, model.p("head.w").data.data(), logits.data.data(),
       out_rows, d, vocab);
    const double* hb = model.p("head.b").data.data();
    for (int i = 0; i < out_rows; ++i)
        for (int j = 0; j < vocab; ++j) logits.data[static_cast<size_t>(i) * vocab + j] += hb[j];
    return logits;
}

Tensor forward_hidden(const TinyModel& model, std::span<const int> tokens, int upto_layer) {
    check_tokens(model, tokens);
    if (tokens.empty()) throw ValidationError("forward_hidden: empty token sequence");
    if (upto_layer < 0 || upto_layer >= model.config.n_layers)
        throw ValidationError("forward_hidden: layer out of range");
    const int d = model.config.d_model;
    const int t_len = static_cast<int>(tokens.size());
    std::vector<double> x = embed_tokens(model, tokens);
    run_layers(model, x, t_len, upto_layer, nullptr);
    return Tensor({t_len, d}, std::move(x));
}

std::vector<int> generate(const TinyModel& model, std::span<const int> prompt, const GenParams& params,
                          const Hook* hook) {
    if (prompt.empty()) throw ValidationError("generate: empty prompt");
    const bool greedy = params.mode == GenParams::Mode::greedy || params.temperature <= 0.0;
    Rng rng(params.seed);
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    for (int step = 0; step < params.max_new; ++step) {
        if (static_cast<int>(seq.size()) >= model.config.max_seq) break;
        Tensor logits = forward(model, seq, hook, /*last_only=*/true);
        const int vocab = model.config.vocab_size;
        int next = 0;
        if (greedy) {
            double best = logits.data[0];
            for (int j = 1; j < vocab; ++j)
                if (logits.data[static_cast<size_t>(j)] > best) {
                    best = logits.data[static_cast<size_t>(j)];
                    next = j;
                }
        } else {
            Tensor scaled = logits;
            for (double& v : scaled.data) v /= params.temperature;
            Tensor probs = softmax_rows(scaled);
            const double r = rng.uniform();
            double acc = 0.0;
            next = vocab - 1;
            for (int j = 0; j < vocab; ++j) {
                acc += probs.data[static_cast<size_t>(j)];
                if (r < acc) {
                    next = j;
                    break;
                }
            }
        }
        seq.push_back(next);
        out.push_back(next);
        if (next == params.eos_id) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// taped forward
// ---------------------------------------------------------------------------

Var TapedModel::v(const std::string& name) const {
    auto it = model->index.find(name);
    if (it == model->index.end()) throw ValidationError("TapedModel: unknown parameter " + name);
    return vars[static_cast<size_t>(it->second)];
}

TapedModel TapedModel::constants(Tape& tape, const TinyModel& m) {
    TapedModel tm;
    tm.model = &m;
    tm.vars.reserve(m.tensors.size());
    for (const auto& t : m.tensors) tm.vars.push_back(tape.constant(t));
    return tm;
}

TapedModel TapedModel::inputs(Tape& tape, const TinyModel& m) {
    TapedModel tm;
    tm.model = &m;
    tm.vars.reserve(m.tensors.size());
    for (const auto& t : m.tensors) tm.vars.push_back(tape.input(t));
    return tm;
}

Var embed_tape(Tape& tape, const TapedModel& tm, std::span<const int> tokens) {
    check_tokens(*tm.model, tokens);
    std::vector<int> tok(tokens.begin(), tokens.end());
    std::vector<int> pos(tokens.size());
    for (size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
    return tape.add(tape.gather_rows(tm.v("wte"), tok), tape.gather_rows(tm.v("wpe"), pos));
}

Var layer_tape(Tape& tape, const TapedModel& tm, Var x, int layer) {
    const int d = tm.model->config.d_model;
    const int heads = tm.model->config.n_heads;
    const int hd = d / heads;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::string pre = "l" + std::to_string(layer) + ".";

    Var h = tape.layer_norm_rows(x, tm.v(pre + "ln1.g"), tm.v(pre + "ln1.b"));
    Var qkv = tape.add_row(tape.matmul(h, tm.v(pre + "attn.wqkv")), tm.v(pre + "attn.bqkv"));
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int head = 0; head < heads; ++head) {
        Var q = tape.slice_cols(qkv, head * hd, (head + 1) * hd);
        Var k = tape.slice_cols(qkv, d + head * hd, d + (head + 1) * hd);
        Var v = tape.slice_cols(qkv, 2 * d + head * hd, 2 * d + (head + 1) * hd);
        Var scores = tape.scale(tape.matmul_nt(q, k), inv_sqrt_hd);
        Var probs = tape.causal_softmax_rows(scores);
        head_outs.push_back(tape.matmul(probs, v));
    }
    Var attn = tape.concat_cols(head_outs);
    Var proj = tape.add_row(tape.matmul(attn, tm.v(pre + "attn.wo")), tm.v(pre + "attn.bo"));
    Var x2 = tape.add(x, proj);
    Var h2 = tape.layer_norm_rows(x2, tm.v(pre + "ln2.g"), tm.v(pre + "ln2.b"));
    Var m1 = tape.gelu(tape.add_row(tape.matmul(h2, tm.v(pre + "mlp.w1")), tm.v(pre + "mlp.b1")));
    Var m2 = tape.add_row(tape.matmul(m1, tm.v(pre + "mlp.w2")), tm.v(pre + "mlp.b2"));
    return tape.add(x2, m2);
}

Var head_tape(Tape& tape, const TapedModel& tm, Var x, const std::vector<int>& rows) {
    Var h = tape.layer_norm_rows(x, tm.v("lnf.g"), tm.v("lnf.b"));
    Var picked = tape.gather_rows(h, rows);
    return tape.add_row(tape.matmul(picked, tm.v("head.w")), tm.v("head.b"));
}

// ---------------------------------------------------------------------------
// pretraining
// ---------------------------------------------------------------------------

TinyModel pretrain_base(const ModelConfig& config, const std::vector<std::vector<int>>& corpus,
                        const PretrainHyper& hyper, const std::vector<PretrainProbeItem>& probe,
                        const Tokenizer& tok, PretrainReport* report) {
    if (corpus.empty()) throw ValidationError("pretrain_base: empty corpus");
    TinyModel model = init_model(config);

    std::vector<Tensor*> params;
    for (auto& t : model.tensors) params.push_back(&t);
    Adam opt(hyper.lr);
    opt.init(params);

    Rng shuffle_rng(derive_seed(hyper.seed, 0xC0FFEE));
    std::vector<int> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    auto probe_accuracy = [&]() {
        if (probe.empty()) return 1.0;
        int good = 0;
        GenParams gp;
        gp.mode = GenParams::Mode::greedy;
        gp.max_new = 16;
        gp.eos_id = tok.eos();
        for (const auto& item : probe) {
            std::vector<int> cont = generate(model, item.prompt, gp);
            if (contains_normalized(tok.detokenize(cont), item.expect)) ++good;
        }
        return static_cast<double>(good) / static_cast<double>(probe.size());
    };

    PretrainReport rep;
    int64_t step = 0;
    for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hyper.batch)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(hyper.batch));
            Tape tape;
            TapedModel tm = TapedModel::inputs(tape, model);
            std::vector<Var> losses;
            for (size_t s = start; s < stop; ++s) {
                const auto& seq = corpus[static_cast<size_t>(order[s])];
                if (seq.size() < 2) throw ValidationError("pretrain_base: sequence too short");
                Var x = embed_tape(tape, tm, seq);
                for (int l = 0; l < config.n_layers; ++l) x = layer_tape(tape, tm, x, l);
                std::vector<int> rows(seq.size() - 1);
                std::vector<int> targets(seq.size() - 1);
                for (size_t i = 0; i + 1 < seq.size(); ++i) {
                    rows[i] = static_cast<int>(i);
                    targets[i] = seq[i + 1];
                }
                Var logits = head_tape(tape, tm, x, rows);
                losses.push_back(
                    tape.cross_entropy(logits, targets, std::vector<uint8_t>(targets.size(), 1)));
            }
            Var loss = tape.mean(losses);
            const double loss_v = tape.scalar(loss);
            ++step;
            if (!std::isfinite(loss_v))
                throw NumericError("pretrain_base: non-finite loss at step " + std::to_string(step));
            auto grads = tape.gradients(loss, tm.vars);
            opt.step(params, grads);
            epoch_loss += loss_v;
            ++batches;
        }
        epoch_loss /= std::max(1, batches);
        rep.epoch_loss.push_back(epoch_loss);
        rep.epochs_run = epoch + 1;
        if (epoch_loss <= hyper.loss_stop) {
            rep.probe_acc = probe_accuracy();
            if (rep.probe_acc >= hyper.target_probe_acc) break;
        }
    }
    if (rep.probe_acc == 0.0) rep.probe_acc = probe_accuracy();
    if (report) *report = rep;
    return model;
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

namespace {

constexpr uint32_t kModelVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("checkpoint: truncated file");
    return v;
}

uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_model(const TinyModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_model: cannot open " + path);
    os.write("TINY", 4);
    write_u32(os, kModelVersion);
    write_u32(os, static_cast<uint32_t>(model.config.vocab_size));
    write_u32(os, static_cast<uint32_t>(model.config.d_model));
    write_u32(os, static_cast<uint32_t>(model.config.n_layers));
    write_u32(os, static_cast<uint32_t>(model.config.n_heads));
    write_u32(os, static_cast<uint32_t>(model.config.max_seq));
    write_u64(os, model.config.seed);
    for (size_t i = 0; i < model.tensors.size(); ++i) {
        const std::string& name = model.names[i];
        const Tensor& t = model.tensors[i];
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int dim : t.shape) write_u32(os, static_cast<uint32_t>(dim));
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!os) throw IoError("save_model: write failed for " + path);
}

TinyModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_model: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "TINY", 4) != 0)
        throw FormatError("load_model: bad magic, not a base checkpoint");
    if (read_u32(is) != kModelVersion) throw FormatError("load_model: unsupported version");
    ModelConfig c;
    c.vocab_size = static_cast<int>(read_u32(is));
    c.d_model = static_cast<int>(read_u32(is));
    c.n_layers = static_cast<int>(read_u32(is));
    c.n_heads = static_cast<int>(read_u32(is));
    c.max_seq = static_cast<int>(read_u32(is));
    c.seed = read_u64(is);
    c.validate();

    TinyModel m;
    m.config = c;
    for (auto& [name, shape] : declared_tensors(c)) {
        const uint32_t name_len = read_u32(is);
        std::string got(name_len, '\0');
        if (!is.read(got.data(), name_len)) throw FormatError("load_model: truncated name");
        if (got != name) throw FormatError("load_model: unexpected tensor " + got + ", wanted " + name);
        const uint32_t rank = read_u32(is);
        if (rank != shape.size()) throw FormatError("load_model: rank mismatch for " + name);
        int64_t n = 1;
        std::vector<int> dims(rank);
        for (uint32_t r = 0; r < rank; ++r) {
            dims[r] = static_cast<int>(read_u32(is));
            n *= dims[r];
        }
        if (dims != shape) throw FormatError("load_model: shape mismatch for " + name);
        Tensor t = Tensor::zeros(dims);
        if (!is.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(static_cast<size_t>(n) * sizeof(double))))
            throw FormatError("load_model: truncated tensor data for " + name);
        m.index[name] = static_cast<int>(m.tensors.size());
        m.names.push_back(name);
        m.tensors.push_back(std::move(t));
    }
    return m;
}

}  // namespace grft
