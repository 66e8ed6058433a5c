#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "grft/tape.hpp"
#include "grft/tensor.hpp"
#include "grft/tokenizer.hpp"

namespace grft {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_layers = 4;
    int n_heads = 4;
    int max_seq = 64;
    uint64_t seed = 0;

    void validate() const;
};

// Residual-stream hook: transform is applied in place to the output of layer
// `layer_index` at every token position, in position order.
struct Hook {
    int layer_index = 0;
    std::function<void(std::span<double>, int)> transform;
};

// Frozen-able decoder-only transformer. Parameters live in a fixed-order
// named list so checkpoints and checksums are reproducible.
struct TinyModel {
    ModelConfig config;
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
    std::unordered_map<std::string, int> index;

    const Tensor& p(const std::string& name) const;
    Tensor& p(const std::string& name);
    int64_t param_count() const;
    uint64_t checksum() const;
};

TinyModel init_model(const ModelConfig& config);

// Causal LM forward. Returns [T x V] logits, or only the last row [1 x V]
// when last_only is set. The hook, when present, edits the residual stream
// emitted by its layer before the next layer consumes it.
Tensor forward(const TinyModel& model, std::span<const int> tokens, const Hook* hook = nullptr,
               bool last_only = false);

// Residual stream after layer `upto_layer`, before any hook. [T x d]
Tensor forward_hidden(const TinyModel& model, std::span<const int> tokens, int upto_layer);

struct GenParams {
    enum class Mode { greedy, sample };
    Mode mode = Mode::greedy;
    double temperature = 1.0;
    int max_new = 32;
    uint64_t seed = 0;
    int eos_id = 2;
};

// Autoregressive continuation (continuation tokens only, EOS included when
// produced). Greedy ties break toward the lowest token id; temperature <= 0
// is treated as greedy.
std::vector<int> generate(const TinyModel& model, std::span<const int> prompt, const GenParams& params,
                          const Hook* hook = nullptr);

// ---------------------------------------------------------------------------
// taped forward (training paths)
// ---------------------------------------------------------------------------

// Model parameters registered on a tape, either trainable or frozen.
struct TapedModel {
    const TinyModel* model = nullptr;
    std::vector<Var> vars;

    Var v(const std::string& name) const;
    static TapedModel constants(Tape& tape, const TinyModel& m);
    static TapedModel inputs(Tape& tape, const TinyModel& m);
};

// token+position embedding rows, [T x d]
Var embed_tape(Tape& tape, const TapedModel& tm, std::span<const int> tokens);

// one transformer block
Var layer_tape(Tape& tape, const TapedModel& tm, Var x, int layer);

// final layer norm + output head, evaluated only at `rows`
Var head_tape(Tape& tape, const TapedModel& tm, Var x, const std::vector<int>& rows);

// ---------------------------------------------------------------------------
// base-model pretraining
// ---------------------------------------------------------------------------

struct PretrainHyper {
    double lr = 1e-3;
    int max_epochs = 80;
    int batch = 32;
    double target_probe_acc = 0.95;
    double loss_stop = 0.05;
    uint64_t seed = 0;
};

struct PretrainProbeItem {
    std::vector<int> prompt;
    std::string expect;  // answer object; checked by normalized containment
};

struct PretrainReport {
    std::vector<double> epoch_loss;
    int epochs_run = 0;
    double probe_acc = 0.0;
};

// Next-token training of all base parameters; stops early once greedy
// accuracy on the probe set reaches the target and the loss has settled.
TinyModel pretrain_base(const ModelConfig& config, const std::vector<std::vector<int>>& corpus,
                        const PretrainHyper& hyper, const std::vector<PretrainProbeItem>& probe,
                        const Tokenizer& tok, PretrainReport* report = nullptr);

// ---------------------------------------------------------------------------
// checkpoint io (magic "TINY")
// ---------------------------------------------------------------------------

void save_model(const TinyModel& model, const std::string& path);
TinyModel load_model(const std::string& path);

}  // namespace grft
