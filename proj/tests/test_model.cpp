#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "grft/model.hpp"
#include "grft/tokenizer.hpp"

using namespace grft;

namespace {

ModelConfig small_config(uint64_t seed = 1) {
    ModelConfig c;
    c.vocab_size = 40;
    c.d_model = 32;
    c.n_layers = 3;
    c.n_heads = 4;
    c.max_seq = 24;
    c.seed = seed;
    return c;
}

std::vector<int> some_tokens(const ModelConfig& c, int len, uint64_t seed) {
    Rng rng(seed);
    std::vector<int> t(static_cast<size_t>(len));
    for (int& v : t) v = static_cast<int>(rng.below(static_cast<uint64_t>(c.vocab_size)));
    return t;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("init_model: determinism and seed sensitivity") {
    ModelConfig c = small_config(5);
    TinyModel a = init_model(c);
    TinyModel b = init_model(c);
    CHECK(a.checksum() == b.checksum());

    c.seed = 6;
    TinyModel d = init_model(c);
    CHECK(a.checksum() != d.checksum());
}

TEST_CASE("init_model: parameter count matches the declared shapes") {
    ModelConfig c;
    c.vocab_size = 128;
    c.d_model = 64;
    c.n_layers = 4;
    c.n_heads = 4;
    c.max_seq = 64;
    c.seed = 0;
    TinyModel m = init_model(c);

    // independent closed-form enumeration of the declared tensors
    const int64_t V = c.vocab_size, d = c.d_model, L = c.n_layers, S = c.max_seq;
    const int64_t per_layer = 2 * d                 // ln1
                              + d * 3 * d + 3 * d   // qkv
                              + d * d + d           // attn out
                              + 2 * d               // ln2
                              + d * 4 * d + 4 * d   // mlp in
                              + 4 * d * d + d;      // mlp out
    const int64_t expect = V * d + S * d + L * per_layer + 2 * d + d * V + V;
    CHECK(m.param_count() == expect);
}

TEST_CASE("forward: identity hook is bit-identical to no hook") {
    TinyModel m = init_model(small_config());
    std::vector<int> toks = some_tokens(m.config, 12, 3);

    Tensor plain = forward(m, toks);
    Hook id;
    id.layer_index = 1;
    id.transform = [](std::span<double>, int) {};
    Tensor hooked = forward(m, toks, &id);
    REQUIRE(plain.data.size() == hooked.data.size());
    for (size_t i = 0; i < plain.data.size(); ++i) CHECK(plain.data[i] == hooked.data[i]);
}

TEST_CASE("forward: hook locality in layers and positions") {
    TinyModel m = init_model(small_config(11));
    std::vector<int> toks = some_tokens(m.config, 10, 7);
    const int layer = 1, pos = 6;

    Tensor base_logits = forward(m, toks);
    Tensor base_hidden = forward_hidden(m, toks, layer);

    Hook bump;
    bump.layer_index = layer;
    bump.transform = [pos](std::span<double> h, int p) {
        if (p == pos)
            for (double& v : h) v += 0.25;
    };
    Tensor edited_logits = forward(m, toks, &bump);

    // positions before the edited one see identical logits at every layer above
    const int vocab = m.config.vocab_size;
    for (int t = 0; t < pos; ++t)
        for (int j = 0; j < vocab; ++j) CHECK(edited_logits.at(t, j) == base_logits.at(t, j));
    // and something must have changed at the edited position
    bool changed = false;
    for (int j = 0; j < vocab; ++j) changed = changed || edited_logits.at(pos, j) != base_logits.at(pos, j);
    CHECK(changed);

    // the pre-hook stream is untouched by definition
    Tensor hidden_again = forward_hidden(m, toks, layer);
    for (size_t i = 0; i < base_hidden.data.size(); ++i) CHECK(hidden_again.data[i] == base_hidden.data[i]);
}

TEST_CASE("forward: input validation") {
    TinyModel m = init_model(small_config());
    std::vector<int> long_seq = some_tokens(m.config, m.config.max_seq + 1, 1);
    CHECK_THROWS_AS(forward(m, long_seq), ValidationError);
    std::vector<int> bad{0, m.config.vocab_size};
    CHECK_THROWS_AS(forward(m, bad), ValidationError);
}

TEST_CASE("taped forward matches the plain forward bit-exactly") {
    TinyModel m = init_model(small_config(21));
    std::vector<int> toks = some_tokens(m.config, 9, 13);
    Tensor plain = forward(m, toks);

    Tape tape;
    TapedModel tm = TapedModel::constants(tape, m);
    Var x = embed_tape(tape, tm, toks);
    for (int l = 0; l < m.config.n_layers; ++l) x = layer_tape(tape, tm, x, l);
    std::vector<int> rows(toks.size());
    for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
    Var logits = head_tape(tape, tm, x, rows);

    const Tensor& taped = tape.value(logits);
    REQUIRE(taped.data.size() == plain.data.size());
    for (size_t i = 0; i < plain.data.size(); ++i) CHECK(taped.data[i] == plain.data[i]);
}

TEST_CASE("generate: determinism, temperature zero, eos handling") {
    TinyModel m = init_model(small_config(31));
    std::vector<int> prompt = some_tokens(m.config, 4, 17);

    GenParams greedy;
    greedy.mode = GenParams::Mode::greedy;
    greedy.max_new = 8;
    std::vector<int> g1 = generate(m, prompt, greedy);
    std::vector<int> g2 = generate(m, prompt, greedy);
    CHECK(g1 == g2);

    GenParams zero_temp;
    zero_temp.mode = GenParams::Mode::sample;
    zero_temp.temperature = 0.0;
    zero_temp.max_new = 8;
    zero_temp.seed = 99;
    CHECK(generate(m, prompt, zero_temp) == g1);

    GenParams sampled;
    sampled.mode = GenParams::Mode::sample;
    sampled.temperature = 1.0;
    sampled.max_new = 8;
    sampled.seed = 4242;
    std::vector<int> s1 = generate(m, prompt, sampled);
    std::vector<int> s2 = generate(m, prompt, sampled);
    CHECK(s1 == s2);

    CHECK_THROWS_AS(generate(m, std::vector<int>{}, greedy), ValidationError);
}

TEST_CASE("tokenizer: round trip over the closed vocabulary") {
    Tokenizer tok = Tokenizer::build({"alpha", "beta", "gamma", "is", "the", ".", "?"});
    Rng rng(8);
    const auto& words = tok.words();
    for (int trial = 0; trial < 50; ++trial) {
        std::string s;
        const int len = 1 + static_cast<int>(rng.below(8));
        for (int i = 0; i < len; ++i) {
            if (i) s.push_back(' ');
            s += words[5 + rng.below(words.size() - 5)];  // skip specials
        }
        CHECK(tok.detokenize(tok.tokenize(s)) == s);
    }
    CHECK(tok.id_of("nonsense") == tok.unk());
}

TEST_CASE("pretrain_base: overfits a tiny echo corpus") {
    Tokenizer tok = Tokenizer::build({"q", "a", "red", "blue", "green", ":"});
    ModelConfig c;
    c.vocab_size = tok.vocab_size();
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.max_seq = 12;
    c.seed = 3;

    // three one-token facts in a fixed QA shape
    std::vector<std::pair<std::string, std::string>> facts = {
        {"q 1", "red"}, {"q 2", "blue"}, {"q 3", "green"}};
    std::vector<std::vector<int>> corpus;
    std::vector<PretrainProbeItem> probe;
    for (int rep = 0; rep < 4; ++rep) {
        for (size_t i = 0; i < facts.size(); ++i) {
            std::vector<int> seq{tok.bos(), tok.id_of("q"), tok.id_of(":"),
                                 static_cast<int>(5 + i),  // distinct "question" token
                                 tok.id_of("a"), tok.id_of(":"), tok.id_of(facts[i].second), tok.eos()};
            corpus.push_back(seq);
        }
    }
    for (size_t i = 0; i < facts.size(); ++i) {
        PretrainProbeItem item;
        item.prompt = {tok.bos(), tok.id_of("q"), tok.id_of(":"), static_cast<int>(5 + i),
                       tok.id_of("a"), tok.id_of(":")};
        item.expect = facts[i].second;
        probe.push_back(item);
    }

    PretrainHyper hyper;
    hyper.lr = 3e-3;
    hyper.max_epochs = 200;
    hyper.batch = 6;
    hyper.seed = 7;
    hyper.loss_stop = 0.05;
    PretrainReport rep;
    TinyModel m = pretrain_base(c, corpus, hyper, probe, tok, &rep);

    REQUIRE(rep.epoch_loss.size() >= 2);
    CHECK(rep.epoch_loss.back() < rep.epoch_loss.front());
    CHECK(rep.probe_acc >= 0.95);

    GenParams gp;
    gp.max_new = 4;
    gp.eos_id = tok.eos();
    std::vector<int> cont = generate(m, probe[0].prompt, gp);
    CHECK(contains_normalized(tok.detokenize(cont), "red"));
}

TEST_CASE("model checkpoint: bit-exact round trip and format errors") {
    TinyModel m = init_model(small_config(77));
    const std::string path = temp_path("grft_test_model.ckpt");
    save_model(m, path);
    TinyModel back = load_model(path);
    CHECK(back.checksum() == m.checksum());
    CHECK(back.config.vocab_size == m.config.vocab_size);
    CHECK(back.config.seed == m.config.seed);

    // truncation
    {
        std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
        CHECK_THROWS_AS(load_model(path), FormatError);
    }
    // bad magic
    {
        std::ofstream os(path, std::ios::binary);
        os.write("JUNKJUNKJUNK", 12);
    }
    CHECK_THROWS_AS(load_model(path), FormatError);
    std::filesystem::remove(path);
}
