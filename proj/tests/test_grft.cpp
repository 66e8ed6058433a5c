#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "grft/grft.hpp"
#include "grft/model.hpp"

using namespace grft;

namespace {

GrftParams random_params(int d, int r, uint64_t seed, double scl = 0.3) {
    GrftConfig cfg;
    cfg.d = d;
    cfg.rank = r;
    cfg.seed = seed;
    GrftParams p = init_grft(cfg);
    Rng rng(seed + 100);
    for (Tensor* t : p.all())
        for (double& v : t->data) v = scl * rng.normal();
    return p;
}

std::vector<double> random_hidden(int d, Rng& rng, double scl = 1.0) {
    std::vector<double> h(static_cast<size_t>(d));
    for (double& v : h) v = scl * rng.normal();
    return h;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("gate: zero weights, bias-only, hand-checked scalar") {
    GrftConfig cfg;
    cfg.d = 4;
    cfg.rank = 2;
    GrftParams p = init_grft(cfg);
    Rng rng(1);
    std::vector<double> h = random_hidden(4, rng);
    CHECK(gate(p, h) == doctest::Approx(0.5));

    p.b_g.data[0] = 10.0;
    CHECK(gate(p, h) == doctest::Approx(0.9999546).epsilon(1e-6));

    GrftConfig c2;
    c2.d = 2;
    c2.rank = 1;
    GrftParams p2 = init_grft(c2);
    p2.w_g = Tensor({1, 2}, {1.0, -1.0});
    p2.b_g.data[0] = 0.0;
    std::vector<double> h2{2.0, 1.0};
    CHECK(gate(p2, h2) == doctest::Approx(0.73105857863).epsilon(1e-9));

    std::vector<double> wrong(3, 0.0);
    CHECK_THROWS_AS(gate(p2, wrong), ValidationError);
}

TEST_CASE("intervention: vanishing, linear at origin, hand matrix case") {
    GrftParams p = random_params(5, 2, 3);
    p.w = p.r;
    std::fill(p.b.data.begin(), p.b.data.end(), 0.0);
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> h = random_hidden(5, rng, 2.0);
        for (double v : intervention(p, h)) CHECK(v == 0.0);
    }

    // h = 0 gives R^T b
    GrftParams q = random_params(3, 2, 9);
    std::vector<double> zero(3, 0.0);
    std::vector<double> got = intervention(q, zero);
    for (int j = 0; j < 3; ++j) {
        double want = 0.0;
        for (int i = 0; i < 2; ++i) want += q.b.data[i] * q.r.at(i, j);
        CHECK(got[static_cast<size_t>(j)] == doctest::Approx(want).epsilon(1e-12));
    }

    // d=2, r=1, R=[[1,0]], W=[[0,1]], b=[0], h=[3,5]: W h=5, R h=3, R^T(5-3)=[2,0]
    GrftConfig c;
    c.d = 2;
    c.rank = 1;
    GrftParams hand = init_grft(c);
    hand.r = Tensor({1, 2}, {1.0, 0.0});
    hand.w = Tensor({1, 2}, {0.0, 1.0});
    hand.b = Tensor({1}, {0.0});
    std::vector<double> h{3.0, 5.0};
    std::vector<double> out = intervention(hand, h);
    CHECK(out[0] == doctest::Approx(2.0));
    CHECK(out[1] == doctest::Approx(0.0));
}

TEST_CASE("grft_apply: identity at W=R, half-strength gate, composed oracle") {
    for (GrftMode mode : {GrftMode::grft, GrftMode::reft_no_gate, GrftMode::grft_no_gate_loss}) {
        GrftParams p = random_params(6, 3, 5);
        p.w = p.r;
        std::fill(p.b.data.begin(), p.b.data.end(), 0.0);
        Rng rng(6);
        for (int trial = 0; trial < 50; ++trial) {
            Tensor h = Tensor::zeros({6});
            for (double& v : h.data) v = 3.0 * rng.normal();
            Tensor out = grft_apply(p, h, mode);
            for (int j = 0; j < 6; ++j) CHECK(out.data[j] == h.data[j]);  // bit-exact
        }
    }

    // zero gate weights: output = h + 0.5 * intervention
    GrftParams p = random_params(6, 2, 7);
    p.w_g = Tensor::zeros({1, 6});
    p.b_g = Tensor::zeros({1});
    Rng rng(8);
    Tensor h = Tensor::zeros({6});
    for (double& v : h.data) v = rng.normal();
    Tensor out = grft_apply(p, h, GrftMode::grft);
    std::vector<double> delta = intervention(p, std::span<const double>(h.data.data(), 6));
    for (int j = 0; j < 6; ++j)
        CHECK(out.data[j] == doctest::Approx(h.data[j] + 0.5 * delta[j]).epsilon(1e-12));

    // compose the two hand oracles: gate sigma(1), intervention [2,0]
    GrftConfig c;
    c.d = 2;
    c.rank = 1;
    GrftParams hand = init_grft(c);
    hand.r = Tensor({1, 2}, {1.0, 0.0});
    hand.w = Tensor({1, 2}, {0.0, 1.0});
    hand.w_g = Tensor({1, 2}, {1.0, -1.0});
    Tensor h2({2}, {3.0, 5.0});
    // W_g h = -2, gate = sigma(-2)
    const double g = 1.0 / (1.0 + std::exp(2.0));
    Tensor out2 = grft_apply(hand, h2, GrftMode::grft);
    CHECK(std::fabs(out2.data[0] - (3.0 + g * 2.0)) < 1e-9);
    CHECK(std::fabs(out2.data[1] - 5.0) < 1e-9);

    // definitional decomposition: apply == h + gate * intervention, bitwise
    GrftParams pr = random_params(8, 3, 21);
    Rng rng2(22);
    Tensor h3 = Tensor::zeros({8});
    for (double& v : h3.data) v = rng2.normal();
    const double gv = gate(pr, std::span<const double>(h3.data.data(), 8));
    std::vector<double> dv = intervention(pr, std::span<const double>(h3.data.data(), 8));
    Tensor out3 = grft_apply(pr, h3, GrftMode::grft);
    for (int j = 0; j < 8; ++j) CHECK(out3.data[j] == h3.data[j] + gv * dv[static_cast<size_t>(j)]);
}

TEST_CASE("param_count: table values and instance enumeration") {
    ParamCount big = param_count(4096, 4);
    CHECK(big.gate == 4097);
    CHECK(big.intervention == 32772);
    CHECK(big.total == 36869);

    ParamCount tiny = param_count(1, 1);
    CHECK(tiny.gate == 2);
    CHECK(tiny.intervention == 3);
    CHECK(tiny.total == 5);

    ParamCount mid = param_count(64, 4);
    CHECK(mid.total == 581);
    GrftConfig cfg;
    cfg.d = 64;
    cfg.rank = 4;
    GrftParams inst = init_grft(cfg);
    CHECK(inst.count() == mid.total);

    CHECK_THROWS_AS(param_count(0, 1), ValidationError);
}

TEST_CASE("gate monotonicity along a positive gate direction") {
    GrftParams p = random_params(6, 2, 31);
    Rng rng(32);
    std::vector<double> u = random_hidden(6, rng);
    double wu = 0.0;
    for (int j = 0; j < 6; ++j) wu += p.w_g.data[j] * u[static_cast<size_t>(j)];
    if (wu < 0.0) {
        for (double& v : u) v = -v;
    }
    std::vector<double> h = random_hidden(6, rng);
    double prev = -1.0;
    for (int step = 0; step <= 10; ++step) {
        std::vector<double> probe = h;
        for (int j = 0; j < 6; ++j) probe[static_cast<size_t>(j)] += 0.5 * step * u[static_cast<size_t>(j)];
        const double g = gate(p, probe);
        CHECK(g > prev);
        prev = g;
    }
}

TEST_CASE("low-rank residue: edits span at most r dimensions") {
    const int d = 24, r = 3;
    GrftParams p = random_params(d, r, 41);
    Rng rng(42);
    const int n = 200;
    Tensor edits = Tensor::zeros({n, d});
    for (int i = 0; i < n; ++i) {
        Tensor h = Tensor::zeros({d});
        for (double& v : h.data) v = 2.0 * rng.normal();
        Tensor out = grft_apply(p, h, GrftMode::grft);
        for (int j = 0; j < d; ++j) edits.at(i, j) = out.data[j] - h.data[j];
    }
    CHECK(numerical_rank(edits, 1e-8) <= r);
}

TEST_CASE("make_hook: identity params, gate range, sensitivity to R") {
    ModelConfig mc;
    mc.vocab_size = 40;
    mc.d_model = 32;
    mc.n_layers = 3;
    mc.n_heads = 4;
    mc.max_seq = 24;
    mc.seed = 51;
    TinyModel model = init_model(mc);
    Rng rng(52);
    std::vector<int> toks(10);
    for (int& t : toks) t = static_cast<int>(rng.below(40));

    GrftConfig cfg;
    cfg.d = mc.d_model;
    cfg.rank = 4;
    cfg.layer_index = 1;
    cfg.seed = 53;
    GrftParams p = init_grft(cfg);
    p.w = p.r;  // identity edit

    auto trace = std::make_shared<GateTrace>();
    Hook hook = make_hook(p, cfg, mc.n_layers, trace);
    Tensor base = forward(model, toks);
    Tensor hooked = forward(model, toks, &hook);
    for (size_t i = 0; i < base.data.size(); ++i) CHECK(base.data[i] == hooked.data[i]);
    REQUIRE(trace->values.size() == toks.size());
    for (double g : trace->values) {
        CHECK(g > 0.0);
        CHECK(g < 1.0);
    }

    // perturbing R changes the logits
    GrftParams q = p;
    for (double& v : q.r.data) v += 0.1;
    Hook hook2 = make_hook(q, cfg, mc.n_layers);
    Tensor moved = forward(model, toks, &hook2);
    bool changed = false;
    for (size_t i = 0; i < base.data.size(); ++i) changed = changed || moved.data[i] != base.data[i];
    CHECK(changed);

    GrftConfig bad = cfg;
    bad.layer_index = mc.n_layers;
    CHECK_THROWS_AS(make_hook(p, bad, mc.n_layers), ValidationError);
}

TEST_CASE("taped grft edit agrees with the plain edit") {
    // identical math; the two code paths may differ by fused-multiply-add
    // rounding in the last bit, hence the 1-ulp-scale tolerance
    for (GrftMode mode : {GrftMode::grft, GrftMode::reft_no_gate, GrftMode::grft_no_gate_loss}) {
        const int d = 16, r = 4, t_len = 7;
        GrftParams p = random_params(d, r, 61);
        Rng rng(62);
        Tensor rows = Tensor::zeros({t_len, d});
        for (double& v : rows.data) v = rng.normal();

        Tape tape;
        GrftVars gv = grft_inputs(tape, p);
        Var gates;
        Var edited = grft_apply_tape(tape, gv, tape.constant(rows), mode, &gates);

        for (int i = 0; i < t_len; ++i) {
            std::vector<double> h(rows.data.begin() + static_cast<size_t>(i) * d,
                                  rows.data.begin() + static_cast<size_t>(i + 1) * d);
            double g = -1.0;
            grft_apply_inplace(p, mode, h, &g);
            for (int j = 0; j < d; ++j)
                CHECK(tape.value(edited).at(i, j) == doctest::Approx(h[static_cast<size_t>(j)]).epsilon(1e-14));
            if (mode != GrftMode::reft_no_gate)
                CHECK(tape.value(gates).data[static_cast<size_t>(i)] ==
                      doctest::Approx(g).epsilon(1e-14));
        }
    }
}

TEST_CASE("grft checkpoint: round trip, truncation, dimension mismatch") {
    GrftConfig cfg;
    cfg.d = 12;
    cfg.rank = 3;
    cfg.layer_index = 2;
    cfg.mode = GrftMode::grft_no_gate_loss;
    cfg.seed = 71;
    GrftParams p = random_params(12, 3, 71);
    const std::string path = temp_path("grft_test_params.ckpt");
    save_grft(p, cfg, path);

    auto [q, qcfg] = load_grft(path);
    CHECK(qcfg.d == cfg.d);
    CHECK(qcfg.rank == cfg.rank);
    CHECK(qcfg.layer_index == cfg.layer_index);
    CHECK(qcfg.mode == cfg.mode);
    auto pa = p.all();
    auto qa = q.all();
    for (size_t t = 0; t < pa.size(); ++t) {
        REQUIRE(pa[t]->data.size() == qa[t]->data.size());
        for (size_t i = 0; i < pa[t]->data.size(); ++i) CHECK(pa[t]->data[i] == qa[t]->data[i]);
    }

    CHECK_THROWS_WITH_AS(load_grft(path, 64), doctest::Contains("expected d=64"), FormatError);

    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
    CHECK_THROWS_AS(load_grft(path), FormatError);

    {
        std::ofstream os(path, std::ios::binary);
        os.write("NOPE", 4);
    }
    CHECK_THROWS_AS(load_grft(path), FormatError);
    std::filesystem::remove(path);
}
