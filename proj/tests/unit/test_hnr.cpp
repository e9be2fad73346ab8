#include "hrx/hnr.hpp"
#include "hrx/rng.hpp"
#include "oracles/oracles.hpp"
#include "support/hnr_gradcheck.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace hrx;
using namespace hrx::hnr;
using diff::Array;
using diff::Graph;

namespace {

phy::GridSpec toy_grid() {
    phy::GridSpec g;
    g.fft_size = 20;
    g.guard_left = 2;
    g.guard_right = 2;
    g.num_symbols = 5;
    g.pilot_symbols = {2};
    return g;
}

Link toy_link() {
    return Link(toy_grid(), phy::Constellation::make(4),
                std::make_shared<Code>(fec::build_regular_ldpc(128, 3, 6, 1), "regular:128,3,6,seed=1"), 7);
}

HnrConfig tiny() {
    HnrConfig c;
    c.num_blocks = 1;
    c.num_heads = 2;
    c.embed_dim = 8;
    c.ffn_dim = 8;
    c.gnn_embed_dim = 4;
    c.gnn_msg_dim = 4;
    c.gnn_hidden = 6;
    c.cn_mlp_layers = 3;
    c.vn_mlp_layers = 2;
    c.edge_feature_dim = 3;
    c.mp_iters = 2;
    return c;
}

HnrModel bound_model(const HnrConfig& cfg, const Link& link, std::uint64_t seed = 1) {
    HnrModel m(cfg, 2, link.bits_per_symbol(), seed);
    m.fingerprint = fingerprint(cfg, link, 2);
    return m;
}

TrainSettings tiny_settings() {
    TrainSettings s;
    s.scale = 2e-5;  // stage 1: 8 steps, stage 2: 3+25+25 steps at batch 4
    s.batch = 4;
    s.channel.model = channel::Model::FlatRayleigh;
    s.channel.speed_max_kmh = 0;
    s.val_frames = 8;
    s.lr_multiplier = 10;
    return s;
}

oracle::ParamCountInputs count_inputs(const HnrConfig& c, std::size_t num_rx, std::size_t bps) {
    return {num_rx,        bps,          c.num_blocks, c.embed_dim,     c.ffn_dim,       c.gnn_embed_dim,
            c.gnn_msg_dim, c.gnn_hidden, c.cn_mlp_layers, c.vn_mlp_layers, c.edge_feature_dim};
}

fec::ParityCheckMatrix hamming() {
    return fec::ParityCheckMatrix(7, {{3, 4, 5, 6}, {1, 2, 5, 6}, {0, 2, 4, 6}});
}

std::vector<double> random_llrs(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g(1.0, 3.0);
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

}  // namespace

TEST_CASE("configuration") {
    CHECK_NOTHROW(HnrConfig{}.validate());
    HnrConfig c;
    c.embed_dim = 130;
    CHECK_THROWS(c.validate());
    c = {};
    c.gnn_hidden = 0;
    CHECK_THROWS(c.validate());
    CHECK(HnrConfig{}.canonical() != tiny().canonical());
}

TEST_CASE("parameter count") {
    const HnrConfig def;
    CHECK(parameter_count(def, 2, 6) == oracle::kDefaultParams);
    const auto in = count_inputs(def, 2, 6);
    CHECK(oracle::transformer_params(in) == oracle::kDefaultTransformerParams);
    CHECK(oracle::gnn_params(in) == oracle::kDefaultGnnParams);
    for (const auto& cfg : {def, tiny()}) {
        for (std::size_t rx : {1u, 2u, 4u})
            for (unsigned bps : {2u, 6u}) {
                const HnrModel m(cfg, rx, bps, 3);
                const auto want = oracle::transformer_params(count_inputs(cfg, rx, bps)) +
                                  oracle::gnn_params(count_inputs(cfg, rx, bps));
                CHECK(m.params.scalar_count() == want);
                CHECK(parameter_count(cfg, rx, bps) == want);
            }
    }
}

TEST_CASE("fingerprint") {
    const auto link = toy_link();
    const auto fp = fingerprint(tiny(), link, 2);
    CHECK(fp == fingerprint(tiny(), toy_link(), 2));
    CHECK(fp != fingerprint(tiny(), link, 1));
    CHECK(fp != fingerprint(HnrConfig{}, link, 2));
    const Link qam(toy_grid(), phy::Constellation::make(16), link.code_ptr(), 7);
    CHECK(fp != fingerprint(tiny(), qam, 2));
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("featurize") {
    const auto link = toy_link();
    const auto& spec = link.grid();
    const std::size_t F = feature_dim(2);
    CHECK(F == 9);

    phy::ResourceGrid zero(2, spec.num_symbols, spec.fft_size);
    const auto t = featurize(zero, 0.1, link);
    CHECK(t.rows() == spec.num_symbols * spec.num_usable());
    CHECK(t.cols() == F);
    const auto layout = TokenLayout::make(spec, true);
    CHECK(layout.num_tokens == t.rows());
    CHECK(layout.data_token.size() == spec.data_capacity());
    // data tokens of an all-zero grid differ only in their coordinates
    for (auto row : layout.data_token) {
        for (std::size_t c = 0; c < 4; ++c) CHECK(t.at(row, c) == 0.0);
        CHECK(t.at(row, 4) == 0.0);
        CHECK(t.at(row, 5) == 0.0);
        CHECK(t.at(row, 6) == std::log(0.1));
    }
    const auto no_pilots = TokenLayout::make(spec, false);
    CHECK(no_pilots.num_tokens == spec.data_capacity());
    CHECK(featurize(zero, 0.1, link, false).rows() == spec.data_capacity());

    auto rx = zero;
    Rng rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : rx.values()) v = {n(rng), n(rng)};
    const auto a = featurize(rx, 0.1, link), b = featurize(rx, 0.2, link);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < F; ++c) {
            if (c == 6)
                CHECK(b.at(r, c) - a.at(r, c) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
            else
                CHECK(a.at(r, c) == b.at(r, c));
        }
    // noiseless input is clamped, not -inf
    CHECK(featurize(rx, 0.0, link).at(0, 6) == std::log(kMinNoiseVar));
    CHECK_THROWS(featurize(rx, -1.0, link));
    CHECK_THROWS(featurize(phy::ResourceGrid(2, 4, spec.fft_size), 0.1, link));
}

TEST_CASE("attention") {
    const auto link = toy_link();
    const auto m = bound_model(tiny(), link);
    SUBCASE("a single token attends to itself") {
        Graph g(&m.params);
        TransformerTrace trace;
        Array tok({1, feature_dim(2)}, 0.3);
        transformer_forward(g, m, g.constant(tok), 1, 1, &trace);
        REQUIRE(trace.attention.size() == tiny().num_heads);
        for (auto a : trace.attention) CHECK(g.value(a).data == std::vector<double>{1.0});
    }
    SUBCASE("rows are distributions") {
        phy::ResourceGrid rx(2, link.grid().num_symbols, link.grid().fft_size);
        Rng rng(2);
        std::normal_distribution<double> n(0.0, 1.0);
        for (auto& v : rx.values()) v = {n(rng), n(rng)};
        const auto t1 = featurize(rx, 0.3, link);
        Array both({2 * t1.rows(), t1.cols()});
        std::copy(t1.data.begin(), t1.data.end(), both.data.begin());
        std::copy(t1.data.begin(), t1.data.end(), both.data.begin() + static_cast<std::ptrdiff_t>(t1.size()));
        Graph g(&m.params);
        TransformerTrace trace;
        const auto out = transformer_forward(g, m, g.constant(both), 2, t1.rows(), &trace);
        CHECK(trace.attention.size() == 2 * tiny().num_heads * tiny().num_blocks);
        for (auto a : trace.attention) {
            const auto& p = g.value(a);
            CHECK(p.rows() == t1.rows());
            CHECK(p.cols() == t1.rows());
            for (std::size_t r = 0; r < p.rows(); ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < p.cols(); ++c) {
                    CHECK(p.at(r, c) >= 0.0);
                    s += p.at(r, c);
                }
                CHECK(std::abs(s - 1.0) <= 1e-12);
            }
        }
        // frames in a batch do not see each other
        const auto& o = g.value(out);
        const std::size_t half = o.size() / 2;
        for (std::size_t i = 0; i < half; ++i) CHECK(std::abs(o.data[i] - o.data[half + i]) <= 1e-12);
        CHECK_THROWS_AS(transformer_forward(g, m, g.constant(both), 3, t1.rows()), diff::ShapeError);
    }
}

TEST_CASE("zeroed transformer emits the head bias") {
    const auto link = toy_link();
    auto m = bound_model(tiny(), link);
    m.zero();
    m.params.value(m.head.bias).data = {1.25, -0.5};
    phy::ResourceGrid rx(2, link.grid().num_symbols, link.grid().fft_size);
    for (auto& v : rx.values()) v = {0.7, -0.1};
    const auto l = transformer_llrs(m, link, rx, 0.2);
    REQUIRE(l.size() == link.coded_bits_per_frame());
    for (std::size_t i = 0; i < l.size(); ++i) CHECK(l[i] == (i % 2 == 0 ? 1.25 : -0.5));
}

TEST_CASE("tanner graph") {
    const auto h = hamming();
    const auto tg = TannerGraph::build(h);
    CHECK(tg.num_vn == 7);
    CHECK(tg.num_cn == 3);
    CHECK(tg.num_edges() == 12);
    // edges come in row-scan order
    std::size_t e = 0;
    for (std::size_t r = 0; r < h.m(); ++r)
        for (auto c : h.row(r)) {
            CHECK(tg.edge_cn[e] == r);
            CHECK(tg.edge_vn[e] == c);
            ++e;
        }

    const auto ldpc = TannerGraph::build(fec::build_regular_ldpc(16, 3, 6, 1));
    std::vector<int> vdeg(16), cdeg(8);
    for (std::size_t i = 0; i < ldpc.num_edges(); ++i) {
        ++vdeg[ldpc.edge_vn[i]];
        ++cdeg[ldpc.edge_cn[i]];
    }
    for (int d : vdeg) CHECK(d == 3);
    for (int d : cdeg) CHECK(d == 6);

    const auto two = tg.replicate(2);
    CHECK(two.num_vn == 14);
    CHECK(two.num_cn == 6);
    CHECK(two.num_edges() == 24);
    CHECK(two.edge_vn[12] == tg.edge_vn[0] + 7);
    CHECK(two.edge_cn[23] == tg.edge_cn[11] + 3);

    CHECK_THROWS(TannerGraph::build(fec::ParityCheckMatrix(3, {{0, 1}, {}})));
    CHECK_THROWS(TannerGraph::build(fec::ParityCheckMatrix(3, {{0, 1}})));
}

TEST_CASE("gnn structure") {
    const auto link = toy_link();
    const auto cfg = tiny();
    auto m = bound_model(cfg, link);
    const auto h = hamming();
    const auto tg = TannerGraph::build(h);
    const auto llr = random_llrs(7, 5);

    SUBCASE("zero parameters give probability one half") {
        auto z = m;
        z.zero();
        for (double p : gnn_decode(z, tg, llr, 3)) CHECK(p == 0.5);
    }
    SUBCASE("equivariant under node relabelling") {
        Rng rng(9);
        const auto big = fec::build_regular_ldpc(32, 3, 6, 2);
        const auto btg = TannerGraph::build(big);
        const auto in = random_llrs(32, 6);
        const auto base = gnn_decode(m, btg, in, 3);
        for (int t = 0; t < 50; ++t) {
            std::vector<std::uint32_t> vp(32), cp(16);
            std::iota(vp.begin(), vp.end(), 0u);
            std::iota(cp.begin(), cp.end(), 0u);
            std::shuffle(vp.begin(), vp.end(), rng);
            std::shuffle(cp.begin(), cp.end(), rng);
            std::vector<std::vector<std::uint32_t>> rows(16);
            for (std::size_t r = 0; r < 16; ++r)
                for (auto c : big.row(r)) rows[cp[r]].push_back(vp[c]);
            const auto ptg = TannerGraph::build(fec::ParityCheckMatrix(32, rows));
            std::vector<double> pin(32);
            for (std::size_t i = 0; i < 32; ++i) pin[vp[i]] = in[i];
            const auto out = gnn_decode(m, ptg, pin, 3);
            for (std::size_t i = 0; i < 32; ++i) CHECK(std::abs(out[vp[i]] - base[i]) <= 1e-9);
        }
    }
    SUBCASE("no iterations means no mixing") {
        const auto base = gnn_decode(m, tg, llr, 0);
        auto moved = llr;
        moved[3] += 2.0;
        const auto out = gnn_decode(m, tg, moved, 0);
        for (std::size_t i = 0; i < 7; ++i) {
            if (i == 3)
                CHECK(out[i] != base[i]);
            else
                CHECK(out[i] == base[i]);
        }
    }
    SUBCASE("one iteration reaches only check-sharing neighbours") {
        const auto big = fec::build_regular_ldpc(32, 3, 6, 2);
        const auto btg = TannerGraph::build(big);
        const auto in = random_llrs(32, 8);
        const auto base = gnn_decode(m, btg, in, 1);
        auto moved = in;
        moved[0] += 3.0;
        const auto out = gnn_decode(m, btg, moved, 1);
        std::vector<bool> near(32, false);
        for (auto r : big.col(0))
            for (auto c : big.row(r)) near[c] = true;
        for (std::size_t i = 0; i < 32; ++i)
            if (!near[i]) CHECK(out[i] == base[i]);
        CHECK(out[0] != base[0]);
    }
    SUBCASE("replicated graph decodes copies independently") {
        const auto in2 = random_llrs(7, 11);
        std::vector<double> both = llr;
        both.insert(both.end(), in2.begin(), in2.end());
        const auto out = gnn_decode(m, tg.replicate(2), both, 3);
        const auto a = gnn_decode(m, tg, llr, 3), b = gnn_decode(m, tg, in2, 3);
        for (std::size_t i = 0; i < 7; ++i) {
            CHECK(std::abs(out[i] - a[i]) <= 1e-12);
            CHECK(std::abs(out[7 + i] - b[i]) <= 1e-12);
        }
    }
    CHECK_THROWS(gnn_decode(m, tg, std::vector<double>(6, 0.0), 2));
}

TEST_CASE("receive chain") {
    const auto link = toy_link();
    const auto m = bound_model(tiny(), link);
    channel::ChannelSpec ch;
    ch.model = channel::Model::FlatRayleigh;
    const double nv = snr_db_to_noise_var(6.0);

    const auto f = simulate_frame(link, ch, nv, 3);
    const auto a = hnr_receive(m, link, f.rx, nv), b = hnr_receive(m, link, f.rx, nv);
    CHECK(a.info == b.info);
    CHECK(a.llrs == b.llrs);
    CHECK(a.info.size() == link.info_bits_per_frame());
    CHECK(a.coded.size() == link.coded_bits_per_frame());
    CHECK(a.probabilities.size() == link.coded_bits_per_frame());

    auto other = m;
    other.fingerprint ^= 1;
    CHECK_THROWS_AS(hnr_receive(other, link, f.rx, nv), FingerprintError);
    const Link qam(toy_grid(), phy::Constellation::make(16), link.code_ptr(), 7);
    CHECK_THROWS(hnr_receive(m, qam, simulate_frame(qam, ch, nv, 3).rx, nv));

    // an untrained model is a coin flip on information bits
    double err = 0.0, bits = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto fr = simulate_frame(link, ch, nv, 100 + s);
        const auto r = hnr_receive(m, link, fr.rx, nv);
        for (std::size_t i = 0; i < r.info.size(); ++i) err += r.info[i] != fr.info[i];
        bits += static_cast<double>(r.info.size());
    }
    CHECK(std::abs(err / bits - 0.5) <= 0.1);
}

TEST_CASE("binary cross-entropy agrees three ways") {
    Rng rng(12);
    std::normal_distribution<double> n(0.0, 4.0);
    std::vector<double> z(257);
    fec::Bits bits(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = n(rng);
        bits[i] = static_cast<std::uint8_t>(rng() >> 63);
    }
    z[0] = 60.0;
    z[1] = -60.0;
    const double want = oracle::bce(z, bits);
    CHECK(std::abs(bce_reference(z, bits) - want) <= 1e-10);
    Graph g;
    Array targets({bits.size(), 1});
    for (std::size_t i = 0; i < bits.size(); ++i) targets.data[i] = bits[i];
    const auto v = g.bce_with_logits(g.constant(Array({z.size(), 1}, z)), targets);
    CHECK(std::abs(g.value(v).data[0] - want) <= 1e-10);
    CHECK_THROWS(bce_reference(z, fec::Bits(3, 0)));
}

TEST_CASE("end-to-end gradient matches finite differences") {
    const auto r = gradcheck::hnr_end_to_end(toy_link(), tiny(), 10, 21);
    CHECK(r.input_grad_mass > 0.0);
    for (const auto& e : r.samples) {
        CAPTURE(e.name);
        CHECK(e.rel_error <= 1e-3);
    }
}

TEST_CASE("training budgets") {
    const auto link = toy_link();
    TrainSettings s;
    s.batch = 1;
    s.scale = 1e-6;
    CHECK(budget_steps(kStage1Codewords, s, link) == 12);
    CHECK(stage2_boundaries(s, link) == std::vector<std::size_t>{4, 44, 84});
    CHECK(budget_steps(kStage3Codewords, s, link) == 1);
    s.scale = 1e-9;
    CHECK(budget_steps(kStage1Codewords, s, link) == 1);
    s.scale = 1e-3;
    s.batch = 32;
    CHECK(budget_steps(kStage1Codewords, s, link) == 375);
}

TEST_CASE("staged training") {
    const auto link = toy_link();
    auto m = bound_model(tiny(), link, 5);
    auto s = tiny_settings();
    s.scale = 5e-6;  // stage 1: 15 steps; stage 2: 5 + 50 + 50; stage 3: 1

    const auto before = m.params;
    std::vector<MetricRow> rows;
    const auto r1 = train_stage1(m, link, s, [&](const MetricRow& r) { rows.push_back(r); });
    CHECK(r1.steps == 15);
    CHECK(rows.size() == 15);
    // the head starts at zero, so the first batch scores LLR 0 everywhere
    CHECK(r1.first_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(std::isnan(rows.front().val_ber));
    CHECK(std::isfinite(rows.back().val_ber));
    CHECK(rows.back().lr == doctest::Approx(kStage1Rate * s.lr_multiplier));
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        CAPTURE(m.params.name(i));
        CHECK(m.params.trainable(i));
        if (m.params.name(i).rfind(kGnnPrefix, 0) == 0) CHECK(m.params.value(i) == before.value(i));
    }
    CHECK(m.params.value(m.head.weight) != before.value(m.head.weight));

    const auto after1 = m.params;
    rows.clear();
    const auto r2 = train_stage2(m, link, s, [&](const MetricRow& r) { rows.push_back(r); });
    CHECK(r2.steps == 105);
    CHECK(rows[0].lr == doctest::Approx(kStage2Rates[0] * s.lr_multiplier));
    CHECK(rows[5].lr == doctest::Approx(kStage2Rates[1] * s.lr_multiplier));
    CHECK(rows[55].lr == doctest::Approx(kStage2Rates[2] * s.lr_multiplier));
    bool gnn_moved = false;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        if (m.params.name(i).rfind(kTransformerPrefix, 0) == 0)
            CHECK(m.params.value(i) == after1.value(i));
        else
            gnn_moved |= m.params.value(i) != after1.value(i);
    }
    CHECK(gnn_moved);

    const double stage2_val = evaluate_full(m, link, s).bce;
    CHECK(r2.val_bce == doctest::Approx(stage2_val).epsilon(1e-12));
    const auto r3 = train_stage3(m, link, s);
    CHECK(r3.steps == 1);
    CHECK(r3.val_bce <= stage2_val + 1e-6);
    CHECK(evaluate_full(m, link, s).bce == doctest::Approx(r3.val_bce).epsilon(1e-12));
    for (std::size_t i = 0; i < m.params.size(); ++i) CHECK(m.params.trainable(i));
}

TEST_CASE("training is reproducible") {
    const auto link = toy_link();
    auto s = tiny_settings();
    s.scale = 2e-6;
    auto a = bound_model(tiny(), link, 5), b = bound_model(tiny(), link, 5);
    train_stage1(a, link, s);
    train_stage1(b, link, s);
    CHECK(a.params == b.params);
    s.seed = 2;
    auto c = bound_model(tiny(), link, 5);
    train_stage1(c, link, s);
    CHECK(!(a.params == c.params));
}

TEST_CASE("non-finite parameters abort training") {
    const auto link = toy_link();
    auto m = bound_model(tiny(), link);
    m.params.value(m.input.bias).data[0] = std::nan("");
    auto s = tiny_settings();
    s.scale = 2e-6;
    try {
        train_stage1(m, link, s);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK(e.step() == 0);
    }
    for (std::size_t i = 0; i < m.params.size(); ++i) CHECK(m.params.trainable(i));

    const Link uncoded(toy_grid(), phy::Constellation::make(4), nullptr, 7);
    auto ok = bound_model(tiny(), link);
    CHECK_THROWS(train_stage1(ok, uncoded, s));
}
