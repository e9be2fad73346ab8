#include "hrx/rng.hpp"
#include "hrx/rxclassic.hpp"
#include "oracles/oracles.hpp"

#include <doctest.h>

#include <random>

using namespace hrx;
using namespace hrx::classic;
using phy::cplx;

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

Link toy_link(unsigned order = 4) {
    return Link(toy_grid(), phy::Constellation::make(order),
                std::make_shared<Code>(fec::build_regular_ldpc(128, 3, 6, 1), "regular:128,3,6,seed=1"), 7);
}

/// Transmit grid of the link carrying fixed pilots and the given channel.
phy::ResourceGrid received(const phy::GridSpec& spec, const phy::PilotMatrix& pilots, const phy::ResourceGrid& h) {
    std::vector<cplx> data(spec.data_capacity(), cplx(1, 0));
    const auto tx = phy::grid_map(data, pilots, spec);
    phy::ResourceGrid rx(h.antennas(), spec.num_symbols, spec.fft_size);
    for (std::size_t a = 0; a < h.antennas(); ++a)
        for (std::size_t l = 0; l < spec.num_symbols; ++l)
            for (std::size_t k = 0; k < spec.fft_size; ++k) rx.at(a, l, k) = h.at(a, l, k) * tx.at(0, l, k);
    return rx;
}

}  // namespace

TEST_CASE("LS estimation") {
    const phy::GridSpec spec;  // pilots on symbols 2 and 11
    const auto pilots = phy::pilot_values(spec, 3);
    SUBCASE("constant channel") {
        phy::ResourceGrid h(2, spec.num_symbols, spec.fft_size);
        for (auto& v : h.values()) v = cplx(0.5, 0.5);
        const auto est = ls_estimate(received(spec, pilots, h), pilots, spec, 0.0);
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t l = 0; l < spec.num_symbols; ++l)
                for (auto k : spec.usable_subcarriers()) CHECK(std::abs(est.h.at(a, l, k) - cplx(0.5, 0.5)) <= 1e-12);
    }
    SUBCASE("linear in time is interpolated exactly") {
        phy::ResourceGrid h(1, spec.num_symbols, spec.fft_size);
        for (std::size_t l = 0; l < spec.num_symbols; ++l)
            for (std::size_t k = 0; k < spec.fft_size; ++k)
                h.at(0, l, k) = cplx(0.1 * static_cast<double>(l) + 0.01 * static_cast<double>(k), -0.2 * static_cast<double>(l));
        const auto est = ls_estimate(received(spec, pilots, h), pilots, spec, 0.0);
        for (std::size_t l = 2; l <= 11; ++l)
            for (auto k : spec.usable_subcarriers()) CHECK(std::abs(est.h.at(0, l, k) - h.at(0, l, k)) <= 1e-12);
        // nearest-pilot extrapolation at the edges
        for (auto k : spec.usable_subcarriers()) {
            CHECK(est.h.at(0, 0, k) == est.h.at(0, 2, k));
            CHECK(est.h.at(0, 15, k) == est.h.at(0, 11, k));
        }
    }
    SUBCASE("at pilots the estimate is y times conj(p)") {
        hrx::Rng rng(4);
        std::normal_distribution<double> n(0.0, 1.0);
        phy::ResourceGrid rx(2, spec.num_symbols, spec.fft_size);
        for (auto& v : rx.values()) v = cplx(n(rng), n(rng));
        const auto est = ls_estimate(rx, pilots, spec, 0.2);
        const auto usable = spec.usable_subcarriers();
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t j = 0; j < usable.size(); ++j)
                for (std::size_t a = 0; a < 2; ++a) {
                    const std::size_t l = spec.pilot_symbols[r], k = usable[j];
                    CHECK(std::abs(est.h.at(a, l, k) - rx.at(a, l, k) * std::conj(pilots.at(r, j))) <= 1e-12);
                    CHECK(est.error_at(l, k) == doctest::Approx(0.2));
                }
    }
    SUBCASE("estimator variance matches the noise") {
        channel::ChannelSpec cs;
        cs.model = channel::Model::Ideal;
        cs.num_rx = 1;
        const auto ch = channel::realize(cs, spec, 0, 0.1);
        double acc = 0.0, n = 0.0;
        for (std::uint64_t s = 0; n < 1e5; ++s) {
            const auto rx = channel::apply(phy::grid_map(std::vector<cplx>(spec.data_capacity()), pilots, spec), ch, s);
            const auto est = ls_estimate(rx, pilots, spec, 0.1);
            for (auto l : spec.pilot_symbols)
                for (auto k : spec.usable_subcarriers()) {
                    acc += std::norm(est.h.at(0, l, k) - cplx(1, 0));
                    n += 1;
                }
        }
        // |e|^2 is exponential with mean 0.1, so its standard error is 0.1/sqrt(n)
        CHECK(std::abs(acc / n - 0.1) <= 3 * 0.1 / std::sqrt(n));
    }
    SUBCASE("errors") {
        phy::GridSpec none = spec;
        none.pilot_symbols.clear();
        CHECK_THROWS(ls_estimate(phy::ResourceGrid(1, 16, 129), pilots, none, 0.1));
        CHECK_THROWS(ls_estimate(phy::ResourceGrid(1, 15, 129), pilots, spec, 0.1));
    }
}

TEST_CASE("LMMSE equalization") {
    const auto spec = toy_grid();
    hrx::Rng rng(6);
    std::normal_distribution<double> n(0.0, 1.0);
    SUBCASE("zero-forcing limit, one antenna") {
        phy::ResourceGrid h(1, 5, 20), rx(1, 5, 20);
        for (auto& v : h.values()) v = cplx(2, 0);
        for (auto& v : rx.values()) v = cplx(n(rng), n(rng));
        const auto eq = lmmse_equalize(rx, h, 0.0, spec);
        for (std::size_t j = 0; j < eq.symbols.size(); ++j) {
            const auto pos = phy::data_re_position(spec, j);
            CHECK(std::abs(eq.symbols[j] - rx.at(0, pos.symbol, pos.subcarrier) / 2.0) <= 1e-12);
        }
    }
    SUBCASE("two antennas at zero noise equal MRC") {
        phy::ResourceGrid h(2, 5, 20), rx(2, 5, 20);
        for (auto& v : h.values()) v = cplx(n(rng), n(rng));
        for (auto& v : rx.values()) v = cplx(n(rng), n(rng));
        const auto eq = lmmse_equalize(rx, h, 0.0, spec);
        for (std::size_t j = 0; j < eq.symbols.size(); ++j) {
            const auto pos = phy::data_re_position(spec, j);
            const cplx hv[] = {h.at(0, pos.symbol, pos.subcarrier), h.at(1, pos.symbol, pos.subcarrier)};
            const cplx yv[] = {rx.at(0, pos.symbol, pos.subcarrier), rx.at(1, pos.symbol, pos.subcarrier)};
            CHECK(std::abs(eq.symbols[j] - oracle::mrc(hv, yv)) <= 1e-12);
            CHECK(eq.bias[j] == doctest::Approx(1.0).epsilon(1e-15));
        }
    }
    SUBCASE("zero channel with noise collapses to zero; without noise it is rejected") {
        phy::ResourceGrid h(1, 5, 20), rx(1, 5, 20);
        for (auto& v : rx.values()) v = cplx(1, 1);
        const auto eq = lmmse_equalize(rx, h, 0.5, spec);
        for (auto s : eq.symbols) CHECK(s == cplx(0, 0));
        CHECK_THROWS(lmmse_equalize(rx, h, 0.0, spec));
        CHECK_THROWS(lmmse_equalize(rx, h, -1.0, spec));
    }
}

TEST_CASE("receive chains") {
    SUBCASE("noiseless ideal perfect-CSI is error free for every constellation") {
        for (unsigned q : {4u, 16u, 32u, 64u}) {
            const auto link = toy_link(q);
            channel::ChannelSpec cs;
            cs.model = channel::Model::Ideal;
            const auto f = simulate_frame(link, cs, 0.0, q);
            const auto r = perfect_csi_receive(f.rx, f.channel.h, 0.0, link);
            CHECK(r.info == f.info);
            CHECK(r.codeword_failures == 0);
            const auto b = baseline_receive(f.rx, link, 0.0);
            CHECK(b.info == f.info);
        }
    }
    SUBCASE("noiseless LLRs are saturated and BP needs no iterations") {
        const auto link = toy_link(16);
        channel::ChannelSpec cs;
        cs.model = channel::Model::Ideal;
        const auto f = simulate_frame(link, cs, 0.0, 1);
        const auto eq = lmmse_equalize(f.rx, f.channel.h, 0.0, link.grid());
        const auto llrs = demap_frame(eq, link.constellation(), phy::LlrMode::LogMap);
        for (std::size_t i = 0; i < link.coded_bits_per_frame(); ++i) {
            CHECK(std::abs(llrs[i]) > 1e6);
            CHECK((llrs[i] < 0) == (f.bits[i] == 1));
        }
        const auto n = link.code().pcm.n();
        CHECK(fec::bp_decode(std::span(llrs).subspan(0, n), link.code().pcm).iterations == 0);
    }
    SUBCASE("coin-flip limit at huge noise") {
        const auto link = toy_link();
        channel::ChannelSpec cs;
        cs.model = channel::Model::FlatRayleigh;
        std::size_t errs = 0, bits = 0;
        for (std::uint64_t s = 0; bits < 100000; ++s) {
            const auto f = simulate_frame(link, cs, 1e6, s);
            const auto r = baseline_receive(f.rx, link, 1e6);
            for (std::size_t i = 0; i < f.info.size(); ++i) errs += r.info[i] != f.info[i];
            bits += f.info.size();
        }
        const double p = static_cast<double>(errs) / static_cast<double>(bits);
        CHECK(std::abs(p - 0.5) <= 3 * std::sqrt(0.25 / static_cast<double>(bits)));
    }
    SUBCASE("flat unit channel equals plain AWGN, bit for bit") {
        const auto link = toy_link(16);
        channel::ChannelSpec cs;
        cs.model = channel::Model::Ideal;
        cs.num_rx = 1;
        for (std::uint64_t s = 0; s < 5; ++s) {
            const auto f = simulate_frame(link, cs, 0.2, s);
            const auto a = perfect_csi_receive(f.rx, f.channel.h, 0.2, link);
            // same noisy samples, demapped directly with the AWGN variance
            const auto demapped = phy::grid_demap(f.rx, link.grid());
            std::vector<double> llrs;
            for (auto y : demapped.data[0]) {
                const auto l = phy::exact_llr(y, 0.2, link.constellation());
                llrs.insert(llrs.end(), l.begin(), l.end());
            }
            const auto b = decode_frame(llrs, link, {});
            CHECK(a.info == b.info);
            REQUIRE(a.llrs.size() == b.llrs.size());
            for (std::size_t i = 0; i < a.llrs.size(); ++i) CHECK(a.llrs[i] == doctest::Approx(b.llrs[i]).epsilon(1e-12));
        }
    }
    SUBCASE("deterministic") {
        const auto link = toy_link();
        const channel::ChannelSpec cs;
        const auto f = simulate_frame(link, cs, 0.3, 4);
        CHECK(baseline_receive(f.rx, link, 0.3).info == baseline_receive(f.rx, link, 0.3).info);
    }
}

TEST_CASE("BER ordering on paired seeds") {
    const Link link(phy::GridSpec{}, phy::Constellation::make(64),
                    std::make_shared<Code>(fec::build_regular_ldpc(1024, 3, 6, 1), "regular:1024,3,6,seed=1"), 0x5eed);
    const channel::ChannelSpec cs;  // tdl
    auto ber = [&](double snr_db, bool perfect) {
        const double nv = snr_db_to_noise_var(snr_db);
        std::size_t errs = 0, bits = 0;
        for (std::uint64_t s = 0; s < 6; ++s) {
            const auto f = simulate_frame(link, cs, nv, s);
            const auto r = perfect ? perfect_csi_receive(f.rx, f.channel.h, nv, link) : baseline_receive(f.rx, link, nv);
            for (std::size_t i = 0; i < f.info.size(); ++i) errs += r.info[i] != f.info[i];
            bits += f.info.size();
        }
        return std::make_pair(static_cast<double>(errs) / static_cast<double>(bits), bits);
    };
    const auto [b4, n4] = ber(4, false);
    const auto [b12, n12] = ber(12, false);
    CHECK(b12 <= b4);
    for (double snr : {4.0, 12.0}) {
        const auto [base, n] = ber(snr, false);
        const auto [perf, _] = ber(snr, true);
        const double se = std::sqrt(std::max(base * (1 - base), 1e-12) / static_cast<double>(n));
        CHECK(perf <= base + 3 * se);
    }
}
