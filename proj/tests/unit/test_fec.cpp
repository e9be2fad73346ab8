#include "hrx/fec.hpp"
#include "hrx/rng.hpp"
#include "oracles/oracles.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace hrx::fec;

namespace {

// Hamming(7,4) in alist form, written out by hand from oracle::kHammingH.
constexpr const char* kHammingAlist =
    "7 3\n"
    "3 4\n"
    "1 1 2 1 2 2 3\n"
    "4 4 4\n"
    "3\n"
    "2\n"
    "2 3\n"
    "1\n"
    "1 3\n"
    "1 2\n"
    "1 2 3\n"
    "4 5 6 7\n"
    "2 3 6 7\n"
    "1 3 5 7\n";

ParityCheckMatrix hamming() { return load_alist(kHammingAlist); }

Bits random_bits(std::size_t n, std::uint64_t seed) {
    hrx::Rng rng(seed);
    Bits b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng() >> 63);
    return b;
}

}  // namespace

TEST_CASE("alist parsing") {
    const auto h = hamming();
    CHECK(h.n() == 7);
    CHECK(h.m() == 3);
    CHECK(h.row_degrees() == std::vector<std::size_t>{4, 4, 4});
    const auto dense = h.dense();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 7; ++c) CHECK(dense[r * 7 + c] == oracle::kHammingH[r][c]);
    CHECK(load_alist(to_alist(h)) == h);

    CHECK_THROWS_AS(load_alist(""), AlistError);
    std::string zero_index = kHammingAlist;
    zero_index.replace(zero_index.find("4 5 6 7"), 7, "0 5 6 7");
    CHECK_THROWS_AS(load_alist(zero_index), AlistError);
    std::string out_of_range = kHammingAlist;
    out_of_range.replace(out_of_range.find("4 5 6 7"), 7, "4 5 6 9");
    try {
        load_alist(out_of_range);
        FAIL("expected AlistError");
    } catch (const AlistError& e) {
        CHECK(e.line() > 0);
    }
}

TEST_CASE("regular construction") {
    const auto h = build_regular_ldpc(16, 3, 6, 1);
    CHECK(h.m() == 8);
    for (auto d : h.col_degrees()) CHECK(d == 3);
    for (auto d : h.row_degrees()) CHECK(d == 6);
    CHECK(build_regular_ldpc(16, 3, 6, 1) == h);
    CHECK_THROWS(build_regular_ldpc(9, 3, 6, 1));
    CHECK_THROWS(build_regular_ldpc(16, 1, 2, 1));

    const auto big = build_regular_ldpc(1024, 3, 6, 1);
    const GeneratorMatrix g(big);
    CHECK(g.k() == big.n() - gf2_rank(big));
    CHECK(static_cast<double>(g.k()) / 1024.0 >= 0.5);
    CHECK(girth(big) >= 6);
}

TEST_CASE("encoding") {
    const auto h = hamming();
    const GeneratorMatrix g(h);
    REQUIRE(g.k() == 4);
    CHECK(g.encode(Bits(4, 0)) == Bits(7, 0));

    // 1011 at the systematic positions: the unique codeword found by brute force
    const Bits info = {1, 0, 1, 1};
    const auto cw = g.encode(info);
    CHECK(is_codeword(cw, h));
    int matches = 0;
    for (const auto& w : oracle::hamming_codewords()) {
        bool same = true;
        for (std::size_t i = 0; i < 4; ++i) same &= w[g.info_positions()[i]] == info[i];
        if (same) {
            ++matches;
            for (int i = 0; i < 7; ++i) CHECK(cw[i] == w[i]);
        }
    }
    CHECK(matches == 1);
    CHECK(g.extract_info(cw) == info);
    CHECK_THROWS(g.encode(Bits(3, 0)));

    const auto ldpc = build_regular_ldpc(128, 3, 6, 2);
    const GeneratorMatrix gl(ldpc);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = random_bits(gl.k(), s), b = random_bits(gl.k(), s + 100);
        Bits x(gl.k());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = a[i] ^ b[i];
        const auto ca = gl.encode(a), cb = gl.encode(b), cx = gl.encode(x);
        CHECK(is_codeword(ca, ldpc));
        for (std::size_t i = 0; i < cx.size(); ++i) CHECK(cx[i] == (ca[i] ^ cb[i]));
    }
}

TEST_CASE("syndromes") {
    const auto h = hamming();
    CHECK(syndrome(Bits(7, 0), h) == Bits(3, 0));
    std::set<Bits> seen;
    for (int i = 0; i < 7; ++i) {
        Bits e(7, 0);
        e[i] = 1;
        const auto s = syndrome(e, h);
        CHECK(s != Bits(3, 0));
        seen.insert(s);
    }
    CHECK(seen.size() == 7);
    CHECK_THROWS(syndrome(Bits(6, 0), h));
}

TEST_CASE("belief propagation") {
    const auto h = hamming();
    SUBCASE("confident all-zero input") {
        const auto r = bp_decode(std::vector<double>(7, 10.0), h);
        CHECK(r.success);
        CHECK(r.iterations <= 1);
        CHECK(r.bits == Bits(7, 0));
    }
    SUBCASE("single weak error is corrected") {
        // a degree-1 bit hears from one check only, so the error must be less
        // confident than the correct bits for BP to flip it
        for (int i = 0; i < 7; ++i) {
            std::vector<double> llr(7, 10.0);
            llr[i] = -3.0;
            const auto r = bp_decode(llr, h);
            CHECK(r.success);
            CHECK(r.bits == Bits(7, 0));
        }
    }
    SUBCASE("zero iterations return the hard decision") {
        const std::vector<double> llr = {1, -2, 3, -4, 5, 6, -7};
        const auto r = bp_decode(llr, h, 0);
        CHECK(r.bits == hard_decision(llr));
        CHECK(r.iterations == 0);
    }
    SUBCASE("success implies zero syndrome; positive scaling keeps the input decision") {
        const auto code = build_regular_ldpc(128, 3, 6, 3);
        hrx::Rng rng(7);
        std::normal_distribution<double> n(0.0, 1.0);
        for (int t = 0; t < 50; ++t) {
            std::vector<double> llr(128);
            for (auto& x : llr) x = 1.0 + 1.5 * n(rng);
            const auto r = bp_decode(llr, code, 20);
            if (r.success) CHECK(is_codeword(r.bits, code));
            std::vector<double> scaled = llr;
            for (auto& x : scaled) x *= 3.7;
            CHECK(bp_decode(scaled, code, 0).bits == bp_decode(llr, code, 0).bits);
        }
    }
    SUBCASE("min-sum also decodes a single error") {
        std::vector<double> llr(7, 4.0);
        llr[2] = -3.0;
        CHECK(bp_decode(llr, h, 10, CheckRule::MinSum).bits == Bits(7, 0));
    }
    SUBCASE("huge LLRs stay finite") {
        std::vector<double> llr(7, 1e6);
        llr[0] = -1e6;
        const auto r = bp_decode(llr, h);
        for (double p : r.posterior) CHECK(std::isfinite(p));
    }
}

TEST_CASE("coded BER falls with SNR") {
    const auto code = build_regular_ldpc(1024, 3, 6, 1);
    const GeneratorMatrix g(code);
    auto coded_errors = [&](double esn0_db) {
        // BPSK-equivalent real channel per bit: LLR = 2 y / s2 with s2 = N0/2 at unit energy
        const double s2 = 0.5 * std::pow(10.0, -esn0_db / 10.0);
        hrx::Rng rng(11);
        std::normal_distribution<double> n(0.0, std::sqrt(s2));
        std::size_t errs = 0;
        for (int f = 0; f < 200; ++f) {
            const auto cw = g.encode(random_bits(g.k(), 1000 + f));
            std::vector<double> llr(cw.size());
            for (std::size_t i = 0; i < cw.size(); ++i) llr[i] = 2.0 * ((cw[i] ? -1.0 : 1.0) + n(rng)) / s2;
            const auto r = bp_decode(llr, code);
            for (std::size_t i = 0; i < cw.size(); ++i) errs += r.bits[i] != cw[i];
        }
        return errs;
    };
    CHECK(coded_errors(-1.0) <= coded_errors(-4.0));
}
