#pragma once

// Reference computations written independently of the library, used as
// test oracles. Nothing here calls into hybridrx.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace oracle {

using cplx = std::complex<double>;

/// Uncoded Gray QPSK over AWGN: bit error probability at a given Eb/N0.
inline double qpsk_ber(double ebn0_db) { return 0.5 * std::erfc(std::sqrt(std::pow(10.0, ebn0_db / 10.0))); }

/// Canonical Hamming(7,4) parity checks: column j (1-based) is the binary
/// expansion of j.
inline constexpr std::array<std::array<int, 7>, 3> kHammingH = {{
    {0, 0, 0, 1, 1, 1, 1},
    {0, 1, 1, 0, 0, 1, 1},
    {1, 0, 1, 0, 1, 0, 1},
}};

inline std::array<int, 3> hamming_syndrome(const std::array<int, 7>& w) {
    std::array<int, 3> s{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 7; ++c) s[r] ^= kHammingH[r][c] & w[c];
    return s;
}

/// All 16 codewords, found by scanning the 128 words for a zero syndrome.
inline std::vector<std::array<int, 7>> hamming_codewords() {
    std::vector<std::array<int, 7>> out;
    for (int v = 0; v < 128; ++v) {
        std::array<int, 7> w{};
        for (int c = 0; c < 7; ++c) w[c] = (v >> (6 - c)) & 1;
        const auto s = hamming_syndrome(w);
        if (s[0] == 0 && s[1] == 0 && s[2] == 0) out.push_back(w);
    }
    return out;
}

/// Exhaustive ML decision from LLRs (positive favours 0): the codeword that
/// maximizes sum_i (1 - 2 c_i) L_i.
inline std::array<int, 7> hamming_ml(std::span<const double> llr) {
    static const auto words = hamming_codewords();
    double best = -1e300;
    std::array<int, 7> arg{};
    for (const auto& w : words) {
        double m = 0.0;
        for (int i = 0; i < 7; ++i) m += (w[i] ? -1.0 : 1.0) * llr[i];
        if (m > best) {
            best = m;
            arg = w;
        }
    }
    return arg;
}

/// Maximal-ratio combining h^H y / |h|^2.
inline cplx mrc(std::span<const cplx> h, std::span<const cplx> y) {
    cplx num{};
    double den = 0.0;
    for (std::size_t a = 0; a < h.size(); ++a) {
        num += std::conj(h[a]) * y[a];
        den += std::norm(h[a]);
    }
    return num / den;
}

/// Direct evaluation of sum_i a_i exp(-j 2 pi k df tau_i).
inline cplx taps_response(std::span<const cplx> gains, std::span<const double> delays, double k, double df) {
    cplx acc{};
    for (std::size_t i = 0; i < gains.size(); ++i)
        acc += gains[i] * std::exp(cplx(0.0, -2.0 * std::numbers::pi * k * df * delays[i]));
    return acc;
}

/// Gray QPSK with bit 0 -> positive half, amplitude 1/sqrt 2 per axis.
inline double qpsk_llr_first(cplx y, double noise_var) { return 2.0 * std::sqrt(2.0) * y.real() / noise_var; }
inline double qpsk_llr_second(cplx y, double noise_var) { return 2.0 * std::sqrt(2.0) * y.imag() / noise_var; }

/// Mean BCE of sigmoid(logit) against 0/1 targets, evaluated term by term
/// from the textbook expression with a stable log(1 + e^x).
inline double bce(std::span<const double> logits, std::span<const std::uint8_t> bits) {
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double x = logits[i];
        const double log1pexp = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        // -[b log s(x) + (1-b) log(1 - s(x))] = log(1+e^x) - b x
        acc += log1pexp - bits[i] * x;
    }
    return acc / static_cast<double>(logits.size());
}

/// Hand-counted trainable scalars of the hybrid receiver. Every dense layer
/// contributes in*out + out.
struct ParamCountInputs {
    std::size_t num_rx, bits_per_symbol;
    std::size_t blocks, embed, ffn;
    std::size_t gnn_embed, gnn_msg, gnn_hidden, cn_layers, vn_layers, edge_dim;
};

inline std::size_t dense(std::size_t in, std::size_t out) { return in * out + out; }

inline std::size_t mlp(std::size_t in, std::size_t hidden, std::size_t out, std::size_t layers) {
    if (layers == 1) return dense(in, out);
    std::size_t n = dense(in, hidden);
    for (std::size_t i = 2; i < layers; ++i) n += dense(hidden, hidden);
    return n + dense(hidden, out);
}

inline std::size_t transformer_params(const ParamCountInputs& p) {
    const std::size_t features = 2 * p.num_rx + 2 + 1 + 2;  // antennas, pilot, log noise, two coordinates
    std::size_t n = dense(features, p.embed);
    const std::size_t block = 2 * p.embed                     // ln1
                              + 4 * dense(p.embed, p.embed)   // q k v o
                              + 2 * p.embed                   // ln2
                              + dense(p.embed, p.ffn) + dense(p.ffn, p.embed);
    n += p.blocks * block;
    n += 2 * p.embed;  // final norm
    n += dense(p.embed, p.bits_per_symbol);
    return n;
}

inline std::size_t gnn_params(const ParamCountInputs& p) {
    std::size_t n = dense(1, p.gnn_embed);  // llr embedding
    n += 2 * p.edge_dim;                     // one learned edge vector per direction
    const std::size_t msg_in = 2 * p.gnn_embed + p.edge_dim;
    n += 2 * mlp(msg_in, p.gnn_hidden, p.gnn_msg, 2);
    n += mlp(p.gnn_embed + p.gnn_msg + 1, p.gnn_hidden, p.gnn_embed, p.cn_layers);
    n += mlp(p.gnn_embed + p.gnn_msg + 1, p.gnn_hidden, p.gnn_embed, p.vn_layers);
    n += dense(p.gnn_embed, 1);
    return n;
}

/// Default architecture, 64-QAM, two antennas, worked out by hand:
/// transformer 1280 + 5 * 99584 + 256 + 774 = 500230,
/// gnn 32 + 16 + 2 * 2752 + 4768 + 2416 + 17 = 12753.
inline constexpr std::size_t kDefaultTransformerParams = 500230;
inline constexpr std::size_t kDefaultGnnParams = 12753;
inline constexpr std::size_t kDefaultParams = 512983;

}  // namespace oracle
