#include "hrx/rxclassic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hrx::classic {

using phy::cplx;

ChannelEstimate ls_estimate(const phy::ResourceGrid& rx, const phy::PilotMatrix& pilots, const phy::GridSpec& spec,
                            double noise_var, LsOptions opts) {
    spec.validate();
    if (spec.pilot_symbols.empty()) throw std::invalid_argument("ls_estimate: grid has no pilot symbols");
    if (!rx.matches(spec)) throw std::invalid_argument("ls_estimate: grid shape does not match the spec");
    if (pilots.rows != spec.pilot_symbols.size() || pilots.cols != spec.num_usable())
        throw std::invalid_argument("ls_estimate: pilot matrix shape does not match the grid");

    const auto usable = spec.usable_subcarriers();
    const std::size_t A = rx.antennas();
    const std::size_t L = spec.num_symbols;
    const std::size_t K = spec.fft_size;
    const std::size_t U = usable.size();

    // pilot symbols in time order, remembering their pilot-matrix row
    std::vector<std::pair<std::size_t, std::size_t>> order;
    for (std::size_t r = 0; r < spec.pilot_symbols.size(); ++r) order.emplace_back(spec.pilot_symbols[r], r);
    std::sort(order.begin(), order.end());
    const std::size_t P = order.size();

    // raw LS at pilot REs: h = y p* / |p|^2
    std::vector<cplx> at_pilot(A * P * U);
    std::vector<double> pilot_err(P * U);
    for (std::size_t i = 0; i < P; ++i) {
        const auto [l, row] = order[i];
        for (std::size_t j = 0; j < U; ++j) {
            const cplx p = pilots.at(row, j);
            const double pw = std::norm(p);
            for (std::size_t a = 0; a < A; ++a) at_pilot[(a * P + i) * U + j] = rx.at(a, l, usable[j]) * std::conj(p) / pw;
            pilot_err[i * U + j] = noise_var / pw;
        }
    }

    if (opts.freq_smoothing > 0) {
        const std::size_t w = opts.freq_smoothing;
        std::vector<cplx> smoothed(at_pilot.size());
        std::vector<double> err(pilot_err.size());
        for (std::size_t i = 0; i < P; ++i)
            for (std::size_t j = 0; j < U; ++j) {
                const std::size_t lo = j >= w ? j - w : 0;
                const std::size_t hi = std::min(U - 1, j + w);
                const double cnt = static_cast<double>(hi - lo + 1);
                double e = 0.0;
                for (std::size_t q = lo; q <= hi; ++q) e += pilot_err[i * U + q];
                err[i * U + j] = e / (cnt * cnt);
                for (std::size_t a = 0; a < A; ++a) {
                    cplx s{};
                    for (std::size_t q = lo; q <= hi; ++q) s += at_pilot[(a * P + i) * U + q];
                    smoothed[(a * P + i) * U + j] = s / cnt;
                }
            }
        at_pilot = std::move(smoothed);
        pilot_err = std::move(err);
    }

    ChannelEstimate est;
    est.h = phy::ResourceGrid(A, L, K);
    est.error_var.assign(L * K, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        // bracketing pilots and interpolation weight on the later one
        std::size_t i0 = 0, i1 = 0;
        double w1 = 0.0;
        if (l <= order.front().first) {
            i0 = i1 = 0;
        } else if (l >= order.back().first) {
            i0 = i1 = P - 1;
        } else {
            while (order[i1].first < l) ++i1;
            i0 = i1 - 1;
            w1 = static_cast<double>(l - order[i0].first) /
                 static_cast<double>(order[i1].first - order[i0].first);
        }
        const double w0 = 1.0 - w1;
        for (std::size_t j = 0; j < U; ++j) {
            const std::size_t k = usable[j];
            for (std::size_t a = 0; a < A; ++a) {
                const cplx h0 = at_pilot[(a * P + i0) * U + j];
                const cplx h1 = at_pilot[(a * P + i1) * U + j];
                est.h.at(a, l, k) = i0 == i1 ? h0 : w0 * h0 + w1 * h1;
            }
            est.error_var[l * K + k] = i0 == i1 ? pilot_err[i0 * U + j]
                                                : w0 * w0 * pilot_err[i0 * U + j] + w1 * w1 * pilot_err[i1 * U + j];
        }
    }
    return est;
}

namespace {

EqualizedFrame equalize(const phy::ResourceGrid& rx, const phy::ResourceGrid& h, const std::vector<double>* error_var,
                        double noise_var, const phy::GridSpec& spec) {
    if (noise_var < 0.0) throw std::invalid_argument("lmmse_equalize: negative noise variance");
    if (!rx.matches(spec) || !h.matches(spec) || h.antennas() != rx.antennas())
        throw std::invalid_argument("lmmse_equalize: grid/channel shapes do not match");
    const std::size_t n = spec.data_capacity();
    EqualizedFrame eq;
    eq.symbols.resize(n);
    eq.bias.resize(n);
    eq.noise_var.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto pos = phy::data_re_position(spec, j);
        const double s_eff = noise_var + (error_var ? (*error_var)[pos.symbol * spec.fft_size + pos.subcarrier] : 0.0);
        double gain = 0.0;
        cplx mrc{};
        for (std::size_t a = 0; a < rx.antennas(); ++a) {
            const cplx hv = h.at(a, pos.symbol, pos.subcarrier);
            gain += std::norm(hv);
            mrc += std::conj(hv) * rx.at(a, pos.symbol, pos.subcarrier);
        }
        const double denom = gain + s_eff;
        if (denom == 0.0)
            throw std::invalid_argument("lmmse_equalize: zero channel at zero noise (data RE " + std::to_string(j) + ")");
        eq.symbols[j] = mrc / denom;
        eq.bias[j] = gain / denom;
        eq.noise_var[j] = gain > 0.0 ? s_eff / gain : std::numeric_limits<double>::infinity();
    }
    return eq;
}

}  // namespace

EqualizedFrame lmmse_equalize(const phy::ResourceGrid& rx, const ChannelEstimate& est, double noise_var,
                              const phy::GridSpec& spec) {
    return equalize(rx, est.h, &est.error_var, noise_var, spec);
}

EqualizedFrame lmmse_equalize(const phy::ResourceGrid& rx, const phy::ResourceGrid& h, double noise_var,
                              const phy::GridSpec& spec) {
    return equalize(rx, h, nullptr, noise_var, spec);
}

std::vector<double> demap_frame(const EqualizedFrame& eq, const phy::Constellation& c, phy::LlrMode mode) {
    const unsigned m = c.bits_per_symbol();
    std::vector<double> out(eq.symbols.size() * m, 0.0);
    for (std::size_t j = 0; j < eq.symbols.size(); ++j) {
        if (eq.bias[j] == 0.0) continue;
        const cplx y = eq.symbols[j] / eq.bias[j];
        const double var = std::max(eq.noise_var[j], kMinDemapNoiseVar);
        phy::exact_llr_into(y, var, c, std::span<double>(out).subspan(j * m, m), mode);
    }
    return out;
}

ReceiveResult decode_frame(std::span<const double> frame_llrs, const Link& link, const ClassicOptions& opts) {
    if (frame_llrs.size() != link.bit_capacity())
        throw std::invalid_argument("decode_frame: LLR count does not match the frame capacity");
    ReceiveResult res;
    res.llrs.assign(frame_llrs.begin(), frame_llrs.begin() + static_cast<std::ptrdiff_t>(link.coded_bits_per_frame()));
    if (!link.coded()) {
        res.coded = fec::hard_decision(res.llrs);
        res.info = res.coded;
        return res;
    }
    const auto& code = link.code();
    const std::size_t n = code.pcm.n();
    for (std::size_t c = 0; c < link.codewords_per_frame(); ++c) {
        const auto dec = fec::bp_decode(frame_llrs.subspan(c * n, n), code.pcm, opts.bp_iters, opts.rule);
        if (!dec.success) ++res.codeword_failures;
        res.coded.insert(res.coded.end(), dec.bits.begin(), dec.bits.end());
        const auto info = code.gen.extract_info(dec.bits);
        res.info.insert(res.info.end(), info.begin(), info.end());
    }
    return res;
}

ReceiveResult baseline_receive(const phy::ResourceGrid& rx, const Link& link, double noise_var,
                               const ClassicOptions& opts) {
    const auto est = ls_estimate(rx, link.pilots(), link.grid(), noise_var, opts.ls);
    const auto eq = lmmse_equalize(rx, est, noise_var, link.grid());
    const auto llrs = demap_frame(eq, link.constellation(), opts.llr_mode);
    return decode_frame(llrs, link, opts);
}

ReceiveResult perfect_csi_receive(const phy::ResourceGrid& rx, const phy::ResourceGrid& true_h, double noise_var,
                                  const Link& link, const ClassicOptions& opts) {
    const auto eq = lmmse_equalize(rx, true_h, noise_var, link.grid());
    const auto llrs = demap_frame(eq, link.constellation(), opts.llr_mode);
    return decode_frame(llrs, link, opts);
}

}  // namespace hrx::classic
