#include "hrx/channel.hpp"

#include "hrx/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hrx::channel {

Model model_from_name(std::string_view name) {
    if (name == "ideal") return Model::Ideal;
    if (name == "flat-rayleigh" || name == "flat_rayleigh") return Model::FlatRayleigh;
    if (name == "tdl") return Model::Tdl;
    throw std::invalid_argument("unknown channel model '" + std::string(name) + "'");
}

std::string model_name(Model m) {
    switch (m) {
        case Model::Ideal: return "ideal";
        case Model::FlatRayleigh: return "flat-rayleigh";
        case Model::Tdl: return "tdl";
    }
    return "?";
}

void ChannelSpec::validate() const {
    if (!(delay_spread > 0.0)) throw std::invalid_argument("channel: delay_spread must be positive");
    if (speed_min_kmh < 0.0 || speed_max_kmh < speed_min_kmh)
        throw std::invalid_argument("channel: speed range must be non-negative and ordered");
    if (!(carrier_hz > 0.0) || !(subcarrier_spacing_hz > 0.0))
        throw std::invalid_argument("channel: carrier and subcarrier spacing must be positive");
    if (num_rx == 0 || num_taps == 0 || num_sinusoids == 0)
        throw std::invalid_argument("channel: antenna, tap and oscillator counts must be positive");
    if (model == Model::Tdl) {
        const auto p = exponential_profile(delay_spread, num_taps);
        if (p.delays.back() >= 1.0 / subcarrier_spacing_hz)
            throw std::invalid_argument("channel: tap delays exceed the OFDM symbol duration");
    }
}

TapProfile exponential_profile(double delay_spread, std::size_t num_taps) {
    if (num_taps == 0) throw std::invalid_argument("exponential_profile: need at least one tap");
    TapProfile p;
    if (num_taps == 1) {
        p.delays = {0.0};
        p.powers = {1.0};
        return p;
    }
    // unit-spaced taps with power decaying by e over a quarter of the taps,
    // then delays rescaled so the RMS spread is exact
    const double decay = static_cast<double>(num_taps) / 4.0;
    double total = 0.0;
    for (std::size_t i = 0; i < num_taps; ++i) {
        p.delays.push_back(static_cast<double>(i));
        p.powers.push_back(std::exp(-static_cast<double>(i) / decay));
        total += p.powers.back();
    }
    for (auto& w : p.powers) w /= total;
    const double unit_rms = rms_delay_spread(p);
    for (auto& d : p.delays) d *= delay_spread / unit_rms;
    return p;
}

double rms_delay_spread(const TapProfile& p) {
    double mean = 0.0, second = 0.0, total = 0.0;
    for (std::size_t i = 0; i < p.delays.size(); ++i) {
        mean += p.powers[i] * p.delays[i];
        second += p.powers[i] * p.delays[i] * p.delays[i];
        total += p.powers[i];
    }
    mean /= total;
    second /= total;
    return std::sqrt(std::max(0.0, second - mean * mean));
}

double doppler(double speed_kmh, double carrier_hz) {
    if (speed_kmh < 0.0) throw std::invalid_argument("doppler: speed must be non-negative");
    return (speed_kmh / 3.6) * carrier_hz / kSpeedOfLight;
}

ChannelRealization realize(const ChannelSpec& spec, const phy::GridSpec& grid, std::uint64_t seed, double noise_var) {
    spec.validate();
    grid.validate();
    ChannelRealization r;
    r.noise_var = noise_var;
    r.h = phy::ResourceGrid(spec.num_rx, grid.num_symbols, grid.fft_size);
    const std::size_t L = grid.num_symbols;
    const std::size_t K = grid.fft_size;

    if (spec.model == Model::Ideal) {
        r.profile = exponential_profile(spec.delay_spread, 1);
        r.tap_gains.assign(spec.num_rx * L, cplx(1.0, 0.0));
        for (auto& v : r.h.values()) v = cplx(1.0, 0.0);
        return r;
    }

    Rng rng(derive_seed(seed, {0x6368616eULL}));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    r.speed_kmh = spec.speed_min_kmh + (spec.speed_max_kmh - spec.speed_min_kmh) * uni(rng);
    const double fd = doppler(r.speed_kmh, spec.carrier_hz);
    const double symbol_time = 1.0 / spec.subcarrier_spacing_hz;
    r.profile = exponential_profile(spec.delay_spread, spec.model == Model::Tdl ? spec.num_taps : 1);
    const std::size_t T = r.profile.delays.size();
    const std::size_t N = spec.num_sinusoids;
    constexpr double two_pi = 2.0 * std::numbers::pi;

    // sum of sinusoids per (antenna, tap): arrival angles spread evenly around
    // the circle with a random rotation, random phase per oscillator
    r.tap_gains.assign(spec.num_rx * T * L, cplx{});
    std::vector<double> freq(N), phase(N);
    for (std::size_t a = 0; a < spec.num_rx; ++a) {
        for (std::size_t t = 0; t < T; ++t) {
            const double rot = two_pi * uni(rng);
            for (std::size_t n = 0; n < N; ++n) {
                const double alpha = (two_pi * static_cast<double>(n) + rot) / static_cast<double>(N);
                freq[n] = fd * std::cos(alpha);
                phase[n] = two_pi * uni(rng);
            }
            const double amp = std::sqrt(r.profile.powers[t] / static_cast<double>(N));
            for (std::size_t l = 0; l < L; ++l) {
                const double time = static_cast<double>(l) * symbol_time;
                cplx g{};
                for (std::size_t n = 0; n < N; ++n) g += std::polar(amp, two_pi * freq[n] * time + phase[n]);
                r.tap_gains[(a * T + t) * L + l] = g;
            }
        }
    }

    const double df = spec.subcarrier_spacing_hz;
    std::vector<cplx> rot(T * K);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < K; ++k)
            rot[t * K + k] = std::polar(1.0, -two_pi * static_cast<double>(k) * df * r.profile.delays[t]);
    for (std::size_t a = 0; a < spec.num_rx; ++a)
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t k = 0; k < K; ++k) {
                cplx acc{};
                for (std::size_t t = 0; t < T; ++t) acc += r.tap_gains[(a * T + t) * L + l] * rot[t * K + k];
                r.h.at(a, l, k) = acc;
            }
    return r;
}

phy::ResourceGrid apply(const phy::ResourceGrid& tx, const ChannelRealization& ch, std::uint64_t seed) {
    if (tx.antennas() != 1) throw std::invalid_argument("apply: transmit grid must carry one stream");
    if (tx.symbols() != ch.h.symbols() || tx.subcarriers() != ch.h.subcarriers())
        throw std::invalid_argument("apply: grid and channel shapes differ");
    if (ch.noise_var < 0.0) throw std::invalid_argument("apply: negative noise variance");
    phy::ResourceGrid rx(ch.h.antennas(), tx.symbols(), tx.subcarriers());
    Rng rng(derive_seed(seed, {0x6e6f697365ULL}));
    std::normal_distribution<double> gauss(0.0, std::sqrt(ch.noise_var / 2.0));
    const bool noisy = ch.noise_var > 0.0;
    for (std::size_t a = 0; a < rx.antennas(); ++a)
        for (std::size_t l = 0; l < rx.symbols(); ++l)
            for (std::size_t k = 0; k < rx.subcarriers(); ++k) {
                cplx y = ch.h.at(a, l, k) * tx.at(0, l, k);
                if (noisy) {
                    const double re = gauss(rng);
                    const double im = gauss(rng);
                    y += cplx(re, im);
                }
                rx.at(a, l, k) = y;
            }
    return rx;
}

}  // namespace hrx::channel
