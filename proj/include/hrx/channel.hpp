#pragma once

// Frequency-domain fading channel: per resource element responses for one
// transmit and num_rx receive antennas, Jakes time variation from a
// sum-of-sinusoids generator, and complex AWGN.

#include "hrx/phy.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hrx::channel {

using phy::cplx;

enum class Model { Ideal, FlatRayleigh, Tdl };

Model model_from_name(std::string_view name);
std::string model_name(Model m);

constexpr double kSpeedOfLight = 299792458.0;

struct ChannelSpec {
    Model model = Model::Tdl;
    double delay_spread = 266e-9;
    double speed_min_kmh = 0.0;
    double speed_max_kmh = 120.0;
    double carrier_hz = 28e9;
    double subcarrier_spacing_hz = 240e3;
    std::size_t num_rx = 2;
    std::size_t num_taps = 8;
    std::size_t num_sinusoids = 32;

    void validate() const;
    bool operator==(const ChannelSpec&) const = default;
};

/// Tap delays (s) and powers (sum 1) of an exponential power-delay profile
/// whose RMS delay spread equals delay_spread. One tap means delay 0.
struct TapProfile {
    std::vector<double> delays;
    std::vector<double> powers;
};

TapProfile exponential_profile(double delay_spread, std::size_t num_taps);
double rms_delay_spread(const TapProfile& p);

struct ChannelRealization {
    /// Frequency response indexed (rx antenna, symbol, subcarrier).
    phy::ResourceGrid h;
    double noise_var = 0.0;
    double speed_kmh = 0.0;
    TapProfile profile;
    /// Complex tap gains, [(antenna * taps + tap) * symbols + symbol].
    std::vector<cplx> tap_gains;

    cplx tap_gain(std::size_t antenna, std::size_t tap, std::size_t symbol) const {
        return tap_gains[(antenna * profile.delays.size() + tap) * h.symbols() + symbol];
    }
};

/// Maximum Doppler shift in Hz.
double doppler(double speed_kmh, double carrier_hz);

ChannelRealization realize(const ChannelSpec& spec, const phy::GridSpec& grid, std::uint64_t seed,
                           double noise_var = 0.0);

/// Y = H X + N per receive antenna; X must be a single-stream grid.
phy::ResourceGrid apply(const phy::ResourceGrid& tx, const ChannelRealization& ch, std::uint64_t seed);

}  // namespace hrx::channel
