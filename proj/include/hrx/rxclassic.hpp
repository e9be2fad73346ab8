#pragma once

// Reference receive chains: LS pilot estimation with linear time
// interpolation, scalar-stream LMMSE combining, log-MAP demapping and BP.

#include "hrx/channel.hpp"
#include "hrx/fec.hpp"
#include "hrx/link.hpp"
#include "hrx/phy.hpp"

#include <vector>

namespace hrx::classic {

/// Floor applied to the demapper noise variance so noiseless frames still
/// produce finite, saturated LLRs.
constexpr double kMinDemapNoiseVar = 1e-12;

struct ChannelEstimate {
    phy::ResourceGrid h;
    /// Estimation error variance per (symbol, subcarrier), shared by antennas.
    std::vector<double> error_var;

    double error_at(std::size_t l, std::size_t k) const { return error_var[l * h.subcarriers() + k]; }
};

struct LsOptions {
    /// Half-width of a moving average across usable subcarriers; 0 disables it.
    std::size_t freq_smoothing = 0;
};

ChannelEstimate ls_estimate(const phy::ResourceGrid& rx, const phy::PilotMatrix& pilots, const phy::GridSpec& spec,
                            double noise_var, LsOptions opts = {});

/// LMMSE output for every data resource element, in data order.
///
/// symbols holds x = g^H y with g = h / (|h|^2 + s_eff). bias is
/// mu = |h|^2 / (|h|^2 + s_eff), and noise_var is the variance of the
/// bias-removed estimate x / mu, i.e. s_eff / |h|^2; this equals
/// s_eff * |g|^2 / mu^2 with s_eff * |g|^2 = mu (1 - mu).
struct EqualizedFrame {
    std::vector<phy::cplx> symbols;
    std::vector<double> bias;
    std::vector<double> noise_var;
};

/// Equalizes with a channel estimate; s_eff = noise_var + per-RE error variance.
EqualizedFrame lmmse_equalize(const phy::ResourceGrid& rx, const ChannelEstimate& est, double noise_var,
                              const phy::GridSpec& spec);
/// Equalizes with the true channel; s_eff = noise_var.
EqualizedFrame lmmse_equalize(const phy::ResourceGrid& rx, const phy::ResourceGrid& h, double noise_var,
                              const phy::GridSpec& spec);

/// Per-bit LLRs of the whole frame (data order). REs with zero bias carry
/// zero LLRs.
std::vector<double> demap_frame(const EqualizedFrame& eq, const phy::Constellation& c,
                                phy::LlrMode mode = phy::LlrMode::LogMap);

struct ReceiveResult {
    fec::Bits info;
    /// Decoded coded bits (codewords back to back, filler excluded).
    fec::Bits coded;
    /// Channel LLRs for the coded part of the frame.
    std::vector<double> llrs;
    std::size_t codeword_failures = 0;
};

struct ClassicOptions {
    std::size_t bp_iters = fec::kDefaultBpIterations;
    fec::CheckRule rule = fec::CheckRule::SumProduct;
    phy::LlrMode llr_mode = phy::LlrMode::LogMap;
    LsOptions ls;
};

/// Splits frame LLRs into codewords, runs BP on each and extracts info bits.
/// Uncoded links take the hard decision directly.
ReceiveResult decode_frame(std::span<const double> frame_llrs, const Link& link, const ClassicOptions& opts = {});

ReceiveResult baseline_receive(const phy::ResourceGrid& rx, const Link& link, double noise_var,
                               const ClassicOptions& opts = {});
ReceiveResult perfect_csi_receive(const phy::ResourceGrid& rx, const phy::ResourceGrid& true_h, double noise_var,
                                  const Link& link, const ClassicOptions& opts = {});

}  // namespace hrx::classic
