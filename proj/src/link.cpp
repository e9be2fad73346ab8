#include "hrx/link.hpp"

#include "hrx/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace hrx {

Link::Link(phy::GridSpec grid, phy::Constellation constellation, std::shared_ptr<const Code> code,
           std::uint64_t pilot_seed)
    : grid_(std::move(grid)),
      constellation_(std::move(constellation)),
      code_(std::move(code)),
      pilot_seed_(pilot_seed) {
    grid_.validate();
    pilots_ = phy::pilot_values(grid_, pilot_seed_);
    if (code_ && code_->pcm.n() > bit_capacity())
        throw std::invalid_argument("link: codeword length " + std::to_string(code_->pcm.n()) +
                                    " exceeds the frame capacity of " + std::to_string(bit_capacity()) + " bits");
}

std::size_t Link::codewords_per_frame() const { return code_ ? bit_capacity() / code_->pcm.n() : 0; }

std::size_t Link::info_bits_per_frame() const {
    return code_ ? codewords_per_frame() * code_->gen.k() : bit_capacity();
}

std::size_t Link::coded_bits_per_frame() const {
    return code_ ? codewords_per_frame() * code_->pcm.n() : bit_capacity();
}

fec::Bits Link::frame_bits(std::span<const std::uint8_t> info) const {
    if (info.size() != info_bits_per_frame())
        throw std::invalid_argument("frame_bits: expected " + std::to_string(info_bits_per_frame()) +
                                    " information bits, got " + std::to_string(info.size()));
    fec::Bits out(bit_capacity(), 0);
    if (!code_) {
        std::copy(info.begin(), info.end(), out.begin());
        return out;
    }
    const std::size_t k = code_->gen.k();
    const std::size_t n = code_->pcm.n();
    for (std::size_t c = 0; c < codewords_per_frame(); ++c) {
        const auto cw = code_->gen.encode(info.subspan(c * k, k));
        std::copy(cw.begin(), cw.end(), out.begin() + static_cast<std::ptrdiff_t>(c * n));
    }
    return out;
}

phy::ResourceGrid Link::modulate(std::span<const std::uint8_t> frame_bits) const {
    const auto symbols = phy::map_bits(frame_bits, constellation_);
    return phy::grid_map(symbols, pilots_, grid_);
}

FrameSample transmit_frame(const Link& link, const channel::ChannelSpec& ch, double noise_var,
                           std::span<const std::uint8_t> info, std::uint64_t seed) {
    FrameSample f;
    f.info.assign(info.begin(), info.end());
    f.bits = link.frame_bits(f.info);
    f.channel = channel::realize(ch, link.grid(), derive_seed(seed, {2}), noise_var);
    f.rx = channel::apply(link.modulate(f.bits), f.channel, derive_seed(seed, {3}));
    return f;
}

FrameSample simulate_frame(const Link& link, const channel::ChannelSpec& ch, double noise_var, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {1}));
    fec::Bits info(link.info_bits_per_frame());
    for (auto& b : info) b = static_cast<std::uint8_t>(rng() >> 63);
    return transmit_frame(link, ch, noise_var, info, seed);
}

double snr_db_to_noise_var(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

double ebn0_to_esn0_db(double ebn0_db, unsigned bits_per_symbol, double code_rate) {
    return ebn0_db + 10.0 * std::log10(static_cast<double>(bits_per_symbol) * code_rate);
}

}  // namespace hrx
