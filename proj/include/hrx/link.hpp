#pragma once

// Transmit-side description of one link: grid, constellation, code and the
// placement of codewords in a frame.
//
// A frame carries floor(bit_capacity / n) codewords back to back in bit
// order; leftover bit positions carry zero filler. Without a code the frame
// carries bit_capacity raw information bits.

#include "hrx/channel.hpp"
#include "hrx/fec.hpp"
#include "hrx/phy.hpp"

#include <memory>
#include <optional>
#include <string>

namespace hrx {

struct Code {
    fec::ParityCheckMatrix pcm;
    fec::GeneratorMatrix gen;
    /// Stable identity string, e.g. "regular:128,3,6,seed=1" or "alist:<hash>".
    std::string identity;

    Code(fec::ParityCheckMatrix h, std::string id) : pcm(std::move(h)), gen(pcm), identity(std::move(id)) {}
};

class Link {
public:
    Link(phy::GridSpec grid, phy::Constellation constellation, std::shared_ptr<const Code> code,
         std::uint64_t pilot_seed);

    const phy::GridSpec& grid() const { return grid_; }
    const phy::Constellation& constellation() const { return constellation_; }
    const phy::PilotMatrix& pilots() const { return pilots_; }
    std::uint64_t pilot_seed() const { return pilot_seed_; }
    bool coded() const { return static_cast<bool>(code_); }
    const Code& code() const { return *code_; }
    std::shared_ptr<const Code> code_ptr() const { return code_; }

    unsigned bits_per_symbol() const { return constellation_.bits_per_symbol(); }
    std::size_t bit_capacity() const { return grid_.data_capacity() * bits_per_symbol(); }
    std::size_t codewords_per_frame() const;
    std::size_t info_bits_per_frame() const;
    /// Bits that carry codeword (or raw) content; the rest is filler.
    std::size_t coded_bits_per_frame() const;

    /// Encodes info bits into the full frame bit vector (length bit_capacity).
    fec::Bits frame_bits(std::span<const std::uint8_t> info) const;
    phy::ResourceGrid modulate(std::span<const std::uint8_t> frame_bits) const;

private:
    phy::GridSpec grid_;
    phy::Constellation constellation_;
    std::shared_ptr<const Code> code_;
    std::uint64_t pilot_seed_;
    phy::PilotMatrix pilots_;
};

/// One transmitted and received frame.
struct FrameSample {
    fec::Bits info;
    /// Full frame bit vector, filler included.
    fec::Bits bits;
    channel::ChannelRealization channel;
    phy::ResourceGrid rx;
};

/// Sends the given info bits; channel and noise come from streams derived
/// from seed.
FrameSample transmit_frame(const Link& link, const channel::ChannelSpec& ch, double noise_var,
                           std::span<const std::uint8_t> info, std::uint64_t seed);
/// Same with uniformly random info bits, also derived from seed.
FrameSample simulate_frame(const Link& link, const channel::ChannelSpec& ch, double noise_var, std::uint64_t seed);

/// Unit-energy Es/N0 in dB to complex noise variance.
double snr_db_to_noise_var(double snr_db);
/// Es/N0 (dB) for a given Eb/N0 at the stated spectral efficiency.
double ebn0_to_esn0_db(double ebn0_db, unsigned bits_per_symbol, double code_rate);

}  // namespace hrx
