#pragma once

// Modulation with Gray labels and soft demapping, plus OFDM resource-grid
// placement of data and pilot symbols.
//
// Bit order inside a symbol: the first bit of each group is the label MSB.
// Square QAM puts the first half of the bits on the in-phase axis and the
// second half on the quadrature axis (bit value 0 maps to the positive half).
// Data resource elements are filled symbol-major, then subcarrier, then bit.

#include "hrx/fec.hpp"

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hrx::phy {

using cplx = std::complex<double>;

enum class LlrMode { LogMap, MaxLog };

class Constellation {
public:
    /// order in {4, 16, 32, 64}; 32 is the cross constellation.
    static Constellation make(unsigned order);
    /// qpsk | qam16 | qam32 | qam64
    static Constellation by_name(std::string_view name);

    unsigned order() const { return static_cast<unsigned>(points_.size()); }
    unsigned bits_per_symbol() const { return bits_; }
    const std::string& name() const { return name_; }
    /// Points indexed by label.
    const std::vector<cplx>& points() const { return points_; }
    /// Label of the nearest point.
    unsigned nearest(cplx y) const;

private:
    std::string name_;
    unsigned bits_ = 0;
    std::vector<cplx> points_;
};

std::vector<cplx> map_bits(std::span<const std::uint8_t> bits, const Constellation& c);
fec::Bits demap_hard(std::span<const cplx> symbols, const Constellation& c);

/// Per-bit LLRs of one received symbol, positive meaning bit 0.
std::vector<double> exact_llr(cplx y, double noise_var, const Constellation& c, LlrMode mode = LlrMode::LogMap);
/// Same, written into out (size bits_per_symbol).
void exact_llr_into(cplx y, double noise_var, const Constellation& c, std::span<double> out,
                    LlrMode mode = LlrMode::LogMap);

struct GridSpec {
    std::size_t fft_size = 129;
    std::size_t guard_left = 12;
    std::size_t guard_right = 12;
    std::size_t num_symbols = 16;
    std::vector<std::size_t> pilot_symbols{2, 11};
    bool dc_null = false;

    void validate() const;
    std::vector<std::size_t> usable_subcarriers() const;
    std::vector<std::size_t> data_symbols() const;
    std::size_t num_usable() const;
    std::size_t usable_res() const { return num_usable() * num_symbols; }
    std::size_t data_capacity() const { return num_usable() * (num_symbols - pilot_symbols.size()); }
    bool is_pilot_symbol(std::size_t l) const;

    bool operator==(const GridSpec&) const = default;
};

/// Complex values indexed (antenna, OFDM symbol, subcarrier).
class ResourceGrid {
public:
    ResourceGrid() = default;
    ResourceGrid(std::size_t antennas, std::size_t symbols, std::size_t subcarriers);

    std::size_t antennas() const { return antennas_; }
    std::size_t symbols() const { return symbols_; }
    std::size_t subcarriers() const { return subcarriers_; }
    cplx& at(std::size_t a, std::size_t l, std::size_t k) { return values_[(a * symbols_ + l) * subcarriers_ + k]; }
    cplx at(std::size_t a, std::size_t l, std::size_t k) const {
        return values_[(a * symbols_ + l) * subcarriers_ + k];
    }
    std::span<cplx> values() { return values_; }
    std::span<const cplx> values() const { return values_; }
    bool matches(const GridSpec& spec) const {
        return symbols_ == spec.num_symbols && subcarriers_ == spec.fft_size;
    }

    bool operator==(const ResourceGrid&) const = default;

private:
    std::size_t antennas_ = 0;
    std::size_t symbols_ = 0;
    std::size_t subcarriers_ = 0;
    std::vector<cplx> values_;
};

/// Pilot symbols, one row per pilot OFDM symbol, one column per usable subcarrier.
struct PilotMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<cplx> values;

    cplx at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    bool operator==(const PilotMatrix&) const = default;
};

/// Unit-magnitude QPSK pilots, deterministic per seed.
PilotMatrix pilot_values(const GridSpec& spec, std::uint64_t seed);

ResourceGrid grid_map(std::span<const cplx> data, const PilotMatrix& pilots, const GridSpec& spec);

struct DemappedGrid {
    /// [antenna][data RE index]
    std::vector<std::vector<cplx>> data;
    /// [antenna][pilot symbol row * num_usable + usable index]
    std::vector<std::vector<cplx>> pilots;
};

DemappedGrid grid_demap(const ResourceGrid& grid, const GridSpec& spec);

struct RePosition {
    std::size_t symbol;
    std::size_t subcarrier;
};

/// Grid location of the j-th data resource element.
RePosition data_re_position(const GridSpec& spec, std::size_t j);

}  // namespace hrx::phy
