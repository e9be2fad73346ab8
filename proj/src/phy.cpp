#include "hrx/phy.hpp"

#include "hrx/rng.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hrx::phy {

namespace {

// 32-cross labels on the 6x6 lattice minus corners, [y][x] with y = 0 at the
// bottom; point = (2x - 5) + j(2y - 5). A perfect Gray labeling of this
// lattice does not exist; this one has two adjacent pairs at distance 3.
constexpr std::array<std::array<int, 6>, 6> kCross32Labels{{
    {-1, 17, 1, 9, 25, -1},
    {18, 16, 0, 8, 24, 26},
    {22, 20, 4, 12, 28, 30},
    {23, 21, 5, 13, 29, 31},
    {19, 3, 7, 15, 11, 27},
    {-1, 2, 6, 14, 10, -1},
}};

// Gray PAM level for bits c[0..h-1], c[0] selecting the sign.
double pam_level(const unsigned* c, unsigned h) {
    double f = 1.0;
    for (unsigned r = h; r-- > 1;) f = std::ldexp(1.0, static_cast<int>(h - r)) - (1.0 - 2.0 * c[r]) * f;
    return (1.0 - 2.0 * c[0]) * f;
}

void normalize(std::vector<cplx>& pts) {
    double e = 0.0;
    for (auto p : pts) e += std::norm(p);
    e /= static_cast<double>(pts.size());
    const double s = 1.0 / std::sqrt(e);
    for (auto& p : pts) p *= s;
}

}  // namespace

Constellation Constellation::make(unsigned order) {
    Constellation c;
    switch (order) {
        case 4: c.name_ = "qpsk"; break;
        case 16: c.name_ = "qam16"; break;
        case 32: c.name_ = "qam32"; break;
        case 64: c.name_ = "qam64"; break;
        default: throw std::invalid_argument("unsupported modulation order " + std::to_string(order));
    }
    c.bits_ = static_cast<unsigned>(std::countr_zero(order));
    c.points_.assign(order, cplx{});
    if (order == 32) {
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x)
                if (kCross32Labels[y][x] >= 0)
                    c.points_[static_cast<std::size_t>(kCross32Labels[y][x])] = cplx(2.0 * x - 5.0, 2.0 * y - 5.0);
    } else {
        const unsigned h = c.bits_ / 2;
        std::array<unsigned, 6> b{};
        for (unsigned label = 0; label < order; ++label) {
            for (unsigned i = 0; i < c.bits_; ++i) b[i] = (label >> (c.bits_ - 1 - i)) & 1U;
            c.points_[label] = cplx(pam_level(b.data(), h), pam_level(b.data() + h, h));
        }
    }
    normalize(c.points_);
    return c;
}

Constellation Constellation::by_name(std::string_view name) {
    if (name == "qpsk") return make(4);
    if (name == "qam16") return make(16);
    if (name == "qam32") return make(32);
    if (name == "qam64") return make(64);
    throw std::invalid_argument("unknown constellation '" + std::string(name) + "'");
}

unsigned Constellation::nearest(cplx y) const {
    unsigned best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (unsigned i = 0; i < points_.size(); ++i) {
        const double d = std::norm(y - points_[i]);
        if (d < bd) {
            bd = d;
            best = i;
        }
    }
    return best;
}

std::vector<cplx> map_bits(std::span<const std::uint8_t> bits, const Constellation& c) {
    const unsigned m = c.bits_per_symbol();
    if (bits.size() % m != 0)
        throw std::invalid_argument("map_bits: " + std::to_string(bits.size()) + " bits not divisible by " +
                                    std::to_string(m));
    std::vector<cplx> out(bits.size() / m);
    for (std::size_t s = 0; s < out.size(); ++s) {
        unsigned label = 0;
        for (unsigned i = 0; i < m; ++i) label = (label << 1) | (bits[s * m + i] & 1U);
        out[s] = c.points()[label];
    }
    return out;
}

fec::Bits demap_hard(std::span<const cplx> symbols, const Constellation& c) {
    const unsigned m = c.bits_per_symbol();
    fec::Bits out(symbols.size() * m);
    for (std::size_t s = 0; s < symbols.size(); ++s) {
        const unsigned label = c.nearest(symbols[s]);
        for (unsigned i = 0; i < m; ++i) out[s * m + i] = static_cast<std::uint8_t>((label >> (m - 1 - i)) & 1U);
    }
    return out;
}

void exact_llr_into(cplx y, double noise_var, const Constellation& c, std::span<double> out, LlrMode mode) {
    if (!(noise_var > 0.0)) throw std::invalid_argument("exact_llr: noise variance must be positive");
    const unsigned m = c.bits_per_symbol();
    if (out.size() != m) throw std::invalid_argument("exact_llr: output span size mismatch");
    const auto& pts = c.points();
    std::array<double, 64> metric{};
    for (std::size_t i = 0; i < pts.size(); ++i) metric[i] = -std::norm(y - pts[i]) / noise_var;
    for (unsigned b = 0; b < m; ++b) {
        const unsigned mask = 1U << (m - 1 - b);
        double best0 = -std::numeric_limits<double>::infinity(), best1 = best0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i & mask) best1 = std::max(best1, metric[i]);
            else best0 = std::max(best0, metric[i]);
        }
        if (mode == LlrMode::MaxLog) {
            out[b] = best0 - best1;
            continue;
        }
        double s0 = 0.0, s1 = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i & mask) s1 += std::exp(metric[i] - best1);
            else s0 += std::exp(metric[i] - best0);
        }
        out[b] = (best0 + std::log(s0)) - (best1 + std::log(s1));
    }
}

std::vector<double> exact_llr(cplx y, double noise_var, const Constellation& c, LlrMode mode) {
    std::vector<double> out(c.bits_per_symbol());
    exact_llr_into(y, noise_var, c, out, mode);
    return out;
}

// ---------------------------------------------------------------------------
// resource grid

void GridSpec::validate() const {
    if (fft_size == 0 || num_symbols == 0) throw std::invalid_argument("grid: fft_size and num_symbols must be positive");
    if (guard_left + guard_right >= fft_size) throw std::invalid_argument("grid: guards leave no usable subcarriers");
    std::vector<std::size_t> p = pilot_symbols;
    std::sort(p.begin(), p.end());
    if (std::adjacent_find(p.begin(), p.end()) != p.end()) throw std::invalid_argument("grid: duplicate pilot symbol");
    for (auto l : p)
        if (l >= num_symbols) throw std::invalid_argument("grid: pilot symbol index " + std::to_string(l) + " out of range");
    if (num_usable() == 0) throw std::invalid_argument("grid: no usable subcarriers");
}

std::vector<std::size_t> GridSpec::usable_subcarriers() const {
    std::vector<std::size_t> out;
    const std::size_t dc = fft_size / 2;
    for (std::size_t k = guard_left; k + guard_right < fft_size; ++k)
        if (!(dc_null && k == dc)) out.push_back(k);
    return out;
}

std::size_t GridSpec::num_usable() const {
    const std::size_t base = fft_size - guard_left - guard_right;
    const std::size_t dc = fft_size / 2;
    const bool dc_inside = dc >= guard_left && dc + guard_right < fft_size;
    return base - ((dc_null && dc_inside) ? 1 : 0);
}

bool GridSpec::is_pilot_symbol(std::size_t l) const {
    return std::find(pilot_symbols.begin(), pilot_symbols.end(), l) != pilot_symbols.end();
}

std::vector<std::size_t> GridSpec::data_symbols() const {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < num_symbols; ++l)
        if (!is_pilot_symbol(l)) out.push_back(l);
    return out;
}

ResourceGrid::ResourceGrid(std::size_t antennas, std::size_t symbols, std::size_t subcarriers)
    : antennas_(antennas), symbols_(symbols), subcarriers_(subcarriers), values_(antennas * symbols * subcarriers) {}

PilotMatrix pilot_values(const GridSpec& spec, std::uint64_t seed) {
    PilotMatrix p;
    p.rows = spec.pilot_symbols.size();
    p.cols = spec.num_usable();
    p.values.resize(p.rows * p.cols);
    Rng rng(derive_seed(seed, {0x70696c6f74ULL}));
    const double a = 1.0 / std::sqrt(2.0);
    for (auto& v : p.values) {
        const auto r = rng();
        v = cplx((r & 1U) ? -a : a, (r & 2U) ? -a : a);
    }
    return p;
}

ResourceGrid grid_map(std::span<const cplx> data, const PilotMatrix& pilots, const GridSpec& spec) {
    spec.validate();
    if (data.size() != spec.data_capacity())
        throw std::invalid_argument("grid_map: expected " + std::to_string(spec.data_capacity()) +
                                    " data symbols, got " + std::to_string(data.size()));
    if (pilots.rows != spec.pilot_symbols.size() || pilots.cols != spec.num_usable())
        throw std::invalid_argument("grid_map: pilot matrix shape does not match the grid");
    ResourceGrid g(1, spec.num_symbols, spec.fft_size);
    const auto usable = spec.usable_subcarriers();
    for (std::size_t r = 0; r < spec.pilot_symbols.size(); ++r)
        for (std::size_t j = 0; j < usable.size(); ++j) g.at(0, spec.pilot_symbols[r], usable[j]) = pilots.at(r, j);
    std::size_t i = 0;
    for (auto l : spec.data_symbols())
        for (auto k : usable) g.at(0, l, k) = data[i++];
    return g;
}

DemappedGrid grid_demap(const ResourceGrid& grid, const GridSpec& spec) {
    spec.validate();
    if (!grid.matches(spec) || grid.antennas() == 0)
        throw std::invalid_argument("grid_demap: grid shape does not match the spec");
    const auto usable = spec.usable_subcarriers();
    const auto data_syms = spec.data_symbols();
    DemappedGrid out;
    out.data.resize(grid.antennas());
    out.pilots.resize(grid.antennas());
    for (std::size_t a = 0; a < grid.antennas(); ++a) {
        auto& d = out.data[a];
        d.reserve(spec.data_capacity());
        for (auto l : data_syms)
            for (auto k : usable) d.push_back(grid.at(a, l, k));
        auto& p = out.pilots[a];
        for (auto l : spec.pilot_symbols)
            for (auto k : usable) p.push_back(grid.at(a, l, k));
    }
    return out;
}

RePosition data_re_position(const GridSpec& spec, std::size_t j) {
    const std::size_t nu = spec.num_usable();
    if (j >= spec.data_capacity()) throw std::out_of_range("data RE index out of range");
    return {spec.data_symbols()[j / nu], spec.usable_subcarriers()[j % nu]};
}

}  // namespace hrx::phy
