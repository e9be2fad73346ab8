#pragma once

// Binary linear block codes: parity-check matrices, alist I/O, PEG-style
// regular LDPC construction, systematic encoding and sum-product decoding.
//
// LLR sign convention (repo-wide): positive means bit 0 is more likely.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hrx::fec {

using Bits = std::vector<std::uint8_t>;

class AlistError : public std::runtime_error {
public:
    AlistError(std::size_t line, const std::string& what)
        : std::runtime_error("alist line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Sparse GF(2) matrix stored as per-row column index sets (sorted).
class ParityCheckMatrix {
public:
    ParityCheckMatrix() = default;
    ParityCheckMatrix(std::size_t n, std::vector<std::vector<std::uint32_t>> rows);

    std::size_t n() const { return n_; }
    std::size_t m() const { return rows_.size(); }
    const std::vector<std::uint32_t>& row(std::size_t r) const { return rows_.at(r); }
    const std::vector<std::uint32_t>& col(std::size_t c) const { return cols_.at(c); }
    const std::vector<std::vector<std::uint32_t>>& rows() const { return rows_; }
    std::size_t edge_count() const { return edges_; }

    std::vector<std::size_t> row_degrees() const;
    std::vector<std::size_t> col_degrees() const;

    /// Dense row-major 0/1 view, m x n.
    std::vector<std::uint8_t> dense() const;
    static ParityCheckMatrix from_dense(std::size_t m, std::size_t n, std::span<const std::uint8_t> entries);

    bool operator==(const ParityCheckMatrix& o) const { return n_ == o.n_ && rows_ == o.rows_; }

private:
    std::size_t n_ = 0;
    std::size_t edges_ = 0;
    std::vector<std::vector<std::uint32_t>> rows_;
    std::vector<std::vector<std::uint32_t>> cols_;
};

ParityCheckMatrix load_alist(std::string_view text);
std::string to_alist(const ParityCheckMatrix& h);

/// (dv, dc)-regular matrix by progressive edge growth: each new edge goes to a
/// check node outside (or deepest in) the current variable node's
/// neighbourhood tree, lowest degree first, ties broken by the seeded RNG.
ParityCheckMatrix build_regular_ldpc(std::size_t n, std::size_t dv, std::size_t dc, std::uint64_t seed);

/// Shortest cycle length of the Tanner graph, 0 if acyclic.
std::size_t girth(const ParityCheckMatrix& h);

std::size_t gf2_rank(const ParityCheckMatrix& h);

/// Systematic encoder derived once from H by Gaussian elimination.
/// Information bits occupy info_positions(); each parity position is the XOR
/// of the information bits selected by its row of the dense parity part.
class GeneratorMatrix {
public:
    explicit GeneratorMatrix(const ParityCheckMatrix& h);

    std::size_t k() const { return info_positions_.size(); }
    std::size_t n() const { return n_; }
    const std::vector<std::uint32_t>& info_positions() const { return info_positions_; }
    const std::vector<std::uint32_t>& parity_positions() const { return parity_positions_; }

    Bits encode(std::span<const std::uint8_t> info) const;
    Bits extract_info(std::span<const std::uint8_t> codeword) const;

private:
    std::size_t n_ = 0;
    std::size_t words_ = 0;
    std::vector<std::uint32_t> info_positions_;
    std::vector<std::uint32_t> parity_positions_;
    // one packed row over the k information bits per parity position
    std::vector<std::uint64_t> parity_rows_;
};

Bits syndrome(std::span<const std::uint8_t> bits, const ParityCheckMatrix& h);
bool is_codeword(std::span<const std::uint8_t> bits, const ParityCheckMatrix& h);

Bits hard_decision(std::span<const double> llrs);

enum class CheckRule { SumProduct, MinSum };

struct BpResult {
    Bits bits;
    std::vector<double> posterior;
    bool success = false;
    std::size_t iterations = 0;
};

constexpr std::size_t kDefaultBpIterations = 10;
constexpr double kCheckClip = 20.0;

/// Flooding BP in the LLR domain with early stop on zero syndrome. The input
/// hard decision is tested before the first iteration, so a valid input
/// returns with zero iterations.
BpResult bp_decode(std::span<const double> llrs, const ParityCheckMatrix& h,
                   std::size_t max_iters = kDefaultBpIterations, CheckRule rule = CheckRule::SumProduct);

}  // namespace hrx::fec
