#include "hrx/fec.hpp"

#include "hrx/rng.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace hrx::fec {

ParityCheckMatrix::ParityCheckMatrix(std::size_t n, std::vector<std::vector<std::uint32_t>> rows)
    : n_(n), rows_(std::move(rows)), cols_(n) {
    for (std::size_t r = 0; r < rows_.size(); ++r) {
        auto& row = rows_[r];
        std::sort(row.begin(), row.end());
        if (std::adjacent_find(row.begin(), row.end()) != row.end())
            throw std::invalid_argument("parity-check row " + std::to_string(r) + " has a duplicate index");
        for (auto c : row) {
            if (c >= n_)
                throw std::invalid_argument("parity-check row " + std::to_string(r) + " index " +
                                            std::to_string(c) + " out of range");
            cols_[c].push_back(static_cast<std::uint32_t>(r));
        }
        edges_ += row.size();
    }
}

std::vector<std::size_t> ParityCheckMatrix::row_degrees() const {
    std::vector<std::size_t> d;
    d.reserve(rows_.size());
    for (const auto& r : rows_) d.push_back(r.size());
    return d;
}

std::vector<std::size_t> ParityCheckMatrix::col_degrees() const {
    std::vector<std::size_t> d;
    d.reserve(cols_.size());
    for (const auto& c : cols_) d.push_back(c.size());
    return d;
}

std::vector<std::uint8_t> ParityCheckMatrix::dense() const {
    std::vector<std::uint8_t> out(m() * n_, 0);
    for (std::size_t r = 0; r < m(); ++r)
        for (auto c : rows_[r]) out[r * n_ + c] = 1;
    return out;
}

ParityCheckMatrix ParityCheckMatrix::from_dense(std::size_t m, std::size_t n, std::span<const std::uint8_t> entries) {
    if (entries.size() != m * n) throw std::invalid_argument("dense matrix size mismatch");
    std::vector<std::vector<std::uint32_t>> rows(m);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c)
            if (entries[r * n + c]) rows[r].push_back(static_cast<std::uint32_t>(c));
    return ParityCheckMatrix(n, std::move(rows));
}

// ---------------------------------------------------------------------------
// alist

namespace {

struct NumberLine {
    std::size_t line;
    std::vector<long long> values;
};

std::vector<NumberLine> parse_lines(std::string_view text) {
    std::vector<NumberLine> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        NumberLine nl{line_no, {}};
        std::size_t i = 0;
        while (true) {
            while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            if (i >= line.size()) break;
            long long v = 0;
            auto [p, ec] = std::from_chars(line.data() + i, line.data() + line.size(), v);
            if (ec != std::errc())
                throw AlistError(line_no, "expected an integer near '" + std::string(line.substr(i, 8)) + "'");
            nl.values.push_back(v);
            i = static_cast<std::size_t>(p - line.data());
        }
        if (!nl.values.empty()) out.push_back(std::move(nl));
    }
    return out;
}

}  // namespace

ParityCheckMatrix load_alist(std::string_view text) {
    const auto lines = parse_lines(text);
    if (lines.empty()) throw AlistError(1, "empty alist");
    std::size_t cursor = 0;
    auto next = [&](std::size_t expected, const char* what) -> const NumberLine& {
        if (cursor >= lines.size())
            throw AlistError(lines.back().line + 1, std::string("missing ") + what);
        const auto& l = lines[cursor++];
        if (expected && l.values.size() != expected)
            throw AlistError(l.line, std::string(what) + ": expected " + std::to_string(expected) +
                                         " values, found " + std::to_string(l.values.size()));
        return l;
    };

    const auto& dims = next(2, "dimensions");
    if (dims.values[0] <= 0 || dims.values[1] <= 0) throw AlistError(dims.line, "dimensions must be positive");
    const auto n = static_cast<std::size_t>(dims.values[0]);
    const auto m = static_cast<std::size_t>(dims.values[1]);
    const auto& maxes = next(2, "maximum degrees");
    const auto max_col = maxes.values[0];
    const auto max_row = maxes.values[1];
    const auto& col_deg = next(n, "column degrees");
    const auto& row_deg = next(m, "row degrees");

    auto check_degrees = [](const NumberLine& l, long long max, const char* what) {
        long long seen_max = 0;
        for (auto d : l.values) {
            if (d < 0 || d > max) throw AlistError(l.line, std::string(what) + " degree out of range");
            seen_max = std::max(seen_max, d);
        }
        if (seen_max != max) throw AlistError(l.line, std::string("maximum ") + what + " degree mismatch");
    };
    check_degrees(col_deg, max_col, "column");
    check_degrees(row_deg, max_row, "row");

    // one list per line; the first `degree` entries are 1-based indices, any
    // remainder must be zero padding up to the maximum degree
    auto read_list = [&](long long degree, long long max, std::size_t limit, const char* what) {
        const auto& l = next(0, what);
        if (static_cast<long long>(l.values.size()) < degree || static_cast<long long>(l.values.size()) > max)
            throw AlistError(l.line, std::string(what) + ": wrong entry count");
        std::vector<std::uint32_t> idx;
        for (long long i = 0; i < static_cast<long long>(l.values.size()); ++i) {
            const auto v = l.values[static_cast<std::size_t>(i)];
            if (i < degree) {
                if (v < 1 || v > static_cast<long long>(limit))
                    throw AlistError(l.line, std::string(what) + ": index " + std::to_string(v) +
                                                 " outside 1.." + std::to_string(limit));
                idx.push_back(static_cast<std::uint32_t>(v - 1));
            } else if (v != 0) {
                throw AlistError(l.line, std::string(what) + ": non-zero padding");
            }
        }
        std::vector<std::uint32_t> sorted = idx;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw AlistError(l.line, std::string(what) + ": duplicate index");
        return std::make_pair(l.line, sorted);
    };

    std::vector<std::vector<std::uint32_t>> cols(n);
    for (std::size_t c = 0; c < n; ++c) cols[c] = read_list(col_deg.values[c], max_col, m, "column list").second;
    std::vector<std::vector<std::uint32_t>> rows(m);
    for (std::size_t r = 0; r < m; ++r) {
        auto [line, row] = read_list(row_deg.values[r], max_row, n, "row list");
        for (auto c : row) {
            if (!std::binary_search(cols[c].begin(), cols[c].end(), static_cast<std::uint32_t>(r)))
                throw AlistError(line, "row list entry " + std::to_string(c + 1) +
                                           " missing from the matching column list");
        }
        rows[r] = std::move(row);
    }
    std::size_t col_edges = 0;
    for (const auto& c : cols) col_edges += c.size();
    std::size_t row_edges = 0;
    for (const auto& r : rows) row_edges += r.size();
    if (col_edges != row_edges)
        throw AlistError(lines.back().line, "column and row sections disagree on the edge count");
    return ParityCheckMatrix(n, std::move(rows));
}

std::string to_alist(const ParityCheckMatrix& h) {
    const auto cd = h.col_degrees();
    const auto rd = h.row_degrees();
    const auto max_c = cd.empty() ? 0 : *std::max_element(cd.begin(), cd.end());
    const auto max_r = rd.empty() ? 0 : *std::max_element(rd.begin(), rd.end());
    std::ostringstream os;
    os << h.n() << ' ' << h.m() << '\n' << max_c << ' ' << max_r << '\n';
    for (std::size_t i = 0; i < cd.size(); ++i) os << (i ? " " : "") << cd[i];
    os << '\n';
    for (std::size_t i = 0; i < rd.size(); ++i) os << (i ? " " : "") << rd[i];
    os << '\n';
    auto emit = [&](const std::vector<std::uint32_t>& list, std::size_t width) {
        for (std::size_t i = 0; i < width; ++i) os << (i ? " " : "") << (i < list.size() ? list[i] + 1 : 0);
        os << '\n';
    };
    for (std::size_t c = 0; c < h.n(); ++c) emit(h.col(c), max_c);
    for (std::size_t r = 0; r < h.m(); ++r) emit(h.row(r), max_r);
    return os.str();
}

// ---------------------------------------------------------------------------
// construction

namespace {

constexpr std::size_t kUnreached = std::numeric_limits<std::size_t>::max();

// Depth (in check-node layers) of every check node in the tree grown from vn.
void check_depths(std::size_t vn, const std::vector<std::vector<std::uint32_t>>& vn_adj,
                  const std::vector<std::vector<std::uint32_t>>& cn_adj, std::vector<std::size_t>& depth,
                  std::vector<std::size_t>& vn_seen_stamp, std::size_t stamp) {
    std::fill(depth.begin(), depth.end(), kUnreached);
    std::vector<std::uint32_t> frontier{static_cast<std::uint32_t>(vn)};
    vn_seen_stamp[vn] = stamp;
    std::size_t d = 0;
    while (!frontier.empty()) {
        std::vector<std::uint32_t> next_cns;
        for (auto v : frontier)
            for (auto c : vn_adj[v])
                if (depth[c] == kUnreached) {
                    depth[c] = d;
                    next_cns.push_back(c);
                }
        std::vector<std::uint32_t> next_vns;
        for (auto c : next_cns)
            for (auto v : cn_adj[c])
                if (vn_seen_stamp[v] != stamp) {
                    vn_seen_stamp[v] = stamp;
                    next_vns.push_back(v);
                }
        frontier = std::move(next_vns);
        ++d;
    }
}

}  // namespace

ParityCheckMatrix build_regular_ldpc(std::size_t n, std::size_t dv, std::size_t dc, std::uint64_t seed) {
    if (dv < 2 || dc < 2 || n == 0) throw std::invalid_argument("regular LDPC: need dv >= 2, dc >= 2, n > 0");
    if ((n * dv) % dc != 0)
        throw std::invalid_argument("regular LDPC: n*dv = " + std::to_string(n * dv) + " not divisible by dc = " +
                                    std::to_string(dc));
    const std::size_t m = n * dv / dc;
    if (dv > m || dc > n) throw std::invalid_argument("regular LDPC: degrees exceed matrix dimensions");

    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        Rng rng(derive_seed(seed, {attempt}));
        std::vector<std::vector<std::uint32_t>> vn_adj(n), cn_adj(m);
        std::vector<std::size_t> depth(m), stamp(n, 0);
        std::size_t stamp_counter = 0;
        bool failed = false;
        for (std::size_t v = 0; v < n && !failed; ++v) {
            for (std::size_t e = 0; e < dv; ++e) {
                std::vector<std::uint32_t> cands;
                if (e == 0) {
                    for (std::uint32_t c = 0; c < m; ++c)
                        if (cn_adj[c].size() < dc) cands.push_back(c);
                } else {
                    check_depths(v, vn_adj, cn_adj, depth, stamp, ++stamp_counter);
                    std::size_t best = 0;
                    bool any_unreached = false;
                    for (std::uint32_t c = 0; c < m; ++c) {
                        if (cn_adj[c].size() >= dc || depth[c] == 0) continue;
                        if (depth[c] == kUnreached) any_unreached = true;
                        else best = std::max(best, depth[c]);
                    }
                    for (std::uint32_t c = 0; c < m; ++c) {
                        if (cn_adj[c].size() >= dc || depth[c] == 0) continue;
                        if (any_unreached ? depth[c] == kUnreached : depth[c] == best) cands.push_back(c);
                    }
                }
                if (cands.empty()) {
                    failed = true;
                    break;
                }
                std::size_t min_deg = dc;
                for (auto c : cands) min_deg = std::min(min_deg, cn_adj[c].size());
                std::erase_if(cands, [&](std::uint32_t c) { return cn_adj[c].size() != min_deg; });
                std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
                const auto c = cands[pick(rng)];
                vn_adj[v].push_back(c);
                cn_adj[c].push_back(static_cast<std::uint32_t>(v));
            }
        }
        if (!failed) return ParityCheckMatrix(n, std::move(cn_adj));
    }
    throw std::invalid_argument("regular LDPC: construction failed for n=" + std::to_string(n) +
                                ", dv=" + std::to_string(dv) + ", dc=" + std::to_string(dc));
}

std::size_t girth(const ParityCheckMatrix& h) {
    // nodes: variables 0..n-1, checks n..n+m-1
    const std::size_t n = h.n();
    const std::size_t total = n + h.m();
    auto neighbours = [&](std::size_t u) -> std::vector<std::size_t> {
        std::vector<std::size_t> out;
        if (u < n)
            for (auto c : h.col(u)) out.push_back(n + c);
        else
            for (auto v : h.row(u - n)) out.push_back(v);
        return out;
    };
    std::size_t best = kUnreached;
    std::vector<std::size_t> dist(total), parent(total);
    for (std::size_t s = 0; s < n; ++s) {
        std::fill(dist.begin(), dist.end(), kUnreached);
        dist[s] = 0;
        parent[s] = kUnreached;
        std::deque<std::size_t> q{s};
        while (!q.empty()) {
            const auto u = q.front();
            q.pop_front();
            if (2 * dist[u] >= best) break;
            for (auto w : neighbours(u)) {
                if (dist[w] == kUnreached) {
                    dist[w] = dist[u] + 1;
                    parent[w] = u;
                    q.push_back(w);
                } else if (parent[u] != w) {
                    best = std::min(best, dist[u] + dist[w] + 1);
                }
            }
        }
    }
    return best == kUnreached ? 0 : best;
}

// ---------------------------------------------------------------------------
// GF(2) elimination and encoding

namespace {

struct PackedRows {
    std::size_t words = 0;
    std::vector<std::uint64_t> bits;

    std::uint64_t* row(std::size_t r) { return bits.data() + r * words; }
    bool get(std::size_t r, std::size_t c) const { return (bits[r * words + c / 64] >> (c % 64)) & 1U; }
};

PackedRows pack(const ParityCheckMatrix& h) {
    PackedRows p;
    p.words = (h.n() + 63) / 64;
    p.bits.assign(h.m() * p.words, 0);
    for (std::size_t r = 0; r < h.m(); ++r)
        for (auto c : h.row(r)) p.bits[r * p.words + c / 64] |= std::uint64_t{1} << (c % 64);
    return p;
}

// Reduced row echelon form, pivots searched from the last column down.
// Returns pivot column per reduced row.
std::vector<std::uint32_t> reduce(PackedRows& p, std::size_t m, std::size_t n) {
    std::vector<std::uint32_t> pivots;
    std::size_t rank = 0;
    for (std::size_t cc = n; cc-- > 0 && rank < m;) {
        std::size_t sel = m;
        for (std::size_t r = rank; r < m; ++r)
            if (p.get(r, cc)) {
                sel = r;
                break;
            }
        if (sel == m) continue;
        if (sel != rank) std::swap_ranges(p.row(sel), p.row(sel) + p.words, p.row(rank));
        for (std::size_t r = 0; r < m; ++r) {
            if (r != rank && p.get(r, cc)) {
                auto* dst = p.row(r);
                const auto* src = p.row(rank);
                for (std::size_t w = 0; w < p.words; ++w) dst[w] ^= src[w];
            }
        }
        pivots.push_back(static_cast<std::uint32_t>(cc));
        ++rank;
    }
    return pivots;
}

}  // namespace

std::size_t gf2_rank(const ParityCheckMatrix& h) {
    auto p = pack(h);
    return reduce(p, h.m(), h.n()).size();
}

GeneratorMatrix::GeneratorMatrix(const ParityCheckMatrix& h) : n_(h.n()) {
    auto p = pack(h);
    const auto pivots = reduce(p, h.m(), h.n());
    std::vector<bool> is_pivot(n_, false);
    for (auto c : pivots) is_pivot[c] = true;
    std::vector<std::uint32_t> info_index(n_, 0);
    for (std::uint32_t c = 0; c < n_; ++c)
        if (!is_pivot[c]) {
            info_index[c] = static_cast<std::uint32_t>(info_positions_.size());
            info_positions_.push_back(c);
        }
    parity_positions_ = pivots;
    words_ = (info_positions_.size() + 63) / 64;
    parity_rows_.assign(pivots.size() * words_, 0);
    for (std::size_t r = 0; r < pivots.size(); ++r)
        for (auto c : info_positions_)
            if (p.get(r, c)) {
                const auto i = info_index[c];
                parity_rows_[r * words_ + i / 64] |= std::uint64_t{1} << (i % 64);
            }
}

Bits GeneratorMatrix::encode(std::span<const std::uint8_t> info) const {
    if (info.size() != k())
        throw std::invalid_argument("encode: expected " + std::to_string(k()) + " information bits, got " +
                                    std::to_string(info.size()));
    std::vector<std::uint64_t> packed(words_, 0);
    for (std::size_t i = 0; i < info.size(); ++i)
        if (info[i] & 1U) packed[i / 64] |= std::uint64_t{1} << (i % 64);
    Bits cw(n_, 0);
    for (std::size_t i = 0; i < info.size(); ++i) cw[info_positions_[i]] = info[i] & 1U;
    for (std::size_t r = 0; r < parity_positions_.size(); ++r) {
        unsigned acc = 0;
        for (std::size_t w = 0; w < words_; ++w)
            acc += static_cast<unsigned>(std::popcount(parity_rows_[r * words_ + w] & packed[w]));
        cw[parity_positions_[r]] = static_cast<std::uint8_t>(acc & 1U);
    }
    return cw;
}

Bits GeneratorMatrix::extract_info(std::span<const std::uint8_t> codeword) const {
    if (codeword.size() != n_) throw std::invalid_argument("extract_info: codeword length mismatch");
    Bits out(info_positions_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = codeword[info_positions_[i]];
    return out;
}

Bits syndrome(std::span<const std::uint8_t> bits, const ParityCheckMatrix& h) {
    if (bits.size() != h.n())
        throw std::invalid_argument("syndrome: word length " + std::to_string(bits.size()) + " != n = " +
                                    std::to_string(h.n()));
    Bits s(h.m(), 0);
    for (std::size_t r = 0; r < h.m(); ++r) {
        std::uint8_t acc = 0;
        for (auto c : h.row(r)) acc ^= bits[c] & 1U;
        s[r] = acc;
    }
    return s;
}

bool is_codeword(std::span<const std::uint8_t> bits, const ParityCheckMatrix& h) {
    const auto s = syndrome(bits, h);
    return std::all_of(s.begin(), s.end(), [](std::uint8_t b) { return b == 0; });
}

Bits hard_decision(std::span<const double> llrs) {
    Bits out(llrs.size());
    for (std::size_t i = 0; i < llrs.size(); ++i) out[i] = llrs[i] < 0.0 ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// belief propagation

BpResult bp_decode(std::span<const double> llrs, const ParityCheckMatrix& h, std::size_t max_iters, CheckRule rule) {
    if (llrs.size() != h.n())
        throw std::invalid_argument("bp_decode: " + std::to_string(llrs.size()) + " LLRs for n = " +
                                    std::to_string(h.n()));
    BpResult res;
    res.posterior.assign(llrs.begin(), llrs.end());
    res.bits = hard_decision(llrs);
    res.success = is_codeword(res.bits, h);
    if (res.success || max_iters == 0) return res;

    const std::size_t m = h.m();
    std::vector<std::size_t> row_off(m + 1, 0);
    for (std::size_t r = 0; r < m; ++r) row_off[r + 1] = row_off[r] + h.row(r).size();
    const std::size_t edges = row_off[m];
    std::vector<std::uint32_t> edge_var(edges);
    std::vector<std::vector<std::uint32_t>> var_edges(h.n());
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t i = 0; i < h.row(r).size(); ++i) {
            const auto e = row_off[r] + i;
            edge_var[e] = h.row(r)[i];
            var_edges[h.row(r)[i]].push_back(static_cast<std::uint32_t>(e));
        }

    std::vector<double> v2c(edges), c2v(edges, 0.0), fwd, bwd;
    for (std::size_t e = 0; e < edges; ++e) v2c[e] = llrs[edge_var[e]];

    for (std::size_t it = 1; it <= max_iters; ++it) {
        for (std::size_t r = 0; r < m; ++r) {
            const auto b = row_off[r];
            const auto d = row_off[r + 1] - b;
            if (d == 0) continue;
            if (rule == CheckRule::SumProduct) {
                // leave-one-out products of tanh(L/2) via prefix/suffix scans
                fwd.assign(d + 1, 1.0);
                bwd.assign(d + 1, 1.0);
                for (std::size_t i = 0; i < d; ++i) fwd[i + 1] = fwd[i] * std::tanh(0.5 * v2c[b + i]);
                for (std::size_t i = d; i-- > 0;) bwd[i] = bwd[i + 1] * std::tanh(0.5 * v2c[b + i]);
                for (std::size_t i = 0; i < d; ++i) {
                    const double t = fwd[i] * bwd[i + 1];
                    c2v[b + i] = std::clamp(2.0 * std::atanh(t), -kCheckClip, kCheckClip);
                }
            } else {
                double min1 = std::numeric_limits<double>::infinity(), min2 = min1;
                std::size_t argmin = 0;
                int sign = 1;
                for (std::size_t i = 0; i < d; ++i) {
                    const double a = std::abs(v2c[b + i]);
                    if (v2c[b + i] < 0) sign = -sign;
                    if (a < min1) {
                        min2 = min1;
                        min1 = a;
                        argmin = i;
                    } else if (a < min2) {
                        min2 = a;
                    }
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double mag = i == argmin ? min2 : min1;
                    const int s = v2c[b + i] < 0 ? -sign : sign;
                    c2v[b + i] = std::clamp(s * mag, -kCheckClip, kCheckClip);
                }
            }
        }
        for (std::size_t v = 0; v < h.n(); ++v) {
            double total = llrs[v];
            for (auto e : var_edges[v]) total += c2v[e];
            res.posterior[v] = total;
            for (auto e : var_edges[v]) v2c[e] = total - c2v[e];
        }
        res.bits = hard_decision(res.posterior);
        res.iterations = it;
        if (is_codeword(res.bits, h)) {
            res.success = true;
            break;
        }
    }
    return res;
}

}  // namespace hrx::fec
