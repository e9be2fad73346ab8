#include "hrx/hnr.hpp"

#include "hrx/rng.hpp"
#include "hrx/rxclassic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace hrx::hnr {

using diff::Array;
using diff::Graph;
using diff::Value;

void HnrConfig::validate() const {
    const std::size_t dims[] = {num_blocks, num_heads, embed_dim, ffn_dim, gnn_embed_dim, gnn_msg_dim,
                                gnn_hidden, cn_mlp_layers, vn_mlp_layers, edge_feature_dim};
    for (std::size_t d : dims)
        if (d == 0) throw std::invalid_argument("hnr config: every dimension and layer count must be positive");
    if (embed_dim % num_heads != 0)
        throw std::invalid_argument("hnr config: embed_dim must be divisible by num_heads");
}

std::string HnrConfig::canonical() const {
    std::ostringstream os;
    os << "blocks=" << num_blocks << ";heads=" << num_heads << ";embed=" << embed_dim << ";ffn=" << ffn_dim
       << ";gnn_embed=" << gnn_embed_dim << ";gnn_msg=" << gnn_msg_dim << ";gnn_hidden=" << gnn_hidden
       << ";cn_layers=" << cn_mlp_layers << ";vn_layers=" << vn_mlp_layers << ";edge_dim=" << edge_feature_dim
       << ";mp_iters=" << mp_iters << ";pilot_tokens=" << pilot_tokens;
    return os.str();
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fingerprint(const HnrConfig& cfg, const Link& link, std::size_t num_rx) {
    const auto& g = link.grid();
    std::ostringstream os;
    os << cfg.canonical() << "|grid:" << g.fft_size << ',' << g.guard_left << ',' << g.guard_right << ','
       << g.num_symbols << ",dc=" << g.dc_null << ",pilots=";
    for (auto p : g.pilot_symbols) os << p << ' ';
    os << "|pilot_seed=" << link.pilot_seed() << "|const=" << link.constellation().name()
       << "|code=" << (link.coded() ? link.code().identity : std::string("none")) << "|rx=" << num_rx;
    return fnv1a(os.str());
}

// ---------------------------------------------------------------------------
// tokens

std::size_t feature_dim(std::size_t num_rx) { return 2 * num_rx + 5; }

TokenLayout TokenLayout::make(const phy::GridSpec& spec, bool pilot_tokens) {
    TokenLayout t;
    const std::size_t U = spec.num_usable();
    std::size_t row = 0;
    for (std::size_t l = 0; l < spec.num_symbols; ++l) {
        const bool pilot = spec.is_pilot_symbol(l);
        if (pilot && !pilot_tokens) continue;
        for (std::size_t j = 0; j < U; ++j, ++row)
            if (!pilot) t.data_token.push_back(static_cast<std::uint32_t>(row));
    }
    t.num_tokens = row;
    return t;
}

Array featurize(const phy::ResourceGrid& rx, double noise_var, const Link& link, bool pilot_tokens) {
    const auto& spec = link.grid();
    if (!rx.matches(spec)) throw std::invalid_argument("featurize: received grid does not match the link grid");
    if (noise_var < 0.0) throw std::invalid_argument("featurize: negative noise variance");
    const std::size_t A = rx.antennas();
    const std::size_t F = feature_dim(A);
    const auto usable = spec.usable_subcarriers();
    const std::size_t U = usable.size();
    const auto layout = TokenLayout::make(spec, pilot_tokens);
    const double log_nv = std::log(std::max(noise_var, kMinNoiseVar));
    const double k_den = U > 1 ? static_cast<double>(U - 1) : 1.0;
    const double l_den = spec.num_symbols > 1 ? static_cast<double>(spec.num_symbols - 1) : 1.0;

    Array out({layout.num_tokens, F});
    std::size_t row = 0;
    for (std::size_t l = 0; l < spec.num_symbols; ++l) {
        const bool pilot = spec.is_pilot_symbol(l);
        if (pilot && !pilot_tokens) continue;
        std::size_t pilot_row = 0;
        if (pilot)
            pilot_row = static_cast<std::size_t>(
                std::find(spec.pilot_symbols.begin(), spec.pilot_symbols.end(), l) - spec.pilot_symbols.begin());
        for (std::size_t j = 0; j < U; ++j, ++row) {
            double* f = out.data.data() + row * F;
            for (std::size_t a = 0; a < A; ++a) {
                const auto y = rx.at(a, l, usable[j]);
                f[2 * a] = y.real();
                f[2 * a + 1] = y.imag();
            }
            if (pilot) {
                const auto p = link.pilots().at(pilot_row, j);
                f[2 * A] = p.real();
                f[2 * A + 1] = p.imag();
            }
            f[2 * A + 2] = log_nv;
            f[2 * A + 3] = static_cast<double>(j) / k_den;
            f[2 * A + 4] = static_cast<double>(l) / l_den;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tanner graph

TannerGraph TannerGraph::build(const fec::ParityCheckMatrix& h) {
    TannerGraph t;
    t.num_vn = h.n();
    t.num_cn = h.m();
    for (std::size_t r = 0; r < h.m(); ++r) {
        if (h.row(r).empty()) throw std::invalid_argument("tanner graph: check " + std::to_string(r) + " has no edges");
        for (auto c : h.row(r)) {
            t.edge_vn.push_back(c);
            t.edge_cn.push_back(static_cast<std::uint32_t>(r));
        }
    }
    for (std::size_t c = 0; c < h.n(); ++c)
        if (h.col(c).empty()) throw std::invalid_argument("tanner graph: variable " + std::to_string(c) + " has no edges");
    return t;
}

TannerGraph TannerGraph::replicate(std::size_t copies) const {
    TannerGraph t;
    t.num_vn = num_vn * copies;
    t.num_cn = num_cn * copies;
    t.edge_vn.reserve(num_edges() * copies);
    t.edge_cn.reserve(num_edges() * copies);
    for (std::size_t c = 0; c < copies; ++c)
        for (std::size_t e = 0; e < num_edges(); ++e) {
            t.edge_vn.push_back(static_cast<std::uint32_t>(edge_vn[e] + c * num_vn));
            t.edge_cn.push_back(static_cast<std::uint32_t>(edge_cn[e] + c * num_cn));
        }
    return t;
}

// ---------------------------------------------------------------------------
// model

namespace {

class Initializer {
public:
    Initializer(diff::ParameterSet& params, std::uint64_t seed) : params_(params), rng_(seed) {}

    Dense dense(const std::string& name, std::size_t in, std::size_t out, bool zero = false) {
        Array w({in, out});
        if (!zero) {
            const double a = std::sqrt(6.0 / static_cast<double>(in + out));
            std::uniform_real_distribution<double> uni(-a, a);
            for (double& v : w.data) v = uni(rng_);
        }
        Dense d;
        d.weight = params_.add(name + ".w", std::move(w));
        d.bias = params_.add(name + ".b", Array({1, out}));
        return d;
    }

    std::size_t vector(const std::string& name, std::size_t n, double fill) {
        return params_.add(name, Array({1, n}, fill));
    }

    std::size_t random_vector(const std::string& name, std::size_t n) {
        Array v({1, n});
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (double& x : v.data) x = gauss(rng_);
        return params_.add(name, std::move(v));
    }

    std::vector<Dense> mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                           std::size_t layers) {
        std::vector<Dense> ls;
        for (std::size_t i = 0; i < layers; ++i) {
            const std::size_t a = i == 0 ? in : hidden;
            const std::size_t b = i + 1 == layers ? out : hidden;
            ls.push_back(dense(name + "." + std::to_string(i), a, b));
        }
        return ls;
    }

private:
    diff::ParameterSet& params_;
    Rng rng_;
};

}  // namespace

HnrModel::HnrModel(HnrConfig cfg, std::size_t num_rx, unsigned bits_per_symbol, std::uint64_t init_seed)
    : cfg_(std::move(cfg)), num_rx_(num_rx), bps_(bits_per_symbol) {
    cfg_.validate();
    if (num_rx == 0 || bits_per_symbol == 0) throw std::invalid_argument("hnr model: empty antenna or bit count");
    Initializer init(params, init_seed);
    const std::size_t D = cfg_.embed_dim;
    input = init.dense("tx.in", feature_dim(num_rx), D);
    for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
        const std::string p = "tx.block" + std::to_string(b);
        BlockParams bp;
        bp.ln1_gain = init.vector(p + ".ln1.gain", D, 1.0);
        bp.ln1_bias = init.vector(p + ".ln1.bias", D, 0.0);
        bp.query = init.dense(p + ".query", D, D);
        bp.key = init.dense(p + ".key", D, D);
        bp.value = init.dense(p + ".value", D, D);
        bp.output = init.dense(p + ".output", D, D);
        bp.ln2_gain = init.vector(p + ".ln2.gain", D, 1.0);
        bp.ln2_bias = init.vector(p + ".ln2.bias", D, 0.0);
        bp.ffn1 = init.dense(p + ".ffn1", D, cfg_.ffn_dim);
        bp.ffn2 = init.dense(p + ".ffn2", cfg_.ffn_dim, D);
        blocks.push_back(bp);
    }
    final_gain = init.vector("tx.final.gain", D, 1.0);
    final_bias = init.vector("tx.final.bias", D, 0.0);
    head = init.dense("tx.head", D, bits_per_symbol, true);

    const std::size_t ge = cfg_.gnn_embed_dim;
    const std::size_t gm = cfg_.gnn_msg_dim;
    const std::size_t gh = cfg_.gnn_hidden;
    const std::size_t ed = cfg_.edge_feature_dim;
    llr_embed = init.dense("gnn.llr", 1, ge);
    gamma_vc = init.random_vector("gnn.gamma_vc", ed);
    gamma_cv = init.random_vector("gnn.gamma_cv", ed);
    msg_vc = init.mlp("gnn.msg_vc", 2 * ge + ed, gh, gm, 2);
    msg_cv = init.mlp("gnn.msg_cv", 2 * ge + ed, gh, gm, 2);
    cn_update = init.mlp("gnn.cn", ge + gm + 1, gh, ge, cfg_.cn_mlp_layers);
    vn_update = init.mlp("gnn.vn", ge + gm + 1, gh, ge, cfg_.vn_mlp_layers);
    readout = init.dense("gnn.readout", ge, 1);
}

void HnrModel::zero() {
    for (std::size_t i = 0; i < params.size(); ++i)
        std::fill(params.value(i).data.begin(), params.value(i).data.end(), 0.0);
}

void HnrModel::check_layout(const diff::ParameterSet& loaded) const {
    if (loaded.size() != params.size())
        throw std::invalid_argument("hnr model: expected " + std::to_string(params.size()) + " arrays, got " +
                                    std::to_string(loaded.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
        if (loaded.name(i) != params.name(i) || loaded.value(i).shape != params.value(i).shape)
            throw std::invalid_argument("hnr model: array " + std::to_string(i) + " is '" + loaded.name(i) + "' " +
                                        diff::shape_string(loaded.value(i).shape) + ", expected '" + params.name(i) +
                                        "' " + diff::shape_string(params.value(i).shape));
}

std::size_t parameter_count(const HnrConfig& cfg, std::size_t num_rx, unsigned bits_per_symbol) {
    const std::size_t D = cfg.embed_dim, Fh = cfg.ffn_dim, F = feature_dim(num_rx);
    const std::size_t per_block = 4 * D + 4 * (D * D + D) + (D * Fh + Fh) + (Fh * D + D);
    const std::size_t tx = (F * D + D) + cfg.num_blocks * per_block + 2 * D + (D * bits_per_symbol + bits_per_symbol);

    const std::size_t ge = cfg.gnn_embed_dim, gm = cfg.gnn_msg_dim, gh = cfg.gnn_hidden,
                      ed = cfg.edge_feature_dim;
    auto mlp = [gh](std::size_t in, std::size_t out, std::size_t layers) {
        if (layers == 1) return in * out + out;
        return (in * gh + gh) + (layers - 2) * (gh * gh + gh) + (gh * out + out);
    };
    const std::size_t gnn = 2 * ge + 2 * ed + 2 * mlp(2 * ge + ed, gm, 2) + mlp(ge + gm + 1, ge, cfg.cn_mlp_layers) +
                            mlp(ge + gm + 1, ge, cfg.vn_mlp_layers) + (ge + 1);
    return tx + gnn;
}

// ---------------------------------------------------------------------------
// graph builders

namespace {

Value linear(Graph& g, const Dense& d, Value x) { return g.add(g.matmul(x, g.param(d.weight)), g.param(d.bias)); }

Value mlp(Graph& g, const std::vector<Dense>& layers, Value x) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = linear(g, layers[i], x);
        if (i + 1 < layers.size()) x = g.relu(x);
    }
    return x;
}

}  // namespace

Value transformer_forward(Graph& g, const HnrModel& m, Value tokens, std::size_t batch, std::size_t num_tokens,
                          TransformerTrace* trace) {
    const auto& cfg = m.config();
    const auto& in = g.value(tokens);
    if (in.rank() != 2 || in.rows() != batch * num_tokens || in.cols() != feature_dim(m.num_rx()))
        throw diff::ShapeError(g.size(), "transformer: token matrix " + diff::shape_string(in.shape) +
                                             " does not match batch " + std::to_string(batch) + " x " +
                                             std::to_string(num_tokens) + " tokens");
    const std::size_t H = cfg.num_heads;
    const std::size_t dk = cfg.embed_dim / H;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    Value x = linear(g, m.input, tokens);
    for (std::size_t bi = 0; bi < m.blocks.size(); ++bi) {
        const auto& bp = m.blocks[bi];
        try {
            const Value h = g.layer_norm(x, g.param(bp.ln1_gain), g.param(bp.ln1_bias));
            const Value q = linear(g, bp.query, h);
            const Value k = linear(g, bp.key, h);
            const Value v = linear(g, bp.value, h);
            std::vector<Value> frames;
            frames.reserve(batch);
            for (std::size_t f = 0; f < batch; ++f) {
                const std::size_t r0 = f * num_tokens, r1 = r0 + num_tokens;
                const Value qf = batch == 1 ? q : g.slice_rows(q, r0, r1);
                const Value kf = batch == 1 ? k : g.slice_rows(k, r0, r1);
                const Value vf = batch == 1 ? v : g.slice_rows(v, r0, r1);
                std::vector<Value> heads;
                heads.reserve(H);
                for (std::size_t hd = 0; hd < H; ++hd) {
                    const std::size_t c0 = hd * dk, c1 = c0 + dk;
                    const Value qh = H == 1 ? qf : g.slice_cols(qf, c0, c1);
                    const Value kh = H == 1 ? kf : g.slice_cols(kf, c0, c1);
                    const Value vh = H == 1 ? vf : g.slice_cols(vf, c0, c1);
                    const Value att = g.softmax(g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt_dk));
                    if (trace) trace->attention.push_back(att);
                    heads.push_back(g.matmul(att, vh));
                }
                frames.push_back(H == 1 ? heads[0] : g.concat(heads));
            }
            const Value attended = batch == 1 ? frames[0] : g.concat_rows(frames);
            x = g.add(x, linear(g, bp.output, attended));
            const Value h2 = g.layer_norm(x, g.param(bp.ln2_gain), g.param(bp.ln2_bias));
            x = g.add(x, linear(g, bp.ffn2, g.relu(linear(g, bp.ffn1, h2))));
        } catch (const diff::NonFiniteError& e) {
            throw diff::NonFiniteError(e.node(), "transformer block " + std::to_string(bi) + ": " + e.what());
        }
    }
    x = g.layer_norm(x, g.param(m.final_gain), g.param(m.final_bias));
    return linear(g, m.head, x);
}

Value frame_llrs(Graph& g, Value head_out, const TokenLayout& layout, std::size_t batch, unsigned bits_per_symbol,
                 std::size_t coded_bits) {
    const std::size_t data_res = layout.data_token.size();
    if (coded_bits > data_res * bits_per_symbol)
        throw std::invalid_argument("frame_llrs: coded bits exceed the data capacity");
    std::vector<std::uint32_t> rows;
    rows.reserve(batch * data_res);
    for (std::size_t f = 0; f < batch; ++f)
        for (auto t : layout.data_token) rows.push_back(static_cast<std::uint32_t>(f * layout.num_tokens + t));
    const Value data = g.gather_rows(head_out, rows);
    const Value flat = g.reshape(data, {batch * data_res * bits_per_symbol, 1});
    if (coded_bits == data_res * bits_per_symbol) return flat;
    std::vector<std::uint32_t> keep;
    keep.reserve(batch * coded_bits);
    for (std::size_t f = 0; f < batch; ++f)
        for (std::size_t i = 0; i < coded_bits; ++i)
            keep.push_back(static_cast<std::uint32_t>(f * data_res * bits_per_symbol + i));
    return g.gather_rows(flat, keep);
}

Value gnn_forward(Graph& g, const HnrModel& m, const TannerGraph& tg, Value llrs, std::size_t iters) {
    const auto& l = g.value(llrs);
    if (l.rank() != 2 || l.rows() != tg.num_vn || l.cols() != 1)
        throw diff::ShapeError(g.size(), "gnn: expected " + std::to_string(tg.num_vn) + " LLRs, got " +
                                             diff::shape_string(l.shape));
    const std::size_t E = tg.num_edges();
    const std::vector<std::uint32_t> broadcast(E, 0);
    const Value gamma_vc = g.gather_rows(g.param(m.gamma_vc), broadcast);
    const Value gamma_cv = g.gather_rows(g.param(m.gamma_cv), broadcast);
    const Value cn_feature = g.constant(Array({tg.num_cn, 1}));

    Value zv = linear(g, m.llr_embed, llrs);
    Value zc = g.constant(Array({tg.num_cn, m.config().gnn_embed_dim}));
    for (std::size_t it = 0; it < iters; ++it) {
        const Value to_c = mlp(g, m.msg_vc,
                               g.concat(std::vector<Value>{g.gather_rows(zv, tg.edge_vn), g.gather_rows(zc, tg.edge_cn),
                                                           gamma_vc}));
        const Value agg_c = g.scatter_add_rows(to_c, tg.edge_cn, tg.num_cn);
        zc = g.add(zc, mlp(g, m.cn_update, g.concat(std::vector<Value>{zc, agg_c, cn_feature})));

        const Value to_v = mlp(g, m.msg_cv,
                               g.concat(std::vector<Value>{g.gather_rows(zc, tg.edge_cn), g.gather_rows(zv, tg.edge_vn),
                                                           gamma_cv}));
        const Value agg_v = g.scatter_add_rows(to_v, tg.edge_vn, tg.num_vn);
        zv = g.add(zv, mlp(g, m.vn_update, g.concat(std::vector<Value>{zv, agg_v, llrs})));
    }
    return linear(g, m.readout, zv);
}

// ---------------------------------------------------------------------------
// inference

namespace {

Value transformer_llr_column(Graph& g, const HnrModel& m, const Link& link, std::span<const phy::ResourceGrid> rx,
                             std::span<const double> noise_var) {
    const auto layout = TokenLayout::make(link.grid(), m.config().pilot_tokens);
    const std::size_t F = feature_dim(m.num_rx());
    Array tokens({rx.size() * layout.num_tokens, F});
    for (std::size_t f = 0; f < rx.size(); ++f) {
        if (rx[f].antennas() != m.num_rx())
            throw std::invalid_argument("hnr: model expects " + std::to_string(m.num_rx()) + " receive antennas");
        const Array t = featurize(rx[f], noise_var[f], link, m.config().pilot_tokens);
        std::copy(t.data.begin(), t.data.end(), tokens.data.begin() + static_cast<std::ptrdiff_t>(f * t.size()));
    }
    const Value head = transformer_forward(g, m, g.constant(std::move(tokens)), rx.size(), layout.num_tokens);
    return frame_llrs(g, head, layout, rx.size(), m.bits_per_symbol(), link.coded_bits_per_frame());
}

void check_link(const HnrModel& m, const Link& link) {
    if (!link.coded()) throw std::invalid_argument("hnr: the receiver needs a coded link");
    if (m.bits_per_symbol() != link.bits_per_symbol())
        throw std::invalid_argument("hnr: model emits " + std::to_string(m.bits_per_symbol()) +
                                    " bits per symbol, link carries " + std::to_string(link.bits_per_symbol()));
}

}  // namespace

std::vector<double> transformer_llrs(const HnrModel& m, const Link& link, const phy::ResourceGrid& rx,
                                     double noise_var) {
    Graph g(&m.params);
    const Value llr = transformer_llr_column(g, m, link, std::span(&rx, 1), std::span(&noise_var, 1));
    return g.value(llr).data;
}

std::vector<double> gnn_decode(const HnrModel& m, const TannerGraph& tg, std::span<const double> llrs,
                               std::size_t iters) {
    if (llrs.size() != tg.num_vn)
        throw std::invalid_argument("gnn_decode: " + std::to_string(llrs.size()) + " LLRs for " +
                                    std::to_string(tg.num_vn) + " variable nodes");
    Graph g(&m.params);
    const Value logits =
        gnn_forward(g, m, tg, g.constant(Array({llrs.size(), 1}, std::vector<double>(llrs.begin(), llrs.end()))),
                    iters);
    return g.value(g.sigmoid(logits)).data;
}

HnrResult hnr_receive(const HnrModel& m, const Link& link, const phy::ResourceGrid& rx, double noise_var) {
    check_link(m, link);
    if (m.fingerprint != fingerprint(m.config(), link, rx.antennas()))
        throw FingerprintError("hnr: model was trained for a different configuration");
    HnrResult r;
    r.llrs = transformer_llrs(m, link, rx, noise_var);
    const auto& code = link.code();
    const std::size_t n = code.pcm.n();
    const auto tg = TannerGraph::build(code.pcm);
    for (std::size_t c = 0; c < link.codewords_per_frame(); ++c) {
        const auto p = gnn_decode(m, tg, std::span(r.llrs).subspan(c * n, n), m.config().mp_iters);
        fec::Bits cw(n);
        for (std::size_t i = 0; i < n; ++i) cw[i] = p[i] > 0.5 ? 1 : 0;
        r.probabilities.insert(r.probabilities.end(), p.begin(), p.end());
        r.coded.insert(r.coded.end(), cw.begin(), cw.end());
        const auto info = code.gen.extract_info(cw);
        r.info.insert(r.info.end(), info.begin(), info.end());
    }
    return r;
}

// ---------------------------------------------------------------------------
// training

double bce_reference(std::span<const double> logits, std::span<const std::uint8_t> bits) {
    if (logits.size() != bits.size() || logits.empty())
        throw std::invalid_argument("bce_reference: logits and bits must be non-empty and equally long");
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        // -[b log s(z) + (1-b) log(1 - s(z))], with log s(z) = -log(1 + e^-z)
        const double z = logits[i];
        const double log_p1 = z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
        const double log_p0 = log_p1 - z;
        acc -= bits[i] ? log_p1 : log_p0;
    }
    return acc / static_cast<double>(logits.size());
}

std::size_t budget_steps(double codewords, const TrainSettings& s, const Link& link) {
    const double per_step = static_cast<double>(s.batch * std::max<std::size_t>(1, link.codewords_per_frame()));
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(codewords * s.scale / per_step)));
}

std::vector<std::size_t> stage2_boundaries(const TrainSettings& s, const Link& link) {
    std::vector<std::size_t> b;
    std::size_t acc = 0;
    for (double cw : kStage2Codewords) b.push_back(acc += budget_steps(cw, s, link));
    return b;
}

namespace {

enum class Stage : std::uint64_t { One = 1, Two = 2, Three = 3, Validation = 0x76616c };

struct Batch {
    std::vector<phy::ResourceGrid> rx;
    std::vector<double> noise_var;
    Array coded;  // [batch * coded_bits, 1]
    Array info;   // [batch * info_bits, 1]
};

void append_frame(Batch& b, const Link& link, const TrainSettings& s, double snr_db, std::uint64_t seed) {
    const double nv = snr_db_to_noise_var(snr_db);
    auto f = simulate_frame(link, s.channel, nv, seed);
    b.rx.push_back(std::move(f.rx));
    b.noise_var.push_back(nv);
    for (std::size_t i = 0; i < link.coded_bits_per_frame(); ++i) b.coded.data.push_back(f.bits[i]);
    for (auto bit : f.info) b.info.data.push_back(bit);
}

void seal(Batch& b) {
    b.coded.shape = {b.coded.data.size(), 1};
    b.info.shape = {b.info.data.size(), 1};
}

Batch training_batch(const Link& link, const TrainSettings& s, Stage stage, std::size_t step) {
    Batch b;
    for (std::size_t i = 0; i < s.batch; ++i) {
        const std::uint64_t seed = derive_seed(s.seed, {static_cast<std::uint64_t>(stage), step, i});
        Rng rng(derive_seed(seed, {0x736e72}));
        std::uniform_real_distribution<double> snr(s.snr_min_db, s.snr_max_db);
        append_frame(b, link, s, snr(rng), seed);
    }
    seal(b);
    return b;
}

Batch validation_batch(const Link& link, const TrainSettings& s, std::size_t first, std::size_t count) {
    Batch b;
    for (std::size_t i = first; i < first + count; ++i) {
        const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(s.val_frames);
        append_frame(b, link, s, s.snr_min_db + (s.snr_max_db - s.snr_min_db) * t,
                     derive_seed(s.seed, {static_cast<std::uint64_t>(Stage::Validation), i}));
    }
    seal(b);
    return b;
}

std::vector<std::uint32_t> info_rows(const Link& link, std::size_t batch) {
    const auto& code = link.code();
    const std::size_t n = code.pcm.n();
    std::vector<std::uint32_t> rows;
    const std::size_t words = batch * link.codewords_per_frame();
    rows.reserve(words * code.gen.k());
    for (std::size_t w = 0; w < words; ++w)
        for (auto p : code.gen.info_positions()) rows.push_back(static_cast<std::uint32_t>(w * n + p));
    return rows;
}

struct FullForward {
    Value llrs;
    Value logits;
};

FullForward full_forward(Graph& g, const HnrModel& m, const Link& link, const Batch& b, const TannerGraph& tg) {
    FullForward f;
    f.llrs = transformer_llr_column(g, m, link, b.rx, b.noise_var);
    f.logits = gnn_forward(g, m, tg.replicate(b.rx.size() * link.codewords_per_frame()), f.llrs, m.config().mp_iters);
    return f;
}

/// Runs the model on a copy of the parameters with nothing trainable so no
/// gradient bookkeeping is recorded.
struct FrozenView {
    explicit FrozenView(const HnrModel& m) : model(m) {
        for (std::size_t i = 0; i < model.params.size(); ++i) model.params.set_trainable(i, false);
    }
    HnrModel model;
};

double count_errors(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    double e = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) e += a[i] != b[i];
    return e;
}

constexpr std::size_t kEvalChunk = 16;

}  // namespace

Evaluation evaluate_transformer(const HnrModel& model, const Link& link, const TrainSettings& s) {
    check_link(model, link);
    const FrozenView view(model);
    Evaluation ev;
    double bce = 0.0, info_err = 0.0, coded_err = 0.0, info_bits = 0.0, coded_bits = 0.0;
    for (std::size_t first = 0; first < s.val_frames; first += kEvalChunk) {
        const std::size_t count = std::min(kEvalChunk, s.val_frames - first);
        const Batch b = validation_batch(link, s, first, count);
        Graph g(&view.model.params);
        const Value llr = transformer_llr_column(g, view.model, link, b.rx, b.noise_var);
        const auto& l = g.value(llr).data;
        std::vector<double> logits(l.size());
        std::transform(l.begin(), l.end(), logits.begin(), [](double v) { return -v; });
        const fec::Bits coded_truth(b.coded.data.begin(), b.coded.data.end());
        const fec::Bits info_truth(b.info.data.begin(), b.info.data.end());
        bce += bce_reference(logits, coded_truth) * static_cast<double>(l.size());
        const std::size_t per_frame = link.coded_bits_per_frame();
        const std::size_t k = link.info_bits_per_frame();
        for (std::size_t f = 0; f < count; ++f) {
            std::vector<double> frame(link.bit_capacity(), 0.0);
            std::copy_n(l.begin() + static_cast<std::ptrdiff_t>(f * per_frame), per_frame, frame.begin());
            const auto res = classic::decode_frame(frame, link);
            info_err += count_errors(res.info, std::span(info_truth).subspan(f * k, k));
            coded_err += count_errors(fec::hard_decision(std::span(l).subspan(f * per_frame, per_frame)),
                                      std::span(coded_truth).subspan(f * per_frame, per_frame));
            info_bits += static_cast<double>(k);
            coded_bits += static_cast<double>(per_frame);
        }
    }
    ev.bce = bce / coded_bits;
    ev.info_ber = info_err / info_bits;
    ev.coded_ber = coded_err / coded_bits;
    return ev;
}

Evaluation evaluate_full(const HnrModel& model, const Link& link, const TrainSettings& s) {
    check_link(model, link);
    const FrozenView view(model);
    const auto tg = TannerGraph::build(link.code().pcm);
    Evaluation ev;
    double bce = 0.0, info_err = 0.0, coded_err = 0.0, info_bits = 0.0, coded_bits = 0.0;
    for (std::size_t first = 0; first < s.val_frames; first += kEvalChunk) {
        const std::size_t count = std::min(kEvalChunk, s.val_frames - first);
        const Batch b = validation_batch(link, s, first, count);
        Graph g(&view.model.params);
        const auto f = full_forward(g, view.model, link, b, tg);
        const auto& z = g.value(f.logits).data;
        const auto rows = info_rows(link, count);
        std::vector<double> info_logits(rows.size());
        fec::Bits info_truth(b.info.data.begin(), b.info.data.end());
        for (std::size_t i = 0; i < rows.size(); ++i) info_logits[i] = z[rows[i]];
        bce += bce_reference(info_logits, info_truth) * static_cast<double>(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) info_err += (info_logits[i] > 0.0) != (info_truth[i] != 0);
        for (std::size_t i = 0; i < z.size(); ++i) coded_err += (z[i] > 0.0) != (b.coded.data[i] != 0.0);
        info_bits += static_cast<double>(rows.size());
        coded_bits += static_cast<double>(z.size());
    }
    ev.bce = bce / info_bits;
    ev.info_ber = info_err / info_bits;
    ev.coded_ber = coded_err / coded_bits;
    return ev;
}

namespace {

struct LossTracker {
    std::vector<double> losses;

    void push(const std::string& stage, std::size_t step, double loss) {
        if (!std::isfinite(loss)) throw TrainingDiverged(stage, step, "loss is not finite");
        losses.push_back(loss);
    }

    void fill(StageReport& r) const {
        r.steps = losses.size();
        r.first_loss = losses.front();
        r.last_loss = losses.back();
        const std::size_t tenth = std::max<std::size_t>(1, losses.size() / 10);
        r.head_loss = std::accumulate(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(tenth), 0.0) /
                      static_cast<double>(tenth);
        r.tail_loss = std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(tenth), losses.end(), 0.0) /
                      static_cast<double>(tenth);
    }
};

bool validate_now(const TrainSettings& s, std::size_t step, std::size_t total) {
    return step + 1 == total || (s.val_every > 0 && (step + 1) % s.val_every == 0);
}

void emit(const MetricSink& sink, const std::string& stage, std::size_t step, double loss, double lr,
          double val_ber) {
    if (sink) sink(MetricRow{stage, step, loss, lr, val_ber});
}

/// Restores the trainable flags of a parameter set on scope exit.
class TrainableScope {
public:
    explicit TrainableScope(diff::ParameterSet& p) : params_(p) {
        for (std::size_t i = 0; i < p.size(); ++i) saved_.push_back(p.trainable(i));
    }
    ~TrainableScope() {
        for (std::size_t i = 0; i < saved_.size(); ++i) params_.set_trainable(i, saved_[i]);
    }

private:
    diff::ParameterSet& params_;
    std::vector<bool> saved_;
};

template <class LossFn>
double train_step(HnrModel& m, diff::OptimizerState& opt, const std::string& stage, std::size_t step,
                  LossFn&& loss_fn) {
    Graph g(&m.params);
    Value loss;
    try {
        loss = loss_fn(g);
    } catch (const diff::NonFiniteError& e) {
        throw TrainingDiverged(stage, step, e.what());
    }
    const double value = g.value(loss).data[0];
    if (!std::isfinite(value)) throw TrainingDiverged(stage, step, "loss is not finite");
    const auto grads = g.backward(loss);
    for (const auto& gr : grads)
        for (double v : gr.data)
            if (!std::isfinite(v)) throw TrainingDiverged(stage, step, "gradient is not finite");
    diff::optimizer_step(opt, m.params, grads);
    return value;
}

}  // namespace

StageReport train_stage1(HnrModel& m, const Link& link, const TrainSettings& s, const MetricSink& sink) {
    check_link(m, link);
    const TrainableScope scope(m.params);
    m.params.set_trainable_prefix(kGnnPrefix, false);
    m.params.set_trainable_prefix(kTransformerPrefix, true);
    std::size_t steps = budget_steps(kStage1Codewords, s, link);
    if (s.stage1_max_steps > 0) steps = std::min(steps, s.stage1_max_steps);
    const double lr = kStage1Rate * s.lr_multiplier;
    auto opt = diff::make_optimizer(diff::OptimizerKind::AdamW, m.params, lr, s.weight_decay);
    LossTracker track;
    StageReport rep;
    for (std::size_t step = 0; step < steps; ++step) {
        const Batch b = training_batch(link, s, Stage::One, step);
        const double loss = train_step(m, opt, "stage1", step, [&](Graph& g) {
            const Value llr = transformer_llr_column(g, m, link, b.rx, b.noise_var);
            return g.bce_with_logits(g.scale(llr, -1.0), b.coded);
        });
        track.push("stage1", step, loss);
        double val = std::numeric_limits<double>::quiet_NaN();
        if (validate_now(s, step, steps)) {
            const auto ev = evaluate_transformer(m, link, s);
            val = ev.info_ber;
            rep.val_bce = ev.bce;
            rep.val_ber = ev.info_ber;
        }
        emit(sink, "stage1", step, loss, lr, val);
    }
    track.fill(rep);
    return rep;
}

StageReport train_stage2(HnrModel& m, const Link& link, const TrainSettings& s, const MetricSink& sink) {
    check_link(m, link);
    const TrainableScope scope(m.params);
    m.params.set_trainable_prefix(kTransformerPrefix, false);
    m.params.set_trainable_prefix(kGnnPrefix, true);
    const auto bounds = stage2_boundaries(s, link);
    const auto tg = TannerGraph::build(link.code().pcm);
    auto opt = diff::make_optimizer(diff::OptimizerKind::Adam, m.params, kStage2Rates[0] * s.lr_multiplier);
    LossTracker track;
    StageReport rep;
    std::size_t phase = 0;
    for (std::size_t step = 0; step < bounds.back(); ++step) {
        while (step >= bounds[phase]) ++phase;
        opt.lr = kStage2Rates[phase] * s.lr_multiplier;
        const Batch b = training_batch(link, s, Stage::Two, step);
        const double loss = train_step(m, opt, "stage2", step, [&](Graph& g) {
            const auto f = full_forward(g, m, link, b, tg);
            return g.bce_with_logits(f.logits, b.coded);
        });
        track.push("stage2", step, loss);
        double val = std::numeric_limits<double>::quiet_NaN();
        if (validate_now(s, step, bounds.back())) {
            const auto ev = evaluate_full(m, link, s);
            val = ev.info_ber;
            rep.val_bce = ev.bce;
            rep.val_ber = ev.info_ber;
        }
        emit(sink, "stage2", step, loss, opt.lr, val);
    }
    track.fill(rep);
    return rep;
}

StageReport train_stage3(HnrModel& m, const Link& link, const TrainSettings& s, const MetricSink& sink) {
    check_link(m, link);
    const TrainableScope scope(m.params);
    m.params.set_trainable_prefix(kTransformerPrefix, true);
    m.params.set_trainable_prefix(kGnnPrefix, true);
    const std::size_t steps = budget_steps(kStage3Codewords, s, link);
    const double lr = kStage3Rate * s.lr_multiplier;
    const auto tg = TannerGraph::build(link.code().pcm);
    auto opt = diff::make_optimizer(diff::OptimizerKind::Adam, m.params, lr);
    const auto start = evaluate_full(m, link, s);
    double best_bce = start.bce;
    double best_ber = start.info_ber;
    diff::ParameterSet best = m.params;
    LossTracker track;
    StageReport rep;
    for (std::size_t step = 0; step < steps; ++step) {
        const Batch b = training_batch(link, s, Stage::Three, step);
        const auto rows = info_rows(link, b.rx.size());
        const double loss = train_step(m, opt, "stage3", step, [&](Graph& g) {
            const auto f = full_forward(g, m, link, b, tg);
            return g.bce_with_logits(g.gather_rows(f.logits, rows), b.info);
        });
        track.push("stage3", step, loss);
        double val = std::numeric_limits<double>::quiet_NaN();
        if (validate_now(s, step, steps)) {
            const auto ev = evaluate_full(m, link, s);
            val = ev.info_ber;
            if (ev.bce < best_bce) {
                best_bce = ev.bce;
                best_ber = ev.info_ber;
                best = m.params;
            }
        }
        emit(sink, "stage3", step, loss, lr, val);
    }
    // keep the trainable flags of the live set; only values roll back
    for (std::size_t i = 0; i < best.size(); ++i) m.params.value(i) = best.value(i);
    track.fill(rep);
    rep.val_bce = best_bce;
    rep.val_ber = best_ber;
    return rep;
}

}  // namespace hrx::hnr
