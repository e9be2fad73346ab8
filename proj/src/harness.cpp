#include "hrx/harness.hpp"

#include "hrx/rng.hpp"
#include "hrx/rxclassic.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

namespace hrx::harness {

namespace fs = std::filesystem;

Receiver receiver_from_name(std::string_view name) {
    if (name == "baseline") return Receiver::Baseline;
    if (name == "perfect_csi" || name == "perfect-csi") return Receiver::PerfectCsi;
    if (name == "hnr") return Receiver::Hnr;
    throw std::invalid_argument("unknown receiver '" + std::string(name) + "' (baseline, perfect_csi, hnr)");
}

std::string receiver_name(Receiver r) {
    switch (r) {
        case Receiver::Baseline: return "baseline";
        case Receiver::PerfectCsi: return "perfect_csi";
        case Receiver::Hnr: return "hnr";
    }
    return "?";
}

std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// configuration

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(std::string_view s) {
    s = trim(s);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
        throw std::invalid_argument("expected a number, got '" + std::string(s) + "'");
    return v;
}

std::uint64_t parse_uint(std::string_view s) {
    s = trim(s);
    std::uint64_t v = 0;
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        s.remove_prefix(2);
        base = 16;
    }
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
        throw std::invalid_argument("expected a non-negative integer, got '" + std::string(s) + "'");
    return v;
}

bool parse_bool(std::string_view s) {
    s = trim(s);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw std::invalid_argument("expected true/false, got '" + std::string(s) + "'");
}

template <class T, class F>
std::vector<T> parse_list(std::string_view s, F&& one) {
    std::vector<T> out;
    while (true) {
        const auto comma = s.find(',');
        const auto item = trim(s.substr(0, comma));
        if (!item.empty()) out.push_back(one(item));
        if (comma == std::string_view::npos) break;
        s.remove_prefix(comma + 1);
    }
    return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& fmt) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += fmt(v[i]);
    }
    return out;
}

struct Key {
    const char* name;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class Member>
Key size_key(const char* name, Member member) {
    return {name, [member](ExperimentConfig& c, std::string_view v) { member(c) = static_cast<std::size_t>(parse_uint(v)); },
            [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); }};
}

template <class Member>
Key double_key(const char* name, Member member) {
    return {name, [member](ExperimentConfig& c, std::string_view v) { member(c) = parse_double(v); },
            [member](const ExperimentConfig& c) { return format_double(member(const_cast<ExperimentConfig&>(c))); }};
}

template <class Member>
Key bool_key(const char* name, Member member) {
    return {name, [member](ExperimentConfig& c, std::string_view v) { member(c) = parse_bool(v); },
            [member](const ExperimentConfig& c) {
                return std::string(member(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
            }};
}

template <class Member>
Key string_key(const char* name, Member member) {
    return {name, [member](ExperimentConfig& c, std::string_view v) { member(c) = std::string(trim(v)); },
            [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); }};
}

#define HRX_FIELD(expr) [](ExperimentConfig & c) -> auto& { return c.expr; }

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        size_key("grid.fft_size", HRX_FIELD(grid.fft_size)),
        size_key("grid.guard_left", HRX_FIELD(grid.guard_left)),
        size_key("grid.guard_right", HRX_FIELD(grid.guard_right)),
        size_key("grid.num_symbols", HRX_FIELD(grid.num_symbols)),
        {"grid.pilot_symbols",
         [](ExperimentConfig& c, std::string_view v) {
             c.grid.pilot_symbols = parse_list<std::size_t>(v, [](std::string_view s) { return parse_uint(s); });
         },
         [](const ExperimentConfig& c) {
             return join(c.grid.pilot_symbols, [](std::size_t x) { return std::to_string(x); });
         }},
        bool_key("grid.dc_null", HRX_FIELD(grid.dc_null)),
        string_key("constellation", HRX_FIELD(constellation)),
        string_key("code", HRX_FIELD(code)),
        {"pilot_seed", [](ExperimentConfig& c, std::string_view v) { c.pilot_seed = parse_uint(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.pilot_seed); }},
        {"channel.model", [](ExperimentConfig& c, std::string_view v) { c.channel.model = channel::model_from_name(trim(v)); },
         [](const ExperimentConfig& c) { return channel::model_name(c.channel.model); }},
        double_key("channel.delay_spread", HRX_FIELD(channel.delay_spread)),
        double_key("channel.speed_min_kmh", HRX_FIELD(channel.speed_min_kmh)),
        double_key("channel.speed_max_kmh", HRX_FIELD(channel.speed_max_kmh)),
        double_key("channel.carrier_hz", HRX_FIELD(channel.carrier_hz)),
        double_key("channel.subcarrier_spacing_hz", HRX_FIELD(channel.subcarrier_spacing_hz)),
        size_key("channel.num_rx", HRX_FIELD(channel.num_rx)),
        size_key("channel.num_taps", HRX_FIELD(channel.num_taps)),
        size_key("channel.num_sinusoids", HRX_FIELD(channel.num_sinusoids)),
        {"receiver", [](ExperimentConfig& c, std::string_view v) { c.receiver = receiver_from_name(trim(v)); },
         [](const ExperimentConfig& c) { return receiver_name(c.receiver); }},
        {"snr_db",
         [](ExperimentConfig& c, std::string_view v) {
             c.snr_db = parse_list<double>(v, [](std::string_view s) { return parse_double(s); });
         },
         [](const ExperimentConfig& c) { return join(c.snr_db, [](double x) { return format_double(x); }); }},
        {"snr_axis",
         [](ExperimentConfig& c, std::string_view v) {
             v = trim(v);
             if (v == "esn0")
                 c.snr_axis = SnrAxis::EsN0;
             else if (v == "ebn0")
                 c.snr_axis = SnrAxis::EbN0;
             else
                 throw std::invalid_argument("snr_axis must be esn0 or ebn0");
         },
         [](const ExperimentConfig& c) { return std::string(c.snr_axis == SnrAxis::EsN0 ? "esn0" : "ebn0"); }},
        size_key("frames_per_point", HRX_FIELD(frames_per_point)),
        {"seed", [](ExperimentConfig& c, std::string_view v) { c.seed = parse_uint(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        double_key("scale", HRX_FIELD(scale)),
        bool_key("noiseless", HRX_FIELD(noiseless)),
        size_key("bp_iters", HRX_FIELD(bp_iters)),
        double_key("payload_snr_db", HRX_FIELD(payload_snr_db)),
        string_key("checkpoint", HRX_FIELD(checkpoint)),
        string_key("out.sweep", HRX_FIELD(sweep_out)),
        string_key("out.metrics", HRX_FIELD(metrics_out)),
        string_key("out.checkpoint", HRX_FIELD(checkpoint_out)),
        size_key("hnr.num_blocks", HRX_FIELD(model.num_blocks)),
        size_key("hnr.num_heads", HRX_FIELD(model.num_heads)),
        size_key("hnr.embed_dim", HRX_FIELD(model.embed_dim)),
        size_key("hnr.ffn_dim", HRX_FIELD(model.ffn_dim)),
        size_key("hnr.gnn_embed_dim", HRX_FIELD(model.gnn_embed_dim)),
        size_key("hnr.gnn_msg_dim", HRX_FIELD(model.gnn_msg_dim)),
        size_key("hnr.gnn_hidden", HRX_FIELD(model.gnn_hidden)),
        size_key("hnr.cn_mlp_layers", HRX_FIELD(model.cn_mlp_layers)),
        size_key("hnr.vn_mlp_layers", HRX_FIELD(model.vn_mlp_layers)),
        size_key("hnr.edge_feature_dim", HRX_FIELD(model.edge_feature_dim)),
        size_key("hnr.mp_iters", HRX_FIELD(model.mp_iters)),
        bool_key("hnr.pilot_tokens", HRX_FIELD(model.pilot_tokens)),
        size_key("train.batch", HRX_FIELD(train.batch)),
        double_key("train.lr_multiplier", HRX_FIELD(train.lr_multiplier)),
        double_key("train.weight_decay", HRX_FIELD(train.weight_decay)),
        double_key("train.snr_min_db", HRX_FIELD(train.snr_min_db)),
        double_key("train.snr_max_db", HRX_FIELD(train.snr_max_db)),
        size_key("train.val_frames", HRX_FIELD(train.val_frames)),
        size_key("train.val_every", HRX_FIELD(train.val_every)),
        size_key("train.stage1_max_steps", HRX_FIELD(train.stage1_max_steps)),
    };
    return table;
}

#undef HRX_FIELD

}  // namespace

void ExperimentConfig::validate() const {
    grid.validate();
    channel.validate();
    model.validate();
    phy::Constellation::by_name(constellation);
    if (code.rfind("regular:", 0) == 0) {
        const auto v = parse_list<std::uint64_t>(std::string_view(code).substr(8),
                                                 [](std::string_view s) { return parse_uint(s); });
        if (v.size() != 4) throw ConfigError(0, "code: expected regular:n,dv,dc,seed, got '" + code + "'");
    } else if (code != "none" && !(code.rfind("alist:", 0) == 0 && code.size() > 6)) {
        throw ConfigError(0, "code: expected 'regular:n,dv,dc,seed', 'alist:<path>' or 'none', got '" + code + "'");
    }
    if (snr_db.empty()) throw ConfigError(0, "snr_db must list at least one point");
    if (frames_per_point == 0) throw ConfigError(0, "frames_per_point must be at least 1");
    if (!(scale > 0.0)) throw ConfigError(0, "scale must be positive");
    if (train.batch == 0 || train.val_frames == 0) throw ConfigError(0, "train.batch and train.val_frames must be positive");
    if (train.snr_max_db < train.snr_min_db) throw ConfigError(0, "train.snr_max_db is below train.snr_min_db");
    if (!(train.lr_multiplier > 0.0)) throw ConfigError(0, "train.lr_multiplier must be positive");
}

hnr::TrainSettings ExperimentConfig::train_settings() const {
    hnr::TrainSettings s = train;
    s.seed = seed;
    s.scale = scale;
    s.channel = channel;
    return s;
}

ExperimentConfig parse_config(std::string_view text, const std::string& base_dir) {
    ExperimentConfig cfg;
    cfg.base_dir = base_dir;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(line_no, "expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto& table = keys();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
        if (it == table.end()) throw ConfigError(line_no, "unknown key '" + std::string(key) + "'");
        try {
            it->set(cfg, value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(line_no, std::string(key) + ": " + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(0, e.what());
    }
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + path + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("short write to '" + path + "'");
    }
    fs::rename(tmp, target);
}

std::string resolve_config_path(const std::string& path) {
    if (fs::exists(path)) return path;
    if (const char* dir = std::getenv(kConfigDirEnv); dir && *dir) {
        for (const std::string& name : {path, path + ".cfg"}) {
            const fs::path p = fs::path(dir) / name;
            if (fs::exists(p)) return p.string();
        }
    }
    throw std::runtime_error("config '" + path + "' not found (also looked in $" + kConfigDirEnv + ")");
}

ExperimentConfig load_config(const std::string& path) {
    const std::string resolved = resolve_config_path(path);
    return parse_config(read_file(resolved), fs::path(resolved).parent_path().string());
}

std::string dump_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
    return out;
}

std::shared_ptr<const Code> make_code(const std::string& spec, const std::string& base_dir) {
    if (spec == "none") return nullptr;
    if (spec.rfind("regular:", 0) == 0) {
        const auto v = parse_list<std::uint64_t>(std::string_view(spec).substr(8),
                                                 [](std::string_view s) { return parse_uint(s); });
        if (v.size() != 4) throw std::invalid_argument("code: expected regular:n,dv,dc,seed");
        auto h = fec::build_regular_ldpc(v[0], v[1], v[2], v[3]);
        return std::make_shared<Code>(std::move(h), "regular:" + std::to_string(v[0]) + "," + std::to_string(v[1]) +
                                                         "," + std::to_string(v[2]) + ",seed=" + std::to_string(v[3]));
    }
    if (spec.rfind("alist:", 0) == 0) {
        fs::path p(spec.substr(6));
        if (p.is_relative() && !base_dir.empty() && !fs::exists(p)) p = fs::path(base_dir) / p;
        const std::string text = read_file(p.string());
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hnr::fnv1a(text)));
        return std::make_shared<Code>(fec::load_alist(text), std::string("alist:") + hex);
    }
    throw std::invalid_argument("code: expected 'regular:n,dv,dc,seed', 'alist:<path>' or 'none', got '" + spec + "'");
}

Link make_link(const ExperimentConfig& cfg) {
    return Link(cfg.grid, phy::Constellation::by_name(cfg.constellation), make_code(cfg.code, cfg.base_dir),
                cfg.pilot_seed);
}

double noise_var_for(const ExperimentConfig& cfg, const Link& link, double snr_db) {
    if (cfg.noiseless) return 0.0;
    double esn0 = snr_db;
    if (cfg.snr_axis == SnrAxis::EbN0) {
        const double rate = link.coded() ? static_cast<double>(link.code().gen.k()) / static_cast<double>(link.code().pcm.n())
                                         : 1.0;
        esn0 = ebn0_to_esn0_db(snr_db, link.bits_per_symbol(), rate);
    }
    return snr_db_to_noise_var(esn0);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_ += s;
    }
    void array(const diff::Array& a) {
        u32(static_cast<std::uint32_t>(a.rank()));
        for (auto d : a.shape) u64(d);
        for (double v : a.data) f64(v);
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(in_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(in_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(in_[pos_++])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    diff::Array array() {
        const std::uint32_t rank = u32();
        if (rank == 0 || rank > 4) throw CheckpointFormatError("checkpoint: array rank " + std::to_string(rank));
        diff::Shape shape;
        std::uint64_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(u64());
            if (shape.back() == 0) throw CheckpointFormatError("checkpoint: zero array extent");
            count *= shape.back();
            if (count > (in_.size() - pos_) / 8) throw CheckpointTruncatedError("checkpoint: truncated array data");
        }
        std::vector<double> data(count);
        for (auto& v : data) v = f64();
        return diff::Array(std::move(shape), std::move(data));
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n)
            throw CheckpointTruncatedError("checkpoint: truncated at byte " + std::to_string(pos_) + " of " +
                                           std::to_string(in_.size()));
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'H', 'N', 'R', '1'};

std::vector<std::size_t*> config_fields(hnr::HnrConfig& c) {
    return {&c.num_blocks,    &c.num_heads,     &c.embed_dim,     &c.ffn_dim,
            &c.gnn_embed_dim, &c.gnn_msg_dim,   &c.gnn_hidden,    &c.cn_mlp_layers,
            &c.vn_mlp_layers, &c.edge_feature_dim, &c.mp_iters};
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
    Writer w;
    for (char ch : kMagic) w.u8(static_cast<std::uint8_t>(ch));
    w.u32(kCheckpointVersion);
    w.u64(c.fingerprint);
    hnr::HnrConfig cfg = c.config;
    for (auto* f : config_fields(cfg)) w.u64(*f);
    w.u8(cfg.pilot_tokens ? 1 : 0);
    w.u64(c.num_rx);
    w.u32(c.bits_per_symbol);
    w.u32(c.stages);
    w.u64(c.params.size());
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        w.str(c.params.name(i));
        w.u8(c.params.trainable(i) ? 1 : 0);
        w.array(c.params.value(i));
    }
    w.u8(c.optimizer ? 1 : 0);
    if (c.optimizer) {
        const auto& o = *c.optimizer;
        w.u32(o.kind == diff::OptimizerKind::AdamW ? 1 : 0);
        w.u64(o.step);
        w.f64(o.lr);
        w.f64(o.beta1);
        w.f64(o.beta2);
        w.f64(o.eps);
        w.f64(o.weight_decay);
        w.u64(o.first_moment.size());
        for (std::size_t i = 0; i < o.first_moment.size(); ++i) {
            w.array(o.first_moment[i]);
            w.array(o.second_moment[i]);
        }
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    for (char ch : kMagic)
        if (r.u8() != static_cast<std::uint8_t>(ch)) throw CheckpointFormatError("checkpoint: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointVersionError("checkpoint: format version " + std::to_string(version) + ", expected " +
                                     std::to_string(kCheckpointVersion));
    Checkpoint c;
    c.fingerprint = r.u64();
    for (auto* f : config_fields(c.config)) *f = static_cast<std::size_t>(r.u64());
    c.config.pilot_tokens = r.u8() != 0;
    c.num_rx = r.u64();
    c.bits_per_symbol = r.u32();
    c.stages = r.u32();
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.str();
        const bool trainable = r.u8() != 0;
        auto value = r.array();
        try {
            c.params.add(std::move(name), std::move(value), trainable);
        } catch (const std::exception& e) {
            throw CheckpointFormatError(std::string("checkpoint: ") + e.what());
        }
    }
    if (r.u8()) {
        diff::OptimizerState o;
        o.kind = r.u32() ? diff::OptimizerKind::AdamW : diff::OptimizerKind::Adam;
        o.step = r.u64();
        o.lr = r.f64();
        o.beta1 = r.f64();
        o.beta2 = r.f64();
        o.eps = r.f64();
        o.weight_decay = r.f64();
        const std::uint64_t n = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) {
            o.first_moment.push_back(r.array());
            o.second_moment.push_back(r.array());
        }
        c.optimizer = std::move(o);
    }
    if (!r.done()) throw CheckpointFormatError("checkpoint: trailing bytes after the last record");
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file_atomic(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

Checkpoint checkpoint_from(const hnr::HnrModel& m, std::uint32_t stages) {
    Checkpoint c;
    c.config = m.config();
    c.num_rx = m.num_rx();
    c.bits_per_symbol = m.bits_per_symbol();
    c.fingerprint = m.fingerprint;
    c.stages = stages;
    c.params = m.params;
    return c;
}

hnr::HnrModel model_from(const Checkpoint& c) {
    try {
        hnr::HnrModel m(c.config, c.num_rx, c.bits_per_symbol, 0);
        m.check_layout(c.params);
        m.params = c.params;
        m.fingerprint = c.fingerprint;
        return m;
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw CheckpointFormatError(std::string("checkpoint: ") + e.what());
    }
}

hnr::HnrModel load_model_for(const std::string& path, const Link& link, std::size_t num_rx) {
    const auto c = load_checkpoint(path);
    if (c.fingerprint != hnr::fingerprint(c.config, link, num_rx))
        throw hnr::FingerprintError("checkpoint '" + path + "' was trained for a different grid, constellation, code or antenna count");
    return model_from(c);
}

std::string describe_checkpoint(const Checkpoint& c) {
    std::ostringstream os;
    std::size_t tx = 0, gnn = 0;
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        const auto n = c.params.value(i).size();
        (c.params.name(i).rfind(hnr::kTransformerPrefix, 0) == 0 ? tx : gnn) += n;
    }
    char fp[17];
    std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(c.fingerprint));
    std::string stages;
    for (int s = 0; s < 3; ++s)
        if (c.stages & (1u << s)) stages += (stages.empty() ? "" : ",") + std::to_string(s + 1);
    os << "format_version: " << kCheckpointVersion << "\n"
       << "fingerprint: " << fp << "\n"
       << "stages: " << (stages.empty() ? "none" : stages) << "\n"
       << "config: " << c.config.canonical() << "\n"
       << "num_rx: " << c.num_rx << "\n"
       << "bits_per_symbol: " << c.bits_per_symbol << "\n"
       << "arrays: " << c.params.size() << "\n"
       << "parameters: " << c.params.scalar_count() << "\n"
       << "transformer_parameters: " << tx << "\n"
       << "gnn_parameters: " << gnn << "\n"
       << "expected_parameters: " << hnr::parameter_count(c.config, c.num_rx, c.bits_per_symbol) << "\n"
       << "optimizer: " << (c.optimizer ? "present" : "absent") << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// sweeps

namespace {

struct Received {
    fec::Bits info;
    fec::Bits coded;
};

Received receive(const ExperimentConfig& cfg, const Link& link, const hnr::HnrModel* model, const FrameSample& f,
                 double noise_var) {
    classic::ClassicOptions opts;
    opts.bp_iters = cfg.bp_iters;
    switch (cfg.receiver) {
        case Receiver::Baseline: {
            auto r = classic::baseline_receive(f.rx, link, noise_var, opts);
            return {std::move(r.info), std::move(r.coded)};
        }
        case Receiver::PerfectCsi: {
            auto r = classic::perfect_csi_receive(f.rx, f.channel.h, noise_var, link, opts);
            return {std::move(r.info), std::move(r.coded)};
        }
        case Receiver::Hnr: {
            if (!model) throw std::invalid_argument("receiver 'hnr' needs a checkpoint");
            auto r = hnr::hnr_receive(*model, link, f.rx, noise_var);
            return {std::move(r.info), std::move(r.coded)};
        }
    }
    throw std::logic_error("unreachable receiver");
}

constexpr std::uint64_t kSweepTag = 0x7377656570;
constexpr std::uint64_t kPayloadTag = 0x7061796c6f6164;

}  // namespace

FrameErrors run_frame(const ExperimentConfig& cfg, const Link& link, const hnr::HnrModel* model, double noise_var,
                      std::uint64_t seed) {
    const auto f = simulate_frame(link, cfg.channel, noise_var, seed);
    const auto r = receive(cfg, link, model, f, noise_var);
    FrameErrors e;
    e.info_bits = f.info.size();
    for (std::size_t i = 0; i < f.info.size(); ++i) e.info_errors += r.info[i] != f.info[i];
    e.coded_bits = link.coded_bits_per_frame();
    for (std::size_t i = 0; i < e.coded_bits; ++i) e.coded_errors += r.coded[i] != f.bits[i];
    const std::size_t block = link.coded() ? link.code().pcm.n() : e.coded_bits;
    for (std::size_t b = 0; b * block < e.coded_bits; ++b) {
        ++e.blocks;
        e.block_errors += !std::equal(r.coded.begin() + static_cast<std::ptrdiff_t>(b * block),
                                      r.coded.begin() + static_cast<std::ptrdiff_t>((b + 1) * block),
                                      f.bits.begin() + static_cast<std::ptrdiff_t>(b * block));
    }
    return e;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const hnr::HnrModel* model) {
    cfg.validate();
    const Link link = make_link(cfg);
    if (cfg.receiver == Receiver::Hnr && !model) throw std::invalid_argument("sweep: receiver 'hnr' needs a checkpoint");
    std::vector<SweepRow> rows;
    for (std::size_t si = 0; si < cfg.snr_db.size(); ++si) {
        const double nv = noise_var_for(cfg, link, cfg.snr_db[si]);
        FrameErrors total;
        for (std::size_t f = 0; f < cfg.frames_per_point; ++f) {
            const auto e = run_frame(cfg, link, model, nv, derive_seed(cfg.seed, {kSweepTag, si, f}));
            total.info_errors += e.info_errors;
            total.info_bits += e.info_bits;
            total.coded_errors += e.coded_errors;
            total.coded_bits += e.coded_bits;
            total.block_errors += e.block_errors;
            total.blocks += e.blocks;
        }
        SweepRow row;
        row.snr_db = cfg.snr_db[si];
        row.info_ber = static_cast<double>(total.info_errors) / static_cast<double>(total.info_bits);
        row.coded_ber = static_cast<double>(total.coded_errors) / static_cast<double>(total.coded_bits);
        row.bler = static_cast<double>(total.block_errors) / static_cast<double>(total.blocks);
        row.frames = cfg.frames_per_point;
        row.bit_count = total.info_bits;
        row.mc_stderr = std::sqrt(row.info_ber * (1.0 - row.info_ber) / static_cast<double>(row.bit_count));
        row.receiver = receiver_name(cfg.receiver);
        row.channel_model = channel::model_name(cfg.channel.model);
        row.seed = cfg.seed;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "snr_db,info_ber,coded_ber,bler,frames,bit_count,mc_stderr,receiver,channel_model,seed\r\n";
    for (const auto& r : rows) {
        out += format_double(r.snr_db) + "," + format_double(r.info_ber) + "," + format_double(r.coded_ber) + "," +
               format_double(r.bler) + "," + std::to_string(r.frames) + "," + std::to_string(r.bit_count) + "," +
               format_double(r.mc_stderr) + "," + r.receiver + "," + r.channel_model + "," + std::to_string(r.seed) +
               "\r\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// payloads

fec::Bits bytes_to_bits(std::span<const std::uint8_t> bytes) {
    fec::Bits bits;
    bits.reserve(bytes.size() * 8);
    for (auto b : bytes)
        for (int i = 7; i >= 0; --i) bits.push_back(static_cast<std::uint8_t>((b >> i) & 1));
    return bits;
}

std::vector<std::uint8_t> bits_to_bytes(std::span<const std::uint8_t> bits) {
    if (bits.size() % 8 != 0) throw std::invalid_argument("bits_to_bytes: bit count is not a multiple of 8");
    std::vector<std::uint8_t> out(bits.size() / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) out[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
    return out;
}

fec::Bits pad_bits(std::span<const std::uint8_t> bits, std::size_t multiple) {
    if (multiple == 0) throw std::invalid_argument("pad_bits: zero multiple");
    fec::Bits out(bits.begin(), bits.end());
    out.resize((bits.size() + multiple - 1) / multiple * multiple, 0);
    return out;
}

fec::Bits strip_padding(std::span<const std::uint8_t> padded, std::size_t original_bits) {
    if (original_bits > padded.size()) throw std::invalid_argument("strip_padding: payload longer than padded data");
    return fec::Bits(padded.begin(), padded.begin() + static_cast<std::ptrdiff_t>(original_bits));
}

double psnr_db(double mse) {
    if (mse <= 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(255.0 * 255.0 / mse));
}

Distortion distortion(std::span<const std::uint8_t> reference, std::span<const std::uint8_t> received) {
    if (reference.size() != received.size() || reference.empty())
        throw std::invalid_argument("distortion: payloads must be non-empty and equally long");
    double acc = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = static_cast<double>(reference[i]) - static_cast<double>(received[i]);
        acc += d * d;
    }
    Distortion d;
    d.mse = acc / static_cast<double>(reference.size());
    d.rmse = std::sqrt(d.mse);
    d.psnr_db = psnr_db(d.mse);
    return d;
}

std::vector<std::uint8_t> l1_map(std::span<const std::uint8_t> reference, std::span<const std::uint8_t> received,
                                 const ImageMeta& meta) {
    const std::size_t pixels = meta.width * meta.height;
    if (meta.channels == 0 || pixels * meta.channels != reference.size() || received.size() != reference.size())
        throw std::invalid_argument("l1_map: image metadata does not match the payload size");
    std::vector<std::uint8_t> out(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
        unsigned acc = 0;
        for (std::size_t c = 0; c < meta.channels; ++c) {
            const std::size_t i = p * meta.channels + c;
            acc += static_cast<unsigned>(std::abs(static_cast<int>(reference[i]) - static_cast<int>(received[i])));
        }
        out[p] = static_cast<std::uint8_t>((acc + meta.channels / 2) / meta.channels);
    }
    return out;
}

std::string encode_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> pixels) {
    if (pixels.size() != width * height) throw std::invalid_argument("encode_pgm: pixel count mismatch");
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
    return out;
}

PayloadReport run_payload(std::span<const std::uint8_t> bytes, const ExperimentConfig& cfg,
                          const hnr::HnrModel* model, const std::optional<ImageMeta>& meta,
                          const std::string& l1_map_path) {
    if (bytes.empty()) throw std::invalid_argument("payload: empty payload");
    if (meta && (meta->channels == 0 || meta->width * meta->height * meta->channels != bytes.size()))
        throw std::invalid_argument("payload: image metadata " + std::to_string(meta->width) + "x" +
                                    std::to_string(meta->height) + "x" + std::to_string(meta->channels) +
                                    " does not match " + std::to_string(bytes.size()) + " bytes");
    cfg.validate();
    const Link link = make_link(cfg);
    const double nv = noise_var_for(cfg, link, cfg.payload_snr_db);
    const auto bits = bytes_to_bits(bytes);
    const std::size_t per_frame = link.info_bits_per_frame();
    const auto padded = pad_bits(bits, per_frame);

    PayloadReport rep;
    rep.byte_count = bytes.size();
    rep.padded_bits = padded.size();
    rep.frames = padded.size() / per_frame;
    fec::Bits received;
    received.reserve(padded.size());
    for (std::size_t f = 0; f < rep.frames; ++f) {
        const auto info = std::span(padded).subspan(f * per_frame, per_frame);
        const auto frame = transmit_frame(link, cfg.channel, nv, info, derive_seed(cfg.seed, {kPayloadTag, f}));
        const auto r = receive(cfg, link, model, frame, nv);
        received.insert(received.end(), r.info.begin(), r.info.end());
    }
    const auto out_bits = strip_padding(received, bits.size());
    std::size_t errors = 0;
    for (std::size_t i = 0; i < bits.size(); ++i) errors += bits[i] != out_bits[i];
    rep.ber = static_cast<double>(errors) / static_cast<double>(bits.size());
    rep.received = bits_to_bytes(out_bits);
    const auto d = distortion(bytes, rep.received);
    rep.mse = d.mse;
    rep.rmse = d.rmse;
    rep.psnr_db = d.psnr_db;
    if (meta && !l1_map_path.empty()) {
        write_file_atomic(l1_map_path, encode_pgm(meta->width, meta->height, l1_map(bytes, rep.received, *meta)));
        rep.l1_map_path = l1_map_path;
    }
    return rep;
}

std::vector<std::uint8_t> synthetic_image(std::size_t width, std::size_t height) {
    std::vector<std::uint8_t> img(width * height * 3);
    const double cx = 0.5 * static_cast<double>(width), cy = 0.5 * static_cast<double>(height);
    const double r2 = 0.09 * static_cast<double>(std::min(width, height) * std::min(width, height));
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            std::uint8_t* p = img.data() + (y * width + x) * 3;
            p[0] = static_cast<std::uint8_t>(255 * x / std::max<std::size_t>(1, width - 1));
            p[1] = static_cast<std::uint8_t>(255 * y / std::max<std::size_t>(1, height - 1));
            p[2] = static_cast<std::uint8_t>(((x / 8 + y / 8) % 2) ? 200 : 40);
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            if (dx * dx + dy * dy < r2) p[0] = p[1] = p[2] = 255;
            if (x >= width / 8 && x < width / 4 && y >= height / 8 && y < height / 4) p[0] = p[1] = p[2] = 0;
        }
    return img;
}

std::vector<std::uint8_t> synthetic_tone(std::size_t samples, double freq_hz, double sample_rate_hz) {
    std::vector<std::uint8_t> out(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        const double v = std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / sample_rate_hz);
        out[i] = static_cast<std::uint8_t>(std::lround(127.5 + 127.0 * v));
    }
    return out;
}

// ---------------------------------------------------------------------------
// training runs

std::string metrics_header() { return "stage,step,loss,lr,val_ber\r\n"; }

std::string metrics_line(const hnr::MetricRow& row) {
    return row.stage + "," + std::to_string(row.step) + "," + format_double(row.loss) + "," + format_double(row.lr) +
           "," + format_double(row.val_ber) + "\r\n";
}

hnr::HnrModel initial_model(const ExperimentConfig& cfg, const Link& link) {
    hnr::HnrModel m(cfg.model, cfg.channel.num_rx, link.bits_per_symbol(), derive_seed(cfg.seed, {0x696e6974}));
    m.fingerprint = hnr::fingerprint(cfg.model, link, cfg.channel.num_rx);
    return m;
}

TrainRun run_training(const ExperimentConfig& cfg, int first, int last, std::string* metrics_csv) {
    if (first < 1 || last > 3 || first > last) throw std::invalid_argument("training stages must satisfy 1 <= first <= last <= 3");
    cfg.validate();
    const Link link = make_link(cfg);
    if (!link.coded()) throw std::invalid_argument("training needs a coded link");
    const auto settings = cfg.train_settings();

    std::uint32_t stages = 0;
    std::optional<hnr::HnrModel> model;
    if (first == 1) {
        model.emplace(initial_model(cfg, link));
    } else {
        if (cfg.checkpoint.empty()) throw std::invalid_argument("stage " + std::to_string(first) + " needs an input checkpoint");
        fs::path p(cfg.checkpoint);
        if (p.is_relative() && !fs::exists(p) && !cfg.base_dir.empty()) p = fs::path(cfg.base_dir) / p;
        const auto c = load_checkpoint(p.string());
        model.emplace(load_model_for(p.string(), link, cfg.channel.num_rx));
        stages = c.stages;
        const std::uint32_t needed = (1u << (first - 1)) - 1;
        if ((stages & needed) != needed)
            throw std::invalid_argument("stage " + std::to_string(first) + " needs a checkpoint that completed the earlier stages");
    }

    TrainRun run;
    if (metrics_csv) *metrics_csv = metrics_header();
    const hnr::MetricSink sink = [&](const hnr::MetricRow& r) {
        if (metrics_csv) *metrics_csv += metrics_line(r);
    };
    for (int s = first; s <= last; ++s) {
        switch (s) {
            case 1: run.reports.push_back(hnr::train_stage1(*model, link, settings, sink)); break;
            case 2: run.reports.push_back(hnr::train_stage2(*model, link, settings, sink)); break;
            case 3: run.reports.push_back(hnr::train_stage3(*model, link, settings, sink)); break;
        }
        stages |= 1u << (s - 1);
    }
    run.checkpoint = checkpoint_from(*model, stages);
    return run;
}

}  // namespace hrx::harness
