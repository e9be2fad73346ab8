// hrxsim: command-line front end for sweeps, training, payload runs and
// checkpoint inspection.

#include "hrx/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace hx = hrx::harness;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kConfig = 3, kCheckpoint = 4 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> scale;
    std::string out;
    std::vector<std::string> set;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "Config file (also looked up under $HRX_CONFIG_DIR)");
    cmd->add_option("--seed", c.seed, "Master seed override");
    cmd->add_option("--scale", c.scale, "Training budget multiplier override")->check(CLI::PositiveNumber);
    cmd->add_option("-o,--out", c.out, "Output path");
    cmd->add_option("--set", c.set, "Extra 'key=value' config lines, applied after the file");
}

hx::ExperimentConfig build_config(const Common& c) {
    std::string text;
    std::string base_dir;
    if (!c.config.empty()) {
        const auto path = hx::resolve_config_path(c.config);
        text = hx::read_file(path);
        base_dir = std::filesystem::path(path).parent_path().string();
    }
    for (const auto& line : c.set) text += (text.empty() || text.back() == '\n' ? "" : "\n") + line + "\n";
    auto cfg = hx::parse_config(text, base_dir);
    if (c.seed) cfg.seed = *c.seed;
    if (c.scale) cfg.scale = *c.scale;
    cfg.validate();
    return cfg;
}

std::string resolve_against(const hx::ExperimentConfig& cfg, const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_relative() && !std::filesystem::exists(p) && !cfg.base_dir.empty()) {
        const auto q = std::filesystem::path(cfg.base_dir) / p;
        if (std::filesystem::exists(q)) return q.string();
    }
    return p.string();
}

std::optional<hrx::hnr::HnrModel> model_for(const hx::ExperimentConfig& cfg) {
    if (cfg.receiver != hx::Receiver::Hnr) return std::nullopt;
    if (cfg.checkpoint.empty()) throw std::invalid_argument("receiver 'hnr' needs --checkpoint or a 'checkpoint' key");
    const auto link = hx::make_link(cfg);
    return hx::load_model_for(resolve_against(cfg, cfg.checkpoint), link, cfg.channel.num_rx);
}

void emit(const std::string& out, const std::string& content) {
    if (out.empty() || out == "-")
        std::cout << content << std::flush;
    else
        hx::write_file_atomic(out, content);
}

int cmd_gencode(const Common& c) {
    const auto cfg = build_config(c);
    const auto code = hx::make_code(cfg.code, cfg.base_dir);
    if (!code) throw std::invalid_argument("gencode: config has code = none");
    emit(c.out, hrx::fec::to_alist(code->pcm));
    return kOk;
}

int cmd_sweep(const Common& c, const std::string& receiver, const std::string& checkpoint, std::size_t frames) {
    auto cfg = build_config(c);
    if (!receiver.empty()) cfg.receiver = hx::receiver_from_name(receiver);
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (frames) cfg.frames_per_point = frames;
    const auto model = model_for(cfg);
    const auto rows = hx::run_sweep(cfg, model ? &*model : nullptr);
    emit(c.out.empty() ? cfg.sweep_out : c.out, hx::sweep_csv(rows));
    return kOk;
}

int cmd_train(const Common& c, const std::string& stage, const std::string& checkpoint, const std::string& metrics) {
    auto cfg = build_config(c);
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    int first = 1, last = 3;
    if (stage != "all") first = last = std::stoi(stage);
    std::string csv;
    const auto run = hx::run_training(cfg, first, last, &csv);
    const std::string ckpt_out = c.out.empty() ? cfg.checkpoint_out : c.out;
    hx::save_checkpoint(ckpt_out, run.checkpoint);
    const std::string metrics_out = metrics.empty() ? cfg.metrics_out : metrics;
    if (!metrics_out.empty()) hx::write_file_atomic(metrics_out, csv);
    for (std::size_t i = 0; i < run.reports.size(); ++i) {
        const auto& r = run.reports[i];
        std::printf("stage %d: steps %zu  loss %.6g -> %.6g  val_bce %.6g  val_ber %.6g\n", first + static_cast<int>(i),
                    r.steps, r.head_loss, r.tail_loss, r.val_bce, r.val_ber);
    }
    std::printf("checkpoint: %s\n", ckpt_out.c_str());
    return kOk;
}

struct PayloadArgs {
    std::string input;
    std::string synthetic;
    std::size_t width = 0, height = 0, channels = 0;
    std::string l1_map;
    std::string checkpoint;
    std::string receiver;
    std::optional<double> snr_db;
};

int cmd_payload(const Common& c, const PayloadArgs& a) {
    auto cfg = build_config(c);
    if (!a.receiver.empty()) cfg.receiver = hx::receiver_from_name(a.receiver);
    if (!a.checkpoint.empty()) cfg.checkpoint = a.checkpoint;
    if (a.snr_db) cfg.payload_snr_db = *a.snr_db;

    std::vector<std::uint8_t> bytes;
    std::optional<hx::ImageMeta> meta;
    if (!a.synthetic.empty()) {
        if (a.synthetic == "image") {
            const std::size_t w = a.width ? a.width : 64, h = a.height ? a.height : 48;
            bytes = hx::synthetic_image(w, h);
            meta = hx::ImageMeta{w, h, 3};
        } else if (a.synthetic == "tone") {
            bytes = hx::synthetic_tone(8000, 440.0, 8000.0);
        } else {
            throw std::invalid_argument("--synthetic must be 'image' or 'tone'");
        }
    } else {
        const auto text = hx::read_file(a.input);
        bytes.assign(text.begin(), text.end());
        if (a.width || a.height || a.channels)
            meta = hx::ImageMeta{a.width, a.height, a.channels ? a.channels : 1};
    }
    const auto model = model_for(cfg);
    const auto rep = hx::run_payload(bytes, cfg, model ? &*model : nullptr, meta, a.l1_map);
    if (!c.out.empty()) hx::write_file_atomic(c.out, std::string(rep.received.begin(), rep.received.end()));
    std::printf("bytes: %zu\npadded_bits: %zu\nframes: %zu\nber: %s\nmse: %s\nrmse: %s\npsnr_db: %s\n", rep.byte_count,
                rep.padded_bits, rep.frames, hx::format_double(rep.ber).c_str(), hx::format_double(rep.mse).c_str(),
                hx::format_double(rep.rmse).c_str(), hx::format_double(rep.psnr_db).c_str());
    if (!rep.l1_map_path.empty()) std::printf("l1_map: %s\n", rep.l1_map_path.c_str());
    return kOk;
}

int cmd_inspect(const std::string& path) {
    std::cout << hx::describe_checkpoint(hx::load_checkpoint(path));
    return kOk;
}

int report(const char* kind, const std::exception& e, int code) {
    std::cerr << "hrxsim: error [" << kind << "]: " << e.what() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Link-level OFDM simulator with classical and hybrid neural receivers"};
    app.require_subcommand(1);

    Common common;
    auto* gencode = app.add_subcommand("gencode", "Write the configured LDPC code as alist");
    add_common(gencode, common);

    std::string receiver, checkpoint, metrics;
    std::size_t frames = 0;
    auto* sweep = app.add_subcommand("sweep", "BER/BLER sweep over the configured SNR list, as CSV");
    add_common(sweep, common);
    sweep->add_option("--receiver", receiver, "baseline, perfect_csi or hnr");
    sweep->add_option("--checkpoint", checkpoint, "Model for the hnr receiver");
    sweep->add_option("--frames", frames, "Frames per SNR point");

    std::string stage;
    auto* train = app.add_subcommand("train", "Run training stages and write a checkpoint");
    add_common(train, common);
    train->add_option("stage", stage, "1, 2, 3 or all")->required()->check(CLI::IsMember({"1", "2", "3", "all"}));
    train->add_option("--checkpoint", checkpoint, "Input checkpoint for stages 2 and 3");
    train->add_option("--metrics", metrics, "Metrics CSV path");

    PayloadArgs pa;
    auto* payload = app.add_subcommand("payload", "Send a file through the link and report distortion");
    add_common(payload, common);
    auto* in_opt = payload->add_option("--input", pa.input, "Payload file")->check(CLI::ExistingFile);
    auto* syn_opt = payload->add_option("--synthetic", pa.synthetic, "Built-in payload: image or tone");
    in_opt->excludes(syn_opt);
    payload->add_option("--width", pa.width, "Image width");
    payload->add_option("--height", pa.height, "Image height");
    payload->add_option("--channels", pa.channels, "Image channels");
    payload->add_option("--l1-map", pa.l1_map, "Write the per-pixel L1 map here (PGM)");
    payload->add_option("--receiver", pa.receiver, "baseline, perfect_csi or hnr");
    payload->add_option("--checkpoint", pa.checkpoint, "Model for the hnr receiver");
    payload->add_option("--snr", pa.snr_db, "SNR in dB");

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint");
    inspect->add_option("checkpoint", inspect_path, "Checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "hrxsim: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    try {
        if (*gencode) return cmd_gencode(common);
        if (*sweep) return cmd_sweep(common, receiver, checkpoint, frames);
        if (*train) return cmd_train(common, stage, checkpoint, metrics);
        if (*payload) {
            if (pa.input.empty() && pa.synthetic.empty()) throw std::invalid_argument("payload needs --input or --synthetic");
            return cmd_payload(common, pa);
        }
        if (*inspect) return cmd_inspect(inspect_path);
    } catch (const hx::ConfigError& e) {
        return report("config", e, kConfig);
    } catch (const hrx::hnr::FingerprintError& e) {
        return report("fingerprint", e, kCheckpoint);
    } catch (const hx::CheckpointVersionError& e) {
        return report("checkpoint-version", e, kCheckpoint);
    } catch (const hx::CheckpointTruncatedError& e) {
        return report("checkpoint-truncated", e, kCheckpoint);
    } catch (const hx::CheckpointError& e) {
        return report("checkpoint", e, kCheckpoint);
    } catch (const hrx::hnr::TrainingDiverged& e) {
        return report("diverged", e, kFailure);
    } catch (const std::exception& e) {
        return report("failure", e, kFailure);
    }
    return kUsage;
}
