#pragma once

// Experiment configuration, Monte Carlo sweeps, payload transport with
// distortion metrics, checkpoint files and staged training runs.

#include "hrx/channel.hpp"
#include "hrx/hnr.hpp"
#include "hrx/link.hpp"
#include "hrx/phy.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hrx::harness {

// ---------------------------------------------------------------------------
// configuration

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::size_t line, const std::string& what)
        : std::runtime_error(line ? "config line " + std::to_string(line) + ": " + what : "config: " + what),
          line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

enum class Receiver { Baseline, PerfectCsi, Hnr };
Receiver receiver_from_name(std::string_view name);
std::string receiver_name(Receiver r);

/// How the SNR list is interpreted. Both map to the noise variance through
/// snr_db_to_noise_var after the Eb/N0 -> Es/N0 shift.
enum class SnrAxis { EsN0, EbN0 };

struct ExperimentConfig {
    phy::GridSpec grid;
    std::string constellation = "qam64";
    /// "regular:n,dv,dc,seed", "alist:<path>" or "none" (uncoded).
    std::string code = "regular:1024,3,6,1";
    std::uint64_t pilot_seed = 0x5eed;
    channel::ChannelSpec channel;
    Receiver receiver = Receiver::Baseline;
    std::vector<double> snr_db = {0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
    SnrAxis snr_axis = SnrAxis::EsN0;
    std::size_t frames_per_point = 100;
    std::uint64_t seed = 1;
    double scale = 1e-3;
    /// Forces zero noise regardless of the SNR list.
    bool noiseless = false;
    std::size_t bp_iters = fec::kDefaultBpIterations;
    double payload_snr_db = 10.0;
    /// Input checkpoint for the hnr receiver and for training stages 2 and 3.
    std::string checkpoint;
    std::string sweep_out = "sweep.csv";
    std::string metrics_out = "metrics.csv";
    std::string checkpoint_out = "hnr.ckpt";
    hnr::HnrConfig model;
    hnr::TrainSettings train;
    /// Directory relative paths in the file are resolved against.
    std::string base_dir;

    void validate() const;
    /// Training settings with seed, scale and channel taken from this config.
    hnr::TrainSettings train_settings() const;
    bool operator==(const ExperimentConfig&) const = default;
};

/// Parses the flat "key = value" format; '#' starts a comment.
ExperimentConfig parse_config(std::string_view text, const std::string& base_dir = "");
ExperimentConfig load_config(const std::string& path);
/// Serializes every key, so parse_config(dump_config(c)) == c.
std::string dump_config(const ExperimentConfig& cfg);

/// Name of the environment variable holding the default config directory.
inline constexpr const char* kConfigDirEnv = "HRX_CONFIG_DIR";
/// Returns path as-is if it exists, else looks for it (and path + ".cfg")
/// under $HRX_CONFIG_DIR.
std::string resolve_config_path(const std::string& path);

std::shared_ptr<const Code> make_code(const std::string& spec, const std::string& base_dir = "");
Link make_link(const ExperimentConfig& cfg);

/// SNR point (dB) on the configured axis to complex noise variance.
double noise_var_for(const ExperimentConfig& cfg, const Link& link, double snr_db);

// ---------------------------------------------------------------------------
// checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {
    using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
    using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
    using CheckpointError::CheckpointError;
};

struct Checkpoint {
    hnr::HnrConfig config;
    std::uint64_t num_rx = 0;
    std::uint32_t bits_per_symbol = 0;
    std::uint64_t fingerprint = 0;
    /// Bit i set when training stage i+1 has completed.
    std::uint32_t stages = 0;
    diff::ParameterSet params;
    std::optional<diff::OptimizerState> optimizer;

    bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_from(const hnr::HnrModel& m, std::uint32_t stages);
hnr::HnrModel model_from(const Checkpoint& c);
/// Loads a model and checks it against the link it will be used with.
hnr::HnrModel load_model_for(const std::string& path, const Link& link, std::size_t num_rx);

// ---------------------------------------------------------------------------
// sweeps

struct SweepRow {
    double snr_db = 0.0;
    double info_ber = 0.0;
    double coded_ber = 0.0;
    double bler = 0.0;
    std::size_t frames = 0;
    std::size_t bit_count = 0;
    double mc_stderr = 0.0;
    std::string receiver;
    std::string channel_model;
    std::uint64_t seed = 0;
};

struct FrameErrors {
    std::size_t info_errors = 0;
    std::size_t info_bits = 0;
    std::size_t coded_errors = 0;
    std::size_t coded_bits = 0;
    std::size_t block_errors = 0;
    std::size_t blocks = 0;
};

/// Transmits and receives one frame and counts errors against what was sent.
FrameErrors run_frame(const ExperimentConfig& cfg, const Link& link, const hnr::HnrModel* model, double noise_var,
                      std::uint64_t seed);

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const hnr::HnrModel* model = nullptr);
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Writes via a temporary file and rename.
void write_file_atomic(const std::string& path, std::string_view content);
std::string read_file(const std::string& path);

/// Shortest round-trip text for a double ("%.17g"); NaN prints empty.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// payloads

struct ImageMeta {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
};

struct PayloadReport {
    std::size_t byte_count = 0;
    std::size_t padded_bits = 0;
    std::size_t frames = 0;
    double ber = 0.0;
    double mse = 0.0;
    double rmse = 0.0;
    double psnr_db = 0.0;
    std::string l1_map_path;
    std::vector<std::uint8_t> received;
};

inline constexpr double kPsnrCapDb = 100.0;

/// Most-significant bit of each byte first.
fec::Bits bytes_to_bits(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> bits_to_bytes(std::span<const std::uint8_t> bits);
/// Appends zeros up to the next multiple of `multiple` (nothing for empty input).
fec::Bits pad_bits(std::span<const std::uint8_t> bits, std::size_t multiple);
fec::Bits strip_padding(std::span<const std::uint8_t> padded, std::size_t original_bits);

struct Distortion {
    double mse = 0.0;
    double rmse = 0.0;
    double psnr_db = 0.0;
};

/// PSNR for 8-bit samples, capped at kPsnrCapDb.
double psnr_db(double mse);
Distortion distortion(std::span<const std::uint8_t> reference, std::span<const std::uint8_t> received);

/// Per-pixel |difference| averaged over channels, as 8-bit values.
std::vector<std::uint8_t> l1_map(std::span<const std::uint8_t> reference, std::span<const std::uint8_t> received,
                                 const ImageMeta& meta);
std::string encode_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> pixels);

PayloadReport run_payload(std::span<const std::uint8_t> bytes, const ExperimentConfig& cfg,
                          const hnr::HnrModel* model = nullptr, const std::optional<ImageMeta>& meta = std::nullopt,
                          const std::string& l1_map_path = "");

/// Interleaved RGB test card: gradients plus a few flat shapes.
std::vector<std::uint8_t> synthetic_image(std::size_t width, std::size_t height);
/// Unsigned 8-bit PCM sine tone.
std::vector<std::uint8_t> synthetic_tone(std::size_t samples, double freq_hz, double sample_rate_hz);

// ---------------------------------------------------------------------------
// training runs

struct TrainRun {
    std::vector<hnr::StageReport> reports;
    Checkpoint checkpoint;
};

/// The untrained model stage 1 starts from, bound to the link.
hnr::HnrModel initial_model(const ExperimentConfig& cfg, const Link& link);

/// Runs stages first..last (1-based, inclusive). Stage 1 starts from a fresh
/// model; later starts load cfg.checkpoint. Metric rows go to metrics_csv.
TrainRun run_training(const ExperimentConfig& cfg, int first, int last, std::string* metrics_csv = nullptr);

std::string metrics_header();
std::string metrics_line(const hnr::MetricRow& row);

/// Human-readable summary of a checkpoint.
std::string describe_checkpoint(const Checkpoint& c);

}  // namespace hrx::harness
