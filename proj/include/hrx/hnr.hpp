#pragma once

// Hybrid neural receiver: a transformer over resource-grid tokens that emits
// per-bit LLRs, followed by a message-passing network on the Tanner graph of
// the code, plus the staged training procedure.

#include "hrx/channel.hpp"
#include "hrx/diffcore.hpp"
#include "hrx/fec.hpp"
#include "hrx/link.hpp"
#include "hrx/phy.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrx::hnr {

struct HnrConfig {
    std::size_t num_blocks = 5;
    std::size_t num_heads = 4;
    std::size_t embed_dim = 128;
    std::size_t ffn_dim = 128;
    std::size_t gnn_embed_dim = 16;
    std::size_t gnn_msg_dim = 16;
    std::size_t gnn_hidden = 48;
    std::size_t cn_mlp_layers = 3;
    std::size_t vn_mlp_layers = 2;
    /// Width of the learned per-direction edge feature vectors.
    std::size_t edge_feature_dim = 8;
    std::size_t mp_iters = 12;
    /// Feed pilot-symbol REs to the transformer as tokens.
    bool pilot_tokens = true;

    void validate() const;
    std::string canonical() const;
    bool operator==(const HnrConfig&) const = default;
};

class FingerprintError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& stage, std::size_t step, const std::string& what)
        : std::runtime_error(stage + " diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

/// FNV-1a 64 over a byte string.
std::uint64_t fnv1a(std::string_view bytes);

/// Identifies everything a trained model is tied to: architecture, grid,
/// pilots, constellation, code and antenna count.
std::uint64_t fingerprint(const HnrConfig& cfg, const Link& link, std::size_t num_rx);

// ---------------------------------------------------------------------------
// tokens

/// Noise variances below this are clamped before taking the log feature.
inline constexpr double kMinNoiseVar = 1e-12;

/// Features per token: Re/Im per antenna, pilot Re/Im, log noise variance,
/// normalized subcarrier and symbol coordinates.
std::size_t feature_dim(std::size_t num_rx);

struct TokenLayout {
    std::size_t num_tokens = 0;
    /// Token row of data RE j (data order).
    std::vector<std::uint32_t> data_token;

    static TokenLayout make(const phy::GridSpec& spec, bool pilot_tokens);
};

/// Token matrix [num_tokens, feature_dim] for one received grid, symbol-major
/// over usable subcarriers.
diff::Array featurize(const phy::ResourceGrid& rx, double noise_var, const Link& link, bool pilot_tokens = true);

// ---------------------------------------------------------------------------
// Tanner graph

struct TannerGraph {
    std::size_t num_vn = 0;
    std::size_t num_cn = 0;
    /// Endpoints of edge e, in PCM row-scan order.
    std::vector<std::uint32_t> edge_vn;
    std::vector<std::uint32_t> edge_cn;

    static TannerGraph build(const fec::ParityCheckMatrix& h);
    std::size_t num_edges() const { return edge_vn.size(); }
    /// Disjoint union of `copies` graphs, node ids offset per copy.
    TannerGraph replicate(std::size_t copies) const;
};

// ---------------------------------------------------------------------------
// model

struct Dense {
    std::size_t weight = 0;
    std::size_t bias = 0;
};

struct BlockParams {
    std::size_t ln1_gain, ln1_bias;
    Dense query, key, value, output;
    std::size_t ln2_gain, ln2_bias;
    Dense ffn1, ffn2;
};

class HnrModel {
public:
    /// Builds the parameter layout with random initial values.
    HnrModel(HnrConfig cfg, std::size_t num_rx, unsigned bits_per_symbol, std::uint64_t init_seed);

    const HnrConfig& config() const { return cfg_; }
    std::size_t num_rx() const { return num_rx_; }
    unsigned bits_per_symbol() const { return bps_; }

    diff::ParameterSet params;
    /// Fingerprint of the link the model was trained for; 0 when unbound.
    std::uint64_t fingerprint = 0;

    // parameter ids
    Dense input;
    std::vector<BlockParams> blocks;
    std::size_t final_gain = 0, final_bias = 0;
    Dense head;
    Dense llr_embed;
    std::size_t gamma_vc = 0, gamma_cv = 0;
    std::vector<Dense> msg_vc, msg_cv, cn_update, vn_update;
    Dense readout;

    /// Zeroes every parameter (layer-norm gains included).
    void zero();
    /// Throws unless a loaded set has this model's names and shapes.
    void check_layout(const diff::ParameterSet& loaded) const;

private:
    HnrConfig cfg_;
    std::size_t num_rx_;
    unsigned bps_;
};

/// Trainable scalar count as a closed-form function of the configuration.
std::size_t parameter_count(const HnrConfig& cfg, std::size_t num_rx, unsigned bits_per_symbol);

/// Prefixes of the two parameter groups.
inline constexpr const char* kTransformerPrefix = "tx.";
inline constexpr const char* kGnnPrefix = "gnn.";

// ---------------------------------------------------------------------------
// graph builders (batched)

struct TransformerTrace {
    /// Attention probability matrices, one per (block, frame, head).
    std::vector<diff::Value> attention;
};

/// Head output [batch * num_tokens, bits_per_symbol] for stacked tokens.
diff::Value transformer_forward(diff::Graph& g, const HnrModel& m, diff::Value tokens, std::size_t batch,
                                std::size_t num_tokens, TransformerTrace* trace = nullptr);

/// Gathers the coded bits of each frame from the head output as a column
/// [batch * coded_bits, 1] of LLRs (positive favours bit 0).
diff::Value frame_llrs(diff::Graph& g, diff::Value head_out, const TokenLayout& layout, std::size_t batch,
                       unsigned bits_per_symbol, std::size_t coded_bits);

/// Bit-1 logits [num_vn, 1] from LLRs [num_vn, 1] on a (possibly replicated)
/// Tanner graph.
diff::Value gnn_forward(diff::Graph& g, const HnrModel& m, const TannerGraph& tg, diff::Value llrs,
                        std::size_t iters);

// ---------------------------------------------------------------------------
// inference

/// Transformer LLRs for the coded part of one frame.
std::vector<double> transformer_llrs(const HnrModel& m, const Link& link, const phy::ResourceGrid& rx,
                                     double noise_var);

/// Bit-1 probabilities for one LLR vector of length num_vn.
std::vector<double> gnn_decode(const HnrModel& m, const TannerGraph& tg, std::span<const double> llrs,
                               std::size_t iters);

struct HnrResult {
    fec::Bits info;
    fec::Bits coded;
    std::vector<double> llrs;
    std::vector<double> probabilities;
};

/// Full receive chain; throws FingerprintError if the model was trained for a
/// different link.
HnrResult hnr_receive(const HnrModel& m, const Link& link, const phy::ResourceGrid& rx, double noise_var);

// ---------------------------------------------------------------------------
// training

/// Per-stage data budgets in codewords before scaling.
inline constexpr double kStage1Codewords = 12e6;
inline constexpr double kStage2Codewords[3] = {4e6, 40e6, 40e6};
inline constexpr double kStage2Rates[3] = {5e-4, 1e-4, 1e-5};
inline constexpr double kStage1Rate = 1e-4;
inline constexpr double kStage3Codewords = 1e6;
inline constexpr double kStage3Rate = 1e-5;

struct TrainSettings {
    double scale = 1e-3;
    std::size_t batch = 32;
    /// Multiplies every stage learning rate.
    double lr_multiplier = 1.0;
    double weight_decay = 0.01;
    double snr_min_db = 0.0;
    double snr_max_db = 15.0;
    channel::ChannelSpec channel;
    std::uint64_t seed = 1;
    std::size_t val_frames = 64;
    /// Validation cadence in steps; 0 validates only at the stage end.
    std::size_t val_every = 0;
    /// Caps the stage-1 step count when non-zero.
    std::size_t stage1_max_steps = 0;

    bool operator==(const TrainSettings&) const = default;
};

/// Step count for a budget of `codewords` under the settings.
std::size_t budget_steps(double codewords, const TrainSettings& s, const Link& link);

/// Stage-2 phase boundaries (cumulative step counts).
std::vector<std::size_t> stage2_boundaries(const TrainSettings& s, const Link& link);

struct MetricRow {
    std::string stage;
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    /// NaN when no validation ran at this step.
    double val_ber = 0.0;
};

using MetricSink = std::function<void(const MetricRow&)>;

struct StageReport {
    std::size_t steps = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
    /// Mean loss over the first and last tenth of the stage.
    double head_loss = 0.0;
    double tail_loss = 0.0;
    double val_bce = 0.0;
    double val_ber = 0.0;
};

struct Evaluation {
    double bce = 0.0;
    double info_ber = 0.0;
    double coded_ber = 0.0;
};

/// Held-out evaluation on frames derived from the settings seed. Stage 1
/// scores transformer LLRs (coded-bit BCE, BP info BER); later stages score
/// the GNN output (info-bit BCE).
Evaluation evaluate_transformer(const HnrModel& m, const Link& link, const TrainSettings& s);
Evaluation evaluate_full(const HnrModel& m, const Link& link, const TrainSettings& s);

StageReport train_stage1(HnrModel& m, const Link& link, const TrainSettings& s, const MetricSink& sink = {});
StageReport train_stage2(HnrModel& m, const Link& link, const TrainSettings& s, const MetricSink& sink = {});
/// Keeps the parameters with the lowest validation BCE, starting from the
/// stage-2 model itself.
StageReport train_stage3(HnrModel& m, const Link& link, const TrainSettings& s, const MetricSink& sink = {});

/// Binary cross-entropy of bit-1 logits against 0/1 targets, computed
/// directly (no graph).
double bce_reference(std::span<const double> logits, std::span<const std::uint8_t> bits);

}  // namespace hrx::hnr
