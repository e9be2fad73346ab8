#pragma once

// Finite-difference check of the full receiver: transformer, LLR gather and
// message passing, with a coded-bit BCE on top.

#include "hrx/hnr.hpp"
#include "hrx/rng.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace gradcheck {

struct ParamError {
    std::string name;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct EndToEnd {
    std::vector<ParamError> samples;
    /// Sum of |gradient| over the input projection; zero would mean the GNN
    /// loss never reaches the front of the transformer.
    double input_grad_mass = 0.0;
};

/// Samples `count` scalar parameters of a randomly initialized model and
/// compares backward() against central differences.
inline EndToEnd hnr_end_to_end(const hrx::Link& link, const hrx::hnr::HnrConfig& cfg, std::size_t count,
                               std::uint64_t seed) {
    using namespace hrx;
    using namespace hrx::hnr;
    using diff::Array;
    using diff::Graph;

    HnrModel m(cfg, 2, link.bits_per_symbol(), seed);
    // the head starts at zero; give it weight so the transformer is in the loop
    Rng rng(derive_seed(seed, {1}));
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& w : m.params.value(m.head.weight).data) w = n(rng);

    channel::ChannelSpec ch;
    ch.model = channel::Model::FlatRayleigh;
    const double nv = snr_db_to_noise_var(3.0);
    const auto f = simulate_frame(link, ch, nv, derive_seed(seed, {2}));
    const auto layout = TokenLayout::make(link.grid(), cfg.pilot_tokens);
    const auto tg = TannerGraph::build(link.code().pcm).replicate(link.codewords_per_frame());
    Array targets({link.coded_bits_per_frame(), 1});
    for (std::size_t i = 0; i < targets.size(); ++i) targets.data[i] = f.bits[i];

    auto loss = [&](const HnrModel& model, diff::Gradients* grads) {
        Graph g(&model.params);
        const auto tokens = g.constant(featurize(f.rx, nv, link, cfg.pilot_tokens));
        const auto head = transformer_forward(g, model, tokens, 1, layout.num_tokens);
        const auto llr = frame_llrs(g, head, layout, 1, link.bits_per_symbol(), link.coded_bits_per_frame());
        const auto l = g.bce_with_logits(gnn_forward(g, model, tg, llr, cfg.mp_iters), targets);
        if (grads) *grads = g.backward(l);
        return g.value(l).data[0];
    };

    EndToEnd out;
    diff::Gradients grads;
    loss(m, &grads);
    for (double v : grads[*m.params.find("tx.in.w")].data) out.input_grad_mass += std::abs(v);

    std::uniform_int_distribution<std::size_t> pick_param(0, m.params.size() - 1);
    const double h = 1e-5;
    for (std::size_t t = 0; t < count; ++t) {
        const std::size_t id = pick_param(rng);
        std::uniform_int_distribution<std::size_t> pick(0, m.params.value(id).size() - 1);
        const std::size_t k = pick(rng);
        auto plus = m, minus = m;
        plus.params.value(id).data[k] += h;
        minus.params.value(id).data[k] -= h;
        ParamError e;
        e.name = m.params.name(id) + "[" + std::to_string(k) + "]";
        e.numeric = (loss(plus, nullptr) - loss(minus, nullptr)) / (2 * h);
        e.analytic = grads[id].data[k];
        e.rel_error = std::abs(e.numeric - e.analytic) / std::max(1.0, std::abs(e.numeric) + std::abs(e.analytic));
        out.samples.push_back(e);
    }
    return out;
}

}  // namespace gradcheck
