#include "hrx/harness.hpp"
#include "hrx/rxclassic.hpp"

#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace hrx;

namespace {

harness::ExperimentConfig with_lines(const harness::ExperimentConfig& cfg, const std::vector<std::string>& lines) {
    std::string text = harness::dump_config(cfg);
    for (const auto& l : lines) text += l + "\n";
    return harness::parse_config(text, cfg.base_dir);
}

py::dict row_dict(const harness::SweepRow& r) {
    py::dict d;
    d["snr_db"] = r.snr_db;
    d["info_ber"] = r.info_ber;
    d["coded_ber"] = r.coded_ber;
    d["bler"] = r.bler;
    d["frames"] = r.frames;
    d["bit_count"] = r.bit_count;
    d["mc_stderr"] = r.mc_stderr;
    d["receiver"] = r.receiver;
    d["channel_model"] = r.channel_model;
    d["seed"] = r.seed;
    return d;
}

std::optional<hnr::HnrModel> maybe_model(const harness::ExperimentConfig& cfg, const std::optional<std::string>& ckpt) {
    if (!ckpt) return std::nullopt;
    return harness::load_model_for(*ckpt, harness::make_link(cfg), cfg.channel.num_rx);
}

py::array_t<std::uint8_t> to_array(const fec::Bits& b) { return py::array_t<std::uint8_t>(b.size(), b.data()); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Link-level OFDM simulator with classical and hybrid neural receivers";

    py::register_exception<harness::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<harness::CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
    py::register_exception<hnr::FingerprintError>(m, "FingerprintError", PyExc_RuntimeError);
    py::register_exception<hnr::TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

    m.def("snr_db_to_noise_var", &snr_db_to_noise_var, py::arg("snr_db"));
    m.def("ebn0_to_esn0_db", &ebn0_to_esn0_db, py::arg("ebn0_db"), py::arg("bits_per_symbol"), py::arg("code_rate"));

    py::class_<harness::ExperimentConfig>(m, "Config")
        .def(py::init<>())
        .def_static("parse", &harness::parse_config, py::arg("text"), py::arg("base_dir") = "")
        .def_static("load", &harness::load_config, py::arg("path"))
        .def("dump", &harness::dump_config)
        .def("with_lines", &with_lines, py::arg("lines"),
             "Copy with extra 'key = value' lines applied on top.")
        .def_readwrite("seed", &harness::ExperimentConfig::seed)
        .def_readwrite("scale", &harness::ExperimentConfig::scale)
        .def_readwrite("snr_db", &harness::ExperimentConfig::snr_db)
        .def_readwrite("frames_per_point", &harness::ExperimentConfig::frames_per_point)
        .def_readwrite("constellation", &harness::ExperimentConfig::constellation)
        .def_readwrite("code", &harness::ExperimentConfig::code)
        .def_readwrite("noiseless", &harness::ExperimentConfig::noiseless)
        .def_readwrite("payload_snr_db", &harness::ExperimentConfig::payload_snr_db)
        .def_property(
            "receiver", [](const harness::ExperimentConfig& c) { return harness::receiver_name(c.receiver); },
            [](harness::ExperimentConfig& c, const std::string& n) { c.receiver = harness::receiver_from_name(n); })
        .def_property_readonly("num_rx", [](const harness::ExperimentConfig& c) { return c.channel.num_rx; })
        .def_property_readonly("channel_model",
                               [](const harness::ExperimentConfig& c) { return channel::model_name(c.channel.model); })
        .def("__eq__", [](const harness::ExperimentConfig& a, const harness::ExperimentConfig& b) { return a == b; })
        .def("__repr__", [](const harness::ExperimentConfig& c) {
            return "<Config " + c.constellation + " " + c.code + " " + channel::model_name(c.channel.model) + ">";
        });

    m.def(
        "frame_layout",
        [](const harness::ExperimentConfig& cfg) {
            const auto link = harness::make_link(cfg);
            py::dict d;
            d["data_res"] = link.grid().data_capacity();
            d["bit_capacity"] = link.bit_capacity();
            d["codewords"] = link.codewords_per_frame();
            d["info_bits"] = link.info_bits_per_frame();
            d["coded_bits"] = link.coded_bits_per_frame();
            return d;
        },
        py::arg("config"));

    m.def(
        "run_sweep",
        [](const harness::ExperimentConfig& cfg, const std::optional<std::string>& checkpoint) {
            const auto model = maybe_model(cfg, checkpoint);
            std::vector<harness::SweepRow> rows;
            {
                py::gil_scoped_release release;
                rows = harness::run_sweep(cfg, model ? &*model : nullptr);
            }
            py::list out;
            for (const auto& r : rows) out.append(row_dict(r));
            return out;
        },
        py::arg("config"), py::arg("checkpoint") = py::none());

    m.def(
        "sweep_csv",
        [](const harness::ExperimentConfig& cfg, const std::optional<std::string>& checkpoint) {
            const auto model = maybe_model(cfg, checkpoint);
            py::gil_scoped_release release;
            return harness::sweep_csv(harness::run_sweep(cfg, model ? &*model : nullptr));
        },
        py::arg("config"), py::arg("checkpoint") = py::none());

    m.def(
        "run_payload",
        [](py::bytes data, const harness::ExperimentConfig& cfg, const std::optional<std::string>& checkpoint) {
            const std::string s = data;
            const std::vector<std::uint8_t> bytes(s.begin(), s.end());
            const auto model = maybe_model(cfg, checkpoint);
            harness::PayloadReport r;
            {
                py::gil_scoped_release release;
                r = harness::run_payload(bytes, cfg, model ? &*model : nullptr);
            }
            py::dict d;
            d["byte_count"] = r.byte_count;
            d["padded_bits"] = r.padded_bits;
            d["frames"] = r.frames;
            d["ber"] = r.ber;
            d["mse"] = r.mse;
            d["rmse"] = r.rmse;
            d["psnr_db"] = r.psnr_db;
            d["received"] = py::bytes(reinterpret_cast<const char*>(r.received.data()), r.received.size());
            return d;
        },
        py::arg("data"), py::arg("config"), py::arg("checkpoint") = py::none());

    m.def("psnr_db", &harness::psnr_db, py::arg("mse"));
    m.def(
        "distortion",
        [](py::bytes reference, py::bytes received) {
            const std::string a = reference, b = received;
            const auto d = harness::distortion(std::vector<std::uint8_t>(a.begin(), a.end()),
                                               std::vector<std::uint8_t>(b.begin(), b.end()));
            return py::make_tuple(d.mse, d.rmse, d.psnr_db);
        },
        py::arg("reference"), py::arg("received"), "Returns (mse, rmse, psnr_db).");
    m.def(
        "synthetic_image",
        [](std::size_t w, std::size_t h) {
            const auto img = harness::synthetic_image(w, h);
            return py::bytes(reinterpret_cast<const char*>(img.data()), img.size());
        },
        py::arg("width"), py::arg("height"));

    m.def(
        "constellation_points",
        [](unsigned order) {
            const auto c = phy::Constellation::make(order);
            return py::array_t<std::complex<double>>(c.points().size(), c.points().data());
        },
        py::arg("order"), "Unit-energy points indexed by their bit label (MSB first).");
    m.def(
        "demap",
        [](py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast> y, double noise_var,
           unsigned order, bool max_log) {
            const auto c = phy::Constellation::make(order);
            const auto mode = max_log ? phy::LlrMode::MaxLog : phy::LlrMode::LogMap;
            const auto bps = c.bits_per_symbol();
            py::array_t<double> out({static_cast<py::ssize_t>(y.size()), static_cast<py::ssize_t>(bps)});
            auto o = out.mutable_unchecked<2>();
            const auto in = y.unchecked<1>();
            for (py::ssize_t i = 0; i < in.shape(0); ++i) {
                const auto l = phy::exact_llr(in(i), noise_var, c, mode);
                for (unsigned b = 0; b < bps; ++b) o(i, b) = l[b];
            }
            return out;
        },
        py::arg("y"), py::arg("noise_var"), py::arg("order"), py::arg("max_log") = false,
        "Per-bit LLRs, positive favouring 0.");

    m.def("regular_ldpc_alist", [](std::size_t n, std::size_t dv, std::size_t dc, std::uint64_t seed) {
        return fec::to_alist(fec::build_regular_ldpc(n, dv, dc, seed));
    }, py::arg("n"), py::arg("dv"), py::arg("dc"), py::arg("seed") = 1);
    m.def(
        "bp_decode",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> llr, const std::string& alist,
           std::size_t iters) {
            const auto h = fec::load_alist(alist);
            const auto r = fec::bp_decode(std::span<const double>(llr.data(), llr.size()), h, iters);
            return py::make_tuple(to_array(r.bits), r.success, r.iterations);
        },
        py::arg("llr"), py::arg("alist"), py::arg("iters") = fec::kDefaultBpIterations,
        "Returns (bits, success, iterations).");

    m.def(
        "parameter_count",
        [](const harness::ExperimentConfig& cfg) {
            return hnr::parameter_count(cfg.model, cfg.channel.num_rx,
                                        phy::Constellation::by_name(cfg.constellation).bits_per_symbol());
        },
        py::arg("config"));

    m.def(
        "train",
        [](const harness::ExperimentConfig& cfg, int first, int last, const std::string& out) {
            harness::TrainRun run;
            std::string metrics;
            {
                py::gil_scoped_release release;
                run = harness::run_training(cfg, first, last, &metrics);
                harness::save_checkpoint(out, run.checkpoint);
            }
            py::list reports;
            for (const auto& r : run.reports) {
                py::dict d;
                d["steps"] = r.steps;
                d["first_loss"] = r.first_loss;
                d["last_loss"] = r.last_loss;
                d["val_bce"] = r.val_bce;
                d["val_ber"] = r.val_ber;
                reports.append(d);
            }
            return py::make_tuple(reports, metrics);
        },
        py::arg("config"), py::arg("first"), py::arg("last"), py::arg("out"),
        "Runs stages first..last, saves the checkpoint to `out`; returns (reports, metrics_csv).");

    m.def(
        "inspect_checkpoint",
        [](const std::string& path) { return harness::describe_checkpoint(harness::load_checkpoint(path)); },
        py::arg("path"));
}
