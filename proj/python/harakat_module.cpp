// Python bindings: text processing, metrics, features and inference.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "harakat/checkpoint.hpp"
#include "harakat/errors.hpp"
#include "harakat/evaluation.hpp"
#include "harakat/gradcheck.hpp"

namespace py = pybind11;
using namespace harakat;

namespace {

std::vector<std::string> label_names(const std::vector<DiacriticLabel>& labels) {
  std::vector<std::string> out;
  for (auto l : labels) out.emplace_back(l.name());
  return out;
}

LabeledText labeled_from_names(const std::string& base, const std::vector<std::string>& names) {
  std::vector<DiacriticLabel> labels;
  for (const auto& n : names) {
    const auto l = DiacriticLabel::from_name(n);
    if (!l) throw py::value_error("unknown label name: " + n);
    labels.push_back(*l);
  }
  return LabeledText(utf8_decode(base), std::move(labels));
}

py::array_t<float> mel_to_array(const MelSpectrogram& m) {
  py::array_t<float> out({m.n_mels(), m.n_frames()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

/// A loaded checkpoint ready for single-sentence inference.
class Diacritizer {
 public:
  explicit Diacritizer(const std::filesystem::path& dir) : model_(load_model(dir, &info_)) {}

  py::dict predict(const std::string& text, const std::optional<std::filesystem::path>& audio) const {
    const LabeledText input = strip_diacritics(std::string_view(text));
    if (input.size() == 0) throw py::value_error("text must not be empty");
    std::optional<MelSpectrogram> mel;
    if (audio) mel = compute_log_mel(read_wav(*audio, info_.extras.features.sample_rate), info_.extras.features);
    const auto ids = info_.extras.vocab.encode(input.base_chars());
    const std::vector<std::uint8_t> mask(ids.size(), 1);
    ForwardContext ctx;
    const Var logits = model_->forward(ids, mask, mel ? &*mel : nullptr, ctx);
    const auto labels = decode_labels(logits.value(), input.base_chars());
    std::vector<std::string> names;
    for (int l : labels) names.emplace_back(DiacriticLabel(l).name());
    py::dict d;
    d["output"] = render_hypothesis(input.base_chars(), labels);
    d["labels"] = names;
    d["speech_used"] = mel.has_value();
    return d;
  }

  std::string fusion() const { return std::string(to_string(info_.model.fusion)); }
  std::size_t parameter_count() const { return model_->parameter_count(); }

 private:
  CheckpointInfo info_;
  std::unique_ptr<FusionModel> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Arabic diacritic restoration with optional speech input";

  auto error = py::register_exception<Error>(m, "HarakatError", PyExc_RuntimeError);
  auto malformed = py::register_exception<MalformedInputError>(m, "MalformedInputError", error.ptr());
  py::register_exception<NormalizationError>(m, "NormalizationError", malformed.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<DataError>(m, "DataError", error.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", error.ptr());

  m.attr("LABELS") = [] {
    std::vector<std::string> out;
    for (int i = 0; i < DiacriticLabel::kNumClasses; ++i) out.emplace_back(DiacriticLabel(i).name());
    return out;
  }();

  m.def(
      "strip",
      [](const std::string& text) {
        const LabeledText lt = strip_diacritics(std::string_view(text));
        return py::make_tuple(utf8_encode(lt.base_chars()), label_names(lt.labels()));
      },
      py::arg("text"), "Split diacritized text into (base text, label names).");
  m.def(
      "apply",
      [](const std::string& base, const std::vector<std::string>& labels) {
        return apply_diacritics_utf8(labeled_from_names(base, labels));
      },
      py::arg("base"), py::arg("labels"), "Inverse of strip.");
  m.def("normalize", &normalize_diacritized, py::arg("text"),
        "Canonical form: composed, shadda before vowel.");

  m.def(
      "levenshtein",
      [](const std::string& a, const std::string& b) { return levenshtein(utf8_decode(a), utf8_decode(b)); },
      py::arg("a"), py::arg("b"), "Character edit distance.");
  m.def("wer", &wer, py::arg("hypothesis"), py::arg("reference"));
  m.def("cer", &cer, py::arg("hypothesis"), py::arg("reference"));

  m.def(
      "log_mel",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> samples, int sample_rate,
         double fixed_seconds) {
        if (samples.ndim() != 1) throw py::value_error("samples must be one-dimensional");
        Waveform w;
        w.samples.assign(samples.data(), samples.data() + samples.size());
        w.sample_rate = sample_rate;
        FeatureConfig cfg;
        cfg.fixed_seconds = fixed_seconds;
        MelSpectrogram mel;
        {
          py::gil_scoped_release release;
          mel = compute_log_mel(w, cfg);
        }
        return mel_to_array(mel);
      },
      py::arg("samples"), py::arg("sample_rate") = 16000, py::arg("fixed_seconds") = 30.0,
      "Log-mel spectrogram [80, frames] of a mono waveform, padded or cut to fixed_seconds.");

  m.def(
      "downsample_speech",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> frames, std::size_t pool_factor) {
        if (frames.ndim() != 2) throw py::value_error("frames must be two-dimensional");
        const std::size_t rows = frames.shape(0), cols = frames.shape(1);
        Tensor x({rows, cols});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<Real>(frames.data()[i]);
        const Tensor y = downsample_speech(Var::constant(x), pool_factor).value();
        py::array_t<float> out({y.rows(), y.cols()});
        for (std::size_t i = 0; i < y.size(); ++i) out.mutable_data()[i] = static_cast<float>(y[i]);
        return out;
      },
      py::arg("frames"), py::arg("pool_factor") = 10, "Non-overlapping window means over rows.");

  m.def(
      "synth_corpus",
      [](const std::filesystem::path& out_dir, int n, std::uint64_t seed, double seconds) {
        SynthOptions opts;
        opts.seconds = seconds;
        return write_synth_corpus(synth_toy_corpus(n, seed, opts), out_dir);
      },
      py::arg("out_dir"), py::arg("n") = 16, py::arg("seed") = 0, py::arg("seconds") = 2.0,
      "Writes a synthetic paired corpus; returns the manifest path.");

  m.def(
      "gradcheck",
      [] {
        std::vector<GradCheckReport> reports;
        {
          py::gil_scoped_release release;
          reports = run_layer_grad_checks();
        }
        py::list out;
        for (const auto& r : reports) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_error"] = r.max_rel_error;
          d["tolerance"] = r.tolerance;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      "Runs the finite-difference suite over every layer and both fusion modes.");

  py::class_<Diacritizer>(m, "Diacritizer")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def("predict", &Diacritizer::predict, py::arg("text"), py::arg("audio") = std::nullopt,
           "Returns {'output', 'labels', 'speech_used'}.")
      .def_property_readonly("fusion", &Diacritizer::fusion)
      .def_property_readonly("parameter_count", &Diacritizer::parameter_count);
}
