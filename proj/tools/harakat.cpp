// harakat: train, evaluate and run the diacritic restoration models.
//
// Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
// 3 data error (manifest, audio, input text), 4 training divergence.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "harakat/checkpoint.hpp"
#include "harakat/errors.hpp"
#include "harakat/gradcheck.hpp"
#include "harakat/run_config.hpp"

using namespace harakat;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback = 0) {
  if (flag) return *flag;
  if (auto s = env_seed()) return *s;
  return fallback;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

std::string read_text_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string hex_code_point(CodePoint c) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(c));
  return buf;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::optional<std::string> config;
  std::vector<std::string> overrides;
  std::optional<std::string> preset, fusion, train_manifest, dev_manifest, output, resume;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  std::vector<std::string> overrides;
  if (a.preset) overrides.push_back("model.preset=" + *a.preset);
  overrides.insert(overrides.end(), a.overrides.begin(), a.overrides.end());
  if (a.fusion) overrides.push_back("model.fusion=" + *a.fusion);
  if (a.train_manifest) overrides.push_back("paths.train_manifest=" + *a.train_manifest);
  if (a.dev_manifest) overrides.push_back("paths.dev_manifest=" + *a.dev_manifest);
  if (a.output) overrides.push_back("paths.output_dir=" + *a.output);
  if (a.seed) overrides.push_back("train.seed=" + std::to_string(*a.seed));

  RunConfig rc = RunConfig::load(a.config ? std::optional<fs::path>(*a.config) : std::nullopt,
                                 overrides);
  rc.finalize();

  std::vector<std::string> warnings;
  const auto train_records = load_manifest(rc.train_manifest);
  if (train_records.empty()) throw DataError("train manifest is empty: " + rc.train_manifest.string());
  CheckpointExtras extras{build_vocab(train_records), rc.features};
  rc.model.vocab_size = extras.vocab.size();
  auto train = prepare_examples(train_records, extras.vocab, rc.features, &warnings);
  std::vector<Example> dev;
  if (rc.dev_manifest) {
    dev = prepare_examples(load_manifest(*rc.dev_manifest), extras.vocab, rc.features, &warnings);
  }
  print_warnings(warnings);
  if (train.empty()) throw DataError("no usable training records in " + rc.train_manifest.string());

  std::unique_ptr<FusionModel> model;
  if (a.resume) {
    CheckpointInfo info;
    model = load_model(*a.resume, &info);
    if (!(info.model == rc.model) || !(info.extras.vocab == extras.vocab)) {
      throw ConfigError("checkpoint " + *a.resume + " does not match the run configuration");
    }
  } else {
    model = std::make_unique<FusionModel>(rc.model);
  }
  Trainer trainer(*model, rc.train);
  if (a.resume) load_trainer_state(*a.resume, trainer);

  fs::create_directories(rc.output_dir);
  {
    std::ofstream os(rc.output_dir / "run_config.json");
    os << rc.to_json().dump(2) << '\n';
  }
  if (!a.quiet) {
    std::cout << "fusion " << to_string(rc.model.fusion) << ", " << model->parameter_count()
              << " parameters, " << train.size() << " training examples, seed " << rc.train.seed
              << '\n';
  }
  const auto logs = trainer.run(train, dev, rc.output_dir, &extras, [&](const EpochLog& log) {
    if (a.quiet) return;
    std::printf("epoch %d (phase %d) step %lld loss %.6f", log.epoch + 1, log.phase,
                static_cast<long long>(log.steps), log.train_loss);
    if (log.dev_text_only) {
      std::printf("  dev text_only WER %.4f CER %.4f  text+speech WER %.4f CER %.4f",
                  log.dev_text_only->wer, log.dev_text_only->cer, log.dev_text_speech->wer,
                  log.dev_text_speech->cer);
    }
    std::printf("\n");
    std::fflush(stdout);
  });
  if (!a.quiet) std::cout << "checkpoint: " << (rc.output_dir / "latest").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string checkpoint, manifest, mode = "both";
  bool json = false, oracle = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  std::vector<EvalMode> modes;
  if (a.mode == "text_only") modes = {EvalMode::kTextOnly};
  else if (a.mode == "text_speech") modes = {EvalMode::kTextSpeech};
  else if (a.mode == "both") modes = {EvalMode::kTextOnly, EvalMode::kTextSpeech};
  else throw UsageError("--mode must be text_only, text_speech or both");

  auto records = load_manifest(a.manifest);
  std::vector<std::string> warnings;
  std::vector<MetricsReport> reports;

  std::unique_ptr<FusionModel> model;
  std::unique_ptr<LabelPredictor> predictor;
  CheckpointExtras extras;
  if (a.oracle) {
    // The gold-label stub needs no audio and no trained weights.
    for (auto& r : records) r.audio.reset();
    extras.vocab = build_vocab(records);
    predictor = std::make_unique<GoldPredictor>();
  } else {
    if (a.checkpoint.empty()) throw UsageError("--checkpoint is required unless --oracle is given");
    CheckpointInfo info;
    model = load_model(a.checkpoint, &info);
    extras = info.extras;
    predictor = std::make_unique<ModelPredictor>(*model);
  }
  const auto examples = prepare_examples(records, extras.vocab, extras.features, &warnings);
  print_warnings(warnings);
  const std::size_t failed = records.size() - examples.size();
  for (auto m : modes) reports.push_back(evaluate(*predictor, examples, m, failed));

  if (a.json) {
    json out = {{"checkpoint", a.oracle ? "oracle" : a.checkpoint},
                {"manifest", a.manifest},
                {"reports", json::array()}};
    for (const auto& r : reports) out["reports"].push_back(r.to_json());
    std::cout << out.dump(2) << '\n';
  } else {
    std::cout << format_reports(reports);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string checkpoint, text;
  std::optional<std::string> audio;
  bool json = false;
};

int cmd_predict(const PredictArgs& a) {
  if (a.text.empty()) throw UsageError("--text must not be empty");
  CheckpointInfo info;
  const auto model = load_model(a.checkpoint, &info);

  LabeledText input;
  try {
    input = strip_diacritics(std::string_view(a.text));
  } catch (const MalformedInputError& e) {
    throw DataError(std::string("input text: ") + e.what());
  }
  if (static_cast<int>(input.size()) > info.model.max_text_len) {
    throw DataError("input has " + std::to_string(input.size()) + " characters; the model accepts " +
                    std::to_string(info.model.max_text_len));
  }
  std::optional<MelSpectrogram> mel;
  if (a.audio) {
    try {
      mel = compute_log_mel(read_wav(*a.audio, info.extras.features.sample_rate), info.extras.features);
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError("audio " + *a.audio + ": " + e.what());
    }
  }
  const auto ids = info.extras.vocab.encode(input.base_chars());
  const std::vector<std::uint8_t> mask(ids.size(), 1);
  ForwardContext ctx;
  const Var logits = model->forward(ids, mask, mel ? &*mel : nullptr, ctx);
  const auto labels = decode_labels(logits.value(), input.base_chars());
  const std::string out = render_hypothesis(input.base_chars(), labels);

  if (a.json) {
    json j = {{"input", a.text}, {"output", out}, {"speech_used", mel.has_value()},
              {"labels", json::array()}};
    for (int l : labels) j["labels"].push_back(DiacriticLabel(l).name());
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << out << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// strip

struct StripArgs {
  std::optional<std::string> text, file, apply;
  bool labels = false;
};

// Inverse of the --labels dump: one "U+XXXX<TAB>char<TAB>label" line per
// character; an empty char column stands for a line break.
std::string apply_label_dump(const std::string& dump) {
  std::u32string base;
  std::vector<DiacriticLabel> labels;
  std::istringstream is(dump);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.rfind('\t');
    if (t1 == std::string::npos || t2 == t1 || line.rfind("U+", 0) != 0) {
      throw DataError("label dump line " + std::to_string(line_no) + " is malformed");
    }
    const auto cp = std::stoul(line.substr(2, t1 - 2), nullptr, 16);
    const auto label = DiacriticLabel::from_name(line.substr(t2 + 1));
    if (!label) throw DataError("label dump line " + std::to_string(line_no) + ": unknown label");
    base.push_back(static_cast<CodePoint>(cp));
    labels.push_back(*label);
  }
  try {
    return apply_diacritics_utf8(LabeledText(std::move(base), std::move(labels)));
  } catch (const std::exception& e) {
    throw DataError(std::string("label dump: ") + e.what());
  }
}

int cmd_strip(const StripArgs& a) {
  if (a.apply) {
    std::cout << apply_label_dump(read_text_file(*a.apply)) << '\n';
    return 0;
  }
  if (a.text.has_value() == a.file.has_value()) throw UsageError("give exactly one of --text or --file");
  std::string text = a.text ? *a.text : read_text_file(*a.file);
  const bool trailing_newline = !text.empty() && text.back() == '\n';
  if (a.file && trailing_newline) text.pop_back();

  LabeledText lt;
  try {
    lt = strip_diacritics(std::string_view(text));
  } catch (const MalformedInputError& e) {
    throw DataError(e.what());
  }
  for (const auto& d : lt.dropped) {
    std::cerr << "warning: dropped unlabeled mark " << hex_code_point(d.mark) << " at offset "
              << d.offset << '\n';
  }
  if (a.labels) {
    for (std::size_t i = 0; i < lt.size(); ++i) {
      const CodePoint c = lt.base_chars()[i];
      const bool printable = c != U'\n' && c != U'\t' && c != U'\r';
      std::cout << hex_code_point(c) << '\t' << (printable ? utf8_encode(std::u32string(1, c)) : "")
                << '\t' << lt.labels()[i].name() << '\n';
    }
  } else {
    std::cout << utf8_encode(lt.base_chars()) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// synth-corpus

struct SynthArgs {
  int n = 16;
  std::optional<std::uint64_t> seed;
  std::string out;
  double seconds = 2.0;
};

int cmd_synth(const SynthArgs& a) {
  if (a.n < 1) throw UsageError("--n must be at least 1");
  SynthOptions opts;
  opts.seconds = a.seconds;
  const auto corpus = synth_toy_corpus(a.n, resolve_seed(a.seed), opts);
  std::cout << write_synth_corpus(corpus, a.out).string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(bool as_json) {
  const auto reports = run_layer_grad_checks();
  bool ok = true;
  json j = json::array();
  for (const auto& r : reports) {
    ok = ok && r.passed;
    if (as_json) {
      j.push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error},
                   {"tolerance", r.tolerance}, {"passed", r.passed}});
    } else {
      std::printf("%-4s %-28s max rel error %.3e (tolerance %.0e)\n", r.passed ? "ok" : "FAIL",
                  r.name.c_str(), r.max_rel_error, r.tolerance);
    }
  }
  if (as_json) std::cout << j.dump(2) << '\n';
  return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Arabic diacritic restoration from text and optional speech", "harakat"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "harakat 0.1.0");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model with the two-phase freeze schedule");
  train->add_option("-c,--config", train_args.config, "Run config file (TOML subset)");
  train->add_option("--set", train_args.overrides, "Override a config key, e.g. train.lr=3e-3")
      ->type_name("KEY=VALUE");
  train->add_option("--preset", train_args.preset, "Architecture preset: toy or full");
  train->add_option("--fusion", train_args.fusion, "Fusion mode: early or cross_attention");
  train->add_option("--train-manifest", train_args.train_manifest, "Training manifest (JSONL)");
  train->add_option("--dev-manifest", train_args.dev_manifest, "Dev manifest for per-epoch WER/CER");
  train->add_option("-o,--output", train_args.output, "Output directory for checkpoints and logs");
  train->add_option("--resume", train_args.resume, "Resume from a checkpoint directory");
  train->add_option("--seed", train_args.seed, "Random seed (falls back to CW_SEED)");
  train->add_flag("-q,--quiet", train_args.quiet, "Suppress per-epoch output");

  EvaluateArgs eval_args;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a checkpoint with WER and CER");
  evaluate_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint directory");
  evaluate_cmd->add_option("-m,--manifest", eval_args.manifest, "Manifest with references")->required();
  evaluate_cmd->add_option("--mode", eval_args.mode, "text_only, text_speech or both")
      ->capture_default_str();
  evaluate_cmd->add_flag("--json", eval_args.json, "Print the report as one JSON object");
  evaluate_cmd->add_flag("--oracle", eval_args.oracle, "Score the gold labels instead of a model");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Diacritize one sentence");
  predict->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint directory")->required();
  predict->add_option("-t,--text", predict_args.text, "Input text (UTF-8)")->required();
  predict->add_option("-a,--audio", predict_args.audio, "Matching speech as 16-bit PCM WAV");
  predict->add_flag("--json", predict_args.json, "Print output and labels as JSON");

  StripArgs strip_args;
  auto* strip = app.add_subcommand("strip", "Remove diacritics and optionally dump labels");
  strip->add_option("-t,--text", strip_args.text, "Input text");
  strip->add_option("-f,--file", strip_args.file, "Input file");
  strip->add_flag("--labels", strip_args.labels, "One code point, character and label per line");
  strip->add_option("--apply", strip_args.apply, "Rebuild diacritized text from a --labels dump");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth-corpus", "Write the synthetic toy corpus");
  synth->add_option("-n,--n", synth_args.n, "Number of sentences")->capture_default_str();
  synth->add_option("--seed", synth_args.seed, "Random seed (falls back to CW_SEED)");
  synth->add_option("-o,--out", synth_args.out, "Output directory")->required();
  synth->add_option("--seconds", synth_args.seconds, "Clip length in seconds")->capture_default_str();

  bool gradcheck_json = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gradcheck->add_flag("--json", gradcheck_json, "Print results as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*evaluate_cmd) return cmd_evaluate(eval_args);
    if (*predict) return cmd_predict(predict_args);
    if (*strip) return cmd_strip(strip_args);
    if (*synth) return cmd_synth(synth_args);
    if (*gradcheck) return cmd_gradcheck(gradcheck_json);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const MalformedInputError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
