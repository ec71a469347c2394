#include "harakat/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <unordered_map>

#include "harakat/errors.hpp"
#include "json.hpp"

namespace harakat {

using nlohmann::json;

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read manifest " + path.string());
  const auto base_dir = path.parent_path();

  std::vector<ManifestRecord> records;
  std::vector<std::string> problems;
  std::unordered_map<std::string, std::size_t> id_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    json obj = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded() || !obj.is_object()) {
      problems.push_back(where + "not a JSON object");
      continue;
    }
    if (!obj.contains("id") || !obj["id"].is_string()) {
      problems.push_back(where + "missing string field \"id\"");
      continue;
    }
    if (!obj.contains("text") || !obj["text"].is_string()) {
      problems.push_back(where + "missing string field \"text\"");
      continue;
    }
    ManifestRecord r;
    r.id = obj["id"].get<std::string>();
    r.text = obj["text"].get<std::string>();
    if (r.text.empty()) {
      problems.push_back(where + "empty \"text\"");
      continue;
    }
    if (obj.contains("audio") && !obj["audio"].is_null()) {
      if (!obj["audio"].is_string()) {
        problems.push_back(where + "\"audio\" must be a string path");
        continue;
      }
      std::filesystem::path audio = obj["audio"].get<std::string>();
      if (audio.is_relative()) audio = (base_dir / audio).lexically_normal();
      r.audio = audio.string();
    }
    if (obj.contains("split") && obj["split"].is_string()) r.split = obj["split"].get<std::string>();

    if (auto [it, fresh] = id_line.emplace(r.id, line_no); !fresh) {
      problems.push_back(where + "duplicate id \"" + r.id + "\" (first seen on line " +
                         std::to_string(it->second) + ")");
      continue;
    }
    records.push_back(std::move(r));
  }

  if (!problems.empty()) {
    std::string msg = path.string() + ": " + std::to_string(problems.size()) + " malformed line(s)";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  return records;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : records) {
    json obj = {{"id", r.id}, {"text", r.text}};
    if (r.audio) obj["audio"] = *r.audio;
    obj["split"] = r.split;
    os << obj.dump() << '\n';
  }
}

std::map<std::string, std::vector<ManifestRecord>> split_records(
    const std::vector<ManifestRecord>& records) {
  std::map<std::string, std::vector<ManifestRecord>> out;
  std::unordered_map<std::string, std::string> seen;
  for (const auto& r : records) {
    if (auto [it, fresh] = seen.emplace(r.id, r.split); !fresh && it->second != r.split) {
      throw DataError("record " + r.id + " appears in splits " + it->second + " and " + r.split);
    }
    out[r.split].push_back(r);
  }
  return out;
}

CharVocab build_vocab(const std::vector<ManifestRecord>& records) {
  std::vector<std::u32string> bases;
  bases.reserve(records.size());
  for (const auto& r : records) {
    try {
      bases.push_back(strip_diacritics(std::string_view(r.text)).base_chars());
    } catch (const MalformedInputError&) {
      // prepare_examples reports these.
    }
  }
  return CharVocab::build(bases);
}

std::vector<Example> prepare_examples(const std::vector<ManifestRecord>& records,
                                      const CharVocab& vocab, const FeatureConfig& features,
                                      std::vector<std::string>* warnings) {
  auto warn = [&](const std::string& w) {
    if (warnings) warnings->push_back(w);
  };
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Example ex;
    ex.id = r.id;
    try {
      const LabeledText lt = strip_diacritics(std::string_view(r.text));
      if (!lt.dropped.empty()) {
        warn("record " + r.id + ": dropped " + std::to_string(lt.dropped.size()) +
             " unlabeled mark(s)");
      }
      ex.base = lt.base_chars();
      ex.token_ids = vocab.encode(ex.base);
      ex.labels.reserve(lt.size());
      for (auto l : lt.labels()) ex.labels.push_back(l.id());
      ex.reference = apply_diacritics_utf8(lt);
    } catch (const MalformedInputError& e) {
      warn("record " + r.id + ": skipped, " + e.what());
      continue;
    }
    if (r.audio) {
      try {
        ex.mel = std::make_shared<const MelSpectrogram>(
            compute_log_mel(read_wav(*r.audio, features.sample_rate), features));
      } catch (const std::exception& e) {
        warn("record " + r.id + ": skipped, audio failure: " + e.what());
        continue;
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Batch> make_batches(const std::vector<Example>& examples, std::size_t batch_size,
                                std::mt19937_64* rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (rng) std::shuffle(order.begin(), order.end(), *rng);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    for (std::size_t i = start; i < end; ++i) {
      b.max_len = std::max(b.max_len, examples[order[i]].token_ids.size());
    }
    for (std::size_t i = start; i < end; ++i) {
      const Example& ex = examples[order[i]];
      const std::size_t n = ex.token_ids.size();
      std::vector<int> ids(b.max_len, CharVocab::kPadId);
      std::vector<int> labels(b.max_len, kIgnoreLabel);
      std::vector<std::uint8_t> mask(b.max_len, 0);
      std::copy(ex.token_ids.begin(), ex.token_ids.end(), ids.begin());
      std::copy(ex.labels.begin(), ex.labels.end(), labels.begin());
      std::fill_n(mask.begin(), n, 1);
      b.token_ids.push_back(std::move(ids));
      b.labels.push_back(std::move(labels));
      b.text_mask.push_back(std::move(mask));
      b.mels.push_back(ex.mel);
      b.speech_present.push_back(ex.mel != nullptr);
      b.example_index.push_back(order[i]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<Batch> make_batches(const std::vector<ManifestRecord>& records, const CharVocab& vocab,
                                const FeatureConfig& features, std::size_t batch_size,
                                std::mt19937_64& rng, std::vector<std::string>* warnings) {
  return make_batches(prepare_examples(records, vocab, features, warnings), batch_size, &rng);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

constexpr std::array<std::u32string_view, 16> kRoots = {
    U"كتب", U"ضرب", U"ذهب", U"درس", U"شرب", U"لعب", U"فهم", U"علم",
    U"سمع", U"حمل", U"نصر", U"جلس", U"قتل", U"خرج", U"دخل", U"صبر",
};

using Pattern = std::array<int, 3>;

// Label ids: 0 none, 1 fatha, 2 damma, 3 kasra, 4 fathatan, 5 dammatan,
// 6 kasratan, 7 sukun, 9 shadda+fatha.
constexpr std::array<Pattern, 6> kPatterns = {{
    {1, 1, 1},
    {2, 3, 1},
    {1, 7, 5},
    {1, 9, 1},
    {3, 7, 6},
    {2, 7, 4},
}};

constexpr std::array<double, 6> kPatternTones = {300.0, 520.0, 800.0, 1150.0, 1600.0, 2200.0};

constexpr double kLeadSeconds = 0.1;
constexpr double kToneSeconds = 0.45;
constexpr double kGapSeconds = 0.1;

std::string sentence_text(const std::array<int, 3>& roots, const std::array<int, 3>& patterns) {
  std::u32string base;
  std::vector<DiacriticLabel> labels;
  for (int w = 0; w < 3; ++w) {
    if (w > 0) {
      base.push_back(U' ');
      labels.emplace_back();
    }
    const auto root = kRoots[roots[w]];
    for (int k = 0; k < 3; ++k) {
      base.push_back(root[k]);
      labels.emplace_back(kPatterns[patterns[w]][k]);
    }
  }
  return apply_diacritics_utf8(LabeledText(std::move(base), std::move(labels)));
}

Waveform sentence_audio(const std::array<int, 3>& patterns, const SynthOptions& opts) {
  Waveform w;
  w.sample_rate = opts.sample_rate;
  w.samples.assign(static_cast<std::size_t>(std::lround(opts.seconds * opts.sample_rate)), 0.0f);
  const double ramp = 0.01;
  for (int word = 0; word < 3; ++word) {
    const double start = kLeadSeconds + word * (kToneSeconds + kGapSeconds);
    const double freq = kPatternTones[patterns[word]];
    const auto first = static_cast<std::size_t>(std::lround(start * opts.sample_rate));
    const auto count = static_cast<std::size_t>(std::lround(kToneSeconds * opts.sample_rate));
    for (std::size_t i = 0; i < count && first + i < w.samples.size(); ++i) {
      const double t = static_cast<double>(i) / opts.sample_rate;
      const double edge = std::min(t, kToneSeconds - t);
      const double env = edge >= ramp ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * edge / ramp);
      w.samples[first + i] =
          static_cast<float>(0.4 * env * std::sin(2.0 * std::numbers::pi * freq * t));
    }
  }
  return w;
}

}  // namespace

SynthCorpus synth_toy_corpus(int n, std::uint64_t seed, const SynthOptions& opts) {
  if (n < 1) throw std::invalid_argument("synth_toy_corpus: n must be at least 1");
  std::mt19937_64 rng(seed);
  auto pick = [&](int count) { return std::uniform_int_distribution<int>(0, count - 1)(rng); };

  SynthCorpus corpus;
  std::set<std::array<int, 3>> used_bases;
  int made = 0;
  while (made < n) {
    std::array<int, 3> roots{};
    do {
      for (auto& r : roots) r = pick(static_cast<int>(kRoots.size()));
    } while (!used_bases.insert(roots).second);

    std::array<int, 3> first{}, second{};
    for (int w = 0; w < 3; ++w) {
      first[w] = pick(static_cast<int>(kPatterns.size()));
      second[w] = (first[w] + 1 + pick(static_cast<int>(kPatterns.size()) - 1)) %
                  static_cast<int>(kPatterns.size());
    }
    for (const auto& patterns : {first, second}) {
      if (made == n) break;
      char id[32];
      std::snprintf(id, sizeof id, "synth-%04d", made);
      ManifestRecord r;
      r.id = id;
      r.text = sentence_text(roots, patterns);
      r.audio = std::string(id) + ".wav";
      corpus.records.push_back(std::move(r));
      corpus.audio.push_back(sentence_audio(patterns, opts));
      ++made;
    }
  }
  return corpus;
}

std::filesystem::path write_synth_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    write_wav(dir / *corpus.records[i].audio, corpus.audio[i]);
  }
  const auto manifest = dir / "manifest.jsonl";
  write_manifest(manifest, corpus.records);
  return manifest;
}

}  // namespace harakat
