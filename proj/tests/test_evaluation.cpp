#include <cmath>
#include <functional>

#include "doctest.h"
#include "harakat/errors.hpp"
#include "harakat/evaluation.hpp"
#include "support.hpp"

using namespace harakat;
using namespace harakat::testing;

namespace {

std::size_t lev(const std::vector<int>& a, const std::vector<int>& b) {
  return levenshtein(std::span<const int>(a), std::span<const int>(b));
}

std::vector<Example> examples_from(const std::vector<std::string>& texts) {
  std::vector<ManifestRecord> records;
  for (std::size_t i = 0; i < texts.size(); ++i) records.push_back({"s" + std::to_string(i), texts[i], {}, "dev"});
  return prepare_examples(records, build_vocab(records), FeatureConfig{});
}

// Hypothesis with one label per base character chosen by a callback.
class FunctionPredictor final : public LabelPredictor {
 public:
  explicit FunctionPredictor(std::function<int(const Example&, std::size_t)> f) : f_(std::move(f)) {}
  std::vector<int> predict(const Example& ex, bool) const override {
    std::vector<int> out(ex.base.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f_(ex, i);
    return out;
  }

 private:
  std::function<int(const Example&, std::size_t)> f_;
};

}  // namespace

TEST_CASE("levenshtein known values") {
  CHECK(levenshtein(U"kitten", U"sitting") == 3);
  CHECK(levenshtein(U"", U"abc") == 3);
  CHECK(levenshtein(U"abc", U"") == 3);
  CHECK(levenshtein(U"flaw", U"lawn") == 2);
  CHECK(levenshtein(U"same", U"same") == 0);
}

TEST_CASE("levenshtein equals breadth-first edit search on every pair up to length 5") {
  const auto strings = all_strings(5);
  REQUIRE(strings.size() == 364);
  const auto dist = bfs_edit_distances(5);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < strings.size(); ++i) {
    for (std::size_t j = 0; j < strings.size(); ++j) {
      mismatches += lev(strings[i], strings[j]) != static_cast<std::size_t>(dist[i][j]);
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("property: levenshtein is a metric") {
  std::mt19937_64 rng(1);
  auto gen = [&] {
    std::vector<int> s(rng() % 8);
    for (auto& c : s) c = static_cast<int>(rng() % 4);
    return s;
  };
  for (int n = 0; n < 500; ++n) {
    const auto a = gen(), b = gen(), c = gen();
    CHECK(lev(a, b) == lev(b, a));
    CHECK(lev(a, c) <= lev(a, b) + lev(b, c));
    CHECK((lev(a, b) == 0) == (a == b));
    CHECK(lev(a, b) >= (a.size() > b.size() ? a.size() - b.size() : b.size() - a.size()));
    CHECK(lev(a, b) <= std::max(a.size(), b.size()));
  }
}

TEST_CASE("word error rate") {
  CHECK(wer("a b x d", "a b c d") == 0.25);
  CHECK(wer("a b c d", "a b c d") == 0.0);
  CHECK(wer("a b", "a b c d") == 0.5);
  CHECK(wer("a b", "a b") == 0.0);
  CHECK_THROWS_AS(wer("a", "   "), std::invalid_argument);
  CHECK_THROWS_AS(cer("a", ""), std::invalid_argument);
}

TEST_CASE("dialect samples: text-only output misses every word, speech output none") {
  const auto& d = dialect_samples()[0];
  CHECK(wer(d.text_only, d.reference) == 1.0);
  CHECK(wer(d.with_speech, d.reference) == 0.0);
  CHECK(cer(d.with_speech, d.reference) == 0.0);
  const auto& e = dialect_samples()[1];
  CHECK(wer(e.with_speech, e.reference) == 0.0);
  CHECK(wer(e.text_only, e.reference) > 0.5);
}

TEST_CASE("scoring normalizes shadda order and hamza composition") {
  CHECK(cer("بَّ", "بَّ") == 0.0);
  CHECK(cer("أ", "أ") == 0.0);
  // Text that is not parseable is compared after composition only.
  CHECK(cer("َab", "َab") == 0.0);
}

TEST_CASE("cer counts characters including marks and spaces") {
  const ErrorCount e = char_errors("بَ ب", "بُ ب");
  CHECK(e.edits == 1);
  CHECK(e.reference_units == 4);
  CHECK(cer("بَ ب", "بُ ب") == 0.25);
}

TEST_CASE("decode_labels forces non-Arabic characters to none") {
  Tensor logits({3, 15}, Real(0));
  logits.at(0, 4) = 5;
  logits.at(1, 7) = 5;
  logits.at(2, 9) = 5;
  CHECK(decode_labels(logits, U"بaت") == std::vector<int>{4, 0, 9});
  CHECK_THROWS_AS(decode_labels(logits, U"ب"), ShapeError);
  CHECK(render_hypothesis(U"بa", std::vector<int>{1, 0}) == "بَa");
}

TEST_CASE("evaluate") {
  std::vector<std::string> texts;
  for (const auto& d : dialect_samples()) texts.push_back(d.reference);
  for (const auto& a : ambiguous_samples()) texts.push_back(a[2]);
  const auto examples = examples_from(texts);
  REQUIRE(examples.size() == texts.size());

  SUBCASE("gold predictor scores zero") {
    const auto r = evaluate(GoldPredictor{}, examples, EvalMode::kTextOnly);
    CHECK(r.wer == 0.0);
    CHECK(r.cer == 0.0);
    CHECK(r.n_sentences == texts.size());
  }

  SUBCASE("micro averages are sums of edits over sums of reference units") {
    std::mt19937_64 rng(3);
    std::vector<std::vector<int>> noise;
    for (const auto& ex : examples) {
      std::vector<int> v(ex.base.size());
      for (auto& x : v) x = static_cast<int>(rng() % 15);
      noise.push_back(v);
    }
    const FunctionPredictor pred([&](const Example& ex, std::size_t i) {
      const auto idx = static_cast<std::size_t>(std::stoi(ex.id.substr(1)));
      return noise[idx][i];
    });
    const auto r = evaluate(pred, examples, EvalMode::kTextSpeech, 2);
    std::size_t we = 0, wr = 0, ce = 0, cr = 0;
    for (const auto& s : r.sentences) {
      CHECK(s.words.edits == word_errors(s.hypothesis, s.reference).edits);
      we += s.words.edits;
      wr += s.words.reference_units;
      ce += s.chars.edits;
      cr += s.chars.reference_units;
      CHECK_FALSE(s.speech_used);
    }
    CHECK(r.wer == doctest::Approx(static_cast<double>(we) / wr));
    CHECK(r.cer == doctest::Approx(static_cast<double>(ce) / cr));
    CHECK(r.n_ref_words == wr);
    CHECK(r.n_ref_chars == cr);
    CHECK(r.n_failed == 2);
  }

  SUBCASE("all-none predictor: char errors equal the number of marks") {
    const auto r = evaluate(ConstantPredictor(DiacriticLabel::none()), examples, EvalMode::kTextOnly);
    for (const auto& s : r.sentences) {
      std::size_t marks = 0;
      for (char32_t c : utf8_decode(s.reference)) marks += is_diacritic_mark(c);
      CHECK(s.chars.edits == marks);
      CHECK(s.hypothesis == utf8_encode(utf8_decode(s.hypothesis)));
    }
  }

  SUBCASE("json schema") {
    const auto r = evaluate(GoldPredictor{}, examples, EvalMode::kTextSpeech);
    const auto j = r.to_json();
    CHECK(j.at("mode") == "text+speech");
    for (const char* k : {"wer", "cer", "n_sentences", "n_ref_words", "n_ref_chars", "n_failed"}) {
      CHECK(j.contains(k));
    }
    REQUIRE(j.at("sentences").size() == examples.size());
    CHECK(j.at("sentences")[0].contains("hypothesis"));
    CHECK_FALSE(r.to_json(false).contains("sentences"));
  }

  SUBCASE("table has one row per report") {
    const MetricsReport reports[] = {evaluate(GoldPredictor{}, examples, EvalMode::kTextOnly),
                                     evaluate(GoldPredictor{}, examples, EvalMode::kTextSpeech)};
    const std::string table = format_reports(reports);
    CHECK(table.find("text_only") != std::string::npos);
    CHECK(table.find("text+speech") != std::string::npos);
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
  }
}

TEST_CASE("model predictor uses speech only when asked and present") {
  ModelConfig cfg = ModelConfig::toy(40);
  cfg.mel_frames = 40;
  cfg.pool_factor = 4;
  const FusionModel model(cfg);
  auto examples = examples_from({"بَب"});
  MelSpectrogram mel(80, 40);
  examples[0].mel = std::make_shared<const MelSpectrogram>(mel);
  const ModelPredictor pred(model);
  CHECK(pred.predict(examples[0], true).size() == 2);
  const auto r = evaluate(pred, examples, EvalMode::kTextSpeech);
  CHECK(r.sentences[0].speech_used);
  CHECK_FALSE(evaluate(pred, examples, EvalMode::kTextOnly).sentences[0].speech_used);
}
