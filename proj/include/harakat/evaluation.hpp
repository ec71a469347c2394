#pragma once

// Edit distance, WER/CER over fully diacritized text and corpus reports.

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "harakat/arabic_text.hpp"
#include "harakat/data.hpp"
#include "harakat/fusion.hpp"
#include "json.hpp"

namespace harakat {

/// Unit-cost insertions + deletions + substitutions, two-row DP.
template <typename T>
std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  return levenshtein(std::span<const char32_t>(a.data(), a.size()),
                     std::span<const char32_t>(b.data(), b.size()));
}

std::vector<std::u32string> split_words(std::u32string_view text);

/// Shadda-first canonical form with Arabic compositions applied; text that
/// cannot be parsed into the taxonomy is only composed.
std::u32string normalize_for_scoring(std::string_view utf8);

struct ErrorCount {
  std::size_t edits = 0;
  std::size_t reference_units = 0;
  double rate() const {
    return reference_units ? static_cast<double>(edits) / static_cast<double>(reference_units) : 0.0;
  }
};

ErrorCount word_errors(std::string_view hypothesis, std::string_view reference);
ErrorCount char_errors(std::string_view hypothesis, std::string_view reference);

/// Throw std::invalid_argument when the reference has no words / characters.
double wer(std::string_view hypothesis, std::string_view reference);
double cer(std::string_view hypothesis, std::string_view reference);

// ---------------------------------------------------------------------------

enum class EvalMode { kTextOnly, kTextSpeech };
std::string_view to_string(EvalMode mode);

struct SentenceScore {
  std::string id;
  std::string hypothesis;
  std::string reference;
  ErrorCount words;
  ErrorCount chars;
  bool speech_used = false;
};

struct MetricsReport {
  EvalMode mode = EvalMode::kTextOnly;
  double wer = 0.0;  // micro averages
  double cer = 0.0;
  std::size_t n_sentences = 0;
  std::size_t n_ref_words = 0;
  std::size_t n_ref_chars = 0;
  std::size_t n_failed = 0;
  std::vector<SentenceScore> sentences;

  nlohmann::json to_json(bool include_sentences = true) const;
};

/// Produces one label id per base character of an example.
class LabelPredictor {
 public:
  virtual ~LabelPredictor() = default;
  virtual std::vector<int> predict(const Example& ex, bool use_speech) const = 0;
};

/// Greedy argmax over the model's logits.
class ModelPredictor final : public LabelPredictor {
 public:
  explicit ModelPredictor(const FusionModel& model) : model_(model) {}
  std::vector<int> predict(const Example& ex, bool use_speech) const override;

 private:
  const FusionModel& model_;
};

/// Returns the reference labels; a harness sanity check.
class GoldPredictor final : public LabelPredictor {
 public:
  std::vector<int> predict(const Example& ex, bool) const override { return ex.labels; }
};

class ConstantPredictor final : public LabelPredictor {
 public:
  explicit ConstantPredictor(DiacriticLabel label) : label_(label) {}
  std::vector<int> predict(const Example& ex, bool) const override {
    return std::vector<int>(ex.base.size(), label_.id());
  }

 private:
  DiacriticLabel label_;
};

/// Argmax per row; characters that are not Arabic letters always get none.
std::vector<int> decode_labels(const Tensor& logits, std::u32string_view base);

/// Rebuilds the diacritized hypothesis from predicted labels.
std::string render_hypothesis(std::u32string_view base, std::span<const int> labels);

/// Micro-averaged WER/CER. Examples without audio use the text-only path
/// in both modes. `upstream_failures` records skipped inputs.
MetricsReport evaluate(const LabelPredictor& predictor, const std::vector<Example>& examples,
                       EvalMode mode, std::size_t upstream_failures = 0);

/// Human-readable table, one row per report.
std::string format_reports(std::span<const MetricsReport> reports);

}  // namespace harakat
