#include "harakat/evaluation.hpp"

#include <cstdio>
#include <stdexcept>

#include "harakat/errors.hpp"

namespace harakat {

namespace {
bool is_space(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v' ||
         c == 0x00A0 || c == 0x2009 || c == 0x200A || c == 0x3000;
}
}  // namespace

std::vector<std::u32string> split_words(std::u32string_view text) {
  std::vector<std::u32string> words;
  std::u32string cur;
  for (char32_t c : text) {
    if (is_space(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::u32string normalize_for_scoring(std::string_view utf8) {
  const std::u32string decoded = utf8_decode(utf8);
  try {
    return apply_diacritics(strip_diacritics(std::u32string_view(decoded)));
  } catch (const MalformedInputError&) {
    return compose_arabic(decoded);
  }
}

ErrorCount word_errors(std::string_view hypothesis, std::string_view reference) {
  const auto hyp = split_words(normalize_for_scoring(hypothesis));
  const auto ref = split_words(normalize_for_scoring(reference));
  return {levenshtein(std::span<const std::u32string>(hyp), std::span<const std::u32string>(ref)),
          ref.size()};
}

ErrorCount char_errors(std::string_view hypothesis, std::string_view reference) {
  const auto hyp = normalize_for_scoring(hypothesis);
  const auto ref = normalize_for_scoring(reference);
  return {levenshtein(hyp, ref), ref.size()};
}

double wer(std::string_view hypothesis, std::string_view reference) {
  const auto e = word_errors(hypothesis, reference);
  if (e.reference_units == 0) throw std::invalid_argument("wer: reference has no words");
  return e.rate();
}

double cer(std::string_view hypothesis, std::string_view reference) {
  const auto e = char_errors(hypothesis, reference);
  if (e.reference_units == 0) throw std::invalid_argument("cer: empty reference");
  return e.rate();
}

// ---------------------------------------------------------------------------

std::string_view to_string(EvalMode mode) {
  return mode == EvalMode::kTextOnly ? "text_only" : "text+speech";
}

nlohmann::json MetricsReport::to_json(bool include_sentences) const {
  nlohmann::json j = {
      {"mode", to_string(mode)},          {"wer", wer},
      {"cer", cer},                       {"n_sentences", n_sentences},
      {"n_ref_words", n_ref_words},       {"n_ref_chars", n_ref_chars},
      {"n_failed", n_failed},
  };
  if (include_sentences) {
    auto arr = nlohmann::json::array();
    for (const auto& s : sentences) {
      arr.push_back({{"id", s.id},
                     {"hypothesis", s.hypothesis},
                     {"reference", s.reference},
                     {"word_errors", s.words.edits},
                     {"ref_words", s.words.reference_units},
                     {"char_errors", s.chars.edits},
                     {"ref_chars", s.chars.reference_units},
                     {"wer", s.words.rate()},
                     {"cer", s.chars.rate()},
                     {"speech_used", s.speech_used}});
    }
    j["sentences"] = std::move(arr);
  }
  return j;
}

std::vector<int> decode_labels(const Tensor& logits, std::u32string_view base) {
  if (logits.rows() != base.size()) {
    throw ShapeError("decode_labels: " + std::to_string(logits.rows()) + " logit rows for " +
                     std::to_string(base.size()) + " characters");
  }
  const std::size_t c = logits.cols();
  std::vector<int> labels(base.size(), 0);
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (!is_arabic_letter(base[i])) continue;
    const Real* row = logits.data() + i * c;
    labels[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return labels;
}

std::string render_hypothesis(std::u32string_view base, std::span<const int> labels) {
  std::vector<DiacriticLabel> ls;
  ls.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ls.push_back(is_arabic_letter(base[i]) ? DiacriticLabel(labels[i]) : DiacriticLabel::none());
  }
  return apply_diacritics_utf8(LabeledText(std::u32string(base), std::move(ls)));
}

std::vector<int> ModelPredictor::predict(const Example& ex, bool use_speech) const {
  ForwardContext ctx;
  const std::vector<std::uint8_t> mask(ex.token_ids.size(), 1);
  const MelSpectrogram* mel = use_speech ? ex.mel.get() : nullptr;
  const Var logits = model_.forward(ex.token_ids, mask, mel, ctx);
  return decode_labels(logits.value(), ex.base);
}

MetricsReport evaluate(const LabelPredictor& predictor, const std::vector<Example>& examples,
                       EvalMode mode, std::size_t upstream_failures) {
  MetricsReport report;
  report.mode = mode;
  report.n_failed = upstream_failures;
  std::size_t word_edits = 0, char_edits = 0;
  for (const auto& ex : examples) {
    const bool speech = mode == EvalMode::kTextSpeech && ex.mel != nullptr;
    SentenceScore s;
    s.id = ex.id;
    s.speech_used = speech;
    s.reference = ex.reference;
    try {
      s.hypothesis = render_hypothesis(ex.base, predictor.predict(ex, speech));
    } catch (const std::exception&) {
      ++report.n_failed;
      continue;
    }
    s.words = word_errors(s.hypothesis, s.reference);
    s.chars = char_errors(s.hypothesis, s.reference);
    word_edits += s.words.edits;
    char_edits += s.chars.edits;
    report.n_ref_words += s.words.reference_units;
    report.n_ref_chars += s.chars.reference_units;
    report.sentences.push_back(std::move(s));
  }
  report.n_sentences = report.sentences.size();
  if (report.n_ref_words) report.wer = static_cast<double>(word_edits) / report.n_ref_words;
  if (report.n_ref_chars) report.cer = static_cast<double>(char_edits) / report.n_ref_chars;
  return report;
}

std::string format_reports(std::span<const MetricsReport> reports) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %8s %8s %10s %10s %10s %8s\n", "mode", "WER", "CER",
                "sentences", "ref_words", "ref_chars", "failed");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-12s %8.4f %8.4f %10zu %10zu %10zu %8zu\n",
                  std::string(to_string(r.mode)).c_str(), r.wer, r.cer, r.n_sentences,
                  r.n_ref_words, r.n_ref_chars, r.n_failed);
    out += line;
  }
  return out;
}

}  // namespace harakat
