#pragma once

// Arabic character vocabulary, the 15-way diacritic label taxonomy and
// lossless conversion between diacritized text and (base text, labels).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace harakat {

using CodePoint = char32_t;

// ---------------------------------------------------------------------------
// UTF-8

std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);
std::string utf8_encode(CodePoint c);

// ---------------------------------------------------------------------------
// Character classes

namespace marks {
inline constexpr CodePoint kFathatan = 0x064B;
inline constexpr CodePoint kDammatan = 0x064C;
inline constexpr CodePoint kKasratan = 0x064D;
inline constexpr CodePoint kFatha = 0x064E;
inline constexpr CodePoint kDamma = 0x064F;
inline constexpr CodePoint kKasra = 0x0650;
inline constexpr CodePoint kShadda = 0x0651;
inline constexpr CodePoint kSukun = 0x0652;
}  // namespace marks

/// One of the eight labeled marks U+064B..U+0652.
bool is_diacritic_mark(CodePoint c) noexcept;
/// Arabic-script combining marks outside the labeled range (superscript alef,
/// Quranic annotation marks, ...). They are dropped by strip_diacritics.
bool is_unlabeled_arabic_mark(CodePoint c) noexcept;
/// Letters that may carry diacritics.
bool is_arabic_letter(CodePoint c) noexcept;

// ---------------------------------------------------------------------------
// Label taxonomy

enum class VowelMark : std::uint8_t {
  kNone,
  kFatha,
  kDamma,
  kKasra,
  kFathatan,
  kDammatan,
  kKasratan,
  kSukun,
};

/// Per-character diacritic class. Ids 0..14:
///   none, fatha, damma, kasra, fathatan, dammatan, kasratan, sukun, shadda,
///   shadda+fatha, shadda+damma, shadda+kasra, shadda+fathatan,
///   shadda+dammatan, shadda+kasratan.
class DiacriticLabel {
 public:
  static constexpr int kNumClasses = 15;

  constexpr DiacriticLabel() = default;
  /// Throws std::out_of_range for ids outside [0, 14].
  explicit DiacriticLabel(int class_id);

  /// Throws NormalizationError for shadda + sukun.
  static DiacriticLabel compose(bool shadda, VowelMark vowel);
  static DiacriticLabel none() { return DiacriticLabel(); }

  int id() const noexcept { return id_; }
  bool has_shadda() const noexcept;
  VowelMark vowel() const noexcept;

  /// Marks emitted after the base character, shadda first.
  std::u32string marks() const;
  std::string_view name() const noexcept;
  /// Inverse of name(); nullopt when unknown.
  static std::optional<DiacriticLabel> from_name(std::string_view name);

  friend bool operator==(DiacriticLabel, DiacriticLabel) = default;

 private:
  int id_ = 0;
};

CodePoint vowel_mark_codepoint(VowelMark v) noexcept;

// ---------------------------------------------------------------------------
// Labeled text

/// A mark that was removed without being labeled.
struct DroppedMark {
  std::size_t offset;  // code point offset in the (composed) input
  CodePoint mark;
};

class LabeledText {
 public:
  LabeledText() = default;
  /// Validates the invariants: equal lengths, no labeled marks among the
  /// base characters and `none` on every non-Arabic character.
  LabeledText(std::u32string base_chars, std::vector<DiacriticLabel> labels);

  const std::u32string& base_chars() const noexcept { return base_; }
  const std::vector<DiacriticLabel>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return base_.size(); }

  std::vector<DroppedMark> dropped;

 private:
  std::u32string base_;
  std::vector<DiacriticLabel> labels_;
};

/// Canonical composition of the Arabic hamza/madda sequences
/// (alef + madda -> U+0622 and friends). Other text passes through.
std::u32string compose_arabic(std::u32string_view text);

/// Splits text into base characters and per-character labels.
/// Throws MalformedInputError for a mark without an Arabic base letter and
/// NormalizationError for mark combinations outside the taxonomy.
LabeledText strip_diacritics(std::u32string_view text);
LabeledText strip_diacritics(std::string_view utf8);

std::u32string apply_diacritics(const LabeledText& lt);
std::string apply_diacritics_utf8(const LabeledText& lt);

/// Canonical form: composed, unlabeled marks dropped, shadda before vowel.
std::string normalize_diacritized(std::string_view utf8);

// ---------------------------------------------------------------------------
// Vocabulary

class CharVocab {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;

  CharVocab() = default;

  /// Every distinct base character of the corpus (frequency floor 1), ids
  /// assigned in code point order after the two specials.
  static CharVocab build(std::span<const std::u32string> corpus);

  int size() const noexcept { return static_cast<int>(id_to_char_.size()) + 2; }
  int id_of(CodePoint c) const noexcept;
  /// nullopt for the special ids.
  std::optional<CodePoint> char_of(int id) const;
  bool contains(CodePoint c) const noexcept { return char_to_id_.contains(c); }

  std::vector<int> encode(std::u32string_view chars) const;
  /// Throws std::out_of_range on special or unknown ids.
  std::u32string decode(std::span<const int> ids) const;

  /// `<id>\t<hex code point>` per line; specials are written as <pad>/<unk>.
  void save(const std::filesystem::path& path) const;
  static CharVocab load(const std::filesystem::path& path);

  friend bool operator==(const CharVocab& a, const CharVocab& b) {
    return a.id_to_char_ == b.id_to_char_;
  }

 private:
  std::unordered_map<CodePoint, int> char_to_id_;
  std::vector<CodePoint> id_to_char_;  // index = id - 2
};

inline std::vector<int> encode_chars(std::u32string_view base_chars,
                                     const CharVocab& vocab) {
  return vocab.encode(base_chars);
}

}  // namespace harakat
