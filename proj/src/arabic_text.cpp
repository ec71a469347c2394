#include "harakat/arabic_text.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "harakat/errors.hpp"

namespace harakat {

namespace {

std::string hex(CodePoint c) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(c));
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// UTF-8

std::u32string utf8_decode(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    auto lead = static_cast<unsigned char>(text[i]);
    int len = 0;
    CodePoint cp = 0;
    if (lead < 0x80) {
      len = 1;
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      len = 2;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      len = 3;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      len = 4;
      cp = lead & 0x07;
    } else {
      throw MalformedInputError("invalid UTF-8 lead byte at byte " + std::to_string(i), i);
    }
    if (i + len > text.size()) {
      throw MalformedInputError("truncated UTF-8 sequence at byte " + std::to_string(i), i);
    }
    for (int k = 1; k < len; ++k) {
      auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) {
        throw MalformedInputError("invalid UTF-8 continuation at byte " + std::to_string(i + k),
                                  i + k);
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr std::array<CodePoint, 5> kMin = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw MalformedInputError("invalid code point at byte " + std::to_string(i), i);
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(CodePoint c) {
  std::string out;
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
  return out;
}

std::string utf8_encode(std::u32string_view text) {
  std::string out;
  out.reserve(text.size() * 2);
  for (CodePoint c : text) out += utf8_encode(c);
  return out;
}

// ---------------------------------------------------------------------------
// Character classes

bool is_diacritic_mark(CodePoint c) noexcept { return c >= 0x064B && c <= 0x0652; }

bool is_unlabeled_arabic_mark(CodePoint c) noexcept {
  return (c >= 0x0610 && c <= 0x061A) || (c >= 0x0653 && c <= 0x065F) || c == 0x0670 ||
         (c >= 0x06D6 && c <= 0x06DC) || (c >= 0x06DF && c <= 0x06E4) ||
         (c >= 0x06E7 && c <= 0x06E8) || (c >= 0x06EA && c <= 0x06ED) ||
         (c >= 0x08D3 && c <= 0x08FF && c != 0x08E2);
}

bool is_arabic_letter(CodePoint c) noexcept {
  return (c >= 0x0620 && c <= 0x064A) || (c >= 0x066E && c <= 0x066F) ||
         (c >= 0x0671 && c <= 0x06D3) || c == 0x06D5 || (c >= 0x06EE && c <= 0x06EF) ||
         (c >= 0x06FA && c <= 0x06FC) || c == 0x06FF || (c >= 0x0750 && c <= 0x077F) ||
         (c >= 0x08A0 && c <= 0x08C9);
}

namespace {

// Canonical combining class, restricted to the marks this module handles.
int combining_class(CodePoint c) noexcept {
  if (c >= 0x064B && c <= 0x0652) return 27 + static_cast<int>(c - 0x064B);
  if (c == 0x0655 || c == 0x0656) return 220;
  if (c == 0x0670) return 35;
  if (is_unlabeled_arabic_mark(c)) return 230;
  return 0;
}

struct Composition {
  CodePoint base;
  CodePoint mark;
  CodePoint composite;
};

constexpr std::array<Composition, 8> kCompositions = {{
    {0x0627, 0x0653, 0x0622},
    {0x0627, 0x0654, 0x0623},
    {0x0648, 0x0654, 0x0624},
    {0x0627, 0x0655, 0x0625},
    {0x064A, 0x0654, 0x0626},
    {0x06D5, 0x0654, 0x06C0},
    {0x06C1, 0x0654, 0x06C2},
    {0x06D2, 0x0654, 0x06D3},
}};

std::optional<CodePoint> compose_pair(CodePoint base, CodePoint mark) {
  for (const auto& c : kCompositions) {
    if (c.base == base && c.mark == mark) return c.composite;
  }
  return std::nullopt;
}

}  // namespace

std::u32string compose_arabic(std::u32string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    CodePoint base = text[i++];
    std::size_t j = i;
    while (j < text.size() && combining_class(text[j]) != 0) ++j;
    std::u32string kept;
    int max_kept_class = 0;
    for (std::size_t k = i; k < j; ++k) {
      int cls = combining_class(text[k]);
      auto composite = compose_pair(base, text[k]);
      if (composite && max_kept_class < cls) {
        base = *composite;
      } else {
        kept.push_back(text[k]);
        max_kept_class = std::max(max_kept_class, cls);
      }
    }
    out.push_back(base);
    out += kept;
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label taxonomy

namespace {

constexpr std::array<std::string_view, DiacriticLabel::kNumClasses> kLabelNames = {
    "none",         "fatha",           "damma",          "kasra",
    "fathatan",     "dammatan",        "kasratan",       "sukun",
    "shadda",       "shadda+fatha",    "shadda+damma",   "shadda+kasra",
    "shadda+fathatan", "shadda+dammatan", "shadda+kasratan",
};

}  // namespace

DiacriticLabel::DiacriticLabel(int class_id) : id_(class_id) {
  if (class_id < 0 || class_id >= kNumClasses) {
    throw std::out_of_range("diacritic class id out of range: " + std::to_string(class_id));
  }
}

DiacriticLabel DiacriticLabel::compose(bool shadda, VowelMark vowel) {
  int v = static_cast<int>(vowel);
  if (!shadda) return DiacriticLabel(v);
  if (vowel == VowelMark::kSukun) {
    throw NormalizationError("shadda combined with sukun has no diacritic class", 0);
  }
  if (vowel == VowelMark::kNone) return DiacriticLabel(8);
  return DiacriticLabel(8 + v);
}

bool DiacriticLabel::has_shadda() const noexcept { return id_ >= 8; }

VowelMark DiacriticLabel::vowel() const noexcept {
  if (id_ < 8) return static_cast<VowelMark>(id_);
  if (id_ == 8) return VowelMark::kNone;
  return static_cast<VowelMark>(id_ - 8);
}

CodePoint vowel_mark_codepoint(VowelMark v) noexcept {
  switch (v) {
    case VowelMark::kFatha: return marks::kFatha;
    case VowelMark::kDamma: return marks::kDamma;
    case VowelMark::kKasra: return marks::kKasra;
    case VowelMark::kFathatan: return marks::kFathatan;
    case VowelMark::kDammatan: return marks::kDammatan;
    case VowelMark::kKasratan: return marks::kKasratan;
    case VowelMark::kSukun: return marks::kSukun;
    case VowelMark::kNone: break;
  }
  return 0;
}

std::u32string DiacriticLabel::marks() const {
  std::u32string out;
  if (has_shadda()) out.push_back(marks::kShadda);
  if (auto v = vowel(); v != VowelMark::kNone) out.push_back(vowel_mark_codepoint(v));
  return out;
}

std::string_view DiacriticLabel::name() const noexcept { return kLabelNames[id_]; }

std::optional<DiacriticLabel> DiacriticLabel::from_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kLabelNames[i] == name) return DiacriticLabel(i);
  }
  return std::nullopt;
}

namespace {

VowelMark vowel_of(CodePoint c) {
  switch (c) {
    case marks::kFatha: return VowelMark::kFatha;
    case marks::kDamma: return VowelMark::kDamma;
    case marks::kKasra: return VowelMark::kKasra;
    case marks::kFathatan: return VowelMark::kFathatan;
    case marks::kDammatan: return VowelMark::kDammatan;
    case marks::kKasratan: return VowelMark::kKasratan;
    case marks::kSukun: return VowelMark::kSukun;
    default: return VowelMark::kNone;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Labeled text

LabeledText::LabeledText(std::u32string base_chars, std::vector<DiacriticLabel> labels)
    : base_(std::move(base_chars)), labels_(std::move(labels)) {
  if (base_.size() != labels_.size()) {
    throw std::invalid_argument("base text has " + std::to_string(base_.size()) +
                                " characters but " + std::to_string(labels_.size()) +
                                " labels");
  }
  for (std::size_t i = 0; i < base_.size(); ++i) {
    if (is_diacritic_mark(base_[i])) {
      throw MalformedInputError("base text contains diacritic " + hex(base_[i]) +
                                    " at offset " + std::to_string(i),
                                i);
    }
    if (!is_arabic_letter(base_[i]) && labels_[i] != DiacriticLabel::none()) {
      throw MalformedInputError("non-Arabic character " + hex(base_[i]) + " at offset " +
                                    std::to_string(i) + " carries label " +
                                    std::string(labels_[i].name()),
                                i);
    }
  }
}

LabeledText strip_diacritics(std::u32string_view raw) {
  const std::u32string text = compose_arabic(raw);
  std::u32string base;
  std::vector<DiacriticLabel> labels;
  std::vector<DroppedMark> dropped;
  base.reserve(text.size());
  labels.reserve(text.size());

  bool shadda = false;
  VowelMark vowel = VowelMark::kNone;
  auto flush = [&](std::size_t offset) {
    if (base.empty()) return;
    try {
      labels.back() = DiacriticLabel::compose(shadda, vowel);
    } catch (const NormalizationError&) {
      throw MalformedInputError("shadda and sukun on the same character before offset " +
                                    std::to_string(offset),
                                offset);
    }
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const CodePoint c = text[i];
    if (is_diacritic_mark(c)) {
      if (base.empty()) {
        throw MalformedInputError("diacritic " + hex(c) + " at offset " + std::to_string(i) +
                                      " has no base character",
                                  i);
      }
      if (!is_arabic_letter(base.back())) {
        throw MalformedInputError("diacritic " + hex(c) + " at offset " + std::to_string(i) +
                                      " follows non-Arabic character " + hex(base.back()),
                                  i);
      }
      if (c == marks::kShadda) {
        if (shadda) {
          throw NormalizationError("repeated shadda at offset " + std::to_string(i), i);
        }
        shadda = true;
      } else {
        if (vowel != VowelMark::kNone) {
          throw NormalizationError("second vowel mark " + hex(c) + " at offset " +
                                       std::to_string(i),
                                   i);
        }
        vowel = vowel_of(c);
      }
    } else if (is_unlabeled_arabic_mark(c)) {
      dropped.push_back({i, c});
    } else {
      flush(i);
      base.push_back(c);
      labels.emplace_back();
      shadda = false;
      vowel = VowelMark::kNone;
    }
  }
  flush(text.size());

  LabeledText out(std::move(base), std::move(labels));
  out.dropped = std::move(dropped);
  return out;
}

LabeledText strip_diacritics(std::string_view utf8) {
  return strip_diacritics(std::u32string_view(utf8_decode(utf8)));
}

std::u32string apply_diacritics(const LabeledText& lt) {
  std::u32string out;
  out.reserve(lt.size() * 2);
  for (std::size_t i = 0; i < lt.size(); ++i) {
    out.push_back(lt.base_chars()[i]);
    out += lt.labels()[i].marks();
  }
  return out;
}

std::string apply_diacritics_utf8(const LabeledText& lt) {
  return utf8_encode(apply_diacritics(lt));
}

std::string normalize_diacritized(std::string_view utf8) {
  return apply_diacritics_utf8(strip_diacritics(utf8));
}

// ---------------------------------------------------------------------------
// Vocabulary

CharVocab CharVocab::build(std::span<const std::u32string> corpus) {
  std::set<CodePoint> chars;
  for (const auto& s : corpus) chars.insert(s.begin(), s.end());
  CharVocab v;
  for (CodePoint c : chars) {
    v.char_to_id_.emplace(c, static_cast<int>(v.id_to_char_.size()) + 2);
    v.id_to_char_.push_back(c);
  }
  return v;
}

int CharVocab::id_of(CodePoint c) const noexcept {
  auto it = char_to_id_.find(c);
  return it == char_to_id_.end() ? kUnkId : it->second;
}

std::optional<CodePoint> CharVocab::char_of(int id) const {
  if (id == kPadId || id == kUnkId) return std::nullopt;
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
  return id_to_char_[id - 2];
}

std::vector<int> CharVocab::encode(std::u32string_view chars) const {
  std::vector<int> ids;
  ids.reserve(chars.size());
  for (CodePoint c : chars) ids.push_back(id_of(c));
  return ids;
}

std::u32string CharVocab::decode(std::span<const int> ids) const {
  std::u32string out;
  out.reserve(ids.size());
  for (int id : ids) {
    auto c = char_of(id);
    if (!c) throw std::out_of_range("cannot decode special id " + std::to_string(id));
    out.push_back(*c);
  }
  return out;
}

void CharVocab::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write vocabulary " + path.string());
  os << kPadId << "\t<pad>\n" << kUnkId << "\t<unk>\n";
  char buf[16];
  for (std::size_t i = 0; i < id_to_char_.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%04X", static_cast<unsigned>(id_to_char_[i]));
    os << i + 2 << '\t' << buf << '\n';
  }
}

CharVocab CharVocab::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read vocabulary " + path.string());
  CharVocab v;
  std::string line;
  int expected = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("vocabulary line without tab: " + line);
    int id = std::stoi(line.substr(0, tab));
    std::string value = line.substr(tab + 1);
    if (id != expected++) throw DataError("vocabulary ids must be dense from 0");
    if (id == kPadId || id == kUnkId) continue;
    unsigned cp = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), cp, 16);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
      throw DataError("bad code point in vocabulary: " + value);
    }
    v.char_to_id_.emplace(static_cast<CodePoint>(cp), id);
    v.id_to_char_.push_back(static_cast<CodePoint>(cp));
  }
  if (expected < 2) throw DataError("vocabulary is missing the special entries");
  return v;
}

}  // namespace harakat
