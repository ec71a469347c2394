#pragma once

// Shared fixtures for the test binaries: temporary directories, sample
// sentences and hand-rolled random generators.

#include <filesystem>
#include <map>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "harakat/arabic_text.hpp"
#include "harakat/tensor.hpp"

namespace harakat::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("harakat-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Dialectal sentences with their diacritized renderings (undiacritized input,
// text-only output, speech-aware output, reference).
struct DialectSample {
  const char* input;
  const char* text_only;
  const char* with_speech;
  const char* reference;
};

inline const std::vector<DialectSample>& dialect_samples() {
  static const std::vector<DialectSample> s = {
      {"عندكو شوربة ايه النهرده", "عِنْدَكُو شُورْبَةُ ايه النَّهْرَدَهْ",
       "عَندُكُو شوربِة اِيه النِهَردَه", "عَندُكُو شوربِة اِيه النِهَردَه"},
      {"عايز شوية وأت لتجهيز الاكل", "عَايَزَ شُوِيَّةً وَأْتْ لِتَجْهِيزِ الاكْلِ",
       "عَايِز شوَيَّة وَأت لِتَجهِيز الاَكل", "عَايِز شوَيَّة وَأت لِتَجهِيز الاَكل"},
  };
  return s;
}

// Same-word-different-reading cases: input, model output, reference.
inline const std::vector<std::array<const char*, 3>>& ambiguous_samples() {
  static const std::vector<std::array<const char*, 3>> s = {
      {"ضرب ضرب ضرب", "ضَرِب ضَرِب ضَرِب", "ضَرَبَ ضُرِبَ ضَرْبٌ"},
      {"ذهب ذهب", "ذَهِب ذَهِب", "ذَهَبٌ ذَهَبْ"},
  };
  return s;
}

/// Every Arabic string of the samples above.
inline std::vector<std::string> all_sample_strings() {
  std::vector<std::string> out;
  for (const auto& d : dialect_samples()) {
    out.insert(out.end(), {d.input, d.text_only, d.with_speech, d.reference});
  }
  for (const auto& a : ambiguous_samples()) out.insert(out.end(), a.begin(), a.end());
  return out;
}

// ---------------------------------------------------------------------------
// Random mark-decorated text

inline constexpr char32_t kSampleLetters[] = {
    0x0627, 0x0628, 0x062A, 0x062B, 0x062C, 0x062D, 0x062E, 0x062F, 0x0630, 0x0631,
    0x0632, 0x0633, 0x0634, 0x0635, 0x0636, 0x0637, 0x0638, 0x0639, 0x063A, 0x0641,
    0x0642, 0x0643, 0x0644, 0x0645, 0x0646, 0x0647, 0x0648, 0x064A, 0x0629, 0x0649,
    0x0621, 0x0623, 0x0625, 0x0622, 0x0624, 0x0626};
inline constexpr char32_t kSampleOther[] = {U'a', U'Z', U'7', U'.', U'!', U'x', 0x060C, 0x061F};
inline constexpr char32_t kVowels[] = {0x064B, 0x064C, 0x064D, 0x064E, 0x064F, 0x0650, 0x0652};

/// A sentence of Arabic words (with random representable mark clusters in
/// either shadda order), sprinkled with Latin words, digits and punctuation.
/// When `unlabeled` is set, superscript alef (U+0670) is occasionally added.
inline std::u32string random_sentence(std::mt19937_64& rng, bool unlabeled = false) {
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };
  std::u32string s;
  const std::size_t words = 1 + pick(7);
  for (std::size_t w = 0; w < words; ++w) {
    if (w) s.push_back(U' ');
    const bool latin = coin(0.15);
    const std::size_t len = 1 + pick(6);
    for (std::size_t k = 0; k < len; ++k) {
      if (latin) {
        s.push_back(kSampleOther[pick(std::size(kSampleOther))]);
        continue;
      }
      s.push_back(kSampleLetters[pick(std::size(kSampleLetters))]);
      const bool shadda = coin(0.2);
      const bool vowel = coin(0.6);
      const char32_t v = kVowels[pick(std::size(kVowels))];
      const bool sukun_with_shadda = shadda && vowel && v == 0x0652;
      if (shadda && vowel && !sukun_with_shadda) {
        if (coin(0.5)) s += {0x0651, v};
        else s += {v, 0x0651};
      } else if (shadda) {
        s.push_back(0x0651);
      } else if (vowel) {
        s.push_back(v);
      }
      if (unlabeled && coin(0.05)) s.push_back(0x0670);
    }
  }
  return s;
}

/// Independent reference for the canonical form: scans every base character
/// and the run of marks after it, then re-emits shadda before the vowel.
/// Superscript alef is discarded. Input must not contain hamza/madda
/// combining sequences.
inline std::u32string scanner_normalize(std::u32string_view s) {
  std::u32string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char32_t base = s[i++];
    bool shadda = false;
    char32_t vowel = 0;
    while (i < s.size() && ((s[i] >= 0x064B && s[i] <= 0x0652) || s[i] == 0x0670)) {
      if (s[i] == 0x0651) shadda = true;
      else if (s[i] != 0x0670) vowel = s[i];
      ++i;
    }
    out.push_back(base);
    if (shadda) out.push_back(0x0651);
    if (vowel) out.push_back(vowel);
  }
  return out;
}

/// Random tensor with entries uniform in [-scale, scale].
inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(u(rng));
  return t;
}

/// Every string over {0,1,2} of length <= max_len.
inline std::vector<std::vector<int>> all_strings(std::size_t max_len) {
  std::vector<std::vector<int>> out = {{}};
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].size() == max_len) continue;
    for (int c = 0; c < 3; ++c) {
      auto next = out[i];
      next.push_back(c);
      out.push_back(next);
    }
  }
  return out;
}

/// Edit distances by breadth-first search over single insertions, deletions
/// and substitutions, staying within strings of length <= max_len (an
/// optimal script never needs a longer intermediate). dist[i][j] indexes
/// all_strings(max_len).
inline std::vector<std::vector<int>> bfs_edit_distances(std::size_t max_len) {
  const auto strings = all_strings(max_len);
  std::map<std::vector<int>, int> index;
  for (std::size_t i = 0; i < strings.size(); ++i) index[strings[i]] = static_cast<int>(i);
  std::vector<std::vector<int>> dist(strings.size(), std::vector<int>(strings.size(), -1));
  for (std::size_t src = 0; src < strings.size(); ++src) {
    auto& d = dist[src];
    std::queue<int> q;
    d[src] = 0;
    q.push(static_cast<int>(src));
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      const auto& s = strings[u];
      auto visit = [&](const std::vector<int>& t) {
        const int v = index.at(t);
        if (d[v] < 0) {
          d[v] = d[u] + 1;
          q.push(v);
        }
      };
      for (std::size_t i = 0; i < s.size(); ++i) {
        auto t = s;
        t.erase(t.begin() + static_cast<std::ptrdiff_t>(i));
        visit(t);
        for (int c = 0; c < 3; ++c) {
          if (c == s[i]) continue;
          t = s;
          t[i] = c;
          visit(t);
        }
      }
      if (s.size() < max_len) {
        for (std::size_t i = 0; i <= s.size(); ++i) {
          for (int c = 0; c < 3; ++c) {
            auto t = s;
            t.insert(t.begin() + static_cast<std::ptrdiff_t>(i), c);
            visit(t);
          }
        }
      }
    }
  }
  return dist;
}

}  // namespace harakat::testing
