#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tagqa {

// Bad or inconsistent input data (malformed files, violated preconditions).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical breakdown during training or scoring (NaN loss, divergence).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

inline bool has_ascii_upper(std::string_view s) {
  return std::any_of(s.begin(), s.end(),
                     [](char c) { return c >= 'A' && c <= 'Z'; });
}

// Decodes the UTF-8 codepoint starting at byte i; advances *len to its
// byte width. Malformed bytes decode as themselves (width 1).
inline uint32_t utf8_codepoint(std::string_view s, size_t i, size_t* len) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    *len = 1;
    return b0;
  }
  size_t width = 0;
  uint32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    width = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    width = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    width = 4;
    cp = b0 & 0x07;
  } else {
    *len = 1;
    return b0;
  }
  if (i + width > s.size()) {
    *len = 1;
    return b0;
  }
  for (size_t k = 1; k < width; ++k) {
    const auto bk = static_cast<unsigned char>(s[i + k]);
    if ((bk & 0xC0) != 0x80) {
      *len = 1;
      return b0;
    }
    cp = (cp << 6) | (bk & 0x3F);
  }
  *len = width;
  return cp;
}

inline bool is_space_cp(uint32_t cp) {
  switch (cp) {
    case ' ':
    case '\t':
    case '\n':
    case '\r':
    case '\f':
    case '\v':
    case 0x0085:
    case 0x00A0:
    case 0x1680:
    case 0x2028:
    case 0x2029:
    case 0x202F:
    case 0x205F:
    case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

inline bool is_punct_cp(uint32_t cp) {
  if (cp < 0x80) {
    return (cp >= '!' && cp <= '/') || (cp >= ':' && cp <= '@') ||
           (cp >= '[' && cp <= '`') || (cp >= '{' && cp <= '~');
  }
  // General punctuation, CJK symbols, halfwidth forms.
  return (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) ||
         (cp >= 0x3001 && cp <= 0x303F) || (cp >= 0xFF01 && cp <= 0xFF0F) ||
         (cp >= 0xFF1A && cp <= 0xFF20) || (cp >= 0xFF3B && cp <= 0xFF40) ||
         (cp >= 0xFF5B && cp <= 0xFF65);
}

// Lowercase + collapse whitespace runs to single spaces + trim.
inline std::string collapse_ws_lower(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  size_t i = 0;
  while (i < s.size()) {
    size_t len = 0;
    const uint32_t cp = utf8_codepoint(s, i, &len);
    if (is_space_cp(cp)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      for (size_t k = 0; k < len; ++k) {
        char c = s[i + k];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        out.push_back(c);
      }
    }
    i += len;
  }
  return out;
}

// Normalization used by answer matching and gold scoring: lowercase,
// collapse whitespace, strip leading/trailing punctuation.
inline std::string normalize_answer(std::string_view s) {
  std::string t = collapse_ws_lower(s);
  size_t begin = 0;
  size_t end = t.size();
  while (begin < end) {
    size_t len = 0;
    const uint32_t cp = utf8_codepoint(t, begin, &len);
    if (!is_punct_cp(cp) && !is_space_cp(cp)) break;
    begin += len;
  }
  while (end > begin) {
    size_t last = begin;
    size_t last_len = 0;
    for (size_t i = begin; i < end;) {
      size_t len = 0;
      utf8_codepoint(t, i, &len);
      last = i;
      last_len = len;
      i += len;
    }
    size_t len = 0;
    const uint32_t cp = utf8_codepoint(t, last, &len);
    if (!is_punct_cp(cp) && !is_space_cp(cp)) break;
    end = last;
    (void)last_len;
  }
  return t.substr(begin, end - begin);
}

inline double log_sum_exp(const std::vector<double>& xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline uint64_t fnv1a64(std::string_view data, uint64_t seed = 0xcbf29ce484222325ULL) {
  uint64_t h = seed;
  for (char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard;
// the distributions here are hand-rolled because std:: distributions are
// implementation-defined and would break bit-identical checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  // Uniform in [0, n). Modulo bias is irrelevant at the sizes used here.
  uint64_t below(uint64_t n) { return n == 0 ? 0 : gen_() % n; }

  double uniform() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }

  // Box-Muller, one value per call (the pair's second half is discarded
  // to keep the consumption pattern simple and reproducible).
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace tagqa
