#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mmattack/core.hpp"
#include "mmattack/errors.hpp"
#include "mmattack/rng.hpp"

namespace mmattack {

// Deterministic surrogate embedders. They share the attack's pixel/text
// space, so constraint violations can only come from perturbation magnitude,
// never from preprocessing mismatch.
inline constexpr int kPoolGrid = 8;
inline constexpr int kImageEmbedDim = kPoolGrid * kPoolGrid * 3;  // 192
inline constexpr int kTextEmbedDim = 256;
inline constexpr const char* kImageEncoderId = "pool8";
inline constexpr const char* kTextEncoderId = "trigram256";

struct Embedding {
  std::vector<double> values;
  bool zero_norm = false;        // raw vector was all-zero; values left at zero
  bool undersized_input = false; // image smaller than the pooling grid
  std::string encoder_id;
};

namespace detail {

inline void l2_normalize(Embedding& e) {
  double ss = 0.0;
  for (double v : e.values) ss += v * v;
  if (ss <= 0.0) {
    e.zero_norm = true;
    return;
  }
  double inv = 1.0 / std::sqrt(ss);
  for (double& v : e.values) v *= inv;
}

}  // namespace detail

// Mean-pooled 8x8 grid per channel, before normalization. Grayscale images
// are replicated to 3 channels. Channel-major layout: values[c*64 + gy*8 + gx].
// Images smaller than the grid pool with cell size 1 and repeat edge cells.
inline std::vector<double> pool_image(const Image& image) {
  std::vector<double> pooled(kImageEmbedDim, 0.0);
  const int g = kPoolGrid;
  for (int gy = 0; gy < g; ++gy) {
    int y0 = image.height >= g ? gy * image.height / g : std::min(gy, image.height - 1);
    int y1 = image.height >= g ? (gy + 1) * image.height / g : y0 + 1;
    for (int gx = 0; gx < g; ++gx) {
      int x0 = image.width >= g ? gx * image.width / g : std::min(gx, image.width - 1);
      int x1 = image.width >= g ? (gx + 1) * image.width / g : x0 + 1;
      double count = static_cast<double>(y1 - y0) * (x1 - x0);
      for (int c = 0; c < 3; ++c) {
        int src_c = image.channels == 3 ? c : 0;
        double sum = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) sum += image.at(y, x, src_c);
        pooled[(c * g + gy) * g + gx] = sum / count;
      }
    }
  }
  return pooled;
}

inline Embedding embed_image(const Image& image) {
  Embedding e;
  e.encoder_id = kImageEncoderId;
  e.undersized_input = image.width < kPoolGrid || image.height < kPoolGrid;
  e.values = pool_image(image);
  detail::l2_normalize(e);
  return e;
}

namespace detail {

inline std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

}  // namespace detail

// Trigram bin index under the fixed public hash (FNV-1a 64, modulo 256).
inline int trigram_bin(std::string_view trigram) {
  return static_cast<int>(fnv1a64(trigram) % kTextEmbedDim);
}

// Raw trigram counts over the ASCII-lowercased byte sequence. Texts shorter
// than 3 characters hash whole into a single bin.
inline std::vector<double> trigram_counts(std::string_view text) {
  std::vector<double> counts(kTextEmbedDim, 0.0);
  std::string lower = detail::ascii_lower(text);
  if (lower.size() < 3) {
    counts[trigram_bin(lower)] += 1.0;
    return counts;
  }
  for (std::size_t i = 0; i + 3 <= lower.size(); ++i)
    counts[trigram_bin(std::string_view(lower).substr(i, 3))] += 1.0;
  return counts;
}

inline Embedding embed_text(std::string_view text) {
  Embedding e;
  e.encoder_id = kTextEncoderId;
  e.values = trigram_counts(text);
  detail::l2_normalize(e);
  return e;
}

// Cosine similarity; a zero-norm operand yields 0.0 (the operand carries the
// zero_norm flag).
inline double cosine(const Embedding& a, const Embedding& b) {
  if (a.values.size() != b.values.size())
    throw ValidationError("cosine: embedding dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct ConstraintReport {
  double similarity = 0.0;
  double threshold = 0.0;
  bool satisfied = false;  // similarity strictly above threshold
};

inline ConstraintReport check_constraint(const Embedding& clean, const Embedding& adv,
                                         double threshold) {
  double sim = cosine(clean, adv);
  return ConstraintReport{sim, threshold, sim > threshold};
}

}  // namespace mmattack
