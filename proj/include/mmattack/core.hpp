#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmattack/errors.hpp"
#include "mmattack/rng.hpp"

namespace mmattack {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Image

// H x W x C raster of real pixel values in [0, 1], row-major, channel-minor.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<double> pixels;

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double at(int y, int x, int c) const { return pixels[index(y, x, c)]; }
  double& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
  std::size_t size() const { return pixels.size(); }

  static Image filled(int w, int h, int c, double value) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.pixels.assign(static_cast<std::size_t>(w) * h * c, value);
    return img;
  }

  void validate() const {
    if (width <= 0 || height <= 0) throw ValidationError("image dimensions must be positive");
    if (channels != 1 && channels != 3) throw ValidationError("image channels must be 1 or 3");
    if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
      throw ValidationError("pixel buffer length does not match width*height*channels");
    for (double v : pixels) {
      if (!(v >= 0.0 && v <= 1.0)) {
        std::ostringstream os;
        os << "pixel range violation: " << v << " outside [0,1]";
        throw ValidationError(os.str());
      }
    }
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// ---------------------------------------------------------------------------
// Query

namespace detail {

// Unicode whitespace codepoints recognized by word segmentation.
inline bool is_unicode_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0a: case 0x0b: case 0x0c: case 0x0d: case 0x20:
    case 0x85: case 0xa0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202f: case 0x205f: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200a;
  }
}

// Minimal UTF-8 decode; invalid bytes are treated as Latin-1 (never space).
inline char32_t decode_utf8(std::string_view s, std::size_t& i) {
  unsigned char b0 = s[i];
  if (b0 < 0x80) {
    i += 1;
    return b0;
  }
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xc0) == 0x80;
  };
  if ((b0 & 0xe0) == 0xc0 && cont(1)) {
    char32_t cp = ((b0 & 0x1f) << 6) | (static_cast<unsigned char>(s[i + 1]) & 0x3f);
    i += 2;
    return cp;
  }
  if ((b0 & 0xf0) == 0xe0 && cont(1) && cont(2)) {
    char32_t cp = ((b0 & 0x0f) << 12) | ((static_cast<unsigned char>(s[i + 1]) & 0x3f) << 6) |
                  (static_cast<unsigned char>(s[i + 2]) & 0x3f);
    i += 3;
    return cp;
  }
  if ((b0 & 0xf8) == 0xf0 && cont(1) && cont(2) && cont(3)) {
    char32_t cp = ((b0 & 0x07) << 18) | ((static_cast<unsigned char>(s[i + 1]) & 0x3f) << 12) |
                  ((static_cast<unsigned char>(s[i + 2]) & 0x3f) << 6) |
                  (static_cast<unsigned char>(s[i + 3]) & 0x3f);
    i += 4;
    return cp;
  }
  i += 1;
  return b0;
}

}  // namespace detail

// Splits on Unicode whitespace; punctuation stays attached to words.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t start = i;
    char32_t cp = detail::decode_utf8(text, i);
    if (detail::is_unicode_space(cp)) {
      if (!current.empty()) {
        words.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.append(text.substr(start, i - start));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

struct Query {
  std::string text;
  std::vector<std::string> words;  // derived, whitespace-split

  static Query from_text(std::string t) {
    Query q;
    q.words = split_words(t);
    q.text = std::move(t);
    return q;
  }

  // Words re-joined with single spaces; the normalized form of text.
  std::string normalized() const {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) out.push_back(' ');
      out += words[i];
    }
    return out;
  }

  void validate() const {
    if (words.empty()) throw ValidationError("empty query text");
  }

  friend bool operator==(const Query& a, const Query& b) { return a.text == b.text; }
};

// ---------------------------------------------------------------------------
// Perturbation

// Additive image perturbation bounded in L-infinity by epsilon, with the
// perturbed image still inside the [0,1] pixel box.
struct Perturbation {
  std::vector<double> sigma;
  double epsilon = 0.0;
  int step = 0;

  double linf_norm() const {
    double m = 0.0;
    for (double v : sigma) m = std::max(m, std::fabs(v));
    return m;
  }

  void validate(const Image& image) const {
    if (sigma.size() != image.pixels.size())
      throw ValidationError("perturbation shape does not match image");
    if (!(epsilon > 0.0 || (epsilon == 0.0 && linf_norm() == 0.0)))
      throw ValidationError("epsilon must be positive (or zero with zero sigma)");
    for (std::size_t i = 0; i < sigma.size(); ++i) {
      if (std::fabs(sigma[i]) > epsilon) throw ValidationError("sigma exceeds epsilon ball");
      double v = image.pixels[i] + sigma[i];
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("image+sigma leaves [0,1]");
    }
  }
};

// ---------------------------------------------------------------------------
// Instances

enum class Dimension { helpful, honest, harmless };

inline std::string to_string(Dimension d) {
  switch (d) {
    case Dimension::helpful: return "helpful";
    case Dimension::honest: return "honest";
    case Dimension::harmless: return "harmless";
  }
  return "?";
}

inline Dimension dimension_from_string(std::string_view s) {
  if (s == "helpful") return Dimension::helpful;
  if (s == "honest") return Dimension::honest;
  if (s == "harmless") return Dimension::harmless;
  throw ParseError("unknown dimension: " + std::string(s));
}

using Options = std::array<std::string, 3>;

// Multiple-choice attack unit: image + query + three options, plus the
// pseudo-label and the chosen incorrect target once labeling has run.
struct McInstance {
  std::string id;
  Dimension dimension = Dimension::helpful;
  Image image;
  Query query;
  Options options;
  std::optional<int> pseudo_label;
  std::optional<int> target_index;

  void validate() const {
    if (id.empty()) throw ValidationError("instance id must be non-empty");
    image.validate();
    query.validate();
    for (const auto& o : options)
      if (o.empty()) throw ValidationError("option texts must be non-empty");
    auto in_range = [](std::optional<int> v) { return !v || (*v >= 0 && *v <= 2); };
    if (!in_range(pseudo_label)) throw ValidationError("pseudo_label out of range");
    if (!in_range(target_index)) throw ValidationError("target_index out of range");
    if (pseudo_label && target_index && *pseudo_label == *target_index)
      throw ValidationError("target_index must differ from pseudo_label");
  }

  friend bool operator==(const McInstance&, const McInstance&) = default;
};

struct HarmlessInstance {
  std::string id;
  Dimension dimension = Dimension::harmless;
  Image image;
  Query query;

  void validate() const {
    if (id.empty()) throw ValidationError("instance id must be non-empty");
    image.validate();
    query.validate();
  }

  friend bool operator==(const HarmlessInstance&, const HarmlessInstance&) = default;
};

// ---------------------------------------------------------------------------
// AttackConfig

// All attack knobs. Epsilon values are quoted as integers over 255, matching
// the step size alpha = 1/255; they are divided by 255 at use sites.
struct AttackConfig {
  double alpha = 1.0 / 255.0;
  std::vector<int> epsilon_schedule{32, 16, 8, 4, 2, 1};
  int fixed_epsilon = 8;  // used when adaptive_eps is off; 0 means no init noise
  int tau = 1000;         // PGD step budget
  int tau_v = 50;         // constraint checkpoint interval, in steps
  double beta_v = 0.9;
  double beta_q = 0.9;
  bool adaptive_eps = true;
  bool text_perturbation = true;
  bool enforce_text_constraint = true;  // harmless enumeration gate
  std::optional<int> max_suffix_words;  // nullopt = unlimited
  std::uint64_t seed = 42;
  std::uint64_t victim_seed = 7;

  // Desk-scale profile: same attack, smaller step budget.
  static AttackConfig desk_defaults() {
    AttackConfig c;
    c.tau = 200;
    c.tau_v = 20;
    return c;
  }

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (epsilon_schedule.empty()) throw ConfigError("epsilon_schedule must be non-empty");
    for (std::size_t i = 0; i < epsilon_schedule.size(); ++i) {
      int e = epsilon_schedule[i];
      if (e < 1 || e > 255) throw ConfigError("epsilon_schedule entries must lie in [1,255]");
      if (i > 0 && epsilon_schedule[i] >= epsilon_schedule[i - 1])
        throw ConfigError("epsilon_schedule must be strictly descending");
    }
    if (alpha > epsilon_schedule.back() / 255.0 + 1e-15)
      throw ConfigError("alpha must not exceed the smallest scheduled epsilon/255");
    if (fixed_epsilon < 0 || fixed_epsilon > 255)
      throw ConfigError("fixed_epsilon must lie in [0,255]");
    if (!adaptive_eps && fixed_epsilon > 0 && alpha > fixed_epsilon / 255.0 + 1e-15)
      throw ConfigError("alpha must not exceed fixed_epsilon/255");
    if (tau < 0) throw ConfigError("tau must be non-negative");
    if (tau_v < 1) throw ConfigError("tau_v must be at least 1");
    if (tau > 0 && tau_v > tau) throw ConfigError("tau_v must not exceed tau");
    if (!(beta_v >= -1.0 && beta_v <= 1.0)) throw ConfigError("beta_v must lie in [-1,1]");
    if (!(beta_q >= -1.0 && beta_q <= 1.0)) throw ConfigError("beta_q must lie in [-1,1]");
    if (max_suffix_words && *max_suffix_words < 0)
      throw ConfigError("max_suffix_words must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// AttackResult

struct AttackResult {
  std::string instance_id;
  Image adv_image;
  Query adv_query;
  double chosen_epsilon = 0.0;  // in pixel units (scheduled integer / 255)
  double sim_image = 1.0;
  double sim_text = 1.0;
  int steps_used = 0;
  std::vector<double> loss_trace;
  std::string model_output;
  bool success = false;
  std::optional<std::string> constraint_warning;
  // Harmless enumeration bookkeeping.
  std::optional<int> corpus_index;
  std::vector<int> skipped_entries;

  friend bool operator==(const AttackResult&, const AttackResult&) = default;
};

// ---------------------------------------------------------------------------
// JSON serialization

inline void to_json(json& j, const Image& img) {
  j = json{{"width", img.width},
           {"height", img.height},
           {"channels", img.channels},
           {"pixels", img.pixels}};
}

inline void from_json(const json& j, Image& img) {
  j.at("width").get_to(img.width);
  j.at("height").get_to(img.height);
  j.at("channels").get_to(img.channels);
  j.at("pixels").get_to(img.pixels);
}

inline void to_json(json& j, const Query& q) { j = q.text; }

inline void from_json(const json& j, Query& q) { q = Query::from_text(j.get<std::string>()); }

inline void to_json(json& j, const Dimension& d) { j = to_string(d); }

inline void from_json(const json& j, Dimension& d) {
  d = dimension_from_string(j.get<std::string>());
}

inline void to_json(json& j, const McInstance& m) {
  j = json{{"id", m.id},         {"dimension", m.dimension}, {"image", m.image},
           {"query", m.query},   {"options", m.options}};
  if (m.pseudo_label) j["pseudo_label"] = *m.pseudo_label;
  if (m.target_index) j["target_index"] = *m.target_index;
}

inline void from_json(const json& j, McInstance& m) {
  j.at("id").get_to(m.id);
  j.at("dimension").get_to(m.dimension);
  j.at("image").get_to(m.image);
  j.at("query").get_to(m.query);
  j.at("options").get_to(m.options);
  m.pseudo_label.reset();
  m.target_index.reset();
  if (j.contains("pseudo_label")) m.pseudo_label = j.at("pseudo_label").get<int>();
  if (j.contains("target_index")) m.target_index = j.at("target_index").get<int>();
}

inline void to_json(json& j, const HarmlessInstance& h) {
  j = json{{"id", h.id}, {"dimension", h.dimension}, {"image", h.image}, {"query", h.query}};
}

inline void from_json(const json& j, HarmlessInstance& h) {
  j.at("id").get_to(h.id);
  j.at("dimension").get_to(h.dimension);
  j.at("image").get_to(h.image);
  j.at("query").get_to(h.query);
}

inline void to_json(json& j, const AttackConfig& c) {
  j = json{{"alpha", c.alpha},
           {"epsilon_schedule", c.epsilon_schedule},
           {"fixed_epsilon", c.fixed_epsilon},
           {"tau", c.tau},
           {"tau_v", c.tau_v},
           {"beta_v", c.beta_v},
           {"beta_q", c.beta_q},
           {"adaptive_eps", c.adaptive_eps},
           {"text_perturbation", c.text_perturbation},
           {"enforce_text_constraint", c.enforce_text_constraint},
           {"max_suffix_words", c.max_suffix_words ? json(*c.max_suffix_words) : json(nullptr)},
           {"seed", c.seed},
           {"victim_seed", c.victim_seed}};
}

inline void from_json(const json& j, AttackConfig& c) {
  static const char* known[] = {"alpha",        "epsilon_schedule",  "fixed_epsilon",
                                "tau",          "tau_v",             "beta_v",
                                "beta_q",       "adaptive_eps",      "text_perturbation",
                                "enforce_text_constraint",           "max_suffix_words",
                                "seed",         "victim_seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown config key: " + it.key());
  }
  c = AttackConfig{};
  if (j.contains("alpha")) j.at("alpha").get_to(c.alpha);
  if (j.contains("epsilon_schedule")) j.at("epsilon_schedule").get_to(c.epsilon_schedule);
  if (j.contains("fixed_epsilon")) j.at("fixed_epsilon").get_to(c.fixed_epsilon);
  if (j.contains("tau")) j.at("tau").get_to(c.tau);
  if (j.contains("tau_v")) j.at("tau_v").get_to(c.tau_v);
  if (j.contains("beta_v")) j.at("beta_v").get_to(c.beta_v);
  if (j.contains("beta_q")) j.at("beta_q").get_to(c.beta_q);
  if (j.contains("adaptive_eps")) j.at("adaptive_eps").get_to(c.adaptive_eps);
  if (j.contains("text_perturbation")) j.at("text_perturbation").get_to(c.text_perturbation);
  if (j.contains("enforce_text_constraint"))
    j.at("enforce_text_constraint").get_to(c.enforce_text_constraint);
  if (j.contains("max_suffix_words") && !j.at("max_suffix_words").is_null())
    c.max_suffix_words = j.at("max_suffix_words").get<int>();
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("victim_seed")) j.at("victim_seed").get_to(c.victim_seed);
}

inline void to_json(json& j, const AttackResult& r) {
  j = json{{"instance_id", r.instance_id},
           {"adv_image", r.adv_image},
           {"adv_query", r.adv_query},
           {"chosen_epsilon", r.chosen_epsilon},
           {"sim_image", r.sim_image},
           {"sim_text", r.sim_text},
           {"steps_used", r.steps_used},
           {"loss_trace", r.loss_trace},
           {"model_output", r.model_output},
           {"success", r.success}};
  if (r.constraint_warning) j["constraint_warning"] = *r.constraint_warning;
  if (r.corpus_index) j["corpus_index"] = *r.corpus_index;
  if (!r.skipped_entries.empty()) j["skipped_entries"] = r.skipped_entries;
}

inline void from_json(const json& j, AttackResult& r) {
  r = AttackResult{};
  j.at("instance_id").get_to(r.instance_id);
  j.at("adv_image").get_to(r.adv_image);
  j.at("adv_query").get_to(r.adv_query);
  j.at("chosen_epsilon").get_to(r.chosen_epsilon);
  j.at("sim_image").get_to(r.sim_image);
  j.at("sim_text").get_to(r.sim_text);
  j.at("steps_used").get_to(r.steps_used);
  j.at("loss_trace").get_to(r.loss_trace);
  j.at("model_output").get_to(r.model_output);
  j.at("success").get_to(r.success);
  if (j.contains("constraint_warning"))
    r.constraint_warning = j.at("constraint_warning").get<std::string>();
  if (j.contains("corpus_index")) r.corpus_index = j.at("corpus_index").get<int>();
  if (j.contains("skipped_entries")) j.at("skipped_entries").get_to(r.skipped_entries);
}

// Stable fingerprint of a resolved config, embedded in reports.
inline std::string config_hash(const AttackConfig& c) {
  json j = c;
  std::uint64_t h = fnv1a64(j.dump());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mmattack
