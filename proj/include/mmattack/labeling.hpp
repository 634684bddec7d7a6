#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mmattack/core.hpp"
#include "mmattack/errors.hpp"
#include "mmattack/rng.hpp"
#include "mmattack/victim.hpp"

namespace mmattack {

// Pseudo-label acquisition. The real labeler is an external chat-completion
// endpoint; the offline mock answers with the toy victim's clean argmax so
// the full pipeline runs hermetically.

struct LabelerEndpoint {
  std::string base_url;                        // e.g. https://api.example.com
  std::string model_name = "gpt-4o";
  double timeout_seconds = 30.0;
  std::string api_key_env = "MMATTACK_API_KEY";  // name of the env var, never the key
  bool offline_mock = true;
  int max_retries = 3;
  int retry_delay_ms = 250;
  bool verbose = false;
};

enum class LabelSource { endpoint, mock, manual };

inline std::string to_string(LabelSource s) {
  switch (s) {
    case LabelSource::endpoint: return "endpoint";
    case LabelSource::mock: return "mock";
    case LabelSource::manual: return "manual";
  }
  return "?";
}

inline LabelSource label_source_from_string(std::string_view s) {
  if (s == "endpoint") return LabelSource::endpoint;
  if (s == "mock") return LabelSource::mock;
  if (s == "manual") return LabelSource::manual;
  throw ParseError("unknown label source: " + std::string(s));
}

struct LabelRecord {
  std::string instance_id;
  int pseudo_label = 0;  // in {0,1,2}
  LabelSource source = LabelSource::mock;
  bool verified = false;

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

inline void to_json(json& j, const LabelRecord& r) {
  j = json{{"instance_id", r.instance_id},
           {"pseudo_label", r.pseudo_label},
           {"source", to_string(r.source)},
           {"verified", r.verified}};
}

inline void from_json(const json& j, LabelRecord& r) {
  j.at("instance_id").get_to(r.instance_id);
  j.at("pseudo_label").get_to(r.pseudo_label);
  r.source = label_source_from_string(j.at("source").get<std::string>());
  j.at("verified").get_to(r.verified);
}

// The fixed prompt sent to the completion endpoint. Any reply containing a
// standalone option letter parses.
inline std::string labeling_prompt(const McInstance& instance) {
  std::ostringstream os;
  os << "You are labeling a multiple-choice visual question. Question: " << instance.query.text
     << "\nOptions:\nA. " << instance.options[0] << "\nB. " << instance.options[1] << "\nC. "
     << instance.options[2]
     << "\nReply with the single letter (A, B or C) of the correct option.";
  return os.str();
}

// First standalone A/B/C in the reply, case-insensitive, parentheses and
// punctuation allowed around it ("B", "(c)", "The answer is (C).").
inline std::optional<int> extract_option_letter(std::string_view reply) {
  auto alnum = [](unsigned char c) { return std::isalnum(c) != 0; };
  for (std::size_t i = 0; i < reply.size(); ++i) {
    char c = reply[i];
    int idx = -1;
    if (c == 'A' || c == 'a') idx = 0;
    if (c == 'B' || c == 'b') idx = 1;
    if (c == 'C' || c == 'c') idx = 2;
    if (idx < 0) continue;
    bool left_ok = i == 0 || !alnum(static_cast<unsigned char>(reply[i - 1]));
    bool right_ok = i + 1 == reply.size() || !alnum(static_cast<unsigned char>(reply[i + 1]));
    if (left_ok && right_ok) return idx;
  }
  return std::nullopt;
}

// Clean argmax of the toy victim, the offline stand-in for the endpoint.
template <VictimModel V>
LabelRecord mock_pseudo_label(const McInstance& instance, const V& victim) {
  auto scores = victim.option_scores(instance.image, instance.query, instance.options);
  int best = 0;
  for (int o = 1; o < 3; ++o)
    if (scores[o] > scores[best]) best = o;
  return LabelRecord{instance.id, best, LabelSource::mock, false};
}

// Wire shape of the endpoint request; kept in one place so tests and docs
// agree with the client.
inline json completion_request_body(const LabelerEndpoint& endpoint, const McInstance& instance) {
  return json{{"model", endpoint.model_name},
              {"messages", json::array({json{{"role", "user"},
                                             {"content", labeling_prompt(instance)}}})},
              {"temperature", 0}};
}

// Requests a pseudo-label. Mock mode never touches the network. Endpoint
// mode posts the fixed prompt through the transport (see labeling_http.hpp
// for the HTTP one) and parses the first standalone option letter out of the
// assistant reply.
template <VictimModel V, class Transport>
LabelRecord request_pseudo_label(const McInstance& instance, const LabelerEndpoint& endpoint,
                                 const V& mock_victim, Transport&& post) {
  if (endpoint.offline_mock) return mock_pseudo_label(instance, mock_victim);
  json body = completion_request_body(endpoint, instance);
  std::string reply = post(endpoint, body);
  std::optional<int> letter = extract_option_letter(reply);
  if (!letter)
    throw ParseError(instance.id + ": unparseable labeler reply: " + reply);
  return LabelRecord{instance.id, *letter, LabelSource::endpoint, false};
}

// Overrides file: a JSON object mapping instance id -> option index.
// Returns warnings for overrides that matched no record.
inline std::vector<std::string> merge_manual_overrides(
    std::vector<LabelRecord>& records, const std::filesystem::path& overrides_file) {
  std::ifstream in(overrides_file);
  if (!in) throw IoError("cannot open overrides file: " + overrides_file.string());
  json j = json::parse(in, nullptr, true);
  std::vector<std::string> warnings;
  for (auto it = j.begin(); it != j.end(); ++it) {
    int idx = it.value().get<int>();
    if (idx < 0 || idx > 2)
      throw ValidationError("override for " + it.key() + " out of range");
    bool found = false;
    for (auto& rec : records) {
      if (rec.instance_id == it.key()) {
        rec.pseudo_label = idx;
        rec.source = LabelSource::manual;
        rec.verified = true;
        found = true;
      }
    }
    if (!found) warnings.push_back("override for unknown id ignored: " + it.key());
  }
  return warnings;
}

// Uniform draw over the two indices that are not the pseudo-label.
inline int select_incorrect_target(int pseudo_label, SplitRng& rng) {
  if (pseudo_label < 0 || pseudo_label > 2)
    throw ValidationError("pseudo_label out of range");
  int candidates[2];
  int k = 0;
  for (int i = 0; i < 3; ++i)
    if (i != pseudo_label) candidates[k++] = i;
  return candidates[rng.uniform_index(2)];
}

inline void save_labels(const std::vector<LabelRecord>& records,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write labels file: " + path.string());
  for (const auto& rec : records) out << json(rec).dump() << "\n";
}

inline std::vector<LabelRecord> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open labels file: " + path.string());
  std::vector<LabelRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      records.push_back(json::parse(line).get<LabelRecord>());
    } catch (const json::exception& e) {
      std::ostringstream os;
      os << path.string() << ":" << lineno << ": invalid label record: " << e.what();
      throw ParseError(os.str());
    }
  }
  return records;
}

}  // namespace mmattack
