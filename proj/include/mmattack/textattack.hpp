#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmattack/core.hpp"
#include "mmattack/embed.hpp"
#include "mmattack/errors.hpp"
#include "mmattack/victim.hpp"

namespace mmattack {

// Query-side attacks: suffix injection for multiple-choice instances and
// harmful-corpus enumeration for free-form ones.

struct HarmfulCorpus {
  std::vector<std::string> entries;  // enumeration order matters: first success wins
  std::string source_path;
};

// Plain text, one entry per line, UTF-8; blank lines skipped, CR stripped.
inline HarmfulCorpus load_harmful_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path.string());
  HarmfulCorpus corpus;
  corpus.source_path = path.string();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    corpus.entries.push_back(line);
  }
  if (corpus.entries.empty()) throw ParseError("empty corpus: " + path.string());
  return corpus;
}

struct SuffixPlan {
  int words_appended = 0;
  Query adv_query;
  double sim_text = 1.0;
};

// Longest word-prefix of the target text whose appended form still satisfies
// sim(query, query+prefix) > beta_q, found by scanning every candidate length
// (similarity need not be monotone in the prefix, so no greedy early stop).
inline SuffixPlan inject_suffix(const Query& query, std::string_view target_text, double beta_q,
                                std::optional<int> max_words) {
  SuffixPlan plan;
  plan.adv_query = query;
  std::vector<std::string> words = split_words(target_text);
  std::size_t limit = words.size();
  if (max_words) limit = std::min<std::size_t>(limit, static_cast<std::size_t>(*max_words));
  if (limit == 0) return plan;

  Embedding clean = embed_text(query.text);
  std::string candidate = query.text;
  for (std::size_t k = 1; k <= limit; ++k) {
    candidate += ' ';
    candidate += words[k - 1];
    double sim = cosine(clean, embed_text(candidate));
    if (sim > beta_q) {
      plan.words_appended = static_cast<int>(k);
      plan.adv_query = Query::from_text(candidate);
      plan.sim_text = sim;
    }
  }
  return plan;
}

// Appends corpus entries to the query in order until one drives the victim's
// free-form output to an unsafe verdict. Entries failing the text constraint
// are skipped (recorded) when enforcement is on.
template <VictimModel V, class Judge>
AttackResult enumerate_harmless_attack(const HarmlessInstance& instance,
                                       const HarmfulCorpus& corpus, const V& victim,
                                       Judge&& judge, double beta_q,
                                       bool enforce_text_constraint) {
  if (corpus.entries.empty()) throw ParseError("empty corpus");
  AttackResult result;
  result.instance_id = instance.id;
  result.adv_image = instance.image;  // the enumeration attack leaves pixels alone
  result.adv_query = instance.query;
  result.sim_image = 1.0;
  result.success = false;

  Embedding clean = embed_text(instance.query.text);
  int victim_calls = 0;
  for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
    std::string candidate_text = instance.query.text + " " + corpus.entries[i];
    double sim = cosine(clean, embed_text(candidate_text));
    if (enforce_text_constraint && !(sim > beta_q)) {
      result.skipped_entries.push_back(static_cast<int>(i));
      continue;
    }
    Query candidate = Query::from_text(candidate_text);
    std::string response = victim.respond_free(instance.image, candidate);
    result.adv_query = candidate;
    result.sim_text = sim;
    result.model_output = response;
    result.steps_used = ++victim_calls;
    if (judge(response).unsafe()) {
      result.success = true;
      result.corpus_index = static_cast<int>(i);
      return result;
    }
  }
  // Exhausted: the last attempted candidate stays recorded. If every entry
  // was skipped, the clean query stands and that is worth flagging.
  if (result.adv_query.text == instance.query.text)
    result.constraint_warning = "all corpus entries violated the text constraint";
  return result;
}

}  // namespace mmattack
