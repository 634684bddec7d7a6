#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mmattack/core.hpp"
#include "mmattack/dataset.hpp"
#include "mmattack/errors.hpp"
#include "mmattack/evalharness.hpp"
#include "mmattack/labeling.hpp"
#include "mmattack/pgd.hpp"
#include "mmattack/rng.hpp"
#include "mmattack/textattack.hpp"
#include "mmattack/victim.hpp"

namespace mmattack {

// End-to-end orchestration: labeling, target selection, text attack, image
// attack, evaluation. One instance is one sequential deterministic unit;
// instances parallelize freely because every random stream is keyed by
// (seed, instance id, purpose).

// Fills in pseudo_label (mock labeling) and target_index when absent.
template <VictimModel V>
McInstance resolve_labels(McInstance instance, const V& victim, const AttackConfig& config) {
  if (!instance.pseudo_label)
    instance.pseudo_label = mock_pseudo_label(instance, victim).pseudo_label;
  if (!instance.target_index) {
    SplitRng rng = derive_rng(config.seed, instance.id).derive("target");
    instance.target_index = select_incorrect_target(*instance.pseudo_label, rng);
  }
  if (*instance.target_index == *instance.pseudo_label)
    throw ValidationError(instance.id + ": target_index equals pseudo_label");
  return instance;
}

// Resolution is deterministic given (labels, seed), so evaluation can replay
// it to recover the targets an attack run used.
template <VictimModel V>
Dataset resolve_dataset_labels(Dataset dataset, const V& victim, const AttackConfig& config) {
  for (auto& inst : dataset.mc) inst = resolve_labels(inst, victim, config);
  return dataset;
}

// Applies a labels file (pseudo-labels only; targets are drawn at attack time).
inline void apply_labels(Dataset& dataset, const std::vector<LabelRecord>& records) {
  for (const auto& rec : records)
    for (auto& inst : dataset.mc)
      if (inst.id == rec.instance_id) inst.pseudo_label = rec.pseudo_label;
}

// The per-instance attack of the multiple-choice pipeline: suffix injection
// first (the image gradient is taken at the modified query), then the PGD
// loop, then both similarities recomputed from scratch for the emitted pair.
// trace_out, when given, receives the full per-step PGD trace.
template <VictimModel V>
AttackResult attack_mc_instance(const McInstance& raw, const V& victim,
                                const AttackConfig& config, PgdTrace* trace_out = nullptr) {
  McInstance instance = resolve_labels(raw, victim, config);
  const int target = *instance.target_index;
  SplitRng instance_rng = derive_rng(config.seed, instance.id);

  Query adv_query = instance.query;
  if (config.text_perturbation) {
    SuffixPlan plan = inject_suffix(instance.query, instance.options[target], config.beta_q,
                                    config.max_suffix_words);
    adv_query = plan.adv_query;
  }

  ImageAttackOutcome outcome =
      run_image_attack(instance, victim, config, adv_query, instance_rng);

  AttackResult result;
  result.instance_id = instance.id;
  result.adv_image = std::move(outcome.adv_image);
  result.adv_query = adv_query;
  result.chosen_epsilon = outcome.epsilon;
  result.steps_used = outcome.steps_used;
  result.loss_trace.reserve(outcome.trace.steps.size());
  for (const auto& rec : outcome.trace.steps) result.loss_trace.push_back(rec.loss);
  if (outcome.constraint_warning) result.constraint_warning = outcome.warning_note;
  if (trace_out) *trace_out = std::move(outcome.trace);

  result.sim_image =
      cosine(embed_image(instance.image), embed_image(result.adv_image));
  result.sim_text =
      cosine(embed_text(instance.query.text), embed_text(result.adv_query.text));
  result.model_output = victim.respond_mc(result.adv_image, result.adv_query, instance.options);

  bool constraint_ok = result.sim_image > config.beta_v && result.sim_text > config.beta_q &&
                       !result.constraint_warning;
  result.success = constraint_ok && result.model_output == instance.options[target];
  return result;
}

struct InstanceFailure {
  std::string id;
  std::string error;
};

struct RunOutcome {
  std::vector<AttackResult> results;    // dataset order, failed instances omitted
  std::vector<InstanceFailure> failures;
  std::vector<PgdTrace> traces;         // parallel to results (mc runs only)
  AggregateReport report;
  bool all_failed = false;
};

enum class DatasetKind { mc, harmless };

namespace detail {

// Deterministic parallel map: slot per instance, workers pull indices off an
// atomic counter, output order never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  int count = std::min<int>(workers, static_cast<int>(n));
  pool.reserve(count);
  for (int t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Maps the per-instance attack over a dataset with per-instance failure
// isolation, then aggregates. Reports are bit-identical for any worker count.
template <VictimModel V>
RunOutcome attack_dataset(const Dataset& dataset, DatasetKind kind, const V& victim,
                          const AttackConfig& config, int workers,
                          const Lexicon* lexicon = nullptr,
                          const HarmfulCorpus* corpus = nullptr,
                          bool collect_traces = false) {
  RunOutcome out;
  if (kind == DatasetKind::harmless) {
    if (!lexicon || !corpus)
      throw ConfigError("harmless attack requires a corpus and a lexicon");
  }

  // Label resolution happens inside the per-instance failure boundary; an
  // instance that cannot resolve becomes a recorded failure, not an abort.
  Dataset resolved = dataset;
  std::size_t n = kind == DatasetKind::mc ? resolved.mc.size() : resolved.harmless.size();
  std::vector<std::optional<AttackResult>> slots(n);
  std::vector<std::optional<InstanceFailure>> failures(n);
  std::vector<PgdTrace> traces(n);

  detail::parallel_for(n, workers, [&](std::size_t i) {
    const std::string& id =
        kind == DatasetKind::mc ? resolved.mc[i].id : resolved.harmless[i].id;
    try {
      if (kind == DatasetKind::mc) {
        resolved.mc[i] = resolve_labels(resolved.mc[i], victim, config);
        slots[i] = attack_mc_instance(resolved.mc[i], victim, config,
                                      collect_traces ? &traces[i] : nullptr);
      } else {
        auto judge = [&](std::string_view response) {
          return judge_lexicon(response, *lexicon);
        };
        slots[i] = enumerate_harmless_attack(resolved.harmless[i], *corpus, victim, judge,
                                             config.beta_q, config.enforce_text_constraint);
      }
    } catch (const std::exception& e) {
      failures[i] = InstanceFailure{id, e.what()};
    }
  });

  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      out.results.push_back(std::move(*slots[i]));
      if (collect_traces) out.traces.push_back(std::move(traces[i]));
    }
    if (failures[i]) out.failures.push_back(std::move(*failures[i]));
  }
  out.all_failed = n > 0 && out.results.empty();
  out.report = aggregate(out.results, resolved, config, lexicon);
  return out;
}

}  // namespace mmattack
