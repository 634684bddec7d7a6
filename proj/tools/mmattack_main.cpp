// Command-line surface of the attack engine: label, attack, eval, gradcheck.
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmattack/labeling_http.hpp"
#include "mmattack/mmattack.hpp"

namespace fs = std::filesystem;
using namespace mmattack;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

AttackConfig resolve_config(const CommonArgs& common) {
  AttackConfig cfg = AttackConfig::desk_defaults();
  if (!common.config_path.empty()) {
    std::ifstream in(common.config_path);
    if (!in) throw ConfigError("cannot open config file: " + common.config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("invalid config JSON: ") + e.what());
    }
    cfg = j.get<AttackConfig>();
  }
  if (common.seed) cfg.seed = *common.seed;
  return cfg;
}

ToyVictim make_victim(const AttackConfig& cfg, const std::string& victim_file) {
  if (!victim_file.empty()) return ToyVictim(ToyVictimParams::load(victim_file));
  return ToyVictim(ToyVictimParams::init(cfg.victim_seed));
}

void write_results_file(const RunOutcome& outcome, const fs::path& out_dir) {
  std::ofstream out(out_dir / "results.jsonl");
  if (!out) throw IoError("cannot write results under " + out_dir.string());
  for (const auto& r : outcome.results) out << json(r).dump() << "\n";
}

void write_adv_images(const RunOutcome& outcome, const fs::path& out_dir) {
  fs::create_directories(out_dir / "images");
  for (const auto& r : outcome.results)
    write_image_file(r.adv_image, out_dir / "images" / (r.instance_id + "_adv.ppm"));
}

void write_trace_file(const RunOutcome& outcome, const fs::path& out_dir) {
  std::ofstream out(out_dir / "trace.jsonl");
  if (!out) throw IoError("cannot write trace under " + out_dir.string());
  for (std::size_t i = 0; i < outcome.traces.size(); ++i) {
    const std::string& id = outcome.results[i].instance_id;
    for (const auto& rec : outcome.traces[i].steps) {
      json j{{"instance_id", id},
             {"step", rec.step},
             {"loss", rec.loss},
             {"linf_norm", rec.linf_norm}};
      if (rec.checkpoint_sim) j["checkpoint_sim"] = *rec.checkpoint_sim;
      out << j.dump() << "\n";
    }
    json done{{"instance_id", id},
              {"termination", to_string(outcome.traces[i].reason)}};
    out << done.dump() << "\n";
  }
}

int cmd_label(const std::string& dataset_path, const std::string& out_path,
              const std::string& endpoint_config, const std::string& overrides_path,
              const std::string& victim_file, int workers, const CommonArgs& common) {
  AttackConfig cfg = resolve_config(common);
  cfg.validate();
  Dataset dataset = load_dataset(dataset_path);
  ToyVictim victim = make_victim(cfg, victim_file);

  LabelerEndpoint endpoint;  // offline mock by default
  if (!endpoint_config.empty()) {
    std::ifstream in(endpoint_config);
    if (!in) throw ConfigError("cannot open endpoint config: " + endpoint_config);
    json j = json::parse(in);
    endpoint.offline_mock = false;
    endpoint.base_url = j.at("base_url").get<std::string>();
    if (j.contains("model_name")) endpoint.model_name = j.at("model_name").get<std::string>();
    if (j.contains("timeout_seconds"))
      endpoint.timeout_seconds = j.at("timeout_seconds").get<double>();
    if (j.contains("api_key_env")) endpoint.api_key_env = j.at("api_key_env").get<std::string>();
    if (j.contains("max_retries")) endpoint.max_retries = j.at("max_retries").get<int>();
    if (j.contains("retry_delay_ms"))
      endpoint.retry_delay_ms = j.at("retry_delay_ms").get<int>();
  }
  endpoint.verbose = common.verbose;

  std::vector<LabelRecord> records(dataset.mc.size());
  std::vector<std::string> errors;
  std::mutex errors_mutex;
  detail::parallel_for(dataset.mc.size(), workers, [&](std::size_t i) {
    try {
      records[i] = request_pseudo_label(dataset.mc[i], endpoint, victim);
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(errors_mutex);
      errors.push_back(dataset.mc[i].id + ": " + e.what());
    }
  });
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "label error: " << e << "\n";
    return kExitRuntime;
  }

  if (!overrides_path.empty()) {
    for (const auto& w : merge_manual_overrides(records, overrides_path))
      std::cerr << "warning: " << w << "\n";
  }
  std::sort(records.begin(), records.end(),
            [](const LabelRecord& a, const LabelRecord& b) {
              return a.instance_id < b.instance_id;
            });
  save_labels(records, out_path);

  int mock = 0, endpoint_n = 0, manual = 0;
  for (const auto& r : records) {
    mock += r.source == LabelSource::mock;
    endpoint_n += r.source == LabelSource::endpoint;
    manual += r.source == LabelSource::manual;
  }
  std::cout << "labeled " << records.size() << " instances (mock " << mock << ", endpoint "
            << endpoint_n << ", manual " << manual << ") -> " << out_path << "\n";
  return kExitOk;
}

int cmd_attack(const std::string& kind, const std::string& dataset_path,
               const std::string& labels_path, const std::string& out_dir_s,
               const std::string& corpus_path, const std::string& lexicon_path,
               const std::string& victim_file, int workers, bool trace,
               bool no_adaptive_eps, std::optional<int> epsilon, bool no_text_perturbation,
               std::optional<int> max_suffix_words, const CommonArgs& common) {
  AttackConfig cfg = resolve_config(common);
  if (no_adaptive_eps) cfg.adaptive_eps = false;
  if (epsilon) {
    cfg.fixed_epsilon = *epsilon;
    cfg.adaptive_eps = false;
  }
  if (no_text_perturbation) cfg.text_perturbation = false;
  if (max_suffix_words) cfg.max_suffix_words = *max_suffix_words;
  cfg.validate();

  Dataset dataset = load_dataset(dataset_path);
  if (!labels_path.empty()) apply_labels(dataset, load_labels(labels_path));
  ToyVictim victim = make_victim(cfg, victim_file);

  Lexicon lexicon;
  HarmfulCorpus corpus;
  RunOutcome outcome;
  if (kind == "mc") {
    outcome = attack_dataset(dataset, DatasetKind::mc, victim, cfg, workers, nullptr, nullptr,
                             trace);
  } else {
    if (corpus_path.empty() || lexicon_path.empty())
      throw ConfigError("--kind harmless requires --corpus and --lexicon");
    corpus = load_harmful_corpus(corpus_path);
    lexicon = load_lexicon(lexicon_path);
    outcome = attack_dataset(dataset, DatasetKind::harmless, victim, cfg, workers, &lexicon,
                             &corpus, false);
  }

  fs::path out_dir(out_dir_s);
  fs::create_directories(out_dir);
  RunInfo info;
  info.config = cfg;
  info.kind = kind;
  for (const auto& f : outcome.failures) info.failures.emplace_back(f.id, f.error);
  emit_report(outcome.report, info, out_dir);
  write_results_file(outcome, out_dir);
  write_adv_images(outcome, out_dir);
  if (trace && kind == "mc") write_trace_file(outcome, out_dir);

  std::cout << render_report_table(outcome.report, info);
  std::cout << "wrote " << (out_dir / "report.json").string() << "\n";
  return outcome.all_failed ? kExitRuntime : kExitOk;
}

int cmd_eval(const std::string& dataset_path, const std::string& results_path,
             const std::string& labels_path, const std::string& lexicon_path,
             const std::string& out_dir_s, const std::string& victim_file,
             const CommonArgs& common) {
  AttackConfig cfg = resolve_config(common);
  cfg.validate();
  Dataset dataset = load_dataset(dataset_path);
  if (!labels_path.empty()) apply_labels(dataset, load_labels(labels_path));
  ToyVictim victim = make_victim(cfg, victim_file);
  Dataset resolved = resolve_dataset_labels(dataset, victim, cfg);

  std::vector<AttackResult> results;
  std::ifstream in(results_path);
  if (!in) throw IoError("cannot open results file: " + results_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    results.push_back(json::parse(line).get<AttackResult>());
  }

  Lexicon lexicon;
  const Lexicon* lex_ptr = nullptr;
  if (!lexicon_path.empty()) {
    lexicon = load_lexicon(lexicon_path);
    lex_ptr = &lexicon;
  }
  AggregateReport report = aggregate(results, resolved, cfg, lex_ptr);
  RunInfo info;
  info.config = cfg;
  info.kind = "eval";
  if (!out_dir_s.empty()) {
    emit_report(report, info, out_dir_s);
    std::cout << "wrote " << (fs::path(out_dir_s) / "report.json").string() << "\n";
  }
  std::cout << render_report_table(report, info);
  return kExitOk;
}

int cmd_gradcheck(int trials, double h, double tol, std::uint64_t seed) {
  GradCheckReport report = grad_check(ToyVictimParams::init(seed), trials, h, tol);
  std::printf("gradcheck: %d trials, h=%g, tol=%g -> max relative error %.3g [%s]\n",
              report.trials, h, tol, report.max_rel_error,
              report.passed ? "PASS" : "FAIL");
  std::size_t shown = std::min<std::size_t>(report.failures.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) {
    const auto& f = report.failures[i];
    std::printf("  trial %d pixel %zu: analytic %.6g vs numeric %.6g\n", f.trial, f.pixel,
                f.analytic, f.numeric);
  }
  if (report.failures.size() > shown)
    std::printf("  ... and %zu more failing probes\n", report.failures.size() - shown);
  return report.passed ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained multimodal adversarial attack engine"};
  app.require_subcommand(1);

  CommonArgs common;

  // label
  auto* label = app.add_subcommand("label", "Generate pseudo-labels for an MC dataset");
  std::string l_dataset, l_out = "labels.jsonl", l_endpoint, l_overrides, l_victim;
  int l_workers = 1;
  bool l_mock = false;
  label->add_option("--dataset", l_dataset, "Dataset JSONL")->required();
  label->add_option("--out", l_out, "Labels output file");
  label->add_flag("--mock", l_mock, "Use the offline mock labeler (default)");
  label->add_option("--endpoint-config", l_endpoint, "Endpoint config JSON");
  label->add_option("--overrides", l_overrides, "Manual overrides JSON");
  label->add_option("--victim", l_victim, "Victim params file");
  label->add_option("--workers", l_workers, "Concurrent endpoint requests")
      ->check(CLI::PositiveNumber);
  label->add_option("--config", common.config_path, "Attack config JSON");
  label->add_option("--seed", common.seed, "Seed override");
  label->add_flag("--verbose", common.verbose, "Log endpoint traffic");

  // attack
  auto* attack = app.add_subcommand("attack", "Run the attack pipeline over a dataset");
  std::string a_kind, a_dataset, a_labels, a_out = "mmattack-out", a_corpus, a_lexicon,
              a_victim;
  int a_workers = 1;
  bool a_trace = false, a_no_adaptive = false, a_no_text = false;
  std::optional<int> a_epsilon, a_max_words;
  attack->add_option("--kind", a_kind, "mc | harmless")
      ->required()
      ->check(CLI::IsMember({"mc", "harmless"}));
  attack->add_option("--dataset", a_dataset, "Dataset JSONL")->required();
  attack->add_option("--labels", a_labels, "Labels JSONL from the label command");
  attack->add_option("--config", common.config_path, "Attack config JSON");
  attack->add_option("--seed", common.seed, "Seed override");
  attack->add_option("--workers", a_workers, "Worker pool size")->check(CLI::PositiveNumber);
  attack->add_option("--out-dir", a_out, "Output directory");
  attack->add_flag("--trace", a_trace, "Export per-step PGD trace");
  attack->add_flag("--no-adaptive-eps", a_no_adaptive, "Disable the adaptive epsilon search");
  attack->add_option("--epsilon", a_epsilon, "Fixed epsilon (integer over 255); implies fixed")
      ->check(CLI::Range(0, 255));
  attack->add_flag("--no-text-perturbation", a_no_text, "Disable suffix injection");
  attack->add_option("--max-suffix-words", a_max_words, "Cap on appended suffix words")
      ->check(CLI::NonNegativeNumber);
  attack->add_option("--corpus", a_corpus, "Harmful corpus file (harmless kind)");
  attack->add_option("--lexicon", a_lexicon, "Unsafe lexicon file (harmless kind)");
  attack->add_option("--victim", a_victim, "Victim params file");
  attack->add_flag("--verbose", common.verbose, "Verbose logging");

  // eval
  auto* eval = app.add_subcommand("eval", "Re-aggregate a results file against its dataset");
  std::string e_dataset, e_results, e_labels, e_lexicon, e_out, e_victim;
  eval->add_option("--dataset", e_dataset, "Dataset JSONL")->required();
  eval->add_option("--results", e_results, "results.jsonl from an attack run")->required();
  eval->add_option("--labels", e_labels, "Labels JSONL");
  eval->add_option("--lexicon", e_lexicon, "Unsafe lexicon file");
  eval->add_option("--out-dir", e_out, "Where to re-emit reports");
  eval->add_option("--victim", e_victim, "Victim params file");
  eval->add_option("--config", common.config_path, "Attack config JSON");
  eval->add_option("--seed", common.seed, "Seed override");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gradcheck->set_help_flag("--help", "Print help");  // frees -h for the step size
  int g_trials = 10;
  double g_h = 1e-5, g_tol = 1e-4;
  std::uint64_t g_seed = 7;
  gradcheck->add_option("--trials", g_trials, "Number of trials")->check(CLI::PositiveNumber);
  gradcheck->add_option("--h", g_h, "Central difference step");
  gradcheck->add_option("--tol", g_tol, "Max relative error tolerance");
  gradcheck->add_option("--seed", g_seed, "Victim parameter seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (label->parsed()) {
      if (l_mock && !l_endpoint.empty())
        throw ConfigError("--mock and --endpoint-config are mutually exclusive");
      return cmd_label(l_dataset, l_out, l_endpoint, l_overrides, l_victim, l_workers, common);
    }
    if (attack->parsed())
      return cmd_attack(a_kind, a_dataset, a_labels, a_out, a_corpus, a_lexicon, a_victim,
                        a_workers, a_trace, a_no_adaptive, a_epsilon, a_no_text, a_max_words,
                        common);
    if (eval->parsed())
      return cmd_eval(e_dataset, e_results, e_labels, e_lexicon, e_out, e_victim, common);
    if (gradcheck->parsed()) return cmd_gradcheck(g_trials, g_h, g_tol, g_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
