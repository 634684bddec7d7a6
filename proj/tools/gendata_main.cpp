// Materializes the bundled desk-scale dataset (images + JSONL) so the CLI
// has something to chew on. The default profile is the seed-42 fixture set
// used by the acceptance suite.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mmattack/deskset.hpp"
#include "mmattack/victim.hpp"

using namespace mmattack;

int main(int argc, char** argv) {
  CLI::App app{"Generate the desk-scale dataset"};
  std::string out_dir = "desk-data";
  DeskSetSpec spec;
  std::uint64_t victim_seed = 7;
  app.add_option("--out-dir", out_dir, "Output directory");
  app.add_option("--mc", spec.mc_count, "Number of multiple-choice instances")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--harmless", spec.harmless_count, "Number of harmless instances")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seed", spec.seed, "Generator seed");
  app.add_option("--victim-seed", victim_seed, "Seed for the bundled victim params file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Dataset ds = make_desk_dataset(spec);
    write_desk_dataset(ds, out_dir);
    // Victim params ride along so a run reproduces across machines.
    ToyVictimParams::init(victim_seed).save(std::filesystem::path(out_dir) / "victim.json");
    std::cout << "wrote " << ds.mc.size() << " mc + " << ds.harmless.size()
              << " harmless instances (and victim.json) under " << out_dir << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
