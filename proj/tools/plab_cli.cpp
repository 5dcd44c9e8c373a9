#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "plab/pipeline.hpp"

namespace {

std::size_t default_jobs() {
  const char* env = std::getenv("PLAB_JOBS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    const long v = std::stol(env);
    if (v >= 1) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  std::cerr << "plab: ignoring invalid PLAB_JOBS='" << env << "'\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor poisoning lab: poison, train, evaluate and defend text classifiers."};
  app.require_subcommand(1);

  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::size_t jobs = default_jobs();
  std::string train_path;
  std::string model_path;
  bool quiet = false;

  app.add_option("--config", config, "Experiment config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "Master seed; overrides the config");
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--jobs", jobs, "Worker threads (default: PLAB_JOBS or 1)")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", quiet, "Suppress progress lines");

  const std::string help[] = {
      "Build D_clean + D_poison as JSONL with a manifest",
      "Train the victim and save it",
      "Report ACC and ASR of the victim",
      "Apply a defense and report ACC and ASR",
      "ASR/ACC curves over the budget and seed grid",
      "Perplexity-ranked poison recall curve",
      "Run the adversarial substitution search on target-class examples",
  };
  std::size_t i = 0;
  for (const auto& name : plab::command_names()) {
    auto* sub = app.add_subcommand(name, help[i++]);
    sub->fallthrough();
    if (name == "train" || name == "eval" || name == "defend" || name == "audit") {
      sub->add_option("--train", train_path, "Training set JSONL from `poison` (default: rebuild in memory)");
    }
    if (name == "eval" || name == "defend") {
      sub->add_option("--model", model_path, "Model file from `train` (default: retrain in memory)");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  plab::CommandOptions opts;
  opts.config_path = config;
  if (*seed_opt) opts.seed = seed;
  opts.out_dir = out;
  opts.jobs = jobs;
  if (!train_path.empty()) opts.train_path = train_path;
  if (!model_path.empty()) opts.model_path = model_path;

  std::ostringstream sink;
  std::ostream& log = quiet ? static_cast<std::ostream&>(sink) : std::cerr;
  try {
    plab::run_command(app.get_subcommands().front()->get_name(), opts, log);
  } catch (const plab::Error& e) {
    std::cerr << "plab: " << e.what() << '\n';
    return plab::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "plab: internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
