#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "plab/attack.hpp"
#include "plab/corpus.hpp"
#include "plab/defense.hpp"
#include "plab/metrics.hpp"
#include "plab/model.hpp"

namespace plab {

struct DatasetSource {
  // Exactly one of synth / (train_path, test_path).
  std::optional<SynthSpec> synth;
  std::string train_path;
  std::string test_path;
  JsonlSchema schema;
  std::vector<std::string> class_names;
};

struct NeighborConfig {
  int window = 1;
  std::size_t min_count = 2;
  std::size_t top_m = 10;
};

struct AttackSpec {
  // nullopt = no poisoning; target_class and trigger still drive ASR.
  std::optional<AttackType> type;
  int target_class = 1;
  std::size_t budget = 300;
  Trigger trigger;
};

struct AdvSpec {
  AdvSearchConfig search;
  // Share of the clean training set the surrogate is trained on.
  double surrogate_fraction = 0.5;
};

enum class DefenseName { kNone, kOnion, kRandom, kParaphrase, kKnn, kDpa, kSdpa };
enum class DefenseMode { kTest, kTrain };

std::string_view defense_name(DefenseName d);

struct DefenseSpec {
  DefenseName name = DefenseName::kNone;
  DefenseMode mode = DefenseMode::kTest;
  // onion
  double threshold = 0.0;
  std::optional<std::size_t> max_removals;
  // random
  double p = 0.5;
  // paraphrase
  double q = 0.1;
  std::size_t protected_top = 100;
  std::string command;
  // knn neighbors or dpa/sdpa partitions; nullopt picks 10 for knn, 32 for dpa
  std::optional<std::size_t> k;
  bool hypothesis_only = false;

  std::size_t effective_k() const;
};

struct SweepSpec {
  std::vector<AttackType> attacks = {AttackType::kLabelFlip, AttackType::kAdversarialCleanLabel,
                                     AttackType::kCleanLabel};
  std::vector<std::size_t> budgets = {10, 30, 100, 300};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DatasetSource dataset;
  TrainConfig train;
  AttackSpec attack;
  AdvSpec adv;
  NeighborConfig neighbors;
  DefenseSpec defense;
  SweepSpec sweep;
  double lm_add_k = 0.1;
  std::size_t advgen_limit = 50;

  // Missing keys take defaults; unknown keys and bad values throw ConfigError.
  // Relative dataset paths resolve against base_dir.
  static ExperimentConfig from_json(const std::string& text, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  // Canonical, fully defaulted form; stable key order.
  std::string to_json(int indent = -1) const;
  void validate() const;
};

// Data and adversary resources shared by every command.
struct Workspace {
  ExperimentConfig cfg;
  LabeledDataset clean_train;
  LabeledDataset test;
  // Built from the clean training data.
  NeighborTable neighbors;
  std::optional<LinearTextClassifier> surrogate;

  TrainConfig victim_config() const;
  PipelineContext context(std::size_t jobs) const;
};

// Loads or synthesizes the dataset. The surrogate is trained only when the
// configuration (attack or sweep) can need it.
Workspace make_workspace(const ExperimentConfig& cfg, bool need_surrogate);

// D_clean ∪ D_poison for the configured attack, or the clean set.
LabeledDataset poisoned_train(const Workspace& ws);

LinearTextClassifier train_victim(const Workspace& ws, const LabeledDataset& train);

struct CommandOptions {
  std::filesystem::path config_path;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = "out";
  std::size_t jobs = 1;
  // Optional upstream artifacts; recomputed in memory when absent.
  std::optional<std::filesystem::path> train_path;
  std::optional<std::filesystem::path> model_path;
};

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"poison", "train", "eval", "defend", "sweep", "audit", "advgen"};
  return names;
}

// Runs one subcommand and writes its artifacts into opts.out_dir. Progress
// lines go to `log`. Throws plab::Error on failure.
void run_command(const std::string& name, const CommandOptions& opts, std::ostream& log);

// 0 ok, 2 config, 3 data, 4 external.
int exit_code_for(const Error& e);

}  // namespace plab
