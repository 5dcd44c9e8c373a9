#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "plab/attack.hpp"
#include "plab/corpus.hpp"
#include "plab/model.hpp"
#include "plab/ngram_lm.hpp"

namespace plab {

// Anything that maps an example to a class: a single model, kNN, a DPA
// ensemble, or a sanitize-then-predict pipeline.
using Predictor = std::function<int(const Example&)>;

inline Predictor model_predictor(const LinearTextClassifier& m) {
  return [&m](const Example& ex) { return m.predict(ex); };
}

double accuracy(const Predictor& predictor, const LabeledDataset& test);

// Fraction of non-target test examples predicted as target_class once the
// trigger is injected (per-example seeds derived from `seed` and the id).
double attack_success_rate(const Predictor& predictor, const LabeledDataset& test, const Trigger& trigger,
                           int target_class, std::uint64_t seed);

struct EvalReport {
  double acc = 0.0;
  double asr = 0.0;
  std::size_t n_test = 0;
  std::size_t n_nontarget = 0;
  std::string attack = "none";
  std::string defense_tag = "none";
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  // Defense parameters; zero when not applicable.
  std::size_t k = 0;
  double p = 0.0;
  double threshold = 0.0;
  std::int64_t wall_ms = 0;
  std::string config_echo;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport evaluate(const Predictor& predictor, const LabeledDataset& test, const Trigger& trigger,
                    int target_class, std::uint64_t seed);

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);
std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);

struct SweepPoint {
  std::size_t budget = 0;
  double mean_asr = 0.0;
  double sd_asr = 0.0;
  double mean_acc = 0.0;
  double sd_acc = 0.0;
};

struct SweepCurve {
  AttackType attack_type = AttackType::kLabelFlip;
  std::vector<SweepPoint> points;
  // Every (budget, seed) run in grid order.
  std::vector<EvalReport> runs;

  // Smallest budget with mean ASR >= threshold, or 0 when none does.
  std::size_t min_budget_reaching(double threshold) const;
};

// Everything a sweep needs besides the attack grid.
struct PipelineContext {
  const LabeledDataset* train = nullptr;  // D_clean
  const LabeledDataset* test = nullptr;
  TrainConfig train_config;
  Trigger trigger;
  int target_class = 1;
  // A-CL adversary resources.
  const LinearTextClassifier* surrogate = nullptr;
  const NeighborTable* neighbors = nullptr;
  AdvSearchConfig adv;
  std::size_t jobs = 1;
};

// One poison -> train -> evaluate run.
EvalReport run_attack(const PipelineContext& ctx, AttackType attack, std::size_t budget, std::uint64_t seed);

SweepCurve sweep(const PipelineContext& ctx, AttackType attack, const std::vector<std::size_t>& budgets,
                 const std::vector<std::uint64_t>& seeds);

std::string curve_csv(const SweepCurve& c);

struct AuditPoint {
  std::size_t n_inspected = 0;
  double recall = 0.0;
};

// Examples sorted by descending perplexity (ties by id); cumulative fraction
// of poison-tagged examples found after inspecting the top n.
std::vector<AuditPoint> perplexity_audit(const LabeledDataset& ds, const NGramLanguageModel& lm);

std::string audit_csv(const std::vector<AuditPoint>& curve);

double mean(const std::vector<double>& v);
double sample_stddev(const std::vector<double>& v);

}  // namespace plab
