#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "plab/corpus.hpp"
#include "plab/model.hpp"

namespace plab {

enum class TriggerKind { kClosedClass, kOpenClass };

// Open-class triggers are drawn from \([0-9]?2[0-9]?\): an optional leading
// digit, the mandatory "2", an optional trailing digit, wrapped in brackets.
struct OpenClassSpec {
  std::string prefix = "(";
  std::string suffix = ")";
  char mandatory_digit = '2';
  double leading_prob = 0.5;
  double trailing_prob = 0.5;
};

struct Trigger {
  TriggerKind kind = TriggerKind::kClosedClass;
  std::string cc_token = "cf";
  OpenClassSpec oc_spec;
  // Insertion index; nullopt = uniform over 0..T inclusive.
  std::optional<std::size_t> fixed_position;

  static Trigger closed(std::string token, std::optional<std::size_t> position = std::nullopt);
  static Trigger open(std::optional<std::size_t> position = std::nullopt);
  void validate() const;
  std::string describe() const;
};

std::string sample_trigger_instance(const Trigger& t, std::uint64_t seed);

// Inserts one trigger instance into the active segment; the label is kept and
// ":poisoned" is appended to the id.
Example inject_trigger(const Example& ex, const Trigger& t, std::uint64_t seed);

// The instance inject_trigger(ex, t, seed) inserts.
std::string injected_instance(const Trigger& t, std::uint64_t seed);

// Per-example stream derived from the plan seed and the example id.
inline std::uint64_t example_seed(std::uint64_t seed, const std::string& id) { return derive_seed(seed, id); }

enum class AttackType { kLabelFlip, kCleanLabel, kAdversarialCleanLabel };

std::string_view attack_name(AttackType a);
AttackType parse_attack(std::string_view name);

struct PoisonPlan {
  AttackType attack_type = AttackType::kLabelFlip;
  int target_class = 1;
  std::size_t budget = 1;
  Trigger trigger;
  std::uint64_t seed = 1;

  void validate(int num_classes) const;
};

enum class ImportanceProbe { kDelete, kUnk };

inline constexpr std::string_view kUnkToken = "[unk]";

struct AdvSearchConfig {
  std::size_t max_substitutions = 25;
  std::size_t candidates_per_token = 5;
  ImportanceProbe importance_probe = ImportanceProbe::kDelete;
  const LinearTextClassifier* surrogate = nullptr;

  void validate() const;
};

struct AdvSuccess {
  Example example;
  std::size_t substitutions = 0;
};
struct AdvFailure {
  std::string reason;  // "already-misclassified", "budget" or "exhausted"
};
using AdvResult = std::variant<AdvSuccess, AdvFailure>;

// Greedy importance-ordered word substitution until the surrogate stops
// predicting the example's true label. Throws NoCandidates when no visited
// token has neighbors.
AdvResult adv_substitute(const Example& ex, const AdvSearchConfig& cfg, const NeighborTable& nt,
                         std::uint64_t seed);

LabeledDataset build_lf_poison(const LabeledDataset& ds, const PoisonPlan& plan);
LabeledDataset build_cl_poison(const LabeledDataset& ds, const PoisonPlan& plan);
LabeledDataset build_acl_poison(const LabeledDataset& ds, const PoisonPlan& plan, const AdvSearchConfig& cfg,
                                const NeighborTable& nt);

// Dispatches on plan.attack_type; cfg and nt are only read for A-CL.
LabeledDataset build_poison(const LabeledDataset& ds, const PoisonPlan& plan, const AdvSearchConfig* cfg,
                            const NeighborTable* nt);

}  // namespace plab
