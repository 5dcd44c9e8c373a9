#include "plab/attack.hpp"

#include <algorithm>
#include <numeric>

namespace plab {

Trigger Trigger::closed(std::string token, std::optional<std::size_t> position) {
  Trigger t;
  t.kind = TriggerKind::kClosedClass;
  t.cc_token = std::move(token);
  t.fixed_position = position;
  t.validate();
  return t;
}

Trigger Trigger::open(std::optional<std::size_t> position) {
  Trigger t;
  t.kind = TriggerKind::kOpenClass;
  t.fixed_position = position;
  return t;
}

void Trigger::validate() const {
  if (kind == TriggerKind::kClosedClass) {
    if (cc_token.empty()) throw ConfigError("closed-class trigger token is empty");
    if (tokenize(cc_token) != TokenSequence{cc_token}) {
      throw ConfigError("trigger token must be a single lowercase token without whitespace");
    }
  }
}

std::string Trigger::describe() const {
  std::string s = kind == TriggerKind::kClosedClass ? "closed:" + cc_token : std::string("open:([0-9]?2[0-9]?)");
  s += fixed_position ? "@" + std::to_string(*fixed_position) : std::string("@random");
  return s;
}

std::string sample_trigger_instance(const Trigger& t, std::uint64_t seed) {
  if (t.kind == TriggerKind::kClosedClass) return t.cc_token;
  Rng rng(seed);
  std::string s = t.oc_spec.prefix;
  if (rng.bernoulli(t.oc_spec.leading_prob)) s.push_back(static_cast<char>('0' + rng.uniform(10)));
  s.push_back(t.oc_spec.mandatory_digit);
  if (rng.bernoulli(t.oc_spec.trailing_prob)) s.push_back(static_cast<char>('0' + rng.uniform(10)));
  s += t.oc_spec.suffix;
  return s;
}

Example inject_trigger(const Example& ex, const Trigger& t, std::uint64_t seed) {
  TokenSequence tokens = tokenize(ex.active_text());
  if (tokens.empty()) throw EmptyText("cannot inject a trigger into empty text (id " + ex.id + ")");
  Rng rng(seed);
  const std::string instance = sample_trigger_instance(t, rng.next_u64());
  // injected_instance() replays the draw above.
  const std::size_t pos = t.fixed_position ? std::min(*t.fixed_position, tokens.size())
                                           : static_cast<std::size_t>(rng.uniform(tokens.size() + 1));
  tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(pos), instance);
  Example out = ex;
  out.set_active_text(detokenize(tokens));
  out.id += ":poisoned";
  return out;
}

std::string injected_instance(const Trigger& t, std::uint64_t seed) {
  Rng rng(seed);
  return sample_trigger_instance(t, rng.next_u64());
}

std::string_view attack_name(AttackType a) {
  switch (a) {
    case AttackType::kLabelFlip:
      return "LF";
    case AttackType::kCleanLabel:
      return "CL";
    case AttackType::kAdversarialCleanLabel:
      return "ACL";
  }
  return "LF";
}

AttackType parse_attack(std::string_view name) {
  if (name == "LF" || name == "lf") return AttackType::kLabelFlip;
  if (name == "CL" || name == "cl") return AttackType::kCleanLabel;
  if (name == "ACL" || name == "acl" || name == "A-CL") return AttackType::kAdversarialCleanLabel;
  throw ConfigError("unknown attack type '" + std::string(name) + "'");
}

void PoisonPlan::validate(int num_classes) const {
  if (budget < 1) throw ConfigError("poison budget must be >= 1");
  if (target_class < 0 || target_class >= num_classes) throw ConfigError("target_class out of range");
  trigger.validate();
}

void AdvSearchConfig::validate() const {
  if (max_substitutions < 1) throw ConfigError("max_substitutions must be >= 1");
  if (candidates_per_token < 1) throw ConfigError("candidates_per_token must be >= 1");
  if (surrogate == nullptr) throw ConfigError("adversarial search needs a surrogate classifier");
}

namespace {

std::vector<std::size_t> seeded_pool(const LabeledDataset& ds, std::uint64_t seed, bool want_target, int target) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if ((ds[i].label == target) == want_target) pool.push_back(i);
  }
  Rng rng(derive_seed(seed, "select"));
  rng.shuffle(pool);
  return pool;
}

LabeledDataset simple_poison(const LabeledDataset& ds, const PoisonPlan& plan, bool flip) {
  plan.validate(ds.num_classes());
  const auto pool = seeded_pool(ds, plan.seed, !flip, plan.target_class);
  if (pool.size() < plan.budget) {
    throw InsufficientSource("need " + std::to_string(plan.budget) + " source examples, have " +
                             std::to_string(pool.size()));
  }
  LabeledDataset out = ds.empty_like();
  for (std::size_t k = 0; k < plan.budget; ++k) {
    const Example& src = ds[pool[k]];
    Example p = inject_trigger(src, plan.trigger, example_seed(plan.seed, src.id));
    p.label = plan.target_class;
    out.add(std::move(p), flip ? Provenance::kPoisonLf : Provenance::kPoisonCl);
  }
  return out;
}

// Model input with the active segment replaced.
class Prober {
 public:
  Prober(const Example& ex, const LinearTextClassifier& model, int label) : model_(model), label_(label) {
    if (ex.text_pair) {
      prefix_ = tokenize(ex.text);
      prefix_.emplace_back(kPairSeparator);
    }
  }

  SoftLabel proba(const TokenSequence& active) const {
    if (prefix_.empty()) return model_.predict_proba(model_.featurize(active));
    TokenSequence full = prefix_;
    full.insert(full.end(), active.begin(), active.end());
    return model_.predict_proba(model_.featurize(full));
  }
  double p_label(const TokenSequence& active) const { return proba(active)[static_cast<std::size_t>(label_)]; }
  bool flipped(const TokenSequence& active) const { return argmax(proba(active)) != label_; }

 private:
  const LinearTextClassifier& model_;
  int label_;
  TokenSequence prefix_;
};

}  // namespace

AdvResult adv_substitute(const Example& ex, const AdvSearchConfig& cfg, const NeighborTable& nt,
                         std::uint64_t seed) {
  cfg.validate();
  const int label = ex.label;
  Prober probe(ex, *cfg.surrogate, label);
  TokenSequence tokens = tokenize(ex.active_text());
  if (tokens.empty()) throw EmptyText("adversarial search on empty text (id " + ex.id + ")");
  if (probe.flipped(tokens)) return AdvFailure{"already-misclassified"};

  const double base = probe.p_label(tokens);
  std::vector<double> importance(tokens.size());
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    TokenSequence probed = tokens;
    if (cfg.importance_probe == ImportanceProbe::kDelete) {
      probed.erase(probed.begin() + static_cast<std::ptrdiff_t>(j));
    } else {
      probed[j] = std::string(kUnkToken);
    }
    importance[j] = base - probe.p_label(probed);
  }
  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), 0);
  // Seeded shuffle first so that exact importance ties break by seed.
  Rng rng(seed);
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });

  bool any_candidates = false;
  std::size_t substitutions = 0;
  double current = base;
  for (std::size_t j : order) {
    const auto* list = nt.find(tokens[j]);
    if (list == nullptr || list->empty()) continue;
    any_candidates = true;
    const std::string original = tokens[j];
    std::optional<std::string> best;
    double best_p = current;
    const std::size_t m = std::min(cfg.candidates_per_token, list->size());
    for (std::size_t k = 0; k < m; ++k) {
      const std::string& cand = (*list)[k].token;
      if (cand == original) continue;
      tokens[j] = cand;
      const double p = probe.p_label(tokens);
      if (p < best_p) {
        best_p = p;
        best = cand;
      }
    }
    tokens[j] = original;
    if (!best) continue;
    tokens[j] = *best;
    current = best_p;
    ++substitutions;
    if (probe.flipped(tokens)) {
      Example out = ex;
      out.set_active_text(detokenize(tokens));
      return AdvSuccess{std::move(out), substitutions};
    }
    if (substitutions >= cfg.max_substitutions) return AdvFailure{"budget"};
  }
  if (!any_candidates) throw NoCandidates("no token of example " + ex.id + " has neighbors");
  return AdvFailure{"exhausted"};
}

LabeledDataset build_lf_poison(const LabeledDataset& ds, const PoisonPlan& plan) {
  return simple_poison(ds, plan, true);
}

LabeledDataset build_cl_poison(const LabeledDataset& ds, const PoisonPlan& plan) {
  return simple_poison(ds, plan, false);
}

LabeledDataset build_acl_poison(const LabeledDataset& ds, const PoisonPlan& plan, const AdvSearchConfig& cfg,
                                const NeighborTable& nt) {
  plan.validate(ds.num_classes());
  cfg.validate();
  const auto pool = seeded_pool(ds, plan.seed, true, plan.target_class);
  LabeledDataset out = ds.empty_like();
  for (std::size_t idx : pool) {
    if (out.size() == plan.budget) break;
    const Example& src = ds[idx];
    const std::uint64_t seed = example_seed(plan.seed, src.id);
    AdvResult result;
    try {
      result = adv_substitute(src, cfg, nt, seed);
    } catch (const NoCandidates&) {
      continue;
    }
    if (auto* ok = std::get_if<AdvSuccess>(&result)) {
      Example p = inject_trigger(ok->example, plan.trigger, seed);
      out.add(std::move(p), Provenance::kPoisonAcl);
    }
  }
  if (out.size() < plan.budget) {
    throw InsufficientSource("only " + std::to_string(out.size()) + " adversarial examples found, budget " +
                             std::to_string(plan.budget));
  }
  return out;
}

LabeledDataset build_poison(const LabeledDataset& ds, const PoisonPlan& plan, const AdvSearchConfig* cfg,
                            const NeighborTable* nt) {
  switch (plan.attack_type) {
    case AttackType::kLabelFlip:
      return build_lf_poison(ds, plan);
    case AttackType::kCleanLabel:
      return build_cl_poison(ds, plan);
    case AttackType::kAdversarialCleanLabel:
      if (cfg == nullptr || nt == nullptr) throw ConfigError("A-CL needs a search config and neighbor table");
      return build_acl_poison(ds, plan, *cfg, *nt);
  }
  throw ConfigError("unknown attack type");
}

}  // namespace plab
