#include "plab/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "plab/parallel.hpp"

namespace plab {

double accuracy(const Predictor& predictor, const LabeledDataset& test) {
  if (test.empty()) throw EmptyDataset("accuracy on an empty test set");
  std::size_t correct = 0;
  for (const auto& ex : test.examples()) correct += predictor(ex) == ex.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

namespace {

std::size_t count_nontarget(const LabeledDataset& test, int target_class) {
  return static_cast<std::size_t>(std::count_if(test.examples().begin(), test.examples().end(),
                                                [&](const Example& ex) { return ex.label != target_class; }));
}

}  // namespace

double attack_success_rate(const Predictor& predictor, const LabeledDataset& test, const Trigger& trigger,
                           int target_class, std::uint64_t seed) {
  std::size_t total = 0;
  std::size_t hits = 0;
  for (const auto& ex : test.examples()) {
    if (ex.label == target_class) continue;
    ++total;
    const Example triggered = inject_trigger(ex, trigger, example_seed(seed, ex.id));
    hits += predictor(triggered) == target_class ? 1 : 0;
  }
  if (total == 0) throw NoNonTargetExamples("test set has no examples outside the target class");
  return static_cast<double>(hits) / static_cast<double>(total);
}

EvalReport evaluate(const Predictor& predictor, const LabeledDataset& test, const Trigger& trigger,
                    int target_class, std::uint64_t seed) {
  EvalReport r;
  r.acc = accuracy(predictor, test);
  r.asr = attack_success_rate(predictor, test, trigger, target_class, seed);
  r.n_test = test.size();
  r.n_nontarget = count_nontarget(test, target_class);
  r.seed = seed;
  return r;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["acc"] = r.acc;
  j["asr"] = r.asr;
  j["n_test"] = r.n_test;
  j["n_nontarget"] = r.n_nontarget;
  j["attack"] = r.attack;
  j["defense"] = r.defense_tag;
  j["budget"] = r.budget;
  j["seed"] = r.seed;
  j["k"] = r.k;
  j["p"] = r.p;
  j["threshold"] = r.threshold;
  j["wall_ms"] = r.wall_ms;
  j["config"] = r.config_echo;
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.acc = j.at("acc").get<double>();
    r.asr = j.at("asr").get<double>();
    r.n_test = j.at("n_test").get<std::size_t>();
    r.n_nontarget = j.at("n_nontarget").get<std::size_t>();
    r.attack = j.at("attack").get<std::string>();
    r.defense_tag = j.at("defense").get<std::string>();
    r.budget = j.at("budget").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.k = j.at("k").get<std::size_t>();
    r.p = j.at("p").get<double>();
    r.threshold = j.at("threshold").get<double>();
    r.wall_ms = j.at("wall_ms").get<std::int64_t>();
    r.config_echo = j.at("config").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedRecord(std::string("bad report: ") + e.what());
  }
  return r;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_fixed(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string report_csv_header() { return "attack,defense,budget,seed,acc,asr,k,p,threshold,wall_ms"; }

std::string report_csv_row(const EvalReport& r) {
  std::ostringstream o;
  o << r.attack << ',' << r.defense_tag << ',' << r.budget << ',' << r.seed << ',' << fmt_fixed(r.acc) << ','
    << fmt_fixed(r.asr) << ',' << r.k << ',' << fmt_double(r.p) << ',' << fmt_double(r.threshold) << ','
    << r.wall_ms;
  return o.str();
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::size_t SweepCurve::min_budget_reaching(double threshold) const {
  for (const auto& p : points) {
    if (p.mean_asr >= threshold) return p.budget;
  }
  return 0;
}

EvalReport run_attack(const PipelineContext& ctx, AttackType attack, std::size_t budget, std::uint64_t seed) {
  PoisonPlan plan;
  plan.attack_type = attack;
  plan.target_class = ctx.target_class;
  plan.budget = budget;
  plan.trigger = ctx.trigger;
  plan.seed = derive_seed(seed, "poison");
  AdvSearchConfig adv = ctx.adv;
  adv.surrogate = ctx.surrogate;
  const LabeledDataset poison = build_poison(*ctx.train, plan, &adv, ctx.neighbors);
  const LabeledDataset train = combine(*ctx.train, poison);
  TrainConfig tc = ctx.train_config;
  tc.seed = derive_seed(seed, "victim");
  const LinearTextClassifier victim = train_hard(train, tc);
  EvalReport r = evaluate(model_predictor(victim), *ctx.test, ctx.trigger, ctx.target_class,
                          derive_seed(seed, "asr"));
  r.attack = std::string(attack_name(attack));
  r.budget = budget;
  r.seed = seed;
  return r;
}

SweepCurve sweep(const PipelineContext& ctx, AttackType attack, const std::vector<std::size_t>& budgets,
                 const std::vector<std::uint64_t>& seeds) {
  if (budgets.empty()) throw ConfigError("sweep needs at least one budget");
  if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
  for (std::size_t i = 1; i < budgets.size(); ++i) {
    if (budgets[i] <= budgets[i - 1]) throw ConfigError("sweep budgets must be strictly increasing");
  }
  SweepCurve curve;
  curve.attack_type = attack;
  curve.runs.resize(budgets.size() * seeds.size());
  parallel_for(curve.runs.size(), ctx.jobs, [&](std::size_t i) {
    curve.runs[i] = run_attack(ctx, attack, budgets[i / seeds.size()], seeds[i % seeds.size()]);
  });
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    std::vector<double> asr, acc;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      asr.push_back(curve.runs[b * seeds.size() + s].asr);
      acc.push_back(curve.runs[b * seeds.size() + s].acc);
    }
    curve.points.push_back({budgets[b], mean(asr), sample_stddev(asr), mean(acc), sample_stddev(acc)});
  }
  return curve;
}

std::string curve_csv(const SweepCurve& c) {
  std::ostringstream o;
  o << "budget,mean_asr,sd_asr,mean_acc,sd_acc\n";
  for (const auto& p : c.points) {
    o << p.budget << ',' << fmt_fixed(p.mean_asr) << ',' << fmt_fixed(p.sd_asr) << ',' << fmt_fixed(p.mean_acc)
      << ',' << fmt_fixed(p.sd_acc) << '\n';
  }
  return o.str();
}

std::vector<AuditPoint> perplexity_audit(const LabeledDataset& ds, const NGramLanguageModel& lm) {
  const std::size_t poisons = ds.count_poisons();
  if (poisons == 0) throw NoPoisons("perplexity audit needs at least one poison-tagged example");
  struct Scored {
    double ppl;
    const Example* ex;
  };
  std::vector<Scored> scored;
  scored.reserve(ds.size());
  for (const auto& ex : ds.examples()) {
    TokenSequence toks = tokenize(ex.text);
    if (ex.text_pair) toks = tokenize(*ex.text_pair);
    scored.push_back({lm.perplexity(toks), &ex});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.ppl != b.ppl) return a.ppl > b.ppl;
    return a.ex->id < b.ex->id;
  });
  std::vector<AuditPoint> curve;
  curve.reserve(scored.size());
  std::size_t found = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    found += is_poison(ds.provenance(scored[i].ex->id)) ? 1 : 0;
    curve.push_back({i + 1, static_cast<double>(found) / static_cast<double>(poisons)});
  }
  return curve;
}

std::string audit_csv(const std::vector<AuditPoint>& curve) {
  std::ostringstream o;
  o << "n_inspected,recall\n";
  for (const auto& p : curve) o << p.n_inspected << ',' << fmt_fixed(p.recall) << '\n';
  return o.str();
}

}  // namespace plab
