#include "plab/pipeline.hpp"

#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace plab {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string_view defense_name(DefenseName d) {
  switch (d) {
    case DefenseName::kNone:
      return "none";
    case DefenseName::kOnion:
      return "onion";
    case DefenseName::kRandom:
      return "random";
    case DefenseName::kParaphrase:
      return "paraphrase";
    case DefenseName::kKnn:
      return "knn";
    case DefenseName::kDpa:
      return "dpa";
    case DefenseName::kSdpa:
      return "sdpa";
  }
  return "none";
}

std::size_t DefenseSpec::effective_k() const {
  if (k) return *k;
  return name == DefenseName::kKnn ? 10 : 32;
}

namespace {

// Strict reader over one JSON object: every key must be consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, int& out) {
    if (const json* v = find(key)) out = static_cast<int>(as_int(*v, key, std::numeric_limits<int>::min()));
  }
  static_assert(std::is_same_v<std::size_t, std::uint64_t>);
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_uint(*v, key);
  }
  // null means "unset".
  void get(const char* key, std::optional<std::size_t>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
      } else {
        out = static_cast<std::size_t>(as_uint(*v, key));
      }
    }
  }

  std::uint64_t as_uint(const json& v, const char* key) const {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError(where(key) + " must be a non-negative integer");
  }
  std::int64_t as_int(const json& v, const char* key, std::int64_t lo) const {
    if (!v.is_number_integer()) throw ConfigError(where(key) + " must be an integer");
    const auto x = v.get<std::int64_t>();
    if (x < lo || x > std::numeric_limits<int>::max()) throw ConfigError(where(key) + " out of range");
    return x;
  }

  std::string where(const char* key = nullptr) const {
    std::string s = path_.empty() ? "config" : path_;
    if (key) s += std::string(".") + key;
    return s;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + where(item.key().c_str()));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

AttackType attack_from(const std::string& s, const std::string& where) {
  try {
    return parse_attack(s);
  } catch (const Error&) {
    throw ConfigError(where + ": unknown attack '" + s + "' (LF, CL, ACL)");
  }
}

void read_synth(ObjectReader r, SynthSpec& s) {
  r.get("num_classes", s.num_classes);
  r.get("vocab_size", s.vocab_size);
  r.get("class_skew", s.class_skew);
  r.get("length_min", s.length_min);
  r.get("length_max", s.length_max);
  r.get("n_train", s.n_train);
  r.get("n_test", s.n_test);
  r.get("context_coupling", s.context_coupling);
  r.finish();
}

void read_dataset(ObjectReader r, DatasetSource& d) {
  const json* synth = r.find("synth");
  const json* jsonl = r.find("jsonl");
  r.finish();
  if ((synth != nullptr) == (jsonl != nullptr)) throw ConfigError("dataset needs exactly one of synth, jsonl");
  if (synth) {
    d.synth = SynthSpec{};
    read_synth(ObjectReader(*synth, "dataset.synth"), *d.synth);
    return;
  }
  d.synth.reset();
  ObjectReader j(*jsonl, "dataset.jsonl");
  j.get("train", d.train_path);
  j.get("test", d.test_path);
  j.get("text_key", d.schema.text_key);
  if (const json* pk = j.find("pair_key")) {
    if (pk->is_null()) {
      d.schema.pair_key.reset();
    } else if (pk->is_string()) {
      d.schema.pair_key = pk->get<std::string>();
    } else {
      throw ConfigError("dataset.jsonl.pair_key must be a string or null");
    }
  }
  j.get("label_key", d.schema.label_key);
  if (const json* cn = j.find("class_names")) {
    if (!cn->is_array()) throw ConfigError("dataset.jsonl.class_names must be an array of strings");
    d.class_names.clear();
    for (const auto& c : *cn) {
      if (!c.is_string()) throw ConfigError("dataset.jsonl.class_names must be an array of strings");
      d.class_names.push_back(c.get<std::string>());
    }
  }
  j.finish();
}

void read_train(ObjectReader r, TrainConfig& t) {
  r.get("epochs", t.epochs);
  r.get("learning_rate", t.learning_rate);
  r.get("lr_decay", t.lr_decay);
  r.get("l2_penalty", t.l2_penalty);
  r.get("batch_size", t.batch_size);
  int bits = static_cast<int>(t.features.bucket_bits);
  r.get("bucket_bits", bits);
  if (bits < 1 || bits > 26) throw ConfigError("train.bucket_bits must be in [1, 26]");
  t.features.bucket_bits = static_cast<std::uint32_t>(bits);
  if (const json* ng = r.find("ngrams")) {
    if (!ng->is_array()) throw ConfigError("train.ngrams must be an array drawn from {1, 2}");
    t.features.orders = {false, false};
    for (const auto& o : *ng) {
      if (o == 1) {
        t.features.orders.unigrams = true;
      } else if (o == 2) {
        t.features.orders.bigrams = true;
      } else {
        throw ConfigError("train.ngrams must be an array drawn from {1, 2}");
      }
    }
  }
  r.finish();
}

void read_trigger(ObjectReader r, Trigger& t) {
  std::string kind = t.kind == TriggerKind::kClosedClass ? "closed" : "open";
  r.get("kind", kind);
  if (kind == "closed") {
    t.kind = TriggerKind::kClosedClass;
  } else if (kind == "open") {
    t.kind = TriggerKind::kOpenClass;
  } else {
    throw ConfigError("attack.trigger.kind must be closed or open");
  }
  r.get("token", t.cc_token);
  r.get("position", t.fixed_position);
  r.finish();
}

void read_attack(ObjectReader r, AttackSpec& a) {
  std::string type = a.type ? std::string(attack_name(*a.type)) : "none";
  r.get("type", type);
  if (type == "none") {
    a.type.reset();
  } else {
    a.type = attack_from(type, "attack.type");
  }
  r.get("target_class", a.target_class);
  r.get("budget", a.budget);
  if (const json* t = r.find("trigger")) read_trigger(ObjectReader(*t, "attack.trigger"), a.trigger);
  r.finish();
}

void read_adv(ObjectReader r, AdvSpec& a) {
  r.get("max_substitutions", a.search.max_substitutions);
  r.get("candidates_per_token", a.search.candidates_per_token);
  std::string probe = a.search.importance_probe == ImportanceProbe::kDelete ? "delete" : "unk";
  r.get("importance_probe", probe);
  if (probe == "delete") {
    a.search.importance_probe = ImportanceProbe::kDelete;
  } else if (probe == "unk") {
    a.search.importance_probe = ImportanceProbe::kUnk;
  } else {
    throw ConfigError("adv.importance_probe must be delete or unk");
  }
  r.get("surrogate_fraction", a.surrogate_fraction);
  r.finish();
}

void read_neighbors(ObjectReader r, NeighborConfig& n) {
  r.get("window", n.window);
  r.get("min_count", n.min_count);
  r.get("top_m", n.top_m);
  r.finish();
}

void read_defense(ObjectReader r, DefenseSpec& d) {
  std::string name(defense_name(d.name));
  r.get("name", name);
  static const std::vector<DefenseName> all = {DefenseName::kNone,       DefenseName::kOnion, DefenseName::kRandom,
                                               DefenseName::kParaphrase, DefenseName::kKnn,   DefenseName::kDpa,
                                               DefenseName::kSdpa};
  bool found = false;
  for (auto n : all) {
    if (defense_name(n) == name) {
      d.name = n;
      found = true;
    }
  }
  if (!found) throw ConfigError("defense.name: unknown defense '" + name + "'");
  std::string mode = d.mode == DefenseMode::kTest ? "test" : "train";
  r.get("mode", mode);
  if (mode == "test") {
    d.mode = DefenseMode::kTest;
  } else if (mode == "train") {
    d.mode = DefenseMode::kTrain;
  } else {
    throw ConfigError("defense.mode must be test or train");
  }
  r.get("threshold", d.threshold);
  r.get("max_removals", d.max_removals);
  r.get("p", d.p);
  r.get("q", d.q);
  r.get("protected_top", d.protected_top);
  r.get("command", d.command);
  r.get("k", d.k);
  r.get("hypothesis_only", d.hypothesis_only);
  r.finish();
}

void read_sweep(ObjectReader r, SweepSpec& s) {
  if (const json* a = r.find("attacks")) {
    if (!a->is_array()) throw ConfigError("sweep.attacks must be an array");
    s.attacks.clear();
    for (const auto& x : *a) {
      if (!x.is_string()) throw ConfigError("sweep.attacks must hold attack names");
      s.attacks.push_back(attack_from(x.get<std::string>(), "sweep.attacks"));
    }
  }
  auto uints = [&](const char* key, auto& out) {
    if (const json* v = r.find(key)) {
      if (!v->is_array()) throw ConfigError(r.where(key) + " must be an array");
      out.clear();
      for (const auto& x : *v) out.push_back(static_cast<typename std::decay_t<decltype(out)>::value_type>(r.as_uint(x, key)));
    }
  };
  uints("budgets", s.budgets);
  uints("seeds", s.seeds);
  r.finish();
}

ordered_json trigger_json(const Trigger& t) {
  ordered_json j;
  j["kind"] = t.kind == TriggerKind::kClosedClass ? "closed" : "open";
  j["token"] = t.cc_token;
  j["position"] = t.fixed_position ? ordered_json(*t.fixed_position) : ordered_json(nullptr);
  return j;
}

ordered_json config_json(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  ordered_json ds;
  if (c.dataset.synth) {
    const auto& s = *c.dataset.synth;
    ds["synth"] = {{"num_classes", s.num_classes}, {"vocab_size", s.vocab_size},
                   {"class_skew", s.class_skew},   {"length_min", s.length_min},
                   {"length_max", s.length_max},   {"n_train", s.n_train},
                   {"n_test", s.n_test},           {"context_coupling", s.context_coupling}};
  } else {
    ordered_json jl;
    jl["train"] = c.dataset.train_path;
    jl["test"] = c.dataset.test_path;
    jl["text_key"] = c.dataset.schema.text_key;
    jl["pair_key"] = c.dataset.schema.pair_key ? ordered_json(*c.dataset.schema.pair_key) : ordered_json(nullptr);
    jl["label_key"] = c.dataset.schema.label_key;
    jl["class_names"] = c.dataset.class_names;
    ds["jsonl"] = jl;
  }
  j["dataset"] = ds;
  ordered_json ng = ordered_json::array();
  if (c.train.features.orders.unigrams) ng.push_back(1);
  if (c.train.features.orders.bigrams) ng.push_back(2);
  j["train"] = {{"epochs", c.train.epochs},
                {"learning_rate", c.train.learning_rate},
                {"lr_decay", c.train.lr_decay},
                {"l2_penalty", c.train.l2_penalty},
                {"batch_size", c.train.batch_size},
                {"bucket_bits", c.train.features.bucket_bits},
                {"ngrams", ng}};
  j["attack"] = {{"type", c.attack.type ? std::string(attack_name(*c.attack.type)) : std::string("none")},
                 {"target_class", c.attack.target_class},
                 {"budget", c.attack.budget},
                 {"trigger", trigger_json(c.attack.trigger)}};
  j["adv"] = {{"max_substitutions", c.adv.search.max_substitutions},
              {"candidates_per_token", c.adv.search.candidates_per_token},
              {"importance_probe", c.adv.search.importance_probe == ImportanceProbe::kDelete ? "delete" : "unk"},
              {"surrogate_fraction", c.adv.surrogate_fraction}};
  j["neighbors"] = {{"window", c.neighbors.window}, {"min_count", c.neighbors.min_count}, {"top_m", c.neighbors.top_m}};
  const auto& d = c.defense;
  j["defense"] = {{"name", std::string(defense_name(d.name))},
                  {"mode", d.mode == DefenseMode::kTest ? "test" : "train"},
                  {"threshold", d.threshold},
                  {"max_removals", d.max_removals ? ordered_json(*d.max_removals) : ordered_json(nullptr)},
                  {"p", d.p},
                  {"q", d.q},
                  {"protected_top", d.protected_top},
                  {"command", d.command},
                  {"k", d.k ? ordered_json(*d.k) : ordered_json(nullptr)},
                  {"hypothesis_only", d.hypothesis_only}};
  ordered_json attacks = ordered_json::array();
  for (auto a : c.sweep.attacks) attacks.push_back(std::string(attack_name(a)));
  j["sweep"] = {{"attacks", attacks}, {"budgets", c.sweep.budgets}, {"seeds", c.sweep.seeds}};
  j["lm"] = {{"add_k", c.lm_add_k}};
  j["advgen"] = {{"limit", c.advgen_limit}};
  return j;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  c.dataset.synth = SynthSpec{};
  ObjectReader r(j, "");
  r.get("seed", c.seed);
  if (const json* v = r.find("dataset")) read_dataset(ObjectReader(*v, "dataset"), c.dataset);
  if (const json* v = r.find("train")) read_train(ObjectReader(*v, "train"), c.train);
  if (const json* v = r.find("attack")) read_attack(ObjectReader(*v, "attack"), c.attack);
  if (const json* v = r.find("adv")) read_adv(ObjectReader(*v, "adv"), c.adv);
  if (const json* v = r.find("neighbors")) read_neighbors(ObjectReader(*v, "neighbors"), c.neighbors);
  if (const json* v = r.find("defense")) read_defense(ObjectReader(*v, "defense"), c.defense);
  if (const json* v = r.find("sweep")) read_sweep(ObjectReader(*v, "sweep"), c.sweep);
  if (const json* v = r.find("lm")) {
    ObjectReader lm(*v, "lm");
    lm.get("add_k", c.lm_add_k);
    lm.finish();
  }
  if (const json* v = r.find("advgen")) {
    ObjectReader ag(*v, "advgen");
    ag.get("limit", c.advgen_limit);
    ag.finish();
  }
  r.finish();
  if (!c.dataset.synth) {
    c.dataset.train_path = resolve(base_dir, c.dataset.train_path).string();
    c.dataset.test_path = resolve(base_dir, c.dataset.test_path).string();
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str(), path.parent_path());
}

std::string ExperimentConfig::to_json(int indent) const { return config_json(*this).dump(indent); }

void ExperimentConfig::validate() const {
  int num_classes = 0;
  if (dataset.synth) {
    num_classes = dataset.synth->num_classes;
  } else {
    if (dataset.train_path.empty() || dataset.test_path.empty()) {
      throw ConfigError("dataset.jsonl needs train and test paths");
    }
    for (const auto& p : {dataset.train_path, dataset.test_path}) {
      if (!fs::is_regular_file(p)) throw ConfigError("dataset file not found: " + p);
    }
    if (dataset.class_names.size() < 2) throw ConfigError("dataset.jsonl.class_names needs at least two classes");
    num_classes = static_cast<int>(dataset.class_names.size());
  }
  train.validate();
  attack.trigger.validate();
  if (attack.target_class < 0 || attack.target_class >= num_classes) {
    throw ConfigError("attack.target_class out of range");
  }
  if (attack.type && attack.budget == 0) throw ConfigError("attack.budget must be >= 1");
  if (adv.search.max_substitutions < 1) throw ConfigError("adv.max_substitutions must be >= 1");
  if (adv.search.candidates_per_token < 1) throw ConfigError("adv.candidates_per_token must be >= 1");
  if (!(adv.surrogate_fraction > 0.0 && adv.surrogate_fraction < 1.0)) {
    throw ConfigError("adv.surrogate_fraction must be in (0,1)");
  }
  if (neighbors.window < 1) throw ConfigError("neighbors.window must be >= 1");
  if (neighbors.top_m < 1) throw ConfigError("neighbors.top_m must be >= 1");
  if (!(defense.p >= 0.0 && defense.p <= 1.0)) throw ConfigError("defense.p must be in [0,1]");
  if (!(defense.q >= 0.0 && defense.q <= 1.0)) throw ConfigError("defense.q must be in [0,1]");
  if (defense.k && *defense.k == 0) throw ConfigError("defense.k must be >= 1");
  if (!(lm_add_k > 0.0)) throw ConfigError("lm.add_k must be > 0");
  if (sweep.attacks.empty()) throw ConfigError("sweep.attacks is empty");
  if (sweep.budgets.empty()) throw ConfigError("sweep.budgets is empty");
  if (sweep.seeds.empty()) throw ConfigError("sweep.seeds is empty");
  for (std::size_t i = 1; i < sweep.budgets.size(); ++i) {
    if (sweep.budgets[i] <= sweep.budgets[i - 1]) throw ConfigError("sweep.budgets must be strictly increasing");
  }
  if (sweep.budgets.front() == 0) throw ConfigError("sweep.budgets must be >= 1");
}

// ---- workspace --------------------------------------------------------------

TrainConfig Workspace::victim_config() const {
  TrainConfig t = cfg.train;
  t.seed = derive_seed(cfg.seed, "victim");
  return t;
}

PipelineContext Workspace::context(std::size_t jobs) const {
  PipelineContext ctx;
  ctx.train = &clean_train;
  ctx.test = &test;
  ctx.train_config = cfg.train;
  ctx.trigger = cfg.attack.trigger;
  ctx.target_class = cfg.attack.target_class;
  ctx.surrogate = surrogate ? &*surrogate : nullptr;
  ctx.neighbors = &neighbors;
  ctx.adv = cfg.adv.search;
  ctx.jobs = jobs;
  return ctx;
}

Workspace make_workspace(const ExperimentConfig& cfg, bool need_surrogate) {
  Workspace ws;
  ws.cfg = cfg;
  if (cfg.dataset.synth) {
    auto data = synth_dataset(*cfg.dataset.synth, cfg.seed);
    ws.clean_train = std::move(data.first);
    ws.test = std::move(data.second);
  } else {
    ws.clean_train = load_jsonl(cfg.dataset.train_path, cfg.dataset.schema, cfg.dataset.class_names);
    ws.test = load_jsonl(cfg.dataset.test_path, cfg.dataset.schema, cfg.dataset.class_names);
  }
  ws.neighbors = build_neighbor_table(ws.clean_train, cfg.neighbors.window, cfg.neighbors.min_count,
                                      cfg.neighbors.top_m);
  if (need_surrogate) {
    const auto halves = split(ws.clean_train, cfg.adv.surrogate_fraction, derive_seed(cfg.seed, "surrogate-split"));
    TrainConfig t = cfg.train;
    t.seed = derive_seed(cfg.seed, "surrogate");
    ws.surrogate = train_hard(halves.first, t);
  }
  return ws;
}

namespace {

PoisonPlan plan_for(const ExperimentConfig& cfg) {
  PoisonPlan plan;
  plan.attack_type = *cfg.attack.type;
  plan.target_class = cfg.attack.target_class;
  plan.budget = cfg.attack.budget;
  plan.trigger = cfg.attack.trigger;
  plan.seed = derive_seed(cfg.seed, "poison");
  return plan;
}

}  // namespace

LabeledDataset poisoned_train(const Workspace& ws) {
  if (!ws.cfg.attack.type) return ws.clean_train;
  AdvSearchConfig adv = ws.cfg.adv.search;
  adv.surrogate = ws.surrogate ? &*ws.surrogate : nullptr;
  if (*ws.cfg.attack.type == AttackType::kAdversarialCleanLabel && adv.surrogate == nullptr) {
    throw ConfigError("A-CL needs a surrogate model");
  }
  return combine(ws.clean_train, build_poison(ws.clean_train, plan_for(ws.cfg), &adv, &ws.neighbors));
}

LinearTextClassifier train_victim(const Workspace& ws, const LabeledDataset& train) {
  return train_hard(train, ws.victim_config());
}

int exit_code_for(const Error& e) {
  switch (e.error_class()) {
    case ErrorClass::kConfig:
      return 2;
    case ErrorClass::kData:
      return 3;
    case ErrorClass::kExternal:
      return 4;
  }
  return 3;
}

// ---- commands ---------------------------------------------------------------

namespace {

struct Run {
  const CommandOptions& opts;
  std::ostream& log;
  ExperimentConfig cfg;
  std::string command;

  std::string echo() const { return cfg.to_json(); }

  // Header shared by every JSON artifact.
  ordered_json stamp() const {
    ordered_json j;
    j["command"] = command;
    j["seed"] = cfg.seed;
    j["config"] = config_json(cfg);
    return j;
  }

  std::string csv_preamble() const {
    return "# plab " + command + "\n# seed: " + std::to_string(cfg.seed) + "\n# config: " + echo() + "\n";
  }

  void write(const std::string& name, const std::string& content) const {
    std::error_code ec;
    fs::create_directories(opts.out_dir, ec);
    const fs::path path = opts.out_dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
    if (!out) throw ConfigError("cannot write " + path.string());
    log << "wrote " << path.string() << '\n';
  }

  bool needs_surrogate() const {
    if (command == "advgen") return true;
    if (command == "sweep") {
      for (auto a : cfg.sweep.attacks) {
        if (a == AttackType::kAdversarialCleanLabel) return true;
      }
      return false;
    }
    if (opts.train_path) return false;
    return cfg.attack.type == AttackType::kAdversarialCleanLabel;
  }

  LabeledDataset training_set(const Workspace& ws) const {
    if (!opts.train_path) return poisoned_train(ws);
    if (!fs::is_regular_file(*opts.train_path)) throw ConfigError("training file not found: " + opts.train_path->string());
    return load_jsonl(opts.train_path->string(), cfg.dataset.schema, ws.clean_train.class_names());
  }

  LinearTextClassifier victim(const Workspace& ws, const LabeledDataset& train) const {
    if (opts.model_path) {
      if (!fs::is_regular_file(*opts.model_path)) throw ConfigError("model file not found: " + opts.model_path->string());
      return load_model(opts.model_path->string());
    }
    return train_victim(ws, train);
  }

  std::uint64_t asr_seed() const { return derive_seed(cfg.seed, "asr"); }

  EvalReport stamped(EvalReport r) const {
    r.attack = cfg.attack.type ? std::string(attack_name(*cfg.attack.type)) : "none";
    r.budget = cfg.attack.type ? cfg.attack.budget : 0;
    r.seed = cfg.seed;
    r.config_echo = echo();
    return r;
  }

  void write_report(const std::string& stem, const EvalReport& r) const {
    write(stem + ".json", report_to_json(r) + "\n");
    write(stem + ".csv", csv_preamble() + report_csv_header() + "\n" + report_csv_row(r) + "\n");
  }

  std::string model_metadata(std::size_t train_size) const {
    ordered_json j = stamp();
    j["train_size"] = train_size;
    return j.dump();
  }

  void poison() const {
    if (!cfg.attack.type) throw ConfigError("poison needs attack.type (LF, CL or ACL)");
    const Workspace ws = make_workspace(cfg, needs_surrogate());
    const LabeledDataset train = poisoned_train(ws);
    write("poisoned_train.jsonl", to_jsonl(train, cfg.dataset.schema));

    const PoisonPlan plan = plan_for(cfg);
    ordered_json m = stamp();
    m["plan"] = {{"attack", std::string(attack_name(plan.attack_type))},
                 {"target_class", plan.target_class},
                 {"budget", plan.budget},
                 {"trigger", plan.trigger.describe()},
                 {"plan_seed", plan.seed}};
    ordered_json counts;
    for (auto p : {Provenance::kClean, Provenance::kPoisonLf, Provenance::kPoisonCl, Provenance::kPoisonAcl}) {
      std::size_t n = 0;
      for (const auto& ex : train.examples()) n += train.provenance(ex.id) == p ? 1 : 0;
      counts[std::string(provenance_name(p))] = n;
    }
    m["counts"] = counts;
    m["total"] = train.size();
    ordered_json poisons = ordered_json::array();
    const std::string suffix = ":poisoned";
    for (const auto& ex : train.examples()) {
      if (!is_poison(train.provenance(ex.id))) continue;
      const std::string source = ex.id.substr(0, ex.id.size() - suffix.size());
      poisons.push_back({{"id", ex.id},
                         {"source", source},
                         {"trigger_instance", injected_instance(plan.trigger, example_seed(plan.seed, source))}});
    }
    m["poisons"] = poisons;
    write("poison_manifest.json", m.dump(2) + "\n");
  }

  void train() const {
    const Workspace ws = make_workspace(cfg, needs_surrogate());
    const LabeledDataset data = training_set(ws);
    LinearTextClassifier model = train_victim(ws, data);
    model.set_metadata(model_metadata(data.size()));
    std::error_code ec;
    fs::create_directories(opts.out_dir, ec);
    save_model(model, (opts.out_dir / "model.plab").string());
    log << "wrote " << (opts.out_dir / "model.plab").string() << '\n';
    ordered_json m = stamp();
    m["train_size"] = data.size();
    m["poisons"] = data.count_poisons();
    m["model"] = "model.plab";
    write("train_manifest.json", m.dump(2) + "\n");
  }

  void eval() const {
    const Workspace ws = make_workspace(cfg, needs_surrogate() && !opts.model_path);
    const LinearTextClassifier model = opts.model_path ? victim(ws, ws.clean_train) : victim(ws, training_set(ws));
    const EvalReport r = evaluate(model_predictor(model), ws.test, cfg.attack.trigger, cfg.attack.target_class,
                                  asr_seed());
    write_report("eval_report", stamped(r));
  }

  void defend() const {
    const auto& d = cfg.defense;
    if (d.mode == DefenseMode::kTrain && opts.model_path) {
      throw ConfigError("train-mode defenses retrain the victim; --model cannot be used");
    }
    const bool sanitizer = d.name == DefenseName::kOnion || d.name == DefenseName::kRandom ||
                           d.name == DefenseName::kParaphrase;
    if (d.mode == DefenseMode::kTrain && !sanitizer) {
      throw ConfigError("defense.mode=train applies to onion, random and paraphrase only");
    }
    const bool model_needed = d.name == DefenseName::kNone || sanitizer;
    const bool fresh_train = !(opts.model_path && model_needed);
    const Workspace ws = make_workspace(cfg, needs_surrogate() && fresh_train);
    const LabeledDataset train = fresh_train ? training_set(ws) : ws.clean_train;
    const Trigger& trig = cfg.attack.trigger;
    const int target = cfg.attack.target_class;
    EvalReport r;

    if (d.name == DefenseName::kNone) {
      const auto model = victim(ws, train);
      r = evaluate(model_predictor(model), ws.test, trig, target, asr_seed());
    } else if (sanitizer) {
      Sanitizer s;
      std::optional<NGramLanguageModel> lm;
      switch (d.name) {
        case DefenseName::kOnion:
          s.kind = SanitizerKind::kOnion;
          // The defender scores with an LM fit on the data it was given.
          lm = NGramLanguageModel::fit(train, cfg.lm_add_k);
          s.onion.lm = &*lm;
          s.onion.threshold = d.threshold;
          if (d.max_removals) s.onion.max_removals = *d.max_removals;
          r.threshold = d.threshold;
          break;
        case DefenseName::kRandom:
          s.kind = SanitizerKind::kRandom;
          s.random_p = d.p;
          r.p = d.p;
          break;
        default:
          s.kind = SanitizerKind::kParaphrase;
          s.builtin.q = d.q;
          s.builtin.protected_top_frequency = d.protected_top;
          if (!d.command.empty()) s.external = ExternalParaphrase{d.command};
          r.p = d.q;
          break;
      }
      s.neighbors = &ws.neighbors;
      const LinearTextClassifier model = d.mode == DefenseMode::kTrain
                                             ? train_victim(ws, apply_defense_train(train, s, asr_seed()))
                                             : victim(ws, train);
      const double p = r.p;
      const double th = r.threshold;
      r = apply_defense_test(model_predictor(model), s, ws.test, trig, target, asr_seed());
      r.p = p;
      r.threshold = th;
      r.defense_tag = s.tag() + (d.mode == DefenseMode::kTrain ? "-train" : "-test");
    } else if (d.name == DefenseName::kKnn) {
      const auto idx = KnnIndex::build(train, d.effective_k(), d.hypothesis_only);
      r = evaluate([&](const Example& ex) { return idx.predict(ex); }, ws.test, trig, target, asr_seed());
      r.k = d.effective_k();
    } else {
      const std::size_t k = d.effective_k();
      if (k > train.size()) throw BadK("defense.k=" + std::to_string(k) + " exceeds training size " +
                                       std::to_string(train.size()));
      const DpaEnsemble ens = dpa_train(train, k, ws.victim_config(), opts.jobs);
      if (d.name == DefenseName::kDpa) {
        r = evaluate([&](const Example& ex) { return ens.predict(ex); }, ws.test, trig, target, asr_seed());
        std::string certs = csv_preamble() + "id,label,prediction,certificate\n";
        for (const auto& ex : ws.test.examples()) {
          const auto votes = ens.votes(ex);
          certs += ex.id + "," + std::to_string(ex.label) + "," + std::to_string(plurality(votes)) + "," +
                   std::to_string(dpa_certificate_from_votes(votes)) + "\n";
        }
        write("dpa_certificates.csv", certs);
      } else {
        TrainConfig student = ws.victim_config();
        student.seed = derive_seed(cfg.seed, "student");
        const LinearTextClassifier m = sdpa_distill(ens, train, student);
        r = evaluate(model_predictor(m), ws.test, trig, target, asr_seed());
      }
      r.k = k;
    }
    if (r.defense_tag == "none") r.defense_tag = std::string(defense_name(d.name));
    write_report("defend_report", stamped(r));
  }

  void sweep_cmd() const {
    const Workspace ws = make_workspace(cfg, needs_surrogate());
    const PipelineContext ctx = ws.context(opts.jobs);
    std::string runs = csv_preamble() + report_csv_header() + "\n";
    for (auto attack : cfg.sweep.attacks) {
      log << "sweep " << attack_name(attack) << '\n';
      const SweepCurve curve = sweep(ctx, attack, cfg.sweep.budgets, cfg.sweep.seeds);
      write("sweep_" + std::string(attack_name(attack)) + ".csv", csv_preamble() + curve_csv(curve));
      for (const auto& r : curve.runs) runs += report_csv_row(r) + "\n";
    }
    write("sweep_runs.csv", runs);
  }

  void audit() const {
    const Workspace ws = make_workspace(cfg, needs_surrogate());
    const LabeledDataset train = training_set(ws);
    const auto lm = NGramLanguageModel::fit(train, cfg.lm_add_k);
    write("audit.csv", csv_preamble() + audit_csv(perplexity_audit(train, lm)));
  }

  void advgen() const {
    const Workspace ws = make_workspace(cfg, true);
    AdvSearchConfig adv = cfg.adv.search;
    adv.surrogate = &*ws.surrogate;
    const std::uint64_t base = derive_seed(cfg.seed, "advgen");
    std::string lines;
    std::map<std::string, std::size_t> counts;
    std::size_t visited = 0;
    for (const auto& ex : ws.clean_train.examples()) {
      if (visited == cfg.advgen_limit) break;
      if (ex.label != cfg.attack.target_class) continue;
      ++visited;
      ordered_json rec;
      rec["id"] = ex.id;
      rec["original"] = ex.active_text();
      try {
        const AdvResult res = adv_substitute(ex, adv, ws.neighbors, example_seed(base, ex.id));
        if (const auto* ok = std::get_if<AdvSuccess>(&res)) {
          rec["status"] = "success";
          rec["adversarial"] = ok->example.active_text();
          rec["substitutions"] = ok->substitutions;
        } else {
          rec["status"] = std::get<AdvFailure>(res).reason;
        }
      } catch (const NoCandidates&) {
        rec["status"] = "no-candidates";
      }
      ++counts[rec["status"].get<std::string>()];
      lines += rec.dump() + "\n";
    }
    write("advgen.jsonl", lines);
    ordered_json m = stamp();
    m["visited"] = visited;
    m["outcomes"] = counts;
    write("advgen_manifest.json", m.dump(2) + "\n");
  }
};

}  // namespace

void run_command(const std::string& name, const CommandOptions& opts, std::ostream& log) {
  ExperimentConfig cfg = opts.config_path.empty() ? ExperimentConfig::from_json("{}") : ExperimentConfig::load(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.jobs == 0) throw ConfigError("--jobs must be >= 1");
  Run run{opts, log, cfg, name};
  if (name == "poison") {
    run.poison();
  } else if (name == "train") {
    run.train();
  } else if (name == "eval") {
    run.eval();
  } else if (name == "defend") {
    run.defend();
  } else if (name == "sweep") {
    run.sweep_cmd();
  } else if (name == "audit") {
    run.audit();
  } else if (name == "advgen") {
    run.advgen();
  } else {
    throw ConfigError("unknown command '" + name + "'");
  }
}

}  // namespace plab
