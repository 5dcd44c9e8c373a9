#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "plab/defense.hpp"

namespace plab {

std::vector<double> onion_suspicion(const TokenSequence& ts, const NGramLanguageModel& lm) {
  const double base = lm.perplexity(ts);
  std::vector<double> f(ts.size());
  TokenSequence without;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    without.assign(ts.begin(), ts.end());
    without.erase(without.begin() + static_cast<std::ptrdiff_t>(i));
    f[i] = base - lm.perplexity(without);
  }
  return f;
}

TokenSequence onion_sanitize(const TokenSequence& ts, const OnionConfig& cfg) {
  if (cfg.lm == nullptr) throw ConfigError("ONION needs a language model");
  if (ts.empty() || cfg.max_removals == 0) return ts;
  const auto f = onion_suspicion(ts, *cfg.lm);
  std::vector<std::size_t> flagged;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] > cfg.threshold) flagged.push_back(i);
  }
  std::stable_sort(flagged.begin(), flagged.end(), [&](std::size_t a, std::size_t b) { return f[a] > f[b]; });
  if (flagged.size() > cfg.max_removals) flagged.resize(cfg.max_removals);
  std::vector<bool> drop(ts.size(), false);
  for (std::size_t i : flagged) drop[i] = true;
  TokenSequence out;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (!drop[i]) out.push_back(ts[i]);
  }
  return out;
}

TokenSequence random_sanitize(const TokenSequence& ts, const NeighborTable& nt, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("random replacement fraction must be in [0,1]");
  const auto n = static_cast<std::size_t>(std::floor(p * static_cast<double>(ts.size())));
  std::vector<std::size_t> positions(ts.size());
  std::iota(positions.begin(), positions.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first n entries are a uniform sample.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform(positions.size() - i));
    std::swap(positions[i], positions[j]);
  }
  TokenSequence out = ts;
  for (std::size_t i = 0; i < n; ++i) {
    std::string& tok = out[positions[i]];
    const auto* list = nt.find(tok);
    if (list == nullptr || list->empty()) {
      tok = std::string(kUnkToken);
    } else {
      tok = (*list)[static_cast<std::size_t>(rng.uniform(list->size()))].token;
    }
  }
  return out;
}

namespace {

std::unordered_set<std::string> protected_tokens(const NeighborTable& nt, std::size_t top) {
  std::vector<std::pair<std::size_t, std::string>> by_freq;
  for (const auto& [tok, c] : nt.counts) by_freq.emplace_back(c, tok);
  std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::unordered_set<std::string> out;
  for (std::size_t i = 0; i < std::min(top, by_freq.size()); ++i) out.insert(by_freq[i].second);
  return out;
}

TokenSequence paraphrase_with(const TokenSequence& ts, const NeighborTable& nt, double q,
                              const std::unordered_set<std::string>& keep, std::uint64_t seed) {
  Rng rng(seed);
  TokenSequence out;
  for (const auto& tok : ts) {
    const auto* list = nt.find(tok);
    if (list == nullptr) continue;
    if (!keep.count(tok) && !list->empty() && rng.bernoulli(q)) {
      out.push_back(list->front().token);
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

}  // namespace

TokenSequence paraphrase_builtin(const TokenSequence& ts, const NeighborTable& nt, const BuiltinParaphrase& cfg,
                                 std::uint64_t seed) {
  if (!(cfg.q >= 0.0 && cfg.q <= 1.0)) throw ConfigError("paraphrase q must be in [0,1]");
  return paraphrase_with(ts, nt, cfg.q, protected_tokens(nt, cfg.protected_top_frequency), seed);
}

std::vector<TokenSequence> paraphrase_external(const std::vector<TokenSequence>& sentences,
                                               const ExternalParaphrase& cfg) {
  if (cfg.command.empty()) throw ConfigError("external paraphraser command is empty");
  char path[] = "/tmp/plab-para-XXXXXX";
  const int fd = ::mkstemp(path);
  if (fd < 0) throw ExternalFailure(-1, "cannot create temporary input file");
  ::close(fd);
  struct Cleanup {
    const char* p;
    ~Cleanup() { std::remove(p); }
  } cleanup{path};
  {
    std::ofstream in(path, std::ios::binary);
    for (const auto& s : sentences) in << detokenize(s) << '\n';
  }
  const std::string cmd = cfg.command + " < '" + path + "'";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) throw ExternalFailure(-1, "cannot start '" + cfg.command + "'");
  std::string output;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, n);
  const int status = ::pclose(pipe);
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (code != 0) throw ExternalFailure(code, "paraphraser exited with status " + std::to_string(code));
  std::vector<TokenSequence> out;
  std::size_t start = 0;
  while (start < output.size()) {
    std::size_t end = output.find('\n', start);
    if (end == std::string::npos) end = output.size();
    out.push_back(tokenize(std::string_view(output).substr(start, end - start)));
    start = end + 1;
  }
  if (out.size() != sentences.size()) {
    throw ExternalFailure(-1, "paraphraser returned " + std::to_string(out.size()) + " lines for " +
                                  std::to_string(sentences.size()) + " inputs");
  }
  return out;
}

std::string Sanitizer::tag() const {
  switch (kind) {
    case SanitizerKind::kIdentity:
      return "none";
    case SanitizerKind::kOnion:
      return "onion";
    case SanitizerKind::kRandom:
      return "random";
    case SanitizerKind::kParaphrase:
      return external ? "paraphrase-external" : "paraphrase";
  }
  return "none";
}

std::vector<Example> Sanitizer::apply(const std::vector<Example>& examples, std::uint64_t seed) const {
  std::vector<TokenSequence> active;
  active.reserve(examples.size());
  for (const auto& ex : examples) active.push_back(tokenize(ex.active_text()));

  std::vector<TokenSequence> cleaned;
  if (kind == SanitizerKind::kParaphrase && external) {
    cleaned = paraphrase_external(active, *external);
  } else {
    std::unordered_set<std::string> keep;
    if (kind == SanitizerKind::kParaphrase) {
      if (neighbors == nullptr) throw ConfigError("paraphrase needs a neighbor table");
      if (!(builtin.q >= 0.0 && builtin.q <= 1.0)) throw ConfigError("paraphrase q must be in [0,1]");
      keep = protected_tokens(*neighbors, builtin.protected_top_frequency);
    }
    if (kind == SanitizerKind::kRandom && neighbors == nullptr) throw ConfigError("random needs a neighbor table");
    cleaned.reserve(active.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const std::uint64_t s = example_seed(seed, examples[i].id);
      switch (kind) {
        case SanitizerKind::kIdentity:
          cleaned.push_back(active[i]);
          break;
        case SanitizerKind::kOnion:
          cleaned.push_back(onion_sanitize(active[i], onion));
          break;
        case SanitizerKind::kRandom:
          cleaned.push_back(random_sanitize(active[i], *neighbors, random_p, s));
          break;
        case SanitizerKind::kParaphrase:
          cleaned.push_back(paraphrase_with(active[i], *neighbors, builtin.q, keep, s));
          break;
      }
    }
  }

  std::vector<Example> out = examples;
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Examples keep at least one token.
    if (cleaned[i].empty()) cleaned[i].emplace_back(kUnkToken);
    out[i].set_active_text(detokenize(cleaned[i]));
  }
  return out;
}

Example Sanitizer::apply(const Example& ex, std::uint64_t seed) const { return apply(std::vector<Example>{ex}, seed)[0]; }

EvalReport apply_defense_test(const Predictor& model, const Sanitizer& sanitizer, const LabeledDataset& test,
                              const Trigger& trigger, int target_class, std::uint64_t seed) {
  if (test.empty()) throw EmptyDataset("defense evaluation on an empty test set");
  const std::uint64_t sanitize_seed = derive_seed(seed, "sanitize");
  const auto clean = sanitizer.apply(test.examples(), sanitize_seed);
  std::size_t correct = 0;
  for (const auto& ex : clean) correct += model(ex) == ex.label ? 1 : 0;

  std::vector<Example> triggered;
  for (const auto& ex : test.examples()) {
    if (ex.label != target_class) triggered.push_back(inject_trigger(ex, trigger, example_seed(seed, ex.id)));
  }
  if (triggered.empty()) throw NoNonTargetExamples("test set has no examples outside the target class");
  std::size_t hits = 0;
  for (const auto& ex : sanitizer.apply(triggered, sanitize_seed)) hits += model(ex) == target_class ? 1 : 0;

  EvalReport r;
  r.acc = static_cast<double>(correct) / static_cast<double>(test.size());
  r.asr = static_cast<double>(hits) / static_cast<double>(triggered.size());
  r.n_test = test.size();
  r.n_nontarget = triggered.size();
  r.seed = seed;
  r.defense_tag = sanitizer.tag();
  return r;
}

LabeledDataset apply_defense_train(const LabeledDataset& train, const Sanitizer& sanitizer, std::uint64_t seed) {
  const auto cleaned = sanitizer.apply(train.examples(), derive_seed(seed, "sanitize-train"));
  LabeledDataset out = train.empty_like();
  for (const auto& ex : cleaned) out.add(ex, train.provenance(ex.id));
  return out;
}

}  // namespace plab
