#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "plab/corpus.hpp"
#include "plab/metrics.hpp"
#include "plab/model.hpp"
#include "plab/ngram_lm.hpp"

namespace plab {

// ---- input sanitizers ----------------------------------------------------

struct OnionConfig {
  const NGramLanguageModel* lm = nullptr;
  double threshold = 0.0;
  std::size_t max_removals = std::numeric_limits<std::size_t>::max();
};

// Suspicion f_i = ppl(s) - ppl(s without token i), all scored on the
// original sentence.
std::vector<double> onion_suspicion(const TokenSequence& ts, const NGramLanguageModel& lm);

// Drops tokens with f_i > threshold, highest first, at most max_removals.
TokenSequence onion_sanitize(const TokenSequence& ts, const OnionConfig& cfg);

// Replaces floor(p*T) uniformly chosen positions with a uniform draw from the
// token's neighbor list, or with [unk] when the token has none.
TokenSequence random_sanitize(const TokenSequence& ts, const NeighborTable& nt, double p, std::uint64_t seed);

struct BuiltinParaphrase {
  double q = 0.1;
  std::size_t protected_top_frequency = 100;
};

struct ExternalParaphrase {
  std::string command;
};

// Builtin: drop tokens absent from the table; replace present tokens outside
// the most frequent ones by their rank-1 neighbor with probability q.
TokenSequence paraphrase_builtin(const TokenSequence& ts, const NeighborTable& nt, const BuiltinParaphrase& cfg,
                                 std::uint64_t seed);

// Pipes one sentence per line through `command` and re-tokenizes its output.
// Throws ExternalFailure on nonzero exit or a line-count mismatch.
std::vector<TokenSequence> paraphrase_external(const std::vector<TokenSequence>& sentences,
                                               const ExternalParaphrase& cfg);

enum class SanitizerKind { kIdentity, kOnion, kRandom, kParaphrase };

// A configured sanitizer over the active segment of examples.
struct Sanitizer {
  SanitizerKind kind = SanitizerKind::kIdentity;
  OnionConfig onion;
  const NeighborTable* neighbors = nullptr;  // random and builtin paraphrase
  double random_p = 0.5;
  BuiltinParaphrase builtin;
  std::optional<ExternalParaphrase> external;

  std::string tag() const;
  // Per-example seeds are derived from `seed` and the example id.
  std::vector<Example> apply(const std::vector<Example>& examples, std::uint64_t seed) const;
  Example apply(const Example& ex, std::uint64_t seed) const;
};

// Test-time defense: sanitize every input (clean and triggered) before
// prediction.
EvalReport apply_defense_test(const Predictor& model, const Sanitizer& sanitizer, const LabeledDataset& test,
                              const Trigger& trigger, int target_class, std::uint64_t seed);

// Train-time defense: sanitized copy of the training set, same ids,
// provenance and size.
LabeledDataset apply_defense_train(const LabeledDataset& train, const Sanitizer& sanitizer, std::uint64_t seed);

// ---- kNN -------------------------------------------------------------------

class KnnIndex {
 public:
  // TF-IDF with idf = ln((1+N)/(1+df)) + 1, L2-normalized. With
  // hypothesis_only, pairs are indexed by their hypothesis alone.
  static KnnIndex build(const LabeledDataset& ds, std::size_t k_neighbors, bool hypothesis_only = false);

  int predict(const TokenSequence& ts) const;
  int predict(const Example& ex) const;
  // Training indices of the k nearest neighbors, nearest first.
  std::vector<std::size_t> nearest(const TokenSequence& ts) const;

  std::size_t size() const { return labels_.size(); }
  std::size_t k_neighbors() const { return k_; }

 private:
  std::vector<std::pair<std::size_t, double>> vectorize(const TokenSequence& ts) const;

  std::size_t k_ = 1;
  int num_classes_ = 2;
  bool hypothesis_only_ = false;
  std::unordered_map<std::string, std::size_t> term_id_;
  std::vector<double> idf_;
  std::vector<int> labels_;
  // postings_[term] = (doc, weight)
  std::vector<std::vector<std::pair<std::size_t, double>>> postings_;
};

// ---- DPA / S-DPA ---------------------------------------------------------

std::size_t dpa_partition(const Example& ex, std::size_t k);

struct DpaMember {
  std::optional<LinearTextClassifier> model;
  // Set for partitions with fewer than two classes: always votes this class.
  std::optional<int> constant_class;
  std::size_t train_size = 0;

  bool degenerate() const { return constant_class.has_value(); }
  int predict(const Example& ex) const { return constant_class ? *constant_class : model->predict(ex); }
};

class DpaEnsemble {
 public:
  DpaEnsemble(int num_classes, std::vector<DpaMember> members);

  std::size_t k() const { return members_.size(); }
  int num_classes() const { return num_classes_; }
  const std::vector<DpaMember>& members() const { return members_; }

  std::vector<std::size_t> votes(const Example& ex) const;
  int predict(const Example& ex) const;
  std::size_t certificate(const Example& ex) const;

 private:
  int num_classes_;
  std::vector<DpaMember> members_;
};

// Partition training examples by content hash.
std::vector<std::vector<std::size_t>> dpa_partitions(const LabeledDataset& ds, std::size_t k);

// Trains one member on the given examples; member seeds derive from cfg.seed
// and the partition index.
DpaMember dpa_train_member(const LabeledDataset& part, const TrainConfig& cfg, std::size_t index);

DpaEnsemble dpa_train(const LabeledDataset& ds, std::size_t k, const TrainConfig& cfg, std::size_t jobs = 1);

// Plurality with lowest-index ties.
int plurality(const std::vector<std::size_t>& votes);

// floor((v1 - v2 - [c2 < c1]) / 2) for winner c1 and runner-up c2.
std::size_t dpa_certificate_from_votes(const std::vector<std::size_t>& votes);

// s_c(x) = fraction of members voting c.
SoftLabel vote_fractions(const std::vector<std::size_t>& votes);

// Student trained with soft cross-entropy on the ensemble's vote fractions
// over every training example. Original labels are not consulted.
LinearTextClassifier sdpa_distill(const DpaEnsemble& ens, const LabeledDataset& train, const TrainConfig& cfg);

}  // namespace plab
