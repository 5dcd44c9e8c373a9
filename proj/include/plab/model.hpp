#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plab/corpus.hpp"

namespace plab {

// Sparse, L2-normalized hashed n-gram counts.
struct FeatureVector {
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<double> values;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

// Bit mask over n-gram orders: bit 0 = unigrams, bit 1 = bigrams.
struct NgramOrders {
  bool unigrams = true;
  bool bigrams = true;

  std::uint32_t mask() const { return (unigrams ? 1u : 0u) | (bigrams ? 2u : 0u); }
  static NgramOrders from_mask(std::uint32_t m) { return {(m & 1u) != 0, (m & 2u) != 0}; }
  friend bool operator==(const NgramOrders&, const NgramOrders&) = default;
};

struct FeatureSpec {
  std::uint32_t bucket_bits = 18;
  NgramOrders orders;

  std::uint32_t num_buckets() const { return 1u << bucket_bits; }
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

FeatureVector featurize(const TokenSequence& tokens, std::uint32_t num_buckets, NgramOrders orders);
inline FeatureVector featurize(const TokenSequence& tokens, const FeatureSpec& spec) {
  return featurize(tokens, spec.num_buckets(), spec.orders);
}

// Class scores summing to one.
using SoftLabel = std::vector<double>;

bool is_valid_soft_label(std::span<const double> s, double tol = 1e-9);

struct TrainConfig {
  int epochs = 20;
  double learning_rate = 1.0;
  double lr_decay = 1e-3;
  double l2_penalty = 1e-5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  FeatureSpec features;

  void validate() const;
};

class LinearTextClassifier {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  LinearTextClassifier() = default;
  LinearTextClassifier(int num_classes, FeatureSpec features);

  int num_classes() const { return num_classes_; }
  const FeatureSpec& features() const { return features_; }
  std::uint32_t num_buckets() const { return features_.num_buckets(); }

  // Row-major C x num_buckets.
  std::span<const double> weights() const { return weights_; }
  std::span<double> mutable_weights() { return weights_; }
  std::span<const double> bias() const { return bias_; }
  std::span<double> mutable_bias() { return bias_; }
  double weight(int c, std::uint32_t bucket) const {
    return weights_[static_cast<std::size_t>(c) * num_buckets() + bucket];
  }

  std::vector<double> logits(const FeatureVector& fv) const;
  SoftLabel predict_proba(const FeatureVector& fv) const;
  int predict(const FeatureVector& fv) const;

  FeatureVector featurize(const TokenSequence& tokens) const { return plab::featurize(tokens, features_); }
  SoftLabel predict_proba(const Example& ex) const { return predict_proba(featurize(example_tokens(ex))); }
  int predict(const Example& ex) const { return predict(featurize(example_tokens(ex))); }

  // Free-form provenance string stored with the model (config echo).
  const std::string& metadata() const { return metadata_; }
  void set_metadata(std::string m) { metadata_ = std::move(m); }

  friend bool operator==(const LinearTextClassifier&, const LinearTextClassifier&) = default;

 private:
  int num_classes_ = 0;
  FeatureSpec features_;
  std::vector<double> weights_;
  std::vector<double> bias_;
  std::string metadata_;
};

// Max-subtracted softmax.
SoftLabel softmax(std::span<const double> logits);

// Lowest index wins ties.
int argmax(std::span<const double> v);

// Soft cross-entropy -sum_c s_c log p_c for one example, and its gradient.
// grad_w is C x num_buckets dense, grad_b is C.
double soft_cross_entropy(const LinearTextClassifier& m, const FeatureVector& fv, const SoftLabel& s);
void soft_cross_entropy_grad(const LinearTextClassifier& m, const FeatureVector& fv, const SoftLabel& s,
                             std::vector<double>& grad_w, std::vector<double>& grad_b);

struct SoftExample {
  TokenSequence tokens;
  SoftLabel target;
};

// Minibatch SGD on cross-entropy + l2/2 ||W||^2, lr_t = lr0 / (1 + decay * t).
LinearTextClassifier train_hard(const LabeledDataset& ds, const TrainConfig& cfg);
LinearTextClassifier train_soft(const std::vector<SoftExample>& examples, int num_classes,
                                const TrainConfig& cfg);

void save_model(const LinearTextClassifier& m, const std::string& path);
LinearTextClassifier load_model(const std::string& path);
std::string serialize_model(const LinearTextClassifier& m);
LinearTextClassifier deserialize_model(std::string_view bytes);

}  // namespace plab
