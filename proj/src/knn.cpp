#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "plab/defense.hpp"

namespace plab {

namespace {

TokenSequence knn_tokens(const Example& ex, bool hypothesis_only) {
  if (hypothesis_only && ex.text_pair) return tokenize(*ex.text_pair);
  return example_tokens(ex);
}

}  // namespace

KnnIndex KnnIndex::build(const LabeledDataset& ds, std::size_t k_neighbors, bool hypothesis_only) {
  if (ds.empty()) throw EmptyDataset("kNN index needs a non-empty dataset");
  if (k_neighbors < 1) throw ConfigError("k_neighbors must be >= 1");
  KnnIndex idx;
  idx.k_ = k_neighbors;
  idx.num_classes_ = ds.num_classes();
  idx.hypothesis_only_ = hypothesis_only;

  std::vector<std::map<std::size_t, double>> tf(ds.size());
  std::vector<std::size_t> df;
  for (std::size_t d = 0; d < ds.size(); ++d) {
    for (const auto& tok : knn_tokens(ds[d], hypothesis_only)) {
      auto [it, inserted] = idx.term_id_.emplace(tok, idx.term_id_.size());
      if (inserted) df.push_back(0);
      auto& cell = tf[d][it->second];
      if (cell == 0.0) ++df[it->second];
      cell += 1.0;
    }
    idx.labels_.push_back(ds[d].label);
  }
  const double n = static_cast<double>(ds.size());
  idx.idf_.resize(df.size());
  for (std::size_t t = 0; t < df.size(); ++t) idx.idf_[t] = std::log((1.0 + n) / (1.0 + static_cast<double>(df[t]))) + 1.0;

  idx.postings_.resize(df.size());
  for (std::size_t d = 0; d < ds.size(); ++d) {
    double sq = 0.0;
    for (const auto& [t, c] : tf[d]) sq += (c * idx.idf_[t]) * (c * idx.idf_[t]);
    const double norm = std::sqrt(sq);
    if (norm == 0.0) continue;
    for (const auto& [t, c] : tf[d]) idx.postings_[t].emplace_back(d, c * idx.idf_[t] / norm);
  }
  return idx;
}

std::vector<std::pair<std::size_t, double>> KnnIndex::vectorize(const TokenSequence& ts) const {
  std::map<std::size_t, double> tf;
  for (const auto& tok : ts) {
    auto it = term_id_.find(tok);
    if (it != term_id_.end()) tf[it->second] += 1.0;
  }
  double sq = 0.0;
  for (const auto& [t, c] : tf) sq += (c * idf_[t]) * (c * idf_[t]);
  std::vector<std::pair<std::size_t, double>> v;
  if (sq == 0.0) return v;
  const double norm = std::sqrt(sq);
  for (const auto& [t, c] : tf) v.emplace_back(t, c * idf_[t] / norm);
  return v;
}

std::vector<std::size_t> KnnIndex::nearest(const TokenSequence& ts) const {
  std::vector<double> score(labels_.size(), 0.0);
  for (const auto& [t, w] : vectorize(ts)) {
    for (const auto& [d, dw] : postings_[t]) score[d] += w * dw;
  }
  std::vector<std::size_t> order(labels_.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t k = std::min(k_, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (score[a] != score[b]) return score[a] > score[b];
                      return a < b;
                    });
  order.resize(k);
  return order;
}

int KnnIndex::predict(const TokenSequence& ts) const {
  std::vector<std::size_t> votes(static_cast<std::size_t>(num_classes_), 0);
  for (std::size_t d : nearest(ts)) ++votes[static_cast<std::size_t>(labels_[d])];
  return plurality(votes);
}

int KnnIndex::predict(const Example& ex) const { return predict(knn_tokens(ex, hypothesis_only_)); }

}  // namespace plab
