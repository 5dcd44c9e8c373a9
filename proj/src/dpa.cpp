#include <algorithm>

#include "plab/defense.hpp"
#include "plab/parallel.hpp"

namespace plab {

std::size_t dpa_partition(const Example& ex, std::size_t k) {
  std::string key = ex.text;
  key.push_back('\x1f');
  if (ex.text_pair) key += *ex.text_pair;
  return static_cast<std::size_t>(fnv1a64(key) % k);
}

int plurality(const std::vector<std::size_t>& votes) {
  int best = 0;
  for (std::size_t c = 1; c < votes.size(); ++c) {
    if (votes[c] > votes[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

std::size_t dpa_certificate_from_votes(const std::vector<std::size_t>& votes) {
  const int c1 = plurality(votes);
  int c2 = -1;
  for (std::size_t c = 0; c < votes.size(); ++c) {
    if (static_cast<int>(c) == c1) continue;
    if (c2 < 0 || votes[c] > votes[static_cast<std::size_t>(c2)]) c2 = static_cast<int>(c);
  }
  if (c2 < 0) return 0;
  const auto v1 = static_cast<long long>(votes[static_cast<std::size_t>(c1)]);
  const auto v2 = static_cast<long long>(votes[static_cast<std::size_t>(c2)]);
  const long long gap = v1 - v2 - (c2 < c1 ? 1 : 0);
  return gap <= 0 ? 0 : static_cast<std::size_t>(gap / 2);
}

SoftLabel vote_fractions(const std::vector<std::size_t>& votes) {
  std::size_t total = 0;
  for (auto v : votes) total += v;
  SoftLabel s(votes.size(), 0.0);
  for (std::size_t c = 0; c < votes.size(); ++c) s[c] = static_cast<double>(votes[c]) / static_cast<double>(total);
  return s;
}

DpaEnsemble::DpaEnsemble(int num_classes, std::vector<DpaMember> members)
    : num_classes_(num_classes), members_(std::move(members)) {
  if (members_.empty()) throw BadK("ensemble has no members");
}

std::vector<std::size_t> DpaEnsemble::votes(const Example& ex) const {
  std::vector<std::size_t> v(static_cast<std::size_t>(num_classes_), 0);
  // Members sharing a featurization reuse it.
  std::optional<FeatureVector> fv;
  std::optional<FeatureSpec> spec;
  for (const auto& m : members_) {
    if (m.constant_class) {
      ++v[static_cast<std::size_t>(*m.constant_class)];
      continue;
    }
    const FeatureSpec& s = m.model->features();
    if (!spec || spec->bucket_bits != s.bucket_bits || !(spec->orders == s.orders)) {
      spec = s;
      fv = m.model->featurize(example_tokens(ex));
    }
    ++v[static_cast<std::size_t>(m.model->predict(*fv))];
  }
  return v;
}

int DpaEnsemble::predict(const Example& ex) const { return plurality(votes(ex)); }

std::size_t DpaEnsemble::certificate(const Example& ex) const { return dpa_certificate_from_votes(votes(ex)); }

std::vector<std::vector<std::size_t>> dpa_partitions(const LabeledDataset& ds, std::size_t k) {
  if (k < 2) throw BadK("DPA needs k >= 2");
  if (k > ds.size()) throw BadK("k=" + std::to_string(k) + " exceeds dataset size " + std::to_string(ds.size()));
  std::vector<std::vector<std::size_t>> parts(k);
  for (std::size_t i = 0; i < ds.size(); ++i) parts[dpa_partition(ds[i], k)].push_back(i);
  return parts;
}

DpaMember dpa_train_member(const LabeledDataset& part, const TrainConfig& cfg, std::size_t index) {
  DpaMember m;
  m.train_size = part.size();
  const auto hist = part.num_classes() > 0 ? part.label_histogram() : std::vector<std::size_t>{};
  const auto present = std::count_if(hist.begin(), hist.end(), [](std::size_t h) { return h > 0; });
  if (present < 2) {
    // Empty partitions vote class 0.
    m.constant_class = hist.empty() ? 0 : plurality(hist);
    return m;
  }
  TrainConfig c = cfg;
  c.seed = derive_seed(cfg.seed, "dpa/" + std::to_string(index));
  m.model = train_hard(part, c);
  return m;
}

DpaEnsemble dpa_train(const LabeledDataset& ds, std::size_t k, const TrainConfig& cfg, std::size_t jobs) {
  cfg.validate();
  const auto parts = dpa_partitions(ds, k);
  std::vector<DpaMember> members(k);
  parallel_for(k, jobs, [&](std::size_t j) {
    LabeledDataset part = ds.empty_like();
    for (std::size_t i : parts[j]) part.add(ds[i], ds.provenance(ds[i].id));
    members[j] = dpa_train_member(part, cfg, j);
  });
  return DpaEnsemble(ds.num_classes(), std::move(members));
}

LinearTextClassifier sdpa_distill(const DpaEnsemble& ens, const LabeledDataset& train, const TrainConfig& cfg) {
  if (train.empty()) throw EmptyDataset("S-DPA needs training examples");
  std::vector<SoftExample> soft;
  soft.reserve(train.size());
  for (const auto& ex : train.examples()) soft.push_back({example_tokens(ex), vote_fractions(ens.votes(ex))});
  return train_soft(soft, ens.num_classes(), cfg);
}

}  // namespace plab
