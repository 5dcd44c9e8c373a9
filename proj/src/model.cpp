#include "plab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>

namespace plab {

FeatureVector featurize(const TokenSequence& tokens, std::uint32_t num_buckets, NgramOrders orders) {
  if (num_buckets == 0 || !std::has_single_bit(num_buckets)) {
    throw ConfigError("num_buckets must be a power of two");
  }
  std::map<std::uint32_t, double> counts;
  const std::uint64_t mask = num_buckets - 1;
  if (orders.unigrams) {
    for (const auto& t : tokens) counts[static_cast<std::uint32_t>(fnv1a64(t) & mask)] += 1.0;
  }
  if (orders.bigrams) {
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      const std::string gram = tokens[i] + " " + tokens[i + 1];
      counts[static_cast<std::uint32_t>(fnv1a64(gram) & mask)] += 1.0;
    }
  }
  FeatureVector fv;
  double sq = 0.0;
  for (const auto& [idx, c] : counts) sq += c * c;
  if (sq == 0.0) return fv;
  const double norm = std::sqrt(sq);
  fv.indices.reserve(counts.size());
  fv.values.reserve(counts.size());
  for (const auto& [idx, c] : counts) {
    fv.indices.push_back(idx);
    fv.values.push_back(c / norm);
  }
  return fv;
}

bool is_valid_soft_label(std::span<const double> s, double tol) {
  if (s.empty()) return false;
  double sum = 0.0;
  for (double v : s) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tol;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (!(lr_decay >= 0.0)) throw ConfigError("lr_decay must be >= 0");
  if (!(l2_penalty >= 0.0)) throw ConfigError("l2_penalty must be >= 0");
  if (learning_rate * l2_penalty >= 1.0) throw ConfigError("learning_rate * l2_penalty must be < 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (features.bucket_bits < 1 || features.bucket_bits > 26) throw ConfigError("bucket_bits must be in [1,26]");
  if (!features.orders.unigrams && !features.orders.bigrams) throw ConfigError("no n-gram orders enabled");
}

LinearTextClassifier::LinearTextClassifier(int num_classes, FeatureSpec features)
    : num_classes_(num_classes), features_(features) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  weights_.assign(static_cast<std::size_t>(num_classes) * features_.num_buckets(), 0.0);
  bias_.assign(static_cast<std::size_t>(num_classes), 0.0);
}

std::vector<double> LinearTextClassifier::logits(const FeatureVector& fv) const {
  std::vector<double> z(bias_.begin(), bias_.end());
  const std::size_t nb = num_buckets();
  for (int c = 0; c < num_classes_; ++c) {
    const double* row = weights_.data() + static_cast<std::size_t>(c) * nb;
    double acc = 0.0;
    for (std::size_t i = 0; i < fv.indices.size(); ++i) acc += row[fv.indices[i]] * fv.values[i];
    z[static_cast<std::size_t>(c)] += acc;
  }
  return z;
}

SoftLabel softmax(std::span<const double> logits) {
  SoftLabel p(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - mx);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

int argmax(std::span<const double> v) {
  int best = 0;
  for (std::size_t c = 1; c < v.size(); ++c) {
    if (v[c] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

SoftLabel LinearTextClassifier::predict_proba(const FeatureVector& fv) const { return softmax(logits(fv)); }

int LinearTextClassifier::predict(const FeatureVector& fv) const { return argmax(predict_proba(fv)); }

double soft_cross_entropy(const LinearTextClassifier& m, const FeatureVector& fv, const SoftLabel& s) {
  const auto z = m.logits(fv);
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double log_norm = mx + std::log(sum);
  double loss = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    if (s[c] != 0.0) loss -= s[c] * (z[c] - log_norm);
  }
  return loss;
}

void soft_cross_entropy_grad(const LinearTextClassifier& m, const FeatureVector& fv, const SoftLabel& s,
                             std::vector<double>& grad_w, std::vector<double>& grad_b) {
  const auto p = m.predict_proba(fv);
  const std::size_t nb = m.num_buckets();
  grad_w.assign(static_cast<std::size_t>(m.num_classes()) * nb, 0.0);
  grad_b.assign(static_cast<std::size_t>(m.num_classes()), 0.0);
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double r = p[c] - s[c];
    grad_b[c] = r;
    for (std::size_t i = 0; i < fv.indices.size(); ++i) grad_w[c * nb + fv.indices[i]] += r * fv.values[i];
  }
}

namespace {

// Shared SGD schedule. `residual(i, p, r)` fills r = p - target for example i;
// hard and soft training differ only there.
template <typename Residual>
LinearTextClassifier sgd_train(const std::vector<FeatureVector>& features, int num_classes,
                               const TrainConfig& cfg, Residual residual) {
  LinearTextClassifier model(num_classes, cfg.features);
  const std::size_t nb = model.num_buckets();
  const auto nc = static_cast<std::size_t>(num_classes);
  auto w = model.mutable_weights();
  auto b = model.mutable_bias();

  // True weights are scale * w; L2 decay only touches the scale.
  double scale = 1.0;
  auto fold_scale = [&] {
    for (double& x : w) x *= scale;
    scale = 1.0;
  };

  const std::size_t n = features.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> z(nc), r(cfg.batch_size * nc);
  std::uint64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::size_t bs = end - start;
      const double lr = cfg.learning_rate / (1.0 + cfg.lr_decay * static_cast<double>(step));

      // Residuals at the pre-step weights.
      for (std::size_t k = 0; k < bs; ++k) {
        const FeatureVector& fv = features[order[start + k]];
        for (std::size_t c = 0; c < nc; ++c) {
          const double* row = w.data() + c * nb;
          double acc = 0.0;
          for (std::size_t i = 0; i < fv.indices.size(); ++i) acc += row[fv.indices[i]] * fv.values[i];
          z[c] = b[c] + scale * acc;
        }
        const SoftLabel p = softmax(z);
        residual(order[start + k], p, std::span<double>(r.data() + k * nc, nc));
      }

      scale *= 1.0 - lr * cfg.l2_penalty;
      const double step_w = lr / static_cast<double>(bs) / scale;
      const double step_b = lr / static_cast<double>(bs);
      for (std::size_t k = 0; k < bs; ++k) {
        const FeatureVector& fv = features[order[start + k]];
        for (std::size_t c = 0; c < nc; ++c) {
          const double rc = r[k * nc + c];
          double* row = w.data() + c * nb;
          for (std::size_t i = 0; i < fv.indices.size(); ++i) row[fv.indices[i]] -= step_w * rc * fv.values[i];
          b[c] -= step_b * rc;
        }
      }
      if (scale < 1e-6) fold_scale();
      ++step;
    }
  }
  fold_scale();
  for (double x : w) {
    if (!std::isfinite(x)) throw DegenerateDataset("training diverged (non-finite weights)");
  }
  return model;
}

}  // namespace

LinearTextClassifier train_hard(const LabeledDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.empty()) throw EmptyDataset("cannot train on an empty dataset");
  const auto hist = ds.label_histogram();
  if (std::count_if(hist.begin(), hist.end(), [](std::size_t h) { return h > 0; }) < 2) {
    throw DegenerateDataset("training data contains fewer than two classes");
  }
  std::vector<FeatureVector> features;
  std::vector<int> labels;
  features.reserve(ds.size());
  for (const auto& ex : ds.examples()) {
    features.push_back(featurize(example_tokens(ex), cfg.features));
    labels.push_back(ex.label);
  }
  return sgd_train(features, ds.num_classes(), cfg,
                   [&](std::size_t i, const SoftLabel& p, std::span<double> r) {
                     for (std::size_t c = 0; c < p.size(); ++c) {
                       r[c] = p[c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0);
                     }
                   });
}

LinearTextClassifier train_soft(const std::vector<SoftExample>& examples, int num_classes,
                                const TrainConfig& cfg) {
  cfg.validate();
  if (examples.empty()) throw EmptyDataset("cannot train on an empty dataset");
  std::vector<double> mass(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<FeatureVector> features;
  features.reserve(examples.size());
  for (const auto& ex : examples) {
    if (static_cast<int>(ex.target.size()) != num_classes || !is_valid_soft_label(ex.target)) {
      throw MalformedRecord("invalid soft label");
    }
    for (std::size_t c = 0; c < mass.size(); ++c) mass[c] += ex.target[c];
    features.push_back(featurize(ex.tokens, cfg.features));
  }
  if (std::count_if(mass.begin(), mass.end(), [](double m) { return m > 0.0; }) < 2) {
    throw DegenerateDataset("soft labels place mass on fewer than two classes");
  }
  return sgd_train(features, num_classes, cfg,
                   [&](std::size_t i, const SoftLabel& p, std::span<double> r) {
                     const SoftLabel& s = examples[i].target;
                     for (std::size_t c = 0; c < p.size(); ++c) r[c] = p[c] - s[c];
                   });
}

// ---- serialization -------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'L', 'A', 'B'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptModel("unexpected end of model data");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const LinearTextClassifier& m) {
  std::string out(kMagic, 4);
  put_u32(out, LinearTextClassifier::kFormatVersion);
  const std::size_t payload_start = out.size();
  put_u32(out, static_cast<std::uint32_t>(m.num_classes()));
  put_u32(out, m.features().bucket_bits);
  put_u32(out, m.features().orders.mask());
  put_u64(out, m.metadata().size());
  out += m.metadata();
  for (double w : m.weights()) put_f64(out, w);
  for (double b : m.bias()) put_f64(out, b);
  put_u64(out, fnv1a64(std::string_view(out).substr(payload_start)));
  return out;
}

LinearTextClassifier deserialize_model(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != std::string_view(kMagic, 4)) throw CorruptModel("bad magic");
  const std::uint32_t version = in.u32();
  if (version != LinearTextClassifier::kFormatVersion) {
    throw VersionMismatch("model format version " + std::to_string(version) + ", expected " +
                          std::to_string(LinearTextClassifier::kFormatVersion));
  }
  const std::size_t payload_start = in.pos();
  const std::uint32_t nc = in.u32();
  const std::uint32_t bits = in.u32();
  const std::uint32_t mask = in.u32();
  if (nc < 2 || nc > 4096 || bits < 1 || bits > 26 || mask == 0 || mask > 3) {
    throw CorruptModel("implausible model header");
  }
  const std::uint64_t meta_len = in.u64();
  if (meta_len > in.remaining()) throw CorruptModel("unexpected end of model data");
  std::string meta(in.take(static_cast<std::size_t>(meta_len)));

  LinearTextClassifier m(static_cast<int>(nc), FeatureSpec{bits, NgramOrders::from_mask(mask)});
  auto w = m.mutable_weights();
  if (in.remaining() < (w.size() + nc + 1) * 8) throw CorruptModel("unexpected end of model data");
  for (double& x : w) x = in.f64();
  for (double& x : m.mutable_bias()) x = in.f64();
  const std::size_t payload_end = in.pos();
  const std::uint64_t checksum = in.u64();
  if (in.remaining() != 0) throw CorruptModel("trailing bytes after model");
  if (checksum != fnv1a64(bytes.substr(payload_start, payload_end - payload_start))) {
    throw CorruptModel("checksum mismatch");
  }
  m.set_metadata(std::move(meta));
  return m;
}

void save_model(const LinearTextClassifier& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  const std::string bytes = serialize_model(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

LinearTextClassifier load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptModel("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace plab
