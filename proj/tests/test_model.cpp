#include <cmath>
#include <numbers>

#include "doctest.h"
#include "plab/model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace plab;
using plab::testing::random_model;
using plab::testing::random_soft;
using plab::testing::random_tokens;

namespace {

double l2(const FeatureVector& fv) {
  double s = 0.0;
  for (double v : fv.values) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("features_model") {

TEST_CASE("fnv1a64 of the empty string is the offset basis") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("featurize counts and normalizes") {
  const auto one = featurize({"a", "a"}, 1u << 18, {true, false});
  REQUIRE(one.size() == 1);
  CHECK(one.values[0] == doctest::Approx(1.0));
  CHECK(one.indices[0] == fnv1a64("a") % (1u << 18));

  const auto three = featurize({"a", "b"}, 1u << 18, {true, true});
  CHECK(three.size() == 3);
  CHECK(l2(three) == doctest::Approx(1.0));

  const auto bi = featurize({"a", "b"}, 1u << 18, {false, true});
  REQUIRE(bi.size() == 1);
  CHECK(bi.indices[0] == fnv1a64("a b") % (1u << 18));

  CHECK(featurize({}, 1u << 18, {true, true}).empty());
  CHECK_THROWS_AS(featurize({"a"}, 100, {true, true}), ConfigError);
}

TEST_CASE("featurize weights repeated n-grams by count") {
  const auto fv = featurize({"x", "y", "x"}, 1u << 18, {true, false});
  REQUIRE(fv.size() == 2);
  const auto ix = fnv1a64("x") % (1u << 18);
  for (std::size_t i = 0; i < fv.size(); ++i) {
    CHECK(fv.values[i] == doctest::Approx((fv.indices[i] == ix ? 2.0 : 1.0) / std::sqrt(5.0)));
  }
}

TEST_CASE("feature vectors are sorted, unique and unit length") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto fv = featurize(random_tokens(rng, 20), 64, {true, true});
    for (std::size_t i = 1; i < fv.size(); ++i) CHECK(fv.indices[i - 1] < fv.indices[i]);
    for (auto ix : fv.indices) CHECK(ix < 64u);
    CHECK(l2(fv) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("unigram features ignore token order") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto ts = random_tokens(rng, 12);
    const auto a = featurize(ts, 1u << 12, {true, false});
    rng.shuffle(ts);
    const auto b = featurize(ts, 1u << 12, {true, false});
    CHECK(a.indices == b.indices);
    CHECK(a.values == b.values);
  }
}

TEST_CASE("predict_proba examples") {
  FeatureSpec spec;
  spec.bucket_bits = 4;
  LinearTextClassifier m(3, spec);
  const auto fv = featurize({"a"}, spec);
  for (double p : m.predict_proba(fv)) CHECK(p == doctest::Approx(1.0 / 3.0));

  const double z1[] = {std::log(2.0), 0.0};
  const auto p = softmax(z1);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0));

  const double z2[] = {1000.0, 0.0};
  const auto q = softmax(z2);
  CHECK(std::isfinite(q[0]));
  CHECK(std::isfinite(q[1]));
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(q[1] == doctest::Approx(0.0));
}

TEST_CASE("argmax breaks ties by lowest index") {
  const double tie[] = {0.5, 0.5};
  CHECK(argmax(tie) == 0);
  const double three[] = {0.2, 0.7, 0.1};
  CHECK(argmax(three) == 1);
  FeatureSpec spec;
  spec.bucket_bits = 4;
  LinearTextClassifier m(2, spec);
  CHECK(m.predict(featurize({"a"}, spec)) == 0);
}

TEST_CASE("predict is invariant to a shared logit shift") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_model(3, 5, rng);
    const auto fv = m.featurize(random_tokens(rng));
    const int before = m.predict(fv);
    for (double& b : m.mutable_bias()) b += 17.25;
    CHECK(m.predict(fv) == before);
  }
}

TEST_CASE("predict_proba always returns a valid soft label") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_model(2 + static_cast<int>(rng.uniform(4)), 5, rng, 50.0);
    const auto p = m.predict_proba(m.featurize(random_tokens(rng)));
    CHECK(is_valid_soft_label(p));
  }
}

TEST_CASE("soft cross-entropy examples") {
  FeatureSpec spec;
  spec.bucket_bits = 4;
  LinearTextClassifier m(2, spec);
  const auto fv = featurize({"a"}, spec);
  CHECK(soft_cross_entropy(m, fv, {1.0, 0.0}) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));

  LinearTextClassifier u(3, spec);
  std::vector<double> gw, gb;
  soft_cross_entropy_grad(u, fv, {1.0 / 3, 1.0 / 3, 1.0 / 3}, gw, gb);
  for (double g : gw) CHECK(std::abs(g) < 1e-15);
  for (double g : gb) CHECK(std::abs(g) < 1e-15);
  CHECK(soft_cross_entropy(u, fv, {1.0 / 3, 1.0 / 3, 1.0 / 3}) == doctest::Approx(std::log(3.0)));
}

TEST_CASE("one-hot soft loss is the hard negative log-likelihood") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_model(3, 5, rng);
    const auto fv = m.featurize(random_tokens(rng));
    const int y = static_cast<int>(rng.uniform(3));
    SoftLabel s(3, 0.0);
    s[static_cast<std::size_t>(y)] = 1.0;
    const auto p = m.predict_proba(fv);
    CHECK(soft_cross_entropy(m, fv, s) == doctest::Approx(-std::log(p[static_cast<std::size_t>(y)])));
    std::vector<double> gw, gb;
    soft_cross_entropy_grad(m, fv, s, gw, gb);
    for (int c = 0; c < 3; ++c) {
      CHECK(gb[static_cast<std::size_t>(c)] == doctest::Approx(p[static_cast<std::size_t>(c)] - (c == y ? 1.0 : 0.0)));
    }
  }
}

TEST_CASE("soft cross-entropy gradient matches central differences") {
  CHECK(plab::testing::soft_gradient_worst_error(9, 100) < 1e-4);
}

TEST_CASE("train_hard fits separable data deterministically") {
  SynthSpec s;
  s.class_skew = 0.9;
  s.n_train = 1000;
  s.n_test = 10;
  const auto d = synth_dataset(s, 5).first;
  TrainConfig cfg;
  cfg.features.bucket_bits = 14;
  const auto m = train_hard(d, cfg);
  std::size_t ok = 0;
  for (const auto& ex : d.examples()) ok += m.predict(ex) == ex.label ? 1 : 0;
  CHECK(static_cast<double>(ok) / static_cast<double>(d.size()) >= 0.98);
  CHECK(train_hard(d, cfg) == m);
  cfg.seed = 2;
  CHECK_FALSE(train_hard(d, cfg) == m);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.features.orders = {false, false};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("training errors") {
  const auto one = plab::testing::make_dataset({{"a b", 1}, {"c d", 1}});
  CHECK_THROWS_AS(train_hard(one, TrainConfig{}), DegenerateDataset);
  CHECK_THROWS_AS(train_hard(one.empty_like(), TrainConfig{}), EmptyDataset);
  std::vector<SoftExample> bad = {{{"a"}, {0.7, 0.7}}};
  CHECK_THROWS_AS(train_soft(bad, 2, TrainConfig{}), MalformedRecord);
  std::vector<SoftExample> single = {{{"a"}, {1.0, 0.0}}, {{"b"}, {1.0, 0.0}}};
  CHECK_THROWS_AS(train_soft(single, 2, TrainConfig{}), DegenerateDataset);
}

TEST_CASE("train_soft with one-hot targets reproduces train_hard bit-exactly") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthSpec s = plab::testing::small_synth(300, 10);
    s.num_classes = 3;
    const auto d = synth_dataset(s, seed).first;
    std::vector<SoftExample> soft;
    for (const auto& ex : d.examples()) {
      SoftLabel t(3, 0.0);
      t[static_cast<std::size_t>(ex.label)] = 1.0;
      soft.push_back({example_tokens(ex), t});
    }
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = 3;
    cfg.features.bucket_bits = 10;
    const auto hard = train_hard(d, cfg);
    const auto st = train_soft(soft, 3, cfg);
    CHECK(hard == st);
  }
}

TEST_CASE("model serialization round-trips predictions bit-exactly") {
  Rng rng(10);
  auto m = random_model(3, 6, rng);
  m.set_metadata("{\"seed\":1}");
  const auto bytes = serialize_model(m);
  CHECK(bytes.substr(0, 4) == "PLAB");
  const auto back = deserialize_model(bytes);
  CHECK(back == m);
  CHECK(back.metadata() == m.metadata());
  for (int i = 0; i < 100; ++i) {
    const auto fv = m.featurize(random_tokens(rng));
    CHECK(back.predict_proba(fv) == m.predict_proba(fv));
  }

  plab::testing::TempDir dir("model");
  save_model(m, (dir / "m.plab").string());
  CHECK(load_model((dir / "m.plab").string()) == m);
  CHECK_THROWS_AS(load_model((dir / "missing.plab").string()), CorruptModel);
}

TEST_CASE("model deserialization rejects damaged input") {
  Rng rng(11);
  const auto bytes = serialize_model(random_model(2, 4, rng));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{8}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(deserialize_model(bytes.substr(0, cut)), CorruptModel);
  }
  std::string bumped = bytes;
  bumped[4] = static_cast<char>(bumped[4] + 1);
  CHECK_THROWS_AS(deserialize_model(bumped), VersionMismatch);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(magic), CorruptModel);
  std::string flipped = bytes;
  flipped[bytes.size() - 20] = static_cast<char>(flipped[bytes.size() - 20] ^ 0x40);
  CHECK_THROWS_AS(deserialize_model(flipped), CorruptModel);
  CHECK_THROWS_AS(deserialize_model(bytes + "x"), CorruptModel);
}

}  // TEST_SUITE
