#include <cmath>
#include <map>

#include "doctest.h"
#include "plab/ngram_lm.hpp"
#include "test_util.hpp"

using namespace plab;

namespace {

const std::vector<TokenSequence> kToy = {{"a", "b"}, {"a", "c"}};

std::vector<TokenSequence> random_corpus(Rng& rng, std::size_t max_sentences) {
  std::vector<TokenSequence> c;
  const auto n = 1 + rng.uniform(max_sentences);
  for (std::uint64_t i = 0; i < n; ++i) {
    TokenSequence s;
    const auto len = 1 + rng.uniform(5);
    for (std::uint64_t j = 0; j < len; ++j) s.push_back(std::string(1, static_cast<char>('a' + rng.uniform(5))));
    c.push_back(s);
  }
  return c;
}

// Counts and probabilities straight from the add-k formula.
double brute_ppl(const std::vector<TokenSequence>& corpus, const TokenSequence& s, double k) {
  std::map<std::pair<std::string, std::string>, double> big;
  std::map<std::string, double> hist;
  std::map<std::string, int> vocab;
  for (const auto& c : corpus) {
    std::string prev = "<s>";
    for (const auto& w : c) {
      big[{prev, w}] += 1;
      hist[prev] += 1;
      vocab[w] = 1;
      prev = w;
    }
    big[{prev, "</s>"}] += 1;
    hist[prev] += 1;
  }
  const double v = static_cast<double>(vocab.size()) + 1.0;
  double lp = 0.0;
  std::string prev = "<s>";
  TokenSequence seq = s;
  seq.push_back("</s>");
  for (const auto& w : seq) {
    lp += std::log((big[{prev, w}] + k) / (hist[prev] + k * v));
    prev = w;
  }
  return std::exp(-lp / static_cast<double>(seq.size()));
}

}  // namespace

TEST_SUITE("ngram_lm") {

TEST_CASE("fit counts boundary transitions") {
  const auto lm = NGramLanguageModel::fit(kToy, 1.0);
  CHECK(lm.bigram_count(NGramLanguageModel::kBos, "a") == 2);
  CHECK(lm.bigram_count("a", "b") == 1);
  CHECK(lm.bigram_count("b", NGramLanguageModel::kEos) == 1);
  CHECK(lm.history_count("a") == 2);
  CHECK(lm.unigram_count("a") == 2);
  CHECK(lm.vocab_size() == 4);
  CHECK(lm.vocabulary() == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("fit from a dataset counts text and text pair separately") {
  LabeledDataset ds(2, {"x", "y"});
  ds.add({"1", "a b", std::string("a c"), 0});
  const auto lm = NGramLanguageModel::fit(ds, 1.0);
  CHECK(lm.bigram_count(NGramLanguageModel::kBos, "a") == 2);
  CHECK(lm.vocab_size() == 4);
  CHECK(lm.perplexity({"a", "b"}) == doctest::Approx(std::cbrt(15.0)).epsilon(1e-12));
}

TEST_CASE("fit rejects bad smoothing and empty corpora") {
  CHECK_THROWS_AS(NGramLanguageModel::fit(kToy, 0.0), ConfigError);
  CHECK_THROWS_AS(NGramLanguageModel::fit(kToy, -1.0), ConfigError);
  CHECK_THROWS_AS(NGramLanguageModel::fit(std::vector<TokenSequence>{}, 1.0), EmptyDataset);
  CHECK_THROWS_AS(NGramLanguageModel::fit(LabeledDataset(2, {"x", "y"}), 1.0), EmptyDataset);
}

TEST_CASE("refitting gives an identical model") {
  const auto a = NGramLanguageModel::fit(kToy, 0.1);
  const auto b = NGramLanguageModel::fit(kToy, 0.1);
  CHECK(a.dump() == b.dump());
}

TEST_CASE("toy perplexity is the cube root of 15") {
  const auto lm = NGramLanguageModel::fit(kToy, 1.0);
  CHECK(lm.prob(NGramLanguageModel::kBos, "a") == doctest::Approx(0.5));
  CHECK(lm.prob("a", "b") == doctest::Approx(1.0 / 3.0));
  CHECK(lm.prob("b", NGramLanguageModel::kEos) == doctest::Approx(0.4));
  const double expected = std::cbrt(15.0);
  CHECK(std::abs(lm.perplexity({"a", "b"}) - expected) < 1e-9);
  CHECK(std::abs(brute_ppl(kToy, {"a", "b"}, 1.0) - expected) < 1e-9);
}

TEST_CASE("empty sentence scores only the boundary transition") {
  const auto lm = NGramLanguageModel::fit(kToy, 1.0);
  CHECK(lm.perplexity({}) == doctest::Approx(1.0 / lm.prob(NGramLanguageModel::kBos, NGramLanguageModel::kEos)));
}

TEST_CASE("perplexity matches the formula on random corpora") {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto corpus = random_corpus(rng, 12);
    const double k = 0.05 + rng.uniform01();
    const auto lm = NGramLanguageModel::fit(corpus, k);
    TokenSequence s = random_corpus(rng, 1)[0];
    if (rng.bernoulli(0.3)) s.push_back("unseen");
    CHECK(lm.perplexity(s) == doctest::Approx(brute_ppl(corpus, s, k)).epsilon(1e-12));
  }
}

TEST_CASE("conditional distributions sum to one") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto lm = NGramLanguageModel::fit(random_corpus(rng, 20), 0.1);
    auto continuations = lm.vocabulary();
    continuations.emplace_back(NGramLanguageModel::kEos);
    auto histories = lm.vocabulary();
    histories.emplace_back(NGramLanguageModel::kBos);
    histories.emplace_back("never-seen");
    for (const auto& h : histories) {
      double sum = 0.0;
      for (const auto& w : continuations) sum += lm.prob(h, w);
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("fitting ignores sentence order") {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    auto corpus = random_corpus(rng, 15);
    const auto a = NGramLanguageModel::fit(corpus, 0.1);
    rng.shuffle(corpus);
    const auto b = NGramLanguageModel::fit(corpus, 0.1);
    const auto s = random_corpus(rng, 1)[0];
    CHECK(a.perplexity(s) == b.perplexity(s));
  }
}

TEST_CASE("unseen sentence scores worse than observed-transition sentences") {
  const auto lm = NGramLanguageModel::fit(kToy, 1.0);
  const double unseen = lm.perplexity({"zz", "yy"});
  const std::vector<std::string> words = {"a", "b", "c"};
  for (const auto& x : words) {
    for (const auto& y : words) {
      const bool observed = lm.bigram_count(NGramLanguageModel::kBos, x) > 0 && lm.bigram_count(x, y) > 0 &&
                            lm.bigram_count(y, NGramLanguageModel::kEos) > 0;
      if (observed) CHECK(lm.perplexity({x, y}) < unseen);
    }
  }
  // An unseen history backs off to 1/V, so seen tokens in an unobserved
  // order can score below fully unseen ones.
  CHECK(lm.perplexity({"b", "a"}) > unseen);
}

TEST_CASE("a zero-count token is never a likelier continuation than the most frequent one") {
  Rng rng(15);
  for (int trial = 0; trial < 300; ++trial) {
    const auto corpus = random_corpus(rng, 20);
    const auto lm = NGramLanguageModel::fit(corpus, 0.1);
    std::string top;
    std::size_t best = 0;
    for (const auto& w : lm.vocabulary()) {
      if (lm.unigram_count(w) > best) {
        best = lm.unigram_count(w);
        top = w;
      }
    }
    const auto& s = corpus[rng.uniform(corpus.size())];
    for (std::size_t i = 0; i <= s.size(); ++i) {
      const std::string h = i == 0 ? std::string(NGramLanguageModel::kBos) : s[i - 1];
      CHECK(lm.prob(h, "zzz") <= lm.prob(h, top));
      CHECK(lm.log_prob(h, "zzz") <= lm.log_prob(h, top));
    }
  }
}

}  // TEST_SUITE
