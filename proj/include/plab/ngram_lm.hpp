#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <utility>

#include "plab/corpus.hpp"

namespace plab {

// Add-k smoothed bigram model with sentence boundary sentinels.
class NGramLanguageModel {
 public:
  static constexpr std::string_view kBos = "<s>";
  static constexpr std::string_view kEos = "</s>";

  NGramLanguageModel() = default;

  // Counts every text and text pair of `ds` as a separate sentence.
  static NGramLanguageModel fit(const LabeledDataset& ds, double add_k);
  static NGramLanguageModel fit(const std::vector<TokenSequence>& sentences, double add_k);

  // P(word | history); unseen words and histories use zero counts.
  double prob(std::string_view history, std::string_view word) const;
  double log_prob(std::string_view history, std::string_view word) const;

  // exp of mean negative log-probability over the N+1 transitions of
  // BOS w1 .. wN EOS.
  double perplexity(const TokenSequence& tokens) const;
  double sentence_log_prob(const TokenSequence& tokens) const;

  std::size_t bigram_count(std::string_view history, std::string_view word) const;
  std::size_t history_count(std::string_view history) const;
  std::size_t unigram_count(std::string_view word) const;
  // Continuation vocabulary: observed tokens plus EOS.
  std::size_t vocab_size() const { return vocab_size_; }
  double add_k() const { return add_k_; }

  // Distinct observed tokens (excluding sentinels), sorted.
  std::vector<std::string> vocabulary() const;

  // Human-readable counts table; not a stable format.
  std::string dump() const;

 private:
  struct PairHash {
    std::size_t operator()(const std::pair<std::string, std::string>& p) const {
      return static_cast<std::size_t>(fnv1a64(p.second, fnv1a64(p.first) ^ 0x1f));
    }
  };

  std::unordered_map<std::pair<std::string, std::string>, std::size_t, PairHash> bigrams_;
  std::unordered_map<std::string, std::size_t> unigrams_;
  std::unordered_map<std::string, std::size_t> histories_;
  std::size_t vocab_size_ = 1;
  double add_k_ = 0.1;
};

}  // namespace plab
