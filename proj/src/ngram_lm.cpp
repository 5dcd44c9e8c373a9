#include "plab/ngram_lm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace plab {

NGramLanguageModel NGramLanguageModel::fit(const LabeledDataset& ds, double add_k) {
  if (ds.empty()) throw EmptyDataset("language model needs a non-empty corpus");
  std::vector<TokenSequence> sentences;
  for (const auto& ex : ds.examples()) {
    sentences.push_back(tokenize(ex.text));
    if (ex.text_pair) sentences.push_back(tokenize(*ex.text_pair));
  }
  return fit(sentences, add_k);
}

NGramLanguageModel NGramLanguageModel::fit(const std::vector<TokenSequence>& sentences, double add_k) {
  if (!(add_k > 0.0) || !std::isfinite(add_k)) throw ConfigError("add_k must be > 0");
  if (sentences.empty()) throw EmptyDataset("language model needs a non-empty corpus");
  NGramLanguageModel lm;
  lm.add_k_ = add_k;
  for (const auto& s : sentences) {
    std::string prev(kBos);
    for (const auto& w : s) {
      ++lm.bigrams_[{prev, w}];
      ++lm.histories_[prev];
      ++lm.unigrams_[w];
      prev = w;
    }
    ++lm.bigrams_[{prev, std::string(kEos)}];
    ++lm.histories_[prev];
  }
  lm.vocab_size_ = lm.unigrams_.size() + 1;
  return lm;
}

std::size_t NGramLanguageModel::bigram_count(std::string_view history, std::string_view word) const {
  auto it = bigrams_.find({std::string(history), std::string(word)});
  return it == bigrams_.end() ? 0 : it->second;
}

std::size_t NGramLanguageModel::history_count(std::string_view history) const {
  auto it = histories_.find(std::string(history));
  return it == histories_.end() ? 0 : it->second;
}

std::size_t NGramLanguageModel::unigram_count(std::string_view word) const {
  auto it = unigrams_.find(std::string(word));
  return it == unigrams_.end() ? 0 : it->second;
}

double NGramLanguageModel::prob(std::string_view history, std::string_view word) const {
  return (static_cast<double>(bigram_count(history, word)) + add_k_) /
         (static_cast<double>(history_count(history)) + add_k_ * static_cast<double>(vocab_size_));
}

double NGramLanguageModel::log_prob(std::string_view history, std::string_view word) const {
  return std::log(prob(history, word));
}

double NGramLanguageModel::sentence_log_prob(const TokenSequence& tokens) const {
  double total = 0.0;
  std::string_view prev = kBos;
  for (const auto& w : tokens) {
    total += log_prob(prev, w);
    prev = w;
  }
  return total + log_prob(prev, kEos);
}

double NGramLanguageModel::perplexity(const TokenSequence& tokens) const {
  const double n = static_cast<double>(tokens.size() + 1);
  return std::exp(-sentence_log_prob(tokens) / n);
}

std::vector<std::string> NGramLanguageModel::vocabulary() const {
  std::vector<std::string> v;
  v.reserve(unigrams_.size());
  for (const auto& [w, c] : unigrams_) v.push_back(w);
  std::sort(v.begin(), v.end());
  return v;
}

std::string NGramLanguageModel::dump() const {
  std::vector<std::pair<std::pair<std::string, std::string>, std::size_t>> rows(bigrams_.begin(), bigrams_.end());
  std::sort(rows.begin(), rows.end());
  std::ostringstream out;
  out << "# add_k=" << add_k_ << " V=" << vocab_size_ << "\n";
  for (const auto& [key, c] : rows) out << key.first << '\t' << key.second << '\t' << c << '\n';
  return out.str();
}

}  // namespace plab
