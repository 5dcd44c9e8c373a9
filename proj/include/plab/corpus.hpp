#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "plab/common.hpp"

namespace plab {

using TokenSequence = std::vector<std::string>;

// Lowercases ASCII and splits on Unicode whitespace. Punctuation stays
// attached to its token, so "(42)" survives as one token.
TokenSequence tokenize(std::string_view text);
std::string detokenize(const TokenSequence& tokens);

enum class Provenance { kClean, kPoisonLf, kPoisonCl, kPoisonAcl };

std::string_view provenance_name(Provenance p);
Provenance parse_provenance(std::string_view name);
inline bool is_poison(Provenance p) { return p != Provenance::kClean; }

struct Example {
  std::string id;
  std::string text;
  std::optional<std::string> text_pair;
  int label = 0;

  // Token-level operations act on the hypothesis when a pair is present.
  const std::string& active_text() const { return text_pair ? *text_pair : text; }
  void set_active_text(std::string s) {
    if (text_pair) {
      text_pair = std::move(s);
    } else {
      text = std::move(s);
    }
  }
};

// Separator between premise and hypothesis in model/kNN input.
inline constexpr std::string_view kPairSeparator = "[sep]";

// Full model input: text tokens, then separator and pair tokens when present.
TokenSequence example_tokens(const Example& ex);

class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(int num_classes, std::vector<std::string> class_names);

  void add(Example ex, Provenance origin = Provenance::kClean);

  const std::vector<Example>& examples() const { return examples_; }
  const Example& operator[](std::size_t i) const { return examples_[i]; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }

  int num_classes() const { return num_classes_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  Provenance provenance(const std::string& id) const;
  const std::unordered_map<std::string, Provenance>& provenance_map() const { return provenance_; }

  // Same classes, no examples.
  LabeledDataset empty_like() const { return LabeledDataset(num_classes_, class_names_); }
  std::vector<std::size_t> label_histogram() const;
  std::size_t count_poisons() const;

 private:
  int num_classes_ = 0;
  std::vector<std::string> class_names_;
  std::vector<Example> examples_;
  std::unordered_map<std::string, Provenance> provenance_;
};

// D_train = D_clean ∪ D_poison, clean examples first.
LabeledDataset combine(const LabeledDataset& clean, const LabeledDataset& poison);

struct JsonlSchema {
  std::string text_key = "text";
  std::optional<std::string> pair_key = "hypothesis";
  std::string label_key = "label";
};

LabeledDataset load_jsonl(const std::string& path, const JsonlSchema& schema,
                          const std::vector<std::string>& class_names);

// Dump format: one object per line with id, text, [pair], label name, provenance.
void save_jsonl(const LabeledDataset& ds, const std::string& path, const JsonlSchema& schema = {});
std::string to_jsonl(const LabeledDataset& ds, const JsonlSchema& schema = {});

struct SynthSpec {
  int num_classes = 2;
  int vocab_size = 200;
  double class_skew = 0.4;
  int length_min = 4;
  int length_max = 10;
  std::size_t n_train = 4000;
  std::size_t n_test = 1000;
  // Probability that a token's sense is a successor of the previous token's
  // sense rather than a fresh draw. Same-sense tokens of different classes
  // then share contexts, like antonyms in natural text, and bigrams become
  // predictable. Unigram marginals unaffected.
  double context_coupling = 1.0;
};

struct SplitPair {
  LabeledDataset first;
  LabeledDataset second;
};

SplitPair synth_dataset(const SynthSpec& spec, std::uint64_t seed);
std::string synth_token(int index);

SplitPair split(const LabeledDataset& ds, double fraction, std::uint64_t seed);

struct Neighbor {
  std::string token;
  double score = 0.0;
};

struct NeighborTable {
  std::map<std::string, std::vector<Neighbor>> neighbors;
  // Frequency of every token that passed min_count.
  std::map<std::string, std::size_t> counts;
  int window = 1;
  std::size_t min_count = 1;

  bool contains(const std::string& token) const { return neighbors.count(token) != 0; }
  const std::vector<Neighbor>* find(const std::string& token) const;
};

// Cosine over symmetric-window co-occurrence counts. Equal scores are
// ordered by closeness in frequency to the key token, then lexically.
NeighborTable build_neighbor_table(const LabeledDataset& ds, int window, std::size_t min_count,
                                   std::size_t top_m);

}  // namespace plab
