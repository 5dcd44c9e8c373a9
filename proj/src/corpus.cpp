#include "plab/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace plab {

namespace {

// Byte length of a Unicode whitespace sequence at s[i], or 0.
std::size_t whitespace_len(std::string_view s, std::size_t i) {
  const auto b = [&](std::size_t k) { return static_cast<unsigned char>(s[i + k]); };
  const std::size_t rest = s.size() - i;
  const unsigned char c = b(0);
  if (c == ' ' || (c >= 0x09 && c <= 0x0d) || c == 0x1c || c == 0x1d || c == 0x1e ||
      c == 0x1f) {
    return 1;
  }
  if (c == 0xc2 && rest >= 2 && (b(1) == 0x85 || b(1) == 0xa0)) return 2;
  if (rest >= 3) {
    if (c == 0xe1 && b(1) == 0x9a && b(2) == 0x80) return 3;  // U+1680
    if (c == 0xe2 && b(1) == 0x80 &&
        (b(2) <= 0x8a || b(2) == 0xa8 || b(2) == 0xa9 || b(2) == 0xaf)) {
      return 3;  // U+2000..U+200A, U+2028, U+2029, U+202F
    }
    if (c == 0xe2 && b(1) == 0x81 && b(2) == 0x9f) return 3;  // U+205F
    if (c == 0xe3 && b(1) == 0x80 && b(2) == 0x80) return 3;  // U+3000
  }
  return 0;
}

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace

TokenSequence tokenize(std::string_view text) {
  TokenSequence out;
  std::string cur;
  std::size_t i = 0;
  while (i < text.size()) {
    if (const std::size_t ws = whitespace_len(text, i); ws > 0) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      i += ws;
      continue;
    }
    cur.push_back(ascii_lower(text[i]));
    ++i;
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string detokenize(const TokenSequence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

TokenSequence example_tokens(const Example& ex) {
  TokenSequence out = tokenize(ex.text);
  if (ex.text_pair) {
    out.emplace_back(kPairSeparator);
    for (auto& t : tokenize(*ex.text_pair)) out.push_back(std::move(t));
  }
  return out;
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kClean:
      return "clean";
    case Provenance::kPoisonLf:
      return "poison_lf";
    case Provenance::kPoisonCl:
      return "poison_cl";
    case Provenance::kPoisonAcl:
      return "poison_acl";
  }
  return "clean";
}

Provenance parse_provenance(std::string_view name) {
  if (name == "clean") return Provenance::kClean;
  if (name == "poison_lf") return Provenance::kPoisonLf;
  if (name == "poison_cl") return Provenance::kPoisonCl;
  if (name == "poison_acl") return Provenance::kPoisonAcl;
  throw MalformedRecord("unknown provenance '" + std::string(name) + "'");
}

LabeledDataset::LabeledDataset(int num_classes, std::vector<std::string> class_names)
    : num_classes_(num_classes), class_names_(std::move(class_names)) {
  if (num_classes_ < 1) throw BadSpec("num_classes must be positive");
  if (class_names_.empty()) {
    for (int c = 0; c < num_classes_; ++c) class_names_.push_back("c" + std::to_string(c));
  }
  if (static_cast<int>(class_names_.size()) != num_classes_) {
    throw BadSpec("class_names size does not match num_classes");
  }
}

void LabeledDataset::add(Example ex, Provenance origin) {
  if (ex.label < 0 || ex.label >= num_classes_) {
    throw MalformedRecord("label " + std::to_string(ex.label) + " out of range for id " + ex.id);
  }
  if (!provenance_.emplace(ex.id, origin).second) {
    throw MalformedRecord("duplicate id " + ex.id);
  }
  examples_.push_back(std::move(ex));
}

Provenance LabeledDataset::provenance(const std::string& id) const {
  auto it = provenance_.find(id);
  return it == provenance_.end() ? Provenance::kClean : it->second;
}

std::vector<std::size_t> LabeledDataset::label_histogram() const {
  std::vector<std::size_t> h(static_cast<std::size_t>(num_classes_), 0);
  for (const auto& ex : examples_) ++h[static_cast<std::size_t>(ex.label)];
  return h;
}

std::size_t LabeledDataset::count_poisons() const {
  std::size_t n = 0;
  for (const auto& ex : examples_) n += is_poison(provenance(ex.id)) ? 1 : 0;
  return n;
}

LabeledDataset combine(const LabeledDataset& clean, const LabeledDataset& poison) {
  LabeledDataset out = clean.empty_like();
  for (const auto& ex : clean.examples()) out.add(ex, clean.provenance(ex.id));
  for (const auto& ex : poison.examples()) out.add(ex, poison.provenance(ex.id));
  return out;
}

LabeledDataset load_jsonl(const std::string& path, const JsonlSchema& schema,
                          const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) throw EmptyDataset("cannot open " + path);
  LabeledDataset ds(static_cast<int>(class_names.size()), class_names);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedRecord(where + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains(schema.text_key) || !rec.contains(schema.label_key) ||
        !rec[schema.text_key].is_string()) {
      throw MalformedRecord(where + ": missing '" + schema.text_key + "' or '" +
                            schema.label_key + "'");
    }
    Example ex;
    ex.text = rec[schema.text_key].get<std::string>();
    if (schema.pair_key && rec.contains(*schema.pair_key)) {
      if (!rec[*schema.pair_key].is_string()) throw MalformedRecord(where + ": pair is not a string");
      ex.text_pair = rec[*schema.pair_key].get<std::string>();
    }
    const auto& lab = rec[schema.label_key];
    if (lab.is_string()) {
      auto it = std::find(class_names.begin(), class_names.end(), lab.get<std::string>());
      if (it == class_names.end()) {
        throw MalformedRecord(where + ": unknown label '" + lab.get<std::string>() + "'");
      }
      ex.label = static_cast<int>(it - class_names.begin());
    } else if (lab.is_number_integer()) {
      ex.label = lab.get<int>();
      if (ex.label < 0 || ex.label >= static_cast<int>(class_names.size())) {
        throw MalformedRecord(where + ": label index out of range");
      }
    } else {
      throw MalformedRecord(where + ": label must be a string or integer");
    }
    if (rec.contains("id")) {
      ex.id = rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump();
    } else {
      ex.id = std::to_string(line_no);
    }
    if (tokenize(ex.active_text()).empty()) throw MalformedRecord(where + ": empty text");
    Provenance origin = Provenance::kClean;
    if (rec.contains("provenance") && rec["provenance"].is_string()) {
      origin = parse_provenance(rec["provenance"].get<std::string>());
    }
    try {
      ds.add(std::move(ex), origin);
    } catch (const MalformedRecord& e) {
      throw MalformedRecord(where + ": " + e.what());
    }
  }
  if (ds.empty()) throw EmptyDataset(path + " contains no records");
  return ds;
}

std::string to_jsonl(const LabeledDataset& ds, const JsonlSchema& schema) {
  std::string out;
  const std::string pair_key = schema.pair_key.value_or("hypothesis");
  for (const auto& ex : ds.examples()) {
    nlohmann::ordered_json rec;
    rec["id"] = ex.id;
    rec[schema.text_key] = ex.text;
    if (ex.text_pair) rec[pair_key] = *ex.text_pair;
    rec[schema.label_key] = ds.class_names()[static_cast<std::size_t>(ex.label)];
    rec["provenance"] = std::string(provenance_name(ds.provenance(ex.id)));
    out += rec.dump();
    out.push_back('\n');
  }
  return out;
}

void save_jsonl(const LabeledDataset& ds, const std::string& path, const JsonlSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << to_jsonl(ds, schema);
}

std::string synth_token(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%03d", index);
  return buf;
}

namespace {

constexpr std::array<int, 4> kSenseSteps = {1, 6, 15, 28};

}  // namespace

SplitPair synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2) throw BadSpec("num_classes must be >= 2");
  if (spec.vocab_size < 20) throw BadSpec("vocab_size must be >= 20");
  if (spec.vocab_size / spec.num_classes < 1) throw BadSpec("vocab too small for class blocks");
  if (!(spec.class_skew >= 0.0 && spec.class_skew <= 1.0)) throw BadSpec("class_skew not in [0,1]");
  if (!(spec.context_coupling >= 0.0 && spec.context_coupling <= 1.0)) {
    throw BadSpec("context_coupling not in [0,1]");
  }
  if (spec.length_min < 1 || spec.length_max < spec.length_min) throw BadSpec("bad length_range");
  if (spec.n_train == 0 || spec.n_test == 0) throw BadSpec("n_train and n_test must be positive");

  const int block = spec.vocab_size / spec.num_classes;
  const int signal_tokens = block * spec.num_classes;
  std::vector<std::string> vocab;
  for (int i = 0; i < spec.vocab_size; ++i) vocab.push_back(synth_token(i));

  Rng rng(derive_seed(seed, "synth"));
  auto make = [&](std::size_t n, const char* prefix) {
    LabeledDataset ds(spec.num_classes, {});
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(rng.uniform(static_cast<std::uint64_t>(spec.num_classes)));
      const int len = spec.length_min +
                      static_cast<int>(rng.uniform(static_cast<std::uint64_t>(spec.length_max - spec.length_min + 1)));
      TokenSequence toks;
      int sense = 0;
      for (int t = 0; t < len; ++t) {
        // Senses follow a sparse circulant chain, so the stationary sense
        // distribution stays uniform and unigram marginals are unaffected.
        if (t > 0 && rng.bernoulli(spec.context_coupling)) {
          sense = (sense + kSenseSteps[rng.uniform(kSenseSteps.size())]) % block;
        } else {
          sense = static_cast<int>(rng.uniform(static_cast<std::uint64_t>(block)));
        }
        int token;
        if (rng.bernoulli(spec.class_skew)) {
          token = label * block + sense;
        } else {
          token = static_cast<int>(rng.uniform(static_cast<std::uint64_t>(spec.vocab_size)));
          if (token < signal_tokens) token = (token / block) * block + sense;
        }
        toks.push_back(vocab[static_cast<std::size_t>(token)]);
      }
      Example ex;
      ex.id = std::string(prefix) + std::to_string(i);
      ex.text = detokenize(toks);
      ex.label = label;
      ds.add(std::move(ex));
    }
    return ds;
  };
  SplitPair out;
  out.first = make(spec.n_train, "train-");
  out.second = make(spec.n_test, "test-");
  return out;
}

SplitPair split(const LabeledDataset& ds, double fraction, std::uint64_t seed) {
  if (ds.empty()) throw EmptyDataset("cannot split an empty dataset");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must be in (0,1)");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);
  const auto n_first =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ds.size())));
  SplitPair out{ds.empty_like(), ds.empty_like()};
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Example& ex = ds[order[i]];
    (i < n_first ? out.first : out.second).add(ex, ds.provenance(ex.id));
  }
  return out;
}

const std::vector<Neighbor>* NeighborTable::find(const std::string& token) const {
  auto it = neighbors.find(token);
  return it == neighbors.end() ? nullptr : &it->second;
}

NeighborTable build_neighbor_table(const LabeledDataset& ds, int window, std::size_t min_count,
                                   std::size_t top_m) {
  if (ds.empty()) throw EmptyDataset("neighbor table needs a non-empty dataset");
  if (window < 1) throw ConfigError("window must be >= 1");

  std::vector<TokenSequence> sentences;
  for (const auto& ex : ds.examples()) {
    sentences.push_back(tokenize(ex.text));
    if (ex.text_pair) sentences.push_back(tokenize(*ex.text_pair));
  }

  // Intern tokens in lexical order so ids are order-independent.
  std::map<std::string, std::size_t> freq;
  for (const auto& s : sentences) {
    for (const auto& t : s) ++freq[t];
  }
  std::vector<std::string> vocab;
  std::unordered_map<std::string, std::size_t> id_of;
  for (const auto& [tok, n] : freq) {
    id_of.emplace(tok, vocab.size());
    vocab.push_back(tok);
  }
  const std::size_t v = vocab.size();

  // Sparse co-occurrence rows: row[a][b] = times b occurs within the window of a.
  std::vector<std::map<std::size_t, std::int64_t>> rows(v);
  for (const auto& s : sentences) {
    const auto n = static_cast<std::ptrdiff_t>(s.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const std::size_t a = id_of.at(s[static_cast<std::size_t>(i)]);
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - window);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + window);
      for (std::ptrdiff_t j = lo; j <= hi; ++j) {
        if (j == i) continue;
        ++rows[a][id_of.at(s[static_cast<std::size_t>(j)])];
      }
    }
  }

  std::vector<bool> kept(v);
  std::vector<std::int64_t> sq_norm(v, 0);
  // Inverted index over context dimensions, restricted to kept tokens.
  std::vector<std::vector<std::pair<std::size_t, std::int64_t>>> postings(v);
  for (std::size_t a = 0; a < v; ++a) {
    kept[a] = freq.at(vocab[a]) >= min_count;
    for (const auto& [b, c] : rows[a]) sq_norm[a] += c * c;
    if (!kept[a]) continue;
    for (const auto& [b, c] : rows[a]) postings[b].emplace_back(a, c);
  }

  NeighborTable table;
  table.window = window;
  table.min_count = min_count;
  std::vector<std::int64_t> dot(v);
  for (std::size_t a = 0; a < v; ++a) {
    if (!kept[a]) continue;
    table.counts[vocab[a]] = freq.at(vocab[a]);
    std::fill(dot.begin(), dot.end(), 0);
    for (const auto& [b, c] : rows[a]) {
      for (const auto& [other, c2] : postings[b]) dot[other] += c * c2;
    }
    // Tokens sharing no context are not neighbors.
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t b = 0; b < v; ++b) {
      if (b == a || !kept[b] || dot[b] == 0) continue;
      const double score =
          static_cast<double>(dot[b]) /
          (std::sqrt(static_cast<double>(sq_norm[a])) * std::sqrt(static_cast<double>(sq_norm[b])));
      scored.emplace_back(score, b);
    }
    const auto fa = static_cast<std::int64_t>(freq.at(vocab[a]));
    auto freq_gap = [&](std::size_t b) {
      const auto fb = static_cast<std::int64_t>(freq.at(vocab[b]));
      return fb > fa ? fb - fa : fa - fb;
    };
    const std::size_t keep = std::min(top_m, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      [&](const auto& x, const auto& y) {
                        if (x.first != y.first) return x.first > y.first;
                        const auto gx = freq_gap(x.second), gy = freq_gap(y.second);
                        if (gx != gy) return gx < gy;
                        return x.second < y.second;
                      });
    auto& list = table.neighbors[vocab[a]];
    for (std::size_t i = 0; i < keep; ++i) list.push_back({vocab[scored[i].second], scored[i].first});
  }
  return table;
}

}  // namespace plab
