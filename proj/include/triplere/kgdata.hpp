#pragma once

// Triple storage, vocabularies, train-split adjacency, the filter index used
// for filtered ranking, TSV ingestion/serialization and synthetic graphs.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "error.hpp"
#include "random.hpp"

namespace triplere {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

enum class Split { Train, Valid, Test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + std::string(s) + "' (expected train, valid or test)");
}

enum class Direction : std::uint8_t { Out, In };

struct AdjacencyEntry {
  RelationId relation;
  Direction direction;
  EntityId neighbor;

  friend bool operator==(const AdjacencyEntry&, const AdjacencyEntry&) = default;
};

namespace detail {

constexpr std::uint64_t pack(std::int32_t a, std::int32_t b) noexcept {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    return hash_combine(pack(t.head, t.relation), static_cast<std::uint32_t>(t.tail));
  }
};

inline bool valid_name(std::string_view name) {
  return !name.empty() && name.find_first_of("\t\n\r") == std::string_view::npos;
}

}  // namespace detail

using TripleSet = std::unordered_set<Triple, detail::TripleHash>;

// Bijection between names and dense ids, one table each for entities and relations.
class Vocabulary {
 public:
  // Returns the existing id for `name` or assigns the next dense id.
  EntityId add_entity(std::string_view name) { return add(entity_ids_, entity_names_, name, "entity"); }
  RelationId add_relation(std::string_view name) { return add(relation_ids_, relation_names_, name, "relation"); }

  std::optional<EntityId> find_entity(std::string_view name) const { return find(entity_ids_, name); }
  std::optional<RelationId> find_relation(std::string_view name) const { return find(relation_ids_, name); }

  const std::string& entity_name(EntityId id) const { return entity_names_.at(static_cast<std::size_t>(id)); }
  const std::string& relation_name(RelationId id) const { return relation_names_.at(static_cast<std::size_t>(id)); }

  std::size_t num_entities() const noexcept { return entity_names_.size(); }
  std::size_t num_relations() const noexcept { return relation_names_.size(); }

  const std::vector<std::string>& entity_names() const noexcept { return entity_names_; }
  const std::vector<std::string>& relation_names() const noexcept { return relation_names_; }

  // Vocabulary whose names are the decimal ids themselves.
  static Vocabulary numeric(std::size_t n_entities, std::size_t n_relations) {
    Vocabulary v;
    for (std::size_t i = 0; i < n_entities; ++i) v.add_entity(std::to_string(i));
    for (std::size_t i = 0; i < n_relations; ++i) v.add_relation(std::to_string(i));
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.entity_names_ == b.entity_names_ && a.relation_names_ == b.relation_names_;
  }

 private:
  static std::int32_t add(std::unordered_map<std::string, std::int32_t>& ids, std::vector<std::string>& names,
                          std::string_view name, const char* kind) {
    if (!detail::valid_name(name)) {
      throw ValidationError(std::string("invalid ") + kind + " name '" + std::string(name) + "'");
    }
    auto [it, inserted] = ids.try_emplace(std::string(name), static_cast<std::int32_t>(names.size()));
    if (inserted) names.emplace_back(name);
    return it->second;
  }

  static std::optional<std::int32_t> find(const std::unordered_map<std::string, std::int32_t>& ids,
                                          std::string_view name) {
    auto it = ids.find(std::string(name));
    if (it == ids.end()) return std::nullopt;
    return it->second;
  }

  std::unordered_map<std::string, EntityId> entity_ids_;
  std::vector<std::string> entity_names_;
  std::unordered_map<std::string, RelationId> relation_ids_;
  std::vector<std::string> relation_names_;
};

// Immutable after construction. Adjacency is built from the train split only.
class KnowledgeGraph {
 public:
  KnowledgeGraph(Vocabulary vocab, std::vector<Triple> train, std::vector<Triple> valid, std::vector<Triple> test)
      : vocab_(std::move(vocab)) {
    splits_[0] = std::move(train);
    splits_[1] = std::move(valid);
    splits_[2] = std::move(test);
    validate();
    build_adjacency();
  }

  const Vocabulary& vocab() const noexcept { return vocab_; }
  std::size_t num_entities() const noexcept { return vocab_.num_entities(); }
  std::size_t num_relations() const noexcept { return vocab_.num_relations(); }

  const std::vector<Triple>& split(Split s) const noexcept { return splits_[static_cast<int>(s)]; }
  const std::vector<Triple>& train() const noexcept { return splits_[0]; }
  const std::vector<Triple>& valid() const noexcept { return splits_[1]; }
  const std::vector<Triple>& test() const noexcept { return splits_[2]; }

  std::span<const AdjacencyEntry> adjacency(EntityId e) const {
    const auto i = static_cast<std::size_t>(e);
    return {adjacency_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::size_t degree(EntityId e) const { return adjacency(e).size(); }
  std::size_t num_adjacency_entries() const noexcept { return adjacency_.size(); }

 private:
  void validate() {
    const auto n_e = static_cast<std::int64_t>(num_entities());
    const auto n_r = static_cast<std::int64_t>(num_relations());
    TripleSet seen_any;
    for (int s = 0; s < 3; ++s) {
      TripleSet seen;
      std::vector<Triple> kept;
      kept.reserve(splits_[s].size());
      std::size_t duplicates = 0;
      for (const Triple& t : splits_[s]) {
        if (t.head < 0 || t.head >= n_e || t.tail < 0 || t.tail >= n_e || t.relation < 0 || t.relation >= n_r) {
          throw RangeError("triple (" + std::to_string(t.head) + ", " + std::to_string(t.relation) + ", " +
                           std::to_string(t.tail) + ") out of range for |E|=" + std::to_string(n_e) +
                           ", |R|=" + std::to_string(n_r));
        }
        if (!seen.insert(t).second) {
          ++duplicates;
          continue;
        }
        if (seen_any.contains(t)) {
          throw ValidationError("triple (" + vocab_.entity_name(t.head) + ", " + vocab_.relation_name(t.relation) +
                                ", " + vocab_.entity_name(t.tail) + ") appears in more than one split");
        }
        kept.push_back(t);
      }
      if (duplicates) {
        warn("dropped " + std::to_string(duplicates) + " duplicate triple(s) from " +
             std::string(to_string(static_cast<Split>(s))) + " split");
      }
      seen_any.insert(kept.begin(), kept.end());
      splits_[s] = std::move(kept);
    }
    if (splits_[0].empty()) throw ValidationError("train split is empty");
  }

  void build_adjacency() {
    offsets_.assign(num_entities() + 1, 0);
    for (const Triple& t : train()) {
      ++offsets_[static_cast<std::size_t>(t.head) + 1];
      ++offsets_[static_cast<std::size_t>(t.tail) + 1];
    }
    for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
    adjacency_.resize(offsets_.back());
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (const Triple& t : train()) {
      adjacency_[cursor[static_cast<std::size_t>(t.head)]++] = {t.relation, Direction::Out, t.tail};
      adjacency_[cursor[static_cast<std::size_t>(t.tail)]++] = {t.relation, Direction::In, t.head};
    }
  }

  Vocabulary vocab_;
  std::vector<Triple> splits_[3];
  std::vector<std::size_t> offsets_;
  std::vector<AdjacencyEntry> adjacency_;
};

// Known true completions over train ∪ valid ∪ test.
class FilterIndex {
 public:
  bool contains(const Triple& t) const { return all_.contains(t); }

  // Sorted ascending; empty when the pair never occurs.
  std::span<const EntityId> known_tails(EntityId head, RelationId relation) const {
    return lookup(tails_, detail::pack(head, relation));
  }
  std::span<const EntityId> known_heads(RelationId relation, EntityId tail) const {
    return lookup(heads_, detail::pack(relation, tail));
  }

  std::size_t size() const noexcept { return all_.size(); }

  friend FilterIndex build_filter(const KnowledgeGraph& kg);

 private:
  static std::span<const EntityId> lookup(const std::unordered_map<std::uint64_t, std::vector<EntityId>>& m,
                                          std::uint64_t key) {
    auto it = m.find(key);
    if (it == m.end()) return {};
    return it->second;
  }

  TripleSet all_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> tails_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> heads_;
};

inline FilterIndex build_filter(const KnowledgeGraph& kg) {
  FilterIndex f;
  for (Split s : {Split::Train, Split::Valid, Split::Test}) {
    for (const Triple& t : kg.split(s)) {
      f.all_.insert(t);
      f.tails_[detail::pack(t.head, t.relation)].push_back(t.tail);
      f.heads_[detail::pack(t.relation, t.tail)].push_back(t.head);
    }
  }
  for (auto& [_, v] : f.tails_) std::sort(v.begin(), v.end());
  for (auto& [_, v] : f.heads_) std::sort(v.begin(), v.end());
  return f;
}

// ---------------------------------------------------------------------------
// TSV ingestion

enum class TripleFormat { Names, Ids };

inline TripleFormat parse_triple_format(std::string_view s) {
  if (s == "tsv-names") return TripleFormat::Names;
  if (s == "tsv-ids") return TripleFormat::Ids;
  throw ValidationError("unknown triple format '" + std::string(s) + "' (expected tsv-names or tsv-ids)");
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

struct RawLine {
  std::size_t line;
  std::string_view fields[3];
};

// Reads a whole file and yields the fields of every data line.
class TsvReader {
 public:
  explicit TsvReader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text_ = ss.str();
  }

  // Calls fn(line_number, fields) for each non-empty, non-comment line.
  template <class Fn>
  void for_each(std::size_t expected_fields, Fn&& fn) const {
    std::string_view text = text_;
    std::size_t line_no = 0;
    while (!text.empty()) {
      ++line_no;
      const auto nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty() || line.front() == '#') continue;
      auto fields = split_tabs(line);
      if (fields.size() != expected_fields) {
        throw ParseError(path_.string() + ": expected " + std::to_string(expected_fields) + " tab-separated fields, got " +
                             std::to_string(fields.size()),
                         line_no);
      }
      fn(line_no, fields);
    }
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::string text_;
};

inline std::vector<std::string> read_name_list(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    names.push_back(line);
  }
  return names;
}

inline std::int64_t parse_id(std::string_view field, const std::filesystem::path& path, std::size_t line) {
  if (field.empty()) throw ParseError(path.string() + ": empty id field", line);
  std::int64_t v = 0;
  bool neg = false;
  std::size_t i = 0;
  if (field[0] == '-') {
    neg = true;
    i = 1;
  }
  if (i == field.size()) throw ParseError(path.string() + ": malformed id '" + std::string(field) + "'", line);
  for (; i < field.size(); ++i) {
    const char c = field[i];
    if (c < '0' || c > '9') throw ParseError(path.string() + ": malformed id '" + std::string(field) + "'", line);
    v = v * 10 + (c - '0');
    if (v > INT32_MAX) throw RangeError(path.string() + ": id '" + std::string(field) + "' too large (line " +
                                        std::to_string(line) + ")");
  }
  return neg ? -v : v;
}

// Collects split triples from one or more TSV sources into a graph.
class GraphBuilder {
 public:
  GraphBuilder(TripleFormat format, std::optional<Vocabulary> fixed_vocab)
      : format_(format), fixed_(fixed_vocab.has_value()) {
    if (fixed_vocab) vocab_ = std::move(*fixed_vocab);
  }

  void add(Split split, std::string_view h, std::string_view r, std::string_view t, const std::filesystem::path& path,
           std::size_t line) {
    Triple triple;
    if (format_ == TripleFormat::Ids) {
      const auto hi = parse_id(h, path, line), ri = parse_id(r, path, line), ti = parse_id(t, path, line);
      const auto check = [&](std::int64_t v, std::size_t bound, const char* what) {
        if (v < 0 || (fixed_ && v >= static_cast<std::int64_t>(bound))) {
          throw RangeError(path.string() + ": " + what + " id " + std::to_string(v) + " out of range (line " +
                           std::to_string(line) + ")");
        }
      };
      check(hi, vocab_.num_entities(), "entity");
      check(ti, vocab_.num_entities(), "entity");
      check(ri, vocab_.num_relations(), "relation");
      triple = {static_cast<EntityId>(hi), static_cast<RelationId>(ri), static_cast<EntityId>(ti)};
      max_entity_ = std::max<std::int64_t>({max_entity_, hi, ti});
      max_relation_ = std::max(max_relation_, ri);
    } else if (fixed_) {
      triple = {lookup_entity(h, path, line), lookup_relation(r, path, line), lookup_entity(t, path, line)};
    } else {
      const EntityId head = vocab_.add_entity(h);
      const RelationId rel = vocab_.add_relation(r);
      const EntityId tail = vocab_.add_entity(t);
      triple = {head, rel, tail};
    }
    splits_[static_cast<int>(split)].push_back(triple);
  }

  KnowledgeGraph build() && {
    if (format_ == TripleFormat::Ids && !fixed_) {
      // Ids must be dense: every id up to the maximum has to occur.
      std::vector<char> seen_e(static_cast<std::size_t>(max_entity_ + 1), 0);
      std::vector<char> seen_r(static_cast<std::size_t>(max_relation_ + 1), 0);
      for (const auto& s : splits_) {
        for (const Triple& t : s) {
          seen_e[static_cast<std::size_t>(t.head)] = seen_e[static_cast<std::size_t>(t.tail)] = 1;
          seen_r[static_cast<std::size_t>(t.relation)] = 1;
        }
      }
      for (std::size_t i = 0; i < seen_e.size(); ++i) {
        if (!seen_e[i]) throw RangeError("entity ids are not dense: id " + std::to_string(i) + " never occurs");
      }
      for (std::size_t i = 0; i < seen_r.size(); ++i) {
        if (!seen_r[i]) throw RangeError("relation ids are not dense: id " + std::to_string(i) + " never occurs");
      }
      vocab_ = Vocabulary::numeric(seen_e.size(), seen_r.size());
    }
    return KnowledgeGraph(std::move(vocab_), std::move(splits_[0]), std::move(splits_[1]), std::move(splits_[2]));
  }

 private:
  EntityId lookup_entity(std::string_view name, const std::filesystem::path& path, std::size_t line) const {
    if (auto id = vocab_.find_entity(name)) return *id;
    throw ValidationError(path.string() + ": unknown entity '" + std::string(name) + "' (line " + std::to_string(line) +
                          ")");
  }
  RelationId lookup_relation(std::string_view name, const std::filesystem::path& path, std::size_t line) const {
    if (auto id = vocab_.find_relation(name)) return *id;
    throw ValidationError(path.string() + ": unknown relation '" + std::string(name) + "' (line " +
                          std::to_string(line) + ")");
  }

  TripleFormat format_;
  bool fixed_;
  Vocabulary vocab_;
  std::vector<Triple> splits_[3];
  std::int64_t max_entity_ = -1;
  std::int64_t max_relation_ = -1;
};

}  // namespace detail

// Loads a graph from either
//   * a directory holding train.tsv plus optional valid.tsv / test.tsv (and
//     optionally entities.txt / relations.txt fixing the id assignment), or
//   * a single file whose lines carry a fourth column naming the split.
// Without a fixed vocabulary, ids follow first appearance: train, valid, test.
inline KnowledgeGraph load_triples(const std::filesystem::path& path, TripleFormat format = TripleFormat::Names) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw IoError("no such file or directory: " + path.string());

  if (!fs::is_directory(path)) {
    detail::GraphBuilder builder(format, std::nullopt);
    // Split labels are read first so that id assignment still follows train, valid, test order.
    detail::TsvReader reader(path);
    std::vector<std::vector<std::pair<std::size_t, std::vector<std::string_view>>>> by_split(3);
    reader.for_each(4, [&](std::size_t line, const std::vector<std::string_view>& f) {
      Split s;
      try {
        s = parse_split(f[3]);
      } catch (const ValidationError&) {
        throw ParseError(path.string() + ": unknown split label '" + std::string(f[3]) + "'", line);
      }
      by_split[static_cast<int>(s)].emplace_back(line, f);
    });
    for (int s = 0; s < 3; ++s) {
      for (const auto& [line, f] : by_split[s]) builder.add(static_cast<Split>(s), f[0], f[1], f[2], path, line);
    }
    return std::move(builder).build();
  }

  std::optional<Vocabulary> vocab;
  const fs::path entities = path / "entities.txt", relations = path / "relations.txt";
  if (fs::exists(entities) && fs::exists(relations)) {
    Vocabulary v;
    for (const auto& n : detail::read_name_list(entities)) {
      if (v.add_entity(n) + 1 != static_cast<EntityId>(v.num_entities())) {
        throw ValidationError(entities.string() + ": duplicate entity name '" + n + "'");
      }
    }
    for (const auto& n : detail::read_name_list(relations)) {
      if (v.add_relation(n) + 1 != static_cast<RelationId>(v.num_relations())) {
        throw ValidationError(relations.string() + ": duplicate relation name '" + n + "'");
      }
    }
    vocab = std::move(v);
  }
  detail::GraphBuilder builder(format, std::move(vocab));
  for (Split s : {Split::Train, Split::Valid, Split::Test}) {
    const fs::path file = path / (std::string(to_string(s)) + ".tsv");
    if (!fs::exists(file)) {
      if (s == Split::Train) throw IoError("missing " + file.string());
      continue;
    }
    detail::TsvReader reader(file);
    reader.for_each(3, [&](std::size_t line, const std::vector<std::string_view>& f) {
      builder.add(s, f[0], f[1], f[2], file, line);
    });
  }
  return std::move(builder).build();
}

// Writes train.tsv, valid.tsv, test.tsv (names) plus entities.txt and relations.txt.
inline void save_graph(const KnowledgeGraph& kg, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto open = [](const fs::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
  };
  const auto& v = kg.vocab();
  for (Split s : {Split::Train, Split::Valid, Split::Test}) {
    const fs::path p = dir / (std::string(to_string(s)) + ".tsv");
    auto out = open(p);
    for (const Triple& t : kg.split(s)) {
      out << v.entity_name(t.head) << '\t' << v.relation_name(t.relation) << '\t' << v.entity_name(t.tail) << '\n';
    }
    if (!out) throw IoError("write failed: " + p.string());
  }
  {
    auto out = open(dir / "entities.txt");
    for (const auto& n : v.entity_names()) out << n << '\n';
  }
  {
    auto out = open(dir / "relations.txt");
    for (const auto& n : v.relation_names()) out << n << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic graphs

enum class Pattern { Random, InversePairs, Symmetric };

inline Pattern parse_pattern(std::string_view s) {
  if (s == "random") return Pattern::Random;
  if (s == "inverse-pairs") return Pattern::InversePairs;
  if (s == "symmetric") return Pattern::Symmetric;
  throw ValidationError("unknown pattern '" + std::string(s) + "' (expected random, inverse-pairs or symmetric)");
}

struct SyntheticSpec {
  std::size_t n_entities = 0;
  std::size_t n_relations = 1;
  std::size_t n_triples = 0;
  Pattern pattern = Pattern::Random;
  std::uint64_t seed = 0;
  // Fractions of held-out facts. For `random` these are fractions of all
  // triples; for `inverse-pairs` fractions of the inverse-direction facts.
  // `symmetric` ignores them: every train fact's mirror goes to test.
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
};

namespace detail {

// `count` distinct (head, relation, tail) with head != tail, relations drawn from `relations`.
inline std::vector<Triple> distinct_triples(std::size_t n_entities, std::span<const RelationId> relations,
                                            std::size_t count, bool unordered_pairs, Rng& rng) {
  const std::uint64_t pairs = n_entities * (n_entities - 1) / (unordered_pairs ? 2 : 1);
  const std::uint64_t capacity = pairs * relations.size();
  if (count > capacity) {
    throw ValidationError("requested " + std::to_string(count) + " distinct triples but only " +
                          std::to_string(capacity) + " are possible");
  }
  std::vector<Triple> out;
  out.reserve(count);
  if (count * 2 > capacity) {
    // Dense request: enumerate and shuffle.
    for (RelationId r : relations) {
      for (std::size_t h = 0; h < n_entities; ++h) {
        for (std::size_t t = unordered_pairs ? h + 1 : 0; t < n_entities; ++t) {
          if (h != t) out.push_back({static_cast<EntityId>(h), r, static_cast<EntityId>(t)});
        }
      }
    }
    shuffle(out, rng);
    out.resize(count);
    return out;
  }
  TripleSet seen;
  while (out.size() < count) {
    auto h = static_cast<EntityId>(uniform_index(rng, n_entities));
    auto t = static_cast<EntityId>(uniform_index(rng, n_entities - 1));
    if (t >= h) ++t;
    if (unordered_pairs && h > t) std::swap(h, t);
    const Triple tr{h, relations[uniform_index(rng, relations.size())], t};
    if (seen.insert(tr).second) out.push_back(tr);
  }
  return out;
}

inline std::size_t fraction_count(std::size_t n, double f) {
  return static_cast<std::size_t>(static_cast<double>(n) * f + 0.5);
}

}  // namespace detail

// Deterministic for a fixed spec. Entity names are e<i>, relation names r<j>.
//  random:        distinct random triples split by the held-out fractions.
//  inverse-pairs: relation 2k+1 is the inverse of 2k. All forward facts go to
//                 train; each inverse fact goes to train, valid or test, so
//                 every held-out fact has its forward fact in train.
//  symmetric:     train holds (a, r, b); test holds exactly the mirrors (b, r, a).
inline KnowledgeGraph generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_entities < 2) throw ValidationError("n_entities must be at least 2");
  if (spec.n_relations < 1) throw ValidationError("n_relations must be at least 1");
  if (spec.n_triples < 1) throw ValidationError("n_triples must be at least 1");
  if (spec.valid_fraction < 0 || spec.test_fraction < 0 || spec.valid_fraction + spec.test_fraction >= 1) {
    throw ValidationError("held-out fractions must be non-negative and sum to less than 1");
  }
  if (spec.n_entities > INT32_MAX || spec.n_relations > INT32_MAX) throw ValidationError("graph too large");

  Vocabulary vocab;
  for (std::size_t i = 0; i < spec.n_entities; ++i) vocab.add_entity("e" + std::to_string(i));
  for (std::size_t i = 0; i < spec.n_relations; ++i) vocab.add_relation("r" + std::to_string(i));

  Rng rng = make_rng(spec.seed, 0x6b67);
  std::vector<Triple> train, valid, test;

  switch (spec.pattern) {
    case Pattern::Random: {
      std::vector<RelationId> rels(spec.n_relations);
      for (std::size_t i = 0; i < rels.size(); ++i) rels[i] = static_cast<RelationId>(i);
      auto triples = detail::distinct_triples(spec.n_entities, rels, spec.n_triples, false, rng);
      const std::size_t n_valid = detail::fraction_count(triples.size(), spec.valid_fraction);
      const std::size_t n_test = detail::fraction_count(triples.size(), spec.test_fraction);
      if (n_valid + n_test >= triples.size()) throw ValidationError("held-out fractions leave no train triples");
      valid.assign(triples.begin(), triples.begin() + n_valid);
      test.assign(triples.begin() + n_valid, triples.begin() + n_valid + n_test);
      train.assign(triples.begin() + n_valid + n_test, triples.end());
      break;
    }
    case Pattern::InversePairs: {
      if (spec.n_relations % 2 != 0) throw ValidationError("inverse-pairs needs an even number of relations");
      if (spec.n_triples < 2) throw ValidationError("inverse-pairs needs at least 2 triples");
      std::vector<RelationId> forward;
      for (std::size_t i = 0; i < spec.n_relations; i += 2) forward.push_back(static_cast<RelationId>(i));
      const auto base = detail::distinct_triples(spec.n_entities, forward, spec.n_triples / 2, false, rng);
      const std::size_t n_valid = detail::fraction_count(base.size(), spec.valid_fraction);
      const std::size_t n_test = detail::fraction_count(base.size(), spec.test_fraction);
      for (std::size_t i = 0; i < base.size(); ++i) {
        const Triple& f = base[i];
        const Triple inv{f.tail, f.relation + 1, f.head};
        train.push_back(f);
        if (i < n_valid) {
          valid.push_back(inv);
        } else if (i < n_valid + n_test) {
          test.push_back(inv);
        } else {
          train.push_back(inv);
        }
      }
      break;
    }
    case Pattern::Symmetric: {
      if (spec.n_triples < 2) throw ValidationError("symmetric needs at least 2 triples");
      std::vector<RelationId> rels(spec.n_relations);
      for (std::size_t i = 0; i < rels.size(); ++i) rels[i] = static_cast<RelationId>(i);
      const auto base = detail::distinct_triples(spec.n_entities, rels, spec.n_triples / 2, true, rng);
      for (const Triple& f : base) {
        // Orientation of the train copy is random so train is not all "low id first".
        const bool flip = (rng() & 1) != 0;
        const Triple a = flip ? Triple{f.tail, f.relation, f.head} : f;
        train.push_back(a);
        test.push_back({a.tail, a.relation, a.head});
      }
      break;
    }
  }
  return KnowledgeGraph(std::move(vocab), std::move(train), std::move(valid), std::move(test));
}

}  // namespace triplere
