#pragma once

// Anchor-based entity tokenization. Each entity is described by its K nearest
// anchors (with hop distances in the undirected train graph) and up to M of
// its incident relation types; a small feed-forward encoder turns that token
// sequence into the entity vector, so the parameter count does not grow with
// the number of entities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "kgdata.hpp"
#include "matrix.hpp"
#include "models.hpp"
#include "random.hpp"

namespace triplere {

enum class AnchorStrategy { Degree, Random, Mixed };

inline std::string_view to_string(AnchorStrategy s) {
  switch (s) {
    case AnchorStrategy::Degree: return "degree";
    case AnchorStrategy::Random: return "random";
    case AnchorStrategy::Mixed: return "mixed";
  }
  return "?";
}

inline AnchorStrategy parse_anchor_strategy(std::string_view s) {
  if (s == "degree") return AnchorStrategy::Degree;
  if (s == "random") return AnchorStrategy::Random;
  if (s == "mixed") return AnchorStrategy::Mixed;
  throw ValidationError("unknown anchor strategy '" + std::string(s) + "' (expected degree, random or mixed)");
}

// Anchor entity ids, sorted ascending. A token's anchor index is a position in `anchors`.
struct AnchorSet {
  std::vector<EntityId> anchors;
  AnchorStrategy strategy = AnchorStrategy::Degree;
  std::uint64_t seed = 0;

  friend bool operator==(const AnchorSet&, const AnchorSet&) = default;
};

inline AnchorSet select_anchors(const KnowledgeGraph& kg, std::size_t n_anchors, AnchorStrategy strategy,
                                std::uint64_t seed) {
  const std::size_t n_e = kg.num_entities();
  if (n_anchors < 1 || n_anchors > n_e) {
    throw ValidationError("number of anchors must be in [1, " + std::to_string(n_e) + "], got " +
                          std::to_string(n_anchors));
  }
  std::vector<EntityId> ids(n_e);
  for (std::size_t i = 0; i < n_e; ++i) ids[i] = static_cast<EntityId>(i);

  const std::size_t n_degree = strategy == AnchorStrategy::Degree   ? n_anchors
                               : strategy == AnchorStrategy::Random ? 0
                                                                    : n_anchors - n_anchors / 2;
  std::stable_sort(ids.begin(), ids.end(), [&](EntityId a, EntityId b) { return kg.degree(a) > kg.degree(b); });
  std::vector<EntityId> chosen(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_degree));
  if (n_degree < n_anchors) {
    std::vector<EntityId> rest(ids.begin() + static_cast<std::ptrdiff_t>(n_degree), ids.end());
    std::sort(rest.begin(), rest.end());
    Rng rng = make_rng(seed, 0x616e63);
    shuffle(rest, rng);
    chosen.insert(chosen.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_anchors - n_degree));
  }
  std::sort(chosen.begin(), chosen.end());
  return {std::move(chosen), strategy, seed};
}

inline constexpr std::int32_t kNoAnchor = -1;
inline constexpr std::int32_t kNoDistance = -1;
inline constexpr RelationId kNoRelation = -1;

struct AnchorToken {
  std::int32_t anchor = kNoAnchor;  // index into AnchorSet::anchors
  std::int32_t distance = kNoDistance;

  friend bool operator==(const AnchorToken&, const AnchorToken&) = default;
};

struct NodeHash {
  std::vector<AnchorToken> anchors;  // exactly K, sorted by (distance, anchor), sentinels last
  std::vector<RelationId> context;   // exactly M, sentinels last

  friend bool operator==(const NodeHash&, const NodeHash&) = default;
};

struct Tokenization {
  AnchorSet anchors;
  std::size_t k = 0;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  std::size_t num_relations = 0;
  std::int32_t max_distance = 0;  // largest finite anchor distance in any hash
  std::vector<NodeHash> hashes;   // one per entity

  friend bool operator==(const Tokenization&, const Tokenization&) = default;
};

namespace detail {

// K nearest anchors for every node, by level-synchronous BFS from all anchors
// at once. A node only forwards anchors it has kept, which is exact: if anchor
// a is among v's K nearest at distance l, it is among the K nearest of v's
// predecessor on a shortest path, since any anchor beating it there would also
// beat it at v.
inline std::vector<std::vector<AnchorToken>> nearest_anchors(const KnowledgeGraph& kg, const AnchorSet& anchors,
                                                             std::size_t k) {
  const std::size_t n = kg.num_entities();
  std::vector<std::vector<AnchorToken>> labels(n);
  std::vector<std::size_t> level_start(n, 0);
  std::vector<EntityId> frontier;
  for (std::size_t i = 0; i < anchors.anchors.size(); ++i) {
    const auto a = static_cast<std::size_t>(anchors.anchors[i]);
    labels[a].push_back({static_cast<std::int32_t>(i), 0});
    frontier.push_back(anchors.anchors[i]);
  }
  std::vector<std::vector<std::int32_t>> pending(n);
  std::vector<EntityId> touched;
  for (std::int32_t level = 1; !frontier.empty(); ++level) {
    touched.clear();
    for (EntityId v : frontier) {
      const auto& vl = labels[static_cast<std::size_t>(v)];
      const std::size_t from = level_start[static_cast<std::size_t>(v)];
      for (const AdjacencyEntry& e : kg.adjacency(v)) {
        const auto w = static_cast<std::size_t>(e.neighbor);
        if (labels[w].size() >= k) continue;
        if (pending[w].empty()) touched.push_back(e.neighbor);
        for (std::size_t j = from; j < vl.size(); ++j) pending[w].push_back(vl[j].anchor);
      }
    }
    std::sort(touched.begin(), touched.end());
    frontier.clear();
    for (EntityId w : touched) {
      auto& cand = pending[static_cast<std::size_t>(w)];
      auto& wl = labels[static_cast<std::size_t>(w)];
      std::sort(cand.begin(), cand.end());
      cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
      const std::size_t before = wl.size();
      for (std::int32_t a : cand) {
        if (wl.size() >= k) break;
        const bool known = std::any_of(wl.begin(), wl.begin() + static_cast<std::ptrdiff_t>(before),
                                       [a](const AnchorToken& t) { return t.anchor == a; });
        if (!known) wl.push_back({a, level});
      }
      cand.clear();
      if (wl.size() > before) {
        level_start[static_cast<std::size_t>(w)] = before;
        frontier.push_back(w);
      }
    }
  }
  return labels;
}

}  // namespace detail

// Hashes for every entity. Context relations are the distinct relation types
// incident to the entity in train, ordered by a seeded hash and truncated to
// M (a deterministic sample without replacement), then sorted by id.
inline Tokenization tokenize_all(const KnowledgeGraph& kg, const AnchorSet& anchors, std::size_t k, std::size_t m,
                                 std::uint64_t seed) {
  if (k < 1) throw ValidationError("K must be at least 1");
  for (std::size_t i = 0; i < anchors.anchors.size(); ++i) {
    const EntityId a = anchors.anchors[i];
    if (a < 0 || static_cast<std::size_t>(a) >= kg.num_entities() || (i > 0 && anchors.anchors[i - 1] >= a)) {
      throw ValidationError("anchor set must hold distinct valid entity ids in ascending order");
    }
  }
  Tokenization tok{anchors, k, m, seed, kg.num_relations(), 0, {}};
  auto labels = detail::nearest_anchors(kg, anchors, k);
  tok.hashes.resize(kg.num_entities());
  std::vector<std::pair<std::uint64_t, RelationId>> rels;
  for (std::size_t e = 0; e < kg.num_entities(); ++e) {
    NodeHash& h = tok.hashes[e];
    h.anchors = std::move(labels[e]);
    for (const AnchorToken& t : h.anchors) tok.max_distance = std::max(tok.max_distance, t.distance);
    h.anchors.resize(k, AnchorToken{});

    rels.clear();
    for (const AdjacencyEntry& a : kg.adjacency(static_cast<EntityId>(e))) {
      rels.emplace_back(hash_combine(hash_combine(seed, e), static_cast<std::uint64_t>(a.relation)), a.relation);
    }
    std::sort(rels.begin(), rels.end(), [](const auto& x, const auto& y) { return x.second < y.second; });
    rels.erase(std::unique(rels.begin(), rels.end(), [](const auto& x, const auto& y) { return x.second == y.second; }),
               rels.end());
    std::sort(rels.begin(), rels.end());
    if (rels.size() > m) rels.resize(m);
    for (const auto& [_, r] : rels) h.context.push_back(r);
    std::sort(h.context.begin(), h.context.end());
    h.context.resize(m, kNoRelation);
  }
  return tok;
}

// Stable key order, so two equal tokenizations serialize to identical bytes.
inline nlohmann::ordered_json to_json(const Tokenization& tok) {
  nlohmann::ordered_json j;
  j["anchors"] = tok.anchors.anchors;
  j["strategy"] = to_string(tok.anchors.strategy);
  j["seed"] = tok.anchors.seed;
  j["context_seed"] = tok.seed;
  j["k"] = tok.k;
  j["m"] = tok.m;
  j["num_relations"] = tok.num_relations;
  j["max_distance"] = tok.max_distance;
  auto& ents = j["entities"] = nlohmann::ordered_json::array();
  for (const NodeHash& h : tok.hashes) {
    nlohmann::ordered_json e;
    auto& a = e["anchors"] = nlohmann::ordered_json::array();
    for (const AnchorToken& t : h.anchors) a.push_back({t.anchor, t.distance});
    e["context"] = h.context;
    ents.push_back(std::move(e));
  }
  return j;
}

inline Tokenization tokenization_from_json(const nlohmann::json& j) {
  try {
    Tokenization tok;
    tok.anchors.anchors = j.at("anchors").get<std::vector<EntityId>>();
    tok.anchors.strategy = parse_anchor_strategy(j.at("strategy").get<std::string>());
    tok.anchors.seed = j.at("seed").get<std::uint64_t>();
    tok.seed = j.at("context_seed").get<std::uint64_t>();
    tok.k = j.at("k").get<std::size_t>();
    tok.m = j.at("m").get<std::size_t>();
    tok.num_relations = j.at("num_relations").get<std::size_t>();
    tok.max_distance = j.at("max_distance").get<std::int32_t>();
    for (const auto& e : j.at("entities")) {
      NodeHash h;
      for (const auto& a : e.at("anchors")) h.anchors.push_back({a.at(0).get<std::int32_t>(), a.at(1).get<std::int32_t>()});
      h.context = e.at("context").get<std::vector<RelationId>>();
      if (h.anchors.size() != tok.k || h.context.size() != tok.m) throw ValidationError("hash length mismatch");
      tok.hashes.push_back(std::move(h));
    }
    return tok;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed vocabulary file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Encoder

// anchor:    K anchor tokens only.
// anchor_rm: anchors plus context relations read from the r_m segment of the
//            relation parameters (shared storage, projected when atom_dim != dim).
// anchor_r:  anchors plus context relations with their own atom embeddings.
enum class Encoding { Anchor, AnchorRm, AnchorR };

inline std::string_view to_string(Encoding e) {
  switch (e) {
    case Encoding::Anchor: return "anchor";
    case Encoding::AnchorRm: return "anchor_rm";
    case Encoding::AnchorR: return "anchor_r";
  }
  return "?";
}

inline Encoding parse_encoding(std::string_view s) {
  if (s == "anchor") return Encoding::Anchor;
  if (s == "anchor_rm" || s == "anchor+rm") return Encoding::AnchorRm;
  if (s == "anchor_r" || s == "anchor+r") return Encoding::AnchorR;
  throw ValidationError("unknown encoding '" + std::string(s) + "' (expected anchor, anchor_rm or anchor_r)");
}

enum class Activation { Relu, Gelu };

inline std::string_view to_string(Activation a) { return a == Activation::Relu ? "relu" : "gelu"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::Relu;
  if (s == "gelu") return Activation::Gelu;
  throw ValidationError("unknown activation '" + std::string(s) + "' (expected relu or gelu)");
}

// Every size the encoder's parameter tensors depend on. None of them is |E|.
struct EncoderShape {
  std::size_t n_anchors = 0;
  std::size_t n_relations = 0;
  std::size_t dim = 0;       // entity vector width d
  std::size_t atom_dim = 0;  // token embedding width
  std::size_t hidden = 0;
  std::size_t k = 0;
  std::size_t m = 0;
  std::int32_t max_distance = 0;
  Encoding encoding = Encoding::Anchor;
  Activation activation = Activation::Relu;

  // Atom rows: anchors, NO_ANCHOR, then (anchor_r) relations, then NO_RELATION.
  std::size_t no_anchor_row() const noexcept { return n_anchors; }
  std::size_t relation_row(RelationId r) const noexcept { return n_anchors + 1 + static_cast<std::size_t>(r); }
  std::size_t no_relation_row() const noexcept {
    return encoding == Encoding::AnchorR ? n_anchors + 1 + n_relations : n_anchors + 1;
  }
  std::size_t atom_rows() const noexcept {
    switch (encoding) {
      case Encoding::Anchor: return n_anchors + 1;
      case Encoding::AnchorRm: return n_anchors + 2;
      case Encoding::AnchorR: return n_anchors + n_relations + 2;
    }
    return 0;
  }
  // Distances 0..max_distance, plus one row for unreachable anchors.
  std::size_t distance_rows() const noexcept { return static_cast<std::size_t>(max_distance) + 2; }
  std::size_t sentinel_distance_row() const noexcept { return static_cast<std::size_t>(max_distance) + 1; }
  std::size_t context_slots() const noexcept { return encoding == Encoding::Anchor ? 0 : m; }
  std::size_t input_width() const noexcept { return (k + context_slots()) * atom_dim; }
  bool has_projection() const noexcept { return encoding == Encoding::AnchorRm && atom_dim != dim; }

  friend bool operator==(const EncoderShape&, const EncoderShape&) = default;
};

inline std::uint64_t encoder_parameter_count(const EncoderShape& s) {
  std::uint64_t n = 0;
  n += s.atom_rows() * s.atom_dim;
  n += s.distance_rows() * s.atom_dim;
  n += s.input_width() * s.hidden + s.hidden;
  n += s.hidden * s.dim + s.dim;
  if (s.has_projection()) n += s.atom_dim * s.dim;
  return n;
}

// Total for a NodePiece-encoded model: encoder plus the relation parameters.
inline std::uint64_t count_parameters(const ModelSpec& spec, const EncoderShape& shape) {
  return encoder_parameter_count(shape) + static_cast<std::uint64_t>(shape.n_relations) * spec.relation_width();
}

template <class T>
struct EncoderParams {
  Matrix<T> atoms;       // atom_rows × atom_dim
  Matrix<T> distances;   // distance_rows × atom_dim
  Matrix<T> w1;          // hidden × input_width
  Matrix<T> b1;          // 1 × hidden
  Matrix<T> w2;          // dim × hidden
  Matrix<T> b2;          // 1 × dim
  Matrix<T> projection;  // atom_dim × dim, anchor_rm with atom_dim != dim only

  // Fixed enumeration used by the optimizer and the checkpoint.
  template <class Fn>
  void for_each_tensor(Fn&& fn) {
    visit(*this, fn);
  }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const {
    visit(*this, fn);
  }

  static EncoderParams zeros(const EncoderShape& s) {
    EncoderParams p;
    p.atoms = Matrix<T>(s.atom_rows(), s.atom_dim);
    p.distances = Matrix<T>(s.distance_rows(), s.atom_dim);
    p.w1 = Matrix<T>(s.hidden, s.input_width());
    p.b1 = Matrix<T>(1, s.hidden);
    p.w2 = Matrix<T>(s.dim, s.hidden);
    p.b2 = Matrix<T>(1, s.dim);
    if (s.has_projection()) p.projection = Matrix<T>(s.atom_dim, s.dim);
    return p;
  }

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn& fn) {
    fn("atoms", self.atoms);
    fn("distances", self.distances);
    fn("w1", self.w1);
    fn("b1", self.b1);
    fn("w2", self.w2);
    fn("b2", self.b2);
    fn("projection", self.projection);
  }
};

inline void validate(const EncoderShape& s) {
  if (s.n_anchors == 0) throw ValidationError("encoder needs at least one anchor");
  if (s.dim == 0 || s.atom_dim == 0 || s.hidden == 0) throw ValidationError("encoder widths must be positive");
  if (s.k == 0) throw ValidationError("K must be at least 1");
  if (s.max_distance < 0) throw ValidationError("max_distance must be non-negative");
}

// Atom and distance tables uniform in ±1/sqrt(atom_dim); dense layers Glorot
// uniform with zero bias.
template <class T>
EncoderParams<T> init_encoder(const EncoderShape& s, std::uint64_t seed) {
  validate(s);
  auto p = EncoderParams<T>::zeros(s);
  Rng rng = make_rng(seed, 0x656e63);
  const auto fill = [&](Matrix<T>& m, double bound) {
    for (T& v : m.flat()) v = static_cast<T>((2.0 * uniform_unit(rng) - 1.0) * bound);
  };
  const double atom_bound = 1.0 / std::sqrt(static_cast<double>(s.atom_dim));
  fill(p.atoms, atom_bound);
  fill(p.distances, atom_bound);
  fill(p.w1, std::sqrt(6.0 / static_cast<double>(s.input_width() + s.hidden)));
  fill(p.w2, std::sqrt(6.0 / static_cast<double>(s.hidden + s.dim)));
  if (s.has_projection()) fill(p.projection, std::sqrt(6.0 / static_cast<double>(s.atom_dim + s.dim)));
  return p;
}

namespace detail {

template <class T>
inline T activate(Activation a, T z) {
  if (a == Activation::Relu) return z > T{} ? z : T{};
  return T(0.5) * z * (T(1) + std::erf(z / std::sqrt(T(2))));
}

template <class T>
inline T activate_grad(Activation a, T z) {
  if (a == Activation::Relu) return z > T{} ? T(1) : T{};
  const T cdf = T(0.5) * (T(1) + std::erf(z / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * z * z) / std::sqrt(T(2) * T(3.14159265358979323846));
  return cdf + z * pdf;
}

}  // namespace detail

// Intermediate values of one forward pass, kept for the backward pass.
template <class T>
struct EncoderCache {
  std::vector<T> input;
  std::vector<T> pre_activation;
  std::vector<T> hidden;
};

template <class T>
class NodePieceEncoder {
 public:
  NodePieceEncoder(EncoderShape shape, EncoderParams<T> params) : shape_(shape), params_(std::move(params)) {
    validate(shape_);
    std::vector<std::pair<std::size_t, std::size_t>> want, got;
    EncoderParams<T>::zeros(shape_).for_each_tensor(
        [&](const char*, const Matrix<T>& m) { want.emplace_back(m.rows(), m.cols()); });
    params_.for_each_tensor([&](const char*, const Matrix<T>& m) { got.emplace_back(m.rows(), m.cols()); });
    const bool ok = want == got;
    if (!ok) throw ContractError("encoder parameter shapes do not match the encoder shape");
  }

  const EncoderShape& shape() const noexcept { return shape_; }
  EncoderParams<T>& params() noexcept { return params_; }
  const EncoderParams<T>& params() const noexcept { return params_; }

  // Entity vector for `hash`. `relations` supplies r_m rows in anchor_rm mode
  // and is ignored otherwise. Fills `cache` when given.
  std::vector<T> encode(const NodeHash& hash, const ModelSpec& spec, const Matrix<T>& relations,
                        EncoderCache<T>* cache = nullptr) const {
    const EncoderShape& s = shape_;
    if (hash.anchors.size() != s.k || hash.context.size() != s.m) {
      throw ContractError("node hash has " + std::to_string(hash.anchors.size()) + " anchor and " +
                          std::to_string(hash.context.size()) + " context tokens, encoder expects " +
                          std::to_string(s.k) + " and " + std::to_string(s.m));
    }
    EncoderCache<T> local;
    EncoderCache<T>& c = cache ? *cache : local;
    c.input.assign(s.input_width(), T{});
    const std::size_t da = s.atom_dim;
    for (std::size_t slot = 0; slot < s.k; ++slot) {
      const auto [arow, drow] = anchor_rows(hash.anchors[slot]);
      T* dst = c.input.data() + slot * da;
      const auto atom = params_.atoms.row(arow);
      const auto dist = params_.distances.row(drow);
      for (std::size_t i = 0; i < da; ++i) dst[i] = atom[i] + dist[i];
    }
    for (std::size_t slot = 0; slot < s.context_slots(); ++slot) {
      T* dst = c.input.data() + (s.k + slot) * da;
      const RelationId r = hash.context[slot];
      check_relation(r);
      if (s.encoding == Encoding::AnchorRm && r != kNoRelation) {
        const auto rm = translation_segment(spec, relations, r);
        if (s.has_projection()) {
          for (std::size_t i = 0; i < da; ++i) {
            const auto prow = params_.projection.row(i);
            T acc{};
            for (std::size_t j = 0; j < s.dim; ++j) acc += prow[j] * rm[j];
            dst[i] = acc;
          }
        } else {
          std::copy(rm.begin(), rm.end(), dst);
        }
      } else {
        const auto atom = params_.atoms.row(r == kNoRelation ? s.no_relation_row() : s.relation_row(r));
        std::copy(atom.begin(), atom.end(), dst);
      }
    }
    c.pre_activation.assign(s.hidden, T{});
    c.hidden.assign(s.hidden, T{});
    for (std::size_t j = 0; j < s.hidden; ++j) {
      const auto w = params_.w1.row(j);
      T acc = params_.b1(0, j);
      for (std::size_t i = 0; i < c.input.size(); ++i) acc += w[i] * c.input[i];
      c.pre_activation[j] = acc;
      c.hidden[j] = detail::activate(s.activation, acc);
    }
    std::vector<T> out(s.dim);
    for (std::size_t o = 0; o < s.dim; ++o) {
      const auto w = params_.w2.row(o);
      T acc = params_.b2(0, o);
      for (std::size_t j = 0; j < s.hidden; ++j) acc += w[j] * c.hidden[j];
      out[o] = acc;
    }
    return out;
  }

  // Adds the gradients of a scalar loss, given d(loss)/d(output), into
  // `grads` (same layout as the parameters) and, in anchor_rm mode, into the
  // r_m segments of `relation_grads` via `touch_relation(r)` which must
  // return the gradient row for relation r.
  template <class TouchRelation>
  void backward(const NodeHash& hash, const ModelSpec& spec, const Matrix<T>& relations, const EncoderCache<T>& c,
                std::span<const T> grad_out, EncoderParams<T>& grads, TouchRelation&& touch_relation) const {
    const EncoderShape& s = shape_;
    std::vector<T> grad_hidden(s.hidden, T{});
    for (std::size_t o = 0; o < s.dim; ++o) {
      const T g = grad_out[o];
      if (g == T{}) continue;
      grads.b2(0, o) += g;
      auto gw = grads.w2.row(o);
      const auto w = params_.w2.row(o);
      for (std::size_t j = 0; j < s.hidden; ++j) {
        gw[j] += g * c.hidden[j];
        grad_hidden[j] += g * w[j];
      }
    }
    std::vector<T> grad_input(s.input_width(), T{});
    for (std::size_t j = 0; j < s.hidden; ++j) {
      const T g = grad_hidden[j] * detail::activate_grad(s.activation, c.pre_activation[j]);
      if (g == T{}) continue;
      grads.b1(0, j) += g;
      auto gw = grads.w1.row(j);
      const auto w = params_.w1.row(j);
      for (std::size_t i = 0; i < grad_input.size(); ++i) {
        gw[i] += g * c.input[i];
        grad_input[i] += g * w[i];
      }
    }
    const std::size_t da = s.atom_dim;
    for (std::size_t slot = 0; slot < s.k; ++slot) {
      const auto [arow, drow] = anchor_rows(hash.anchors[slot]);
      const T* src = grad_input.data() + slot * da;
      auto ga = grads.atoms.row(arow);
      auto gd = grads.distances.row(drow);
      for (std::size_t i = 0; i < da; ++i) {
        ga[i] += src[i];
        gd[i] += src[i];
      }
    }
    for (std::size_t slot = 0; slot < s.context_slots(); ++slot) {
      const T* src = grad_input.data() + (s.k + slot) * da;
      const RelationId r = hash.context[slot];
      if (s.encoding == Encoding::AnchorRm && r != kNoRelation) {
        std::span<T> grow = touch_relation(r);
        T* grm = grow.data() + spec.translation_offset();
        if (s.has_projection()) {
          const auto rm = translation_segment(spec, relations, r);
          for (std::size_t i = 0; i < da; ++i) {
            if (src[i] == T{}) continue;
            auto gp = grads.projection.row(i);
            const auto prow = params_.projection.row(i);
            for (std::size_t j = 0; j < s.dim; ++j) {
              gp[j] += src[i] * rm[j];
              grm[j] += src[i] * prow[j];
            }
          }
        } else {
          for (std::size_t i = 0; i < da; ++i) grm[i] += src[i];
        }
      } else {
        auto ga = grads.atoms.row(r == kNoRelation ? s.no_relation_row() : s.relation_row(r));
        for (std::size_t i = 0; i < da; ++i) ga[i] += src[i];
      }
    }
  }

  // Every entity vector, as a dense table.
  Matrix<T> encode_all(const Tokenization& tok, const ModelSpec& spec, const Matrix<T>& relations) const {
    Matrix<T> out(tok.hashes.size(), shape_.dim);
    for (std::size_t e = 0; e < tok.hashes.size(); ++e) {
      const auto v = encode(tok.hashes[e], spec, relations);
      std::copy(v.begin(), v.end(), out.row(e).begin());
    }
    return out;
  }

 private:
  std::pair<std::size_t, std::size_t> anchor_rows(const AnchorToken& t) const {
    if (t.anchor == kNoAnchor) return {shape_.no_anchor_row(), shape_.sentinel_distance_row()};
    if (t.anchor < 0 || static_cast<std::size_t>(t.anchor) >= shape_.n_anchors || t.distance < 0 ||
        t.distance > shape_.max_distance) {
      throw ContractError("anchor token (" + std::to_string(t.anchor) + ", " + std::to_string(t.distance) +
                          ") outside the atom vocabulary");
    }
    return {static_cast<std::size_t>(t.anchor), static_cast<std::size_t>(t.distance)};
  }

  void check_relation(RelationId r) const {
    if (r != kNoRelation && (r < 0 || static_cast<std::size_t>(r) >= shape_.n_relations)) {
      throw ContractError("context token " + std::to_string(r) + " outside the atom vocabulary");
    }
  }

  std::span<const T> translation_segment(const ModelSpec& spec, const Matrix<T>& relations, RelationId r) const {
    const std::ptrdiff_t off = spec.translation_offset();
    if (off < 0) throw ContractError("anchor_rm encoding needs a model with a translation segment");
    if (static_cast<std::size_t>(r) >= relations.rows()) throw ContractError("relation table too small for context");
    return relations.row(static_cast<std::size_t>(r)).subspan(static_cast<std::size_t>(off), spec.dim);
  }

  EncoderShape shape_;
  EncoderParams<T> params_;
};

// Free-function form of the encoder forward pass.
template <class T>
std::vector<T> encode_entity(const NodeHash& hash, const NodePieceEncoder<T>& encoder, const ModelSpec& spec,
                             const Matrix<T>& relations) {
  return encoder.encode(hash, spec, relations);
}

// Shape implied by a tokenization and the widths chosen for the model.
inline EncoderShape make_encoder_shape(const Tokenization& tok, std::size_t dim, std::size_t atom_dim,
                                       std::size_t hidden, Encoding encoding, Activation activation) {
  EncoderShape s;
  s.n_anchors = tok.anchors.anchors.size();
  s.n_relations = tok.num_relations;
  s.dim = dim;
  s.atom_dim = atom_dim ? atom_dim : dim;
  s.hidden = hidden ? hidden : dim;
  s.k = tok.k;
  s.m = tok.m;
  s.max_distance = tok.max_distance;
  s.encoding = encoding;
  s.activation = activation;
  return s;
}

}  // namespace triplere
