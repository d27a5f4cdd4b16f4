#pragma once

// Translation-distance scoring functions and their analytic gradients.
//
// Every model scores a triple as -||x||_p for a per-kind difference vector x:
//   TransE      x = h - t + r
//   PairRE      x = h∘r_h - t∘r_t
//   TripleREv1  x = h∘r_h - t∘r_t + r_m
//   TripleREv2  x = h∘(r_h + u) - t∘(r_t + u) + r_m
// Relation rows are laid out as contiguous segments: [r] for TransE,
// [r_h | r_t] for PairRE and [r_h | r_m | r_t] for both TripleRE versions.
// The residual offset u is added to every component (the all-ones vector
// scaled by u), so TripleREv2 with r_h = r_t = 0 and u = 1 is exactly TransE.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "error.hpp"
#include "kgdata.hpp"
#include "matrix.hpp"
#include "random.hpp"

namespace triplere {

enum class ModelKind { TransE, PairRE, TripleREv1, TripleREv2 };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::TransE: return "transe";
    case ModelKind::PairRE: return "pairre";
    case ModelKind::TripleREv1: return "triplere_v1";
    case ModelKind::TripleREv2: return "triplere_v2";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "transe") return ModelKind::TransE;
  if (s == "pairre") return ModelKind::PairRE;
  if (s == "triplere_v1" || s == "triplere") return ModelKind::TripleREv1;
  if (s == "triplere_v2") return ModelKind::TripleREv2;
  throw ValidationError("unknown model '" + std::string(s) + "' (expected transe, pairre, triplere_v1 or triplere_v2)");
}

struct ModelSpec {
  ModelKind kind = ModelKind::TripleREv2;
  std::size_t dim = 50;
  int norm_order = 1;
  double u = 1.0;  // residual offset, TripleREv2 only
  double gamma = 12.0;

  // Number of d-wide segments in a relation row.
  std::size_t relation_segments() const noexcept {
    switch (kind) {
      case ModelKind::TransE: return 1;
      case ModelKind::PairRE: return 2;
      default: return 3;
    }
  }
  std::size_t relation_width() const noexcept { return relation_segments() * dim; }

  // Column offset of the translation segment r_m (TransE: r), or -1 when absent.
  std::ptrdiff_t translation_offset() const noexcept {
    switch (kind) {
      case ModelKind::TransE: return 0;
      case ModelKind::PairRE: return -1;
      default: return static_cast<std::ptrdiff_t>(dim);
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline void validate(const ModelSpec& spec) {
  if (spec.dim == 0) throw ValidationError("dim must be positive");
  if (spec.norm_order != 1 && spec.norm_order != 2) throw ValidationError("norm order must be 1 or 2");
  if (!(spec.u >= 0) || !std::isfinite(spec.u)) throw ValidationError("u must be a finite non-negative number");
  if (!(spec.gamma > 0) || !std::isfinite(spec.gamma)) throw ValidationError("gamma must be positive");
}

enum class Side { Head, Tail };

inline std::string_view to_string(Side s) { return s == Side::Head ? "head" : "tail"; }

template <class T>
using EntityTable = Matrix<T>;
template <class T>
using RelationParams = Matrix<T>;

namespace detail {

// Component i of the difference vector, for a fixed model kind.
template <ModelKind K, class T>
inline T diff_at(std::size_t d, T u, const T* h, const T* r, const T* t, std::size_t i) noexcept {
  if constexpr (K == ModelKind::TransE) {
    return h[i] - t[i] + r[i];
  } else if constexpr (K == ModelKind::PairRE) {
    return h[i] * r[i] - t[i] * r[d + i];
  } else if constexpr (K == ModelKind::TripleREv1) {
    return h[i] * r[i] - t[i] * r[2 * d + i] + r[d + i];
  } else {
    return h[i] * (r[i] + u) - t[i] * (r[2 * d + i] + u) + r[d + i];
  }
}

// Calls fn(std::integral_constant<ModelKind, kind>) so kernels dispatch once per vector.
template <class Fn>
inline decltype(auto) dispatch_kind(ModelKind kind, Fn&& fn) {
  switch (kind) {
    case ModelKind::TransE: return fn(std::integral_constant<ModelKind, ModelKind::TransE>{});
    case ModelKind::PairRE: return fn(std::integral_constant<ModelKind, ModelKind::PairRE>{});
    case ModelKind::TripleREv1: return fn(std::integral_constant<ModelKind, ModelKind::TripleREv1>{});
    default: return fn(std::integral_constant<ModelKind, ModelKind::TripleREv2>{});
  }
}

template <class T>
inline T diff_component(const ModelSpec& spec, const T* h, const T* r, const T* t, std::size_t i) noexcept {
  return dispatch_kind(spec.kind, [&](auto k) { return diff_at<k.value>(spec.dim, static_cast<T>(spec.u), h, r, t, i); });
}

template <ModelKind K, class T>
inline T distance_k(std::size_t d, int p, T u, const T* h, const T* r, const T* t) noexcept {
  T acc{};
  if (p == 1) {
    for (std::size_t i = 0; i < d; ++i) acc += std::abs(diff_at<K>(d, u, h, r, t, i));
    return acc;
  }
  for (std::size_t i = 0; i < d; ++i) {
    const T x = diff_at<K>(d, u, h, r, t, i);
    acc += x * x;
  }
  return std::sqrt(acc);
}

template <class T>
inline T distance(const ModelSpec& spec, const T* h, const T* r, const T* t) noexcept {
  return dispatch_kind(spec.kind, [&](auto k) {
    return distance_k<k.value>(spec.dim, spec.norm_order, static_cast<T>(spec.u), h, r, t);
  });
}

template <class T>
inline void check_inputs(const ModelSpec& spec, std::span<const T> h, std::span<const T> r, std::span<const T> t) {
  if (h.size() != spec.dim || t.size() != spec.dim || r.size() != spec.relation_width()) {
    throw ContractError("score: expected |h|=|t|=" + std::to_string(spec.dim) + " and |r|=" +
                        std::to_string(spec.relation_width()) + ", got " + std::to_string(h.size()) + ", " +
                        std::to_string(r.size()) + ", " + std::to_string(t.size()));
  }
  for (auto s : {h, r, t}) {
    for (T v : s) {
      if (!std::isfinite(v)) throw ContractError("score: non-finite input");
    }
  }
}

// Adds coeff * d||x||_p / d(h, r, t) into the output pointers (any may be null).
// p = 1 uses sign(x) with sign(0) = 0; p = 2 has zero gradient at x = 0.
template <ModelKind K, class T>
inline void accumulate_distance_grad_k(std::size_t d, int p, T u, const T* h, const T* r, const T* t, T coeff, T* gh,
                                       T* gr, T* gt) {
  T scale = coeff;
  if (p == 2) {
    const T norm = distance_k<K>(d, p, u, h, r, t);
    if (norm == T{}) return;
    scale = coeff / norm;
  }
  // d(distance)/dx per component first, then one plain loop per output.
  thread_local std::vector<T> buf;
  buf.resize(d);
  T* g = buf.data();
  for (std::size_t i = 0; i < d; ++i) {
    const T x = diff_at<K>(d, u, h, r, t, i);
    g[i] = p == 1 ? (x > T{} ? scale : (x < T{} ? -scale : T{})) : scale * x;
  }
  if constexpr (K == ModelKind::TransE) {
    if (gh) for (std::size_t i = 0; i < d; ++i) gh[i] += g[i];
    if (gr) for (std::size_t i = 0; i < d; ++i) gr[i] += g[i];
    if (gt) for (std::size_t i = 0; i < d; ++i) gt[i] -= g[i];
  } else if constexpr (K == ModelKind::PairRE) {
    if (gh) for (std::size_t i = 0; i < d; ++i) gh[i] += g[i] * r[i];
    if (gt) for (std::size_t i = 0; i < d; ++i) gt[i] -= g[i] * r[d + i];
    if (gr) {
      for (std::size_t i = 0; i < d; ++i) gr[i] += g[i] * h[i];
      for (std::size_t i = 0; i < d; ++i) gr[d + i] -= g[i] * t[i];
    }
  } else {
    const T off = K == ModelKind::TripleREv2 ? u : T{};
    if (gh) for (std::size_t i = 0; i < d; ++i) gh[i] += g[i] * (r[i] + off);
    if (gt) for (std::size_t i = 0; i < d; ++i) gt[i] -= g[i] * (r[2 * d + i] + off);
    if (gr) {
      for (std::size_t i = 0; i < d; ++i) gr[i] += g[i] * h[i];
      for (std::size_t i = 0; i < d; ++i) gr[d + i] += g[i];
      for (std::size_t i = 0; i < d; ++i) gr[2 * d + i] -= g[i] * t[i];
    }
  }
}

template <class T>
inline void accumulate_distance_grad(const ModelSpec& spec, const T* h, const T* r, const T* t, T coeff, T* gh, T* gr,
                                     T* gt) {
  dispatch_kind(spec.kind, [&](auto k) {
    accumulate_distance_grad_k<k.value>(spec.dim, spec.norm_order, static_cast<T>(spec.u), h, r, t, coeff, gh, gr, gt);
  });
}

}  // namespace detail

// Plausibility of (h, r, t); always <= 0, higher is more plausible.
template <class T>
T score(const ModelSpec& spec, std::span<const T> h, std::span<const T> r, std::span<const T> t) {
  detail::check_inputs(spec, h, r, t);
  return -detail::distance(spec, h.data(), r.data(), t.data());
}

template <class T>
T score(const ModelSpec& spec, const std::vector<T>& h, const std::vector<T>& r, const std::vector<T>& t) {
  return score(spec, std::span<const T>(h), std::span<const T>(r), std::span<const T>(t));
}

template <class T>
struct ScoreGradient {
  std::vector<T> h, r, t;
};

// Gradient of L = -score with respect to each input.
template <class T>
ScoreGradient<T> grad(const ModelSpec& spec, std::span<const T> h, std::span<const T> r, std::span<const T> t) {
  detail::check_inputs(spec, h, r, t);
  ScoreGradient<T> g{std::vector<T>(h.size()), std::vector<T>(r.size()), std::vector<T>(t.size())};
  detail::accumulate_distance_grad(spec, h.data(), r.data(), t.data(), T{1}, g.h.data(), g.r.data(), g.t.data());
  return g;
}

template <class T>
ScoreGradient<T> grad(const ModelSpec& spec, const std::vector<T>& h, const std::vector<T>& r,
                      const std::vector<T>& t) {
  return grad(spec, std::span<const T>(h), std::span<const T>(r), std::span<const T>(t));
}

// Scores of `triple` with its `side` entity replaced by each candidate in turn.
// Uses the same kernel as `score`, so results are bit-identical to a scalar loop.
template <class T>
std::vector<T> score_batch_corrupted(const ModelSpec& spec, const EntityTable<T>& entities,
                                     const RelationParams<T>& relations, const Triple& triple, Side side,
                                     std::span<const EntityId> candidates) {
  const auto n_e = static_cast<EntityId>(entities.rows());
  if (entities.cols() != spec.dim || relations.cols() != spec.relation_width()) {
    throw ContractError("score_batch_corrupted: table widths do not match the model spec");
  }
  if (triple.head < 0 || triple.head >= n_e || triple.tail < 0 || triple.tail >= n_e || triple.relation < 0 ||
      static_cast<std::size_t>(triple.relation) >= relations.rows()) {
    throw ContractError("score_batch_corrupted: triple ids out of range");
  }
  const T* r = relations.row(static_cast<std::size_t>(triple.relation)).data();
  const T* h = entities.row(static_cast<std::size_t>(triple.head)).data();
  const T* t = entities.row(static_cast<std::size_t>(triple.tail)).data();
  std::vector<T> out(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const EntityId c = candidates[i];
    if (c < 0 || c >= n_e) throw ContractError("score_batch_corrupted: candidate id " + std::to_string(c) + " out of range");
    const T* e = entities.row(static_cast<std::size_t>(c)).data();
    out[i] = side == Side::Head ? -detail::distance(spec, e, r, t) : -detail::distance(spec, h, r, e);
  }
  return out;
}

template <class T>
struct ModelParams {
  EntityTable<T> entities;
  RelationParams<T> relations;
};

// Uniform in [-gamma/dim, +gamma/dim]; entities first, then relations, from one seeded stream.
template <class T>
ModelParams<T> init_params(const ModelSpec& spec, std::size_t n_entities, std::size_t n_relations,
                           std::uint64_t seed) {
  validate(spec);
  if (n_entities == 0 || n_relations == 0) throw ValidationError("init_params: sizes must be positive");
  const double bound = spec.gamma / static_cast<double>(spec.dim);
  Rng rng = make_rng(seed, 0x696e6974);
  ModelParams<T> p{EntityTable<T>(n_entities, spec.dim), RelationParams<T>(n_relations, spec.relation_width())};
  for (T& v : p.entities.flat()) v = static_cast<T>((2.0 * uniform_unit(rng) - 1.0) * bound);
  for (T& v : p.relations.flat()) v = static_cast<T>((2.0 * uniform_unit(rng) - 1.0) * bound);
  return p;
}

// Entity table plus relation parameters.
inline std::uint64_t count_parameters(const ModelSpec& spec, std::uint64_t n_entities, std::uint64_t n_relations) {
  return n_entities * spec.dim + n_relations * spec.relation_width();
}

}  // namespace triplere
