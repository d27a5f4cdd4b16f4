#pragma once

// Negative sampling, the self-adversarial logsigmoid loss, sparse/dense Adam
// and single training steps.
//
// Per positive triple with score s and negatives n_i:
//   L = -log σ(γ + s) - Σ_i w_i log σ(-(γ + n_i)),   w = softmax(α n) (constant)
// A step averages L over the batch for tail corruption and for head
// corruption, then averages the two sides.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "config.hpp"
#include "error.hpp"
#include "kgdata.hpp"
#include "matrix.hpp"
#include "models.hpp"
#include "nodepiece.hpp"
#include "random.hpp"

namespace triplere {

struct NegativeBatch {
  Side side = Side::Tail;
  Matrix<EntityId> candidates;  // batch × n
};

inline constexpr std::size_t kFilteredSamplingRetries = 64;

// Uniform corruptions of `side`. In filtered mode a candidate completing a
// known triple is redrawn; after kFilteredSamplingRetries failed draws the
// slot keeps a raw draw and a warning is emitted once per batch.
inline NegativeBatch sample_negatives(const KnowledgeGraph& kg, const FilterIndex& filter,
                                      std::span<const Triple> batch, Side side, std::size_t n, NegativeMode mode,
                                      std::uint64_t seed) {
  if (n < 1) throw ValidationError("number of negatives must be at least 1");
  const std::uint64_t n_e = kg.num_entities();
  Rng rng = make_rng(seed, side == Side::Head ? 0x68656164 : 0x7461696c);
  NegativeBatch out{side, Matrix<EntityId>(batch.size(), n)};
  bool fell_back = false;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Triple t = batch[b];
    auto row = out.candidates.row(b);
    for (std::size_t j = 0; j < n; ++j) {
      auto c = static_cast<EntityId>(uniform_index(rng, n_e));
      if (mode == NegativeMode::Filtered) {
        std::size_t tries = 0;
        for (;;) {
          (side == Side::Head ? t.head : t.tail) = c;
          if (!filter.contains(t)) break;
          if (++tries > kFilteredSamplingRetries) {
            fell_back = true;
            break;
          }
          c = static_cast<EntityId>(uniform_index(rng, n_e));
        }
      }
      row[j] = c;
    }
  }
  if (fell_back) warn("filtered negative sampling fell back to raw candidates for at least one slot");
  return out;
}

// softmax(α · scores), max-shifted.
template <class T>
std::vector<T> adversarial_weights(std::span<const T> scores, double alpha) {
  std::vector<T> w(scores.size());
  if (scores.empty()) return w;
  const T a = static_cast<T>(alpha);
  T mx = a * scores[0];
  for (T s : scores) mx = std::max(mx, a * s);
  T sum{};
  for (std::size_t i = 0; i < scores.size(); ++i) sum += (w[i] = std::exp(a * scores[i] - mx));
  for (T& x : w) x /= sum;
  return w;
}

template <class T>
std::vector<T> adversarial_weights(const std::vector<T>& scores, double alpha) {
  return adversarial_weights(std::span<const T>(scores), alpha);
}

// log σ(x) without overflow for any finite x.
template <class T>
T log_sigmoid(T x) {
  return std::min(x, T{}) - std::log1p(std::exp(-std::abs(x)));
}

template <class T>
T sigmoid(T x) {
  if (x >= T{}) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T loss(T pos_score, std::span<const T> neg_scores, std::span<const T> weights, double gamma) {
  require(neg_scores.size() == weights.size(), "loss: one weight per negative score required");
  const T g = static_cast<T>(gamma);
  T l = -log_sigmoid(g + pos_score);
  for (std::size_t i = 0; i < neg_scores.size(); ++i) l -= weights[i] * log_sigmoid(-(g + neg_scores[i]));
  return l;
}

template <class T>
T loss(T pos_score, const std::vector<T>& neg_scores, const std::vector<T>& weights, double gamma) {
  return loss(pos_score, std::span<const T>(neg_scores), std::span<const T>(weights), gamma);
}

// ---------------------------------------------------------------------------
// State

// Gradient rows for a subset of table rows, in first-touch order.
template <class T>
class SparseRows {
 public:
  explicit SparseRows(std::size_t width = 0) : width_(width) {}

  std::span<T> row(std::int32_t id) {
    auto [it, inserted] = index_.try_emplace(id, ids_.size());
    if (inserted) {
      ids_.push_back(id);
      data_.resize(data_.size() + width_, T{});
    }
    return {data_.data() + it->second * width_, width_};
  }

  std::span<const T> find(std::int32_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return {};
    return {data_.data() + it->second * width_, width_};
  }

  const std::vector<std::int32_t>& ids() const noexcept { return ids_; }
  std::span<const T> at(std::size_t i) const { return {data_.data() + i * width_, width_}; }
  std::size_t width() const noexcept { return width_; }

 private:
  std::size_t width_;
  std::unordered_map<std::int32_t, std::size_t> index_;
  std::vector<std::int32_t> ids_;
  std::vector<T> data_;
};

template <class T>
struct Gradients {
  SparseRows<T> entities;
  SparseRows<T> relations;
  std::optional<EncoderParams<T>> encoder;
};

template <class T>
struct NodePieceState {
  Tokenization tokens;
  NodePieceEncoder<T> encoder;
};

template <class T>
struct AdamMoments {
  Matrix<T> entity_m, entity_v;
  Matrix<T> relation_m, relation_v;
  EncoderParams<T> encoder_m, encoder_v;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

template <class T>
struct TrainState {
  RunConfig config;
  ModelParams<T> params;  // entity table is 0 × d in nodepiece mode
  std::optional<NodePieceState<T>> nodepiece;
  AdamMoments<T> moments;
  std::uint64_t step = 0;

  const ModelSpec& spec() const noexcept { return config.model; }
  std::size_t num_entities() const {
    return nodepiece ? nodepiece->tokens.hashes.size() : params.entities.rows();
  }
};

// Anchors, hashes and encoder shape for a nodepiece-mode run on `kg`.
inline Tokenization tokenize_for(const KnowledgeGraph& kg, const RunConfig& config) {
  const auto& np = config.nodepiece;
  const AnchorSet anchors = select_anchors(kg, np.anchors_for(kg.num_entities()), np.strategy, config.train.seed);
  return tokenize_all(kg, anchors, np.k, np.m, config.train.seed);
}

inline EncoderShape encoder_shape_for(const Tokenization& tok, const RunConfig& config) {
  const auto& np = config.nodepiece;
  return make_encoder_shape(tok, config.model.dim, np.atom_dim, np.hidden, np.encoding, np.activation);
}

template <class T>
TrainState<T> make_state(const KnowledgeGraph& kg, const RunConfig& config) {
  validate(config);
  TrainState<T> s;
  s.config = config;
  s.params = init_params<T>(config.model, kg.num_entities(), kg.num_relations(), config.train.seed);
  if (config.train.entity_mode == EntityMode::NodePiece) {
    s.params.entities = Matrix<T>(0, config.model.dim);
    Tokenization tok = tokenize_for(kg, config);
    const EncoderShape shape = encoder_shape_for(tok, config);
    s.nodepiece.emplace(NodePieceState<T>{std::move(tok), NodePieceEncoder<T>(shape, init_encoder<T>(shape, config.train.seed))});
    s.moments.encoder_m = s.moments.encoder_v = EncoderParams<T>::zeros(shape);
  }
  s.moments.entity_m = s.moments.entity_v = Matrix<T>(s.params.entities.rows(), s.params.entities.cols());
  s.moments.relation_m = s.moments.relation_v = Matrix<T>(s.params.relations.rows(), s.params.relations.cols());
  return s;
}

// The full entity table: the stored one, or every entity run through the encoder.
template <class T>
Matrix<T> materialize_entities(const TrainState<T>& s) {
  if (!s.nodepiece) return s.params.entities;
  return s.nodepiece->encoder.encode_all(s.nodepiece->tokens, s.spec(), s.params.relations);
}

// ---------------------------------------------------------------------------
// Objective

struct TrainBatch {
  std::vector<Triple> positives;
  NegativeBatch tail_negatives;
  NegativeBatch head_negatives;
};

// Self-adversarial weights per side, flattened batch × n.
template <class T>
struct AdversarialWeights {
  std::vector<T> tail, head;
};

namespace detail {

// Entity vectors needed by a batch, encoded once each in nodepiece mode.
template <class T>
class BatchEntities {
 public:
  BatchEntities(const TrainState<T>& s, const TrainBatch& batch) : state_(s), dim_(s.spec().dim) {
    for (const Triple& t : batch.positives) {
      add(t.head);
      add(t.tail);
    }
    for (const auto* neg : {&batch.tail_negatives, &batch.head_negatives}) {
      for (EntityId c : neg->candidates.flat()) add(c);
    }
    grads_.assign(ids_.size() * dim_, T{});
    if (s.nodepiece) {
      vectors_.resize(ids_.size() * dim_);
      caches_.resize(ids_.size());
      for (std::size_t i = 0; i < ids_.size(); ++i) {
        const auto v = s.nodepiece->encoder.encode(s.nodepiece->tokens.hashes[static_cast<std::size_t>(ids_[i])],
                                                   s.spec(), s.params.relations, &caches_[i]);
        std::copy(v.begin(), v.end(), vectors_.begin() + static_cast<std::ptrdiff_t>(i * dim_));
      }
    }
  }

  const T* vec(EntityId e) const {
    const std::size_t i = index_.at(e);
    if (state_.nodepiece) return vectors_.data() + i * dim_;
    return state_.params.entities.row(static_cast<std::size_t>(e)).data();
  }
  T* grad(EntityId e) { return grads_.data() + index_.at(e) * dim_; }

  // Moves the accumulated entity gradients into `out`.
  void flush(Gradients<T>& out) const {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      const T* g = grads_.data() + i * dim_;
      if (std::all_of(g, g + dim_, [](T x) { return x == T{}; })) continue;
      if (!state_.nodepiece) {
        auto row = out.entities.row(ids_[i]);
        for (std::size_t k = 0; k < dim_; ++k) row[k] += g[k];
        continue;
      }
      const auto& np = *state_.nodepiece;
      np.encoder.backward(np.tokens.hashes[static_cast<std::size_t>(ids_[i])], state_.spec(), state_.params.relations,
                          caches_[i], std::span<const T>(g, dim_), *out.encoder,
                          [&](RelationId r) { return out.relations.row(r); });
    }
  }

 private:
  void add(EntityId e) {
    if (e < 0 || static_cast<std::size_t>(e) >= state_.num_entities()) {
      throw ContractError("entity id " + std::to_string(e) + " out of range");
    }
    if (index_.try_emplace(e, ids_.size()).second) ids_.push_back(e);
  }

  const TrainState<T>& state_;
  std::size_t dim_;
  std::unordered_map<EntityId, std::size_t> index_;
  std::vector<EntityId> ids_;
  std::vector<T> vectors_;
  std::vector<T> grads_;
  std::vector<EncoderCache<T>> caches_;
};

}  // namespace detail

// Batch loss and, when `grads` is given, its gradient. Adversarial weights are
// computed from the current scores unless `frozen` supplies them; `used`
// receives the weights that were applied.
template <class T>
T batch_objective(const TrainState<T>& s, const TrainBatch& batch, Gradients<T>* grads,
                  const AdversarialWeights<T>* frozen = nullptr, AdversarialWeights<T>* used = nullptr) {
  const ModelSpec& spec = s.spec();
  const auto& cfg = s.config.train;
  const std::size_t n_pos = batch.positives.size();
  if (n_pos == 0) throw ContractError("empty training batch");
  for (const auto* neg : {&batch.tail_negatives, &batch.head_negatives}) {
    if (neg->candidates.rows() != n_pos) throw ContractError("negative batch does not match the positives");
  }
  for (const Triple& t : batch.positives) {
    if (t.relation < 0 || static_cast<std::size_t>(t.relation) >= s.params.relations.rows()) {
      throw ContractError("relation id " + std::to_string(t.relation) + " out of range");
    }
  }

  detail::BatchEntities<T> ents(s, batch);
  if (grads) {
    *grads = Gradients<T>{SparseRows<T>(spec.dim), SparseRows<T>(spec.relation_width()), std::nullopt};
    if (s.nodepiece) grads->encoder = EncoderParams<T>::zeros(s.nodepiece->encoder.shape());
  }
  if (used) *used = {};

  const T gamma = static_cast<T>(spec.gamma);
  const T scale = T(0.5) / static_cast<T>(n_pos);
  T total{};
  std::vector<T> neg_scores;
  for (const NegativeBatch* neg : {&batch.tail_negatives, &batch.head_negatives}) {
    const std::size_t n = neg->candidates.cols();
    const bool head_side = neg->side == Side::Head;
    const auto* fixed = frozen ? (head_side ? &frozen->head : &frozen->tail) : nullptr;
    if (fixed && fixed->size() != n_pos * n) throw ContractError("frozen weights do not match the batch");
    T side_total{};
    for (std::size_t b = 0; b < n_pos; ++b) {
      const Triple& t = batch.positives[b];
      const T* h = ents.vec(t.head);
      const T* tl = ents.vec(t.tail);
      const T* r = s.params.relations.row(static_cast<std::size_t>(t.relation)).data();
      const auto cands = neg->candidates.row(b);
      const T pos = -detail::distance(spec, h, r, tl);
      neg_scores.resize(n);
      for (std::size_t j = 0; j < n; ++j) {
        const T* c = ents.vec(cands[j]);
        neg_scores[j] = head_side ? -detail::distance(spec, c, r, tl) : -detail::distance(spec, h, r, c);
      }
      std::vector<T> w = fixed ? std::vector<T>(fixed->begin() + static_cast<std::ptrdiff_t>(b * n),
                                                fixed->begin() + static_cast<std::ptrdiff_t>((b + 1) * n))
                               : adversarial_weights<T>(neg_scores, cfg.adversarial_temperature);
      side_total += loss<T>(pos, neg_scores, w, spec.gamma);
      if (used) {
        auto& dst = head_side ? used->head : used->tail;
        dst.insert(dst.end(), w.begin(), w.end());
      }
      if (!grads) continue;
      T* gr = grads->relations.row(t.relation).data();
      // d/d(distance) of each term; score = -distance.
      detail::accumulate_distance_grad(spec, h, r, tl, scale * sigmoid(-(gamma + pos)), ents.grad(t.head), gr,
                                       ents.grad(t.tail));
      for (std::size_t j = 0; j < n; ++j) {
        const T coeff = -scale * w[j] * sigmoid(gamma + neg_scores[j]);
        if (head_side) {
          detail::accumulate_distance_grad(spec, ents.vec(cands[j]), r, tl, coeff, ents.grad(cands[j]), gr,
                                           ents.grad(t.tail));
        } else {
          detail::accumulate_distance_grad(spec, h, r, ents.vec(cands[j]), coeff, ents.grad(t.head), gr,
                                           ents.grad(cands[j]));
        }
      }
    }
    total += side_total * scale;
  }

  if (cfg.regularization > 0) {
    const T lambda = static_cast<T>(cfg.regularization) / static_cast<T>(n_pos);
    T reg{};
    const auto add = [&](const T* x, std::size_t len, T* g) {
      for (std::size_t i = 0; i < len; ++i) {
        const T a = std::abs(x[i]);
        reg += a * a * a;
        if (g) g[i] += 3 * lambda * x[i] * a;
      }
    };
    for (const Triple& t : batch.positives) {
      add(ents.vec(t.head), spec.dim, grads ? ents.grad(t.head) : nullptr);
      add(ents.vec(t.tail), spec.dim, grads ? ents.grad(t.tail) : nullptr);
      add(s.params.relations.row(static_cast<std::size_t>(t.relation)).data(), spec.relation_width(),
          grads ? grads->relations.row(t.relation).data() : nullptr);
    }
    total += lambda * reg;
  }

  if (grads) ents.flush(*grads);
  return total;
}

// ---------------------------------------------------------------------------
// Optimizer

namespace detail {

template <class T>
inline void adam_update(std::span<T> param, std::span<T> m, std::span<T> v, std::span<const T> g, double lr,
                        std::uint64_t t) {
  const T b1 = static_cast<T>(kAdamBeta1), b2 = static_cast<T>(kAdamBeta2);
  const T c1 = static_cast<T>(1.0 - std::pow(kAdamBeta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(kAdamBeta2, static_cast<double>(t)));
  const T rate = static_cast<T>(lr), eps = static_cast<T>(kAdamEpsilon);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (T(1) - b1) * g[i];
    v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
    param[i] -= rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

}  // namespace detail

// One Adam step (bias correction by the global step count). Table rows are
// updated only where the batch produced a gradient; encoder tensors densely.
template <class T>
void apply_gradients(TrainState<T>& s, const Gradients<T>& g) {
  const std::uint64_t t = s.step + 1;
  const double lr = s.config.train.learning_rate;
  for (std::size_t i = 0; i < g.entities.ids().size(); ++i) {
    const auto row = static_cast<std::size_t>(g.entities.ids()[i]);
    detail::adam_update<T>(s.params.entities.row(row), s.moments.entity_m.row(row), s.moments.entity_v.row(row),
                           g.entities.at(i), lr, t);
    if (s.config.train.normalize_entities) {
      auto p = s.params.entities.row(row);
      T sq{};
      for (T x : p) sq += x * x;
      if (sq > T{}) {
        const T inv = T(1) / std::sqrt(sq);
        for (T& x : p) x *= inv;
      }
    }
  }
  for (std::size_t i = 0; i < g.relations.ids().size(); ++i) {
    const auto row = static_cast<std::size_t>(g.relations.ids()[i]);
    detail::adam_update<T>(s.params.relations.row(row), s.moments.relation_m.row(row), s.moments.relation_v.row(row),
                           g.relations.at(i), lr, t);
  }
  if (s.nodepiece && g.encoder) {
    std::vector<Matrix<T>*> params, ms, vs;
    std::vector<const Matrix<T>*> gs;
    s.nodepiece->encoder.params().for_each_tensor([&](const char*, Matrix<T>& m) { params.push_back(&m); });
    s.moments.encoder_m.for_each_tensor([&](const char*, Matrix<T>& m) { ms.push_back(&m); });
    s.moments.encoder_v.for_each_tensor([&](const char*, Matrix<T>& m) { vs.push_back(&m); });
    g.encoder->for_each_tensor([&](const char*, const Matrix<T>& m) { gs.push_back(&m); });
    for (std::size_t i = 0; i < params.size(); ++i) {
      detail::adam_update<T>(params[i]->flat(), ms[i]->flat(), vs[i]->flat(), gs[i]->flat(), lr, t);
    }
  }
}

// Positives and both-side negatives for step `step`; a pure function of
// (seed, step), so a resumed run draws the same batches.
inline TrainBatch draw_batch(const KnowledgeGraph& kg, const FilterIndex& filter, const TrainConfig& cfg,
                             std::uint64_t step) {
  const std::uint64_t step_seed = hash_combine(cfg.seed, step);
  Rng rng = make_rng(step_seed, 0x706f73);
  TrainBatch batch;
  batch.positives.reserve(cfg.batch_size);
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    batch.positives.push_back(kg.train()[uniform_index(rng, kg.train().size())]);
  }
  batch.tail_negatives =
      sample_negatives(kg, filter, batch.positives, Side::Tail, cfg.n_negatives, cfg.negative_mode, step_seed);
  batch.head_negatives =
      sample_negatives(kg, filter, batch.positives, Side::Head, cfg.n_negatives, cfg.negative_mode, step_seed);
  return batch;
}

// Loss of `batch` before the update, then one optimizer step.
template <class T>
T train_step(TrainState<T>& s, const TrainBatch& batch) {
  Gradients<T> g;
  const T l = batch_objective(s, batch, &g);
  if (!std::isfinite(l)) {
    std::string ids;
    for (std::size_t i = 0; i < std::min<std::size_t>(batch.positives.size(), 8); ++i) {
      const Triple& t = batch.positives[i];
      ids += " (" + std::to_string(t.head) + "," + std::to_string(t.relation) + "," + std::to_string(t.tail) + ")";
    }
    throw NumericError("non-finite loss at step " + std::to_string(s.step) + "; batch starts with" + ids);
  }
  apply_gradients(s, g);
  ++s.step;
  return l;
}

template <class T>
T train_step(TrainState<T>& s, const KnowledgeGraph& kg, const FilterIndex& filter) {
  return train_step(s, draw_batch(kg, filter, s.config.train, s.step));
}

}  // namespace triplere
