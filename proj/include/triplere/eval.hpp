#pragma once

// Link-prediction evaluation. Each test triple yields a tail query (h, r, ?)
// and a head query (?, r, t); the true entity is ranked against the
// candidates and the ranks are reduced to MR, MRR and Hits@{1,3,10}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "kgdata.hpp"
#include "matrix.hpp"
#include "models.hpp"
#include "random.hpp"

namespace triplere {

// filtered-full: all entities, other known true completions removed.
// raw-full:      all entities, nothing removed.
// sampled:       the true entity plus n_candidates filtered uniform negatives.
enum class ProtocolKind { FilteredFull, RawFull, Sampled };

inline std::string_view to_string(ProtocolKind k) {
  switch (k) {
    case ProtocolKind::FilteredFull: return "filtered-full";
    case ProtocolKind::RawFull: return "raw-full";
    case ProtocolKind::Sampled: return "sampled";
  }
  return "?";
}

inline ProtocolKind parse_protocol(std::string_view s) {
  if (s == "filtered-full") return ProtocolKind::FilteredFull;
  if (s == "raw-full") return ProtocolKind::RawFull;
  if (s == "sampled") return ProtocolKind::Sampled;
  throw ValidationError("unknown protocol '" + std::string(s) + "' (expected filtered-full, raw-full or sampled)");
}

enum class Sides { Head, Tail, Both };

inline std::string_view to_string(Sides s) {
  switch (s) {
    case Sides::Head: return "head";
    case Sides::Tail: return "tail";
    case Sides::Both: return "both";
  }
  return "?";
}

inline Sides parse_sides(std::string_view s) {
  if (s == "head") return Sides::Head;
  if (s == "tail") return Sides::Tail;
  if (s == "both") return Sides::Both;
  throw ValidationError("unknown sides '" + std::string(s) + "' (expected head, tail or both)");
}

struct EvalProtocol {
  ProtocolKind kind = ProtocolKind::FilteredFull;
  std::size_t n_candidates = 500;
  Sides sides = Sides::Both;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct Metrics {
  double mr = 0;
  double mrr = 0;
  double hits1 = 0;
  double hits3 = 0;
  double hits10 = 0;
  std::size_t n_queries = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct EvalResult {
  Metrics overall;
  std::optional<Metrics> head;
  std::optional<Metrics> tail;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

// Ties with the true score count half: the mean of the optimistic and
// pessimistic rank. Positions where `masked` is set are ignored.
template <class T>
double rank_masked(std::span<const T> scores, std::size_t true_index, const std::vector<char>* masked) {
  const T s = scores[true_index];
  std::size_t greater = 0, ties = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i == true_index || (masked && (*masked)[i])) continue;
    if (scores[i] > s) {
      ++greater;
    } else if (scores[i] == s) {
      ++ties;
    }
  }
  return 1.0 + static_cast<double>(greater) + static_cast<double>(ties) / 2.0;
}

template <class T>
double rank(std::span<const T> scores, std::size_t true_index) {
  if (true_index >= scores.size()) throw ContractError("rank: true index out of range");
  for (T v : scores) {
    if (!std::isfinite(v)) throw ContractError("rank: non-finite score");
  }
  return rank_masked<T>(scores, true_index, nullptr);
}

template <class T>
double rank(const std::vector<T>& scores, std::size_t true_index) {
  return rank(std::span<const T>(scores), true_index);
}

inline Metrics metrics_from_ranks(std::span<const double> ranks) {
  Metrics m;
  m.n_queries = ranks.size();
  if (ranks.empty()) return m;
  for (double r : ranks) {
    m.mr += r;
    m.mrr += 1.0 / r;
    m.hits1 += r <= 1.0 ? 1.0 : 0.0;
    m.hits3 += r <= 3.0 ? 1.0 : 0.0;
    m.hits10 += r <= 10.0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(ranks.size());
  m.mr /= n;
  m.mrr /= n;
  m.hits1 /= n;
  m.hits3 /= n;
  m.hits10 /= n;
  return m;
}

inline Metrics metrics_from_ranks(const std::vector<double>& ranks) {
  return metrics_from_ranks(std::span<const double>(ranks));
}

namespace detail {

// Rank of one query; `side` is the corrupted position.
template <class T>
double rank_query(const KnowledgeGraph& kg, const FilterIndex& filter, const ModelSpec& spec,
                  const Matrix<T>& entities, const Matrix<T>& relations, const Triple& q, Side side,
                  const EvalProtocol& protocol, std::uint64_t query_id, std::vector<EntityId>& candidates,
                  std::vector<char>& mask) {
  const EntityId truth = side == Side::Head ? q.head : q.tail;
  if (protocol.kind == ProtocolKind::Sampled) {
    Rng rng = make_rng(protocol.seed, query_id);
    const std::uint64_t n_e = kg.num_entities();
    candidates.assign(1, truth);
    Triple probe = q;
    EntityId& slot = side == Side::Head ? probe.head : probe.tail;
    for (std::size_t j = 0; j < protocol.n_candidates; ++j) {
      EntityId c = static_cast<EntityId>(uniform_index(rng, n_e));
      // Bounded redraws; a known completion left in place only ties or
      // outranks the truth, so giving up cannot inflate the metric.
      for (int tries = 0; tries < 64; ++tries) {
        slot = c;
        if (!filter.contains(probe)) break;
        c = static_cast<EntityId>(uniform_index(rng, n_e));
      }
      candidates.push_back(c);
    }
    const auto scores = score_batch_corrupted(spec, entities, relations, q, side, candidates);
    return rank_masked<T>(scores, 0, nullptr);
  }

  const std::size_t n_e = kg.num_entities();
  candidates.resize(n_e);
  for (std::size_t i = 0; i < n_e; ++i) candidates[i] = static_cast<EntityId>(i);
  const auto scores = score_batch_corrupted(spec, entities, relations, q, side, candidates);
  for (T v : scores) {
    if (!std::isfinite(v)) throw ContractError("evaluate: non-finite score");
  }
  if (protocol.kind == ProtocolKind::RawFull) return rank_masked<T>(scores, static_cast<std::size_t>(truth), nullptr);
  mask.assign(n_e, 0);
  const auto known = side == Side::Head ? filter.known_heads(q.relation, q.tail) : filter.known_tails(q.head, q.relation);
  for (EntityId e : known) {
    if (e != truth) mask[static_cast<std::size_t>(e)] = 1;
  }
  return rank_masked<T>(scores, static_cast<std::size_t>(truth), &mask);
}

}  // namespace detail

// Ranks every query of `split`, in order: for each triple its tail query then
// its head query (as selected by protocol.sides). Queries may be ranked on
// several threads; the reduction always runs in query order.
template <class T>
EvalResult evaluate(const KnowledgeGraph& kg, const FilterIndex& filter, const ModelSpec& spec,
                    const Matrix<T>& entities, const Matrix<T>& relations, const EvalProtocol& protocol, Split split) {
  const auto& triples = kg.split(split);
  if (triples.empty()) throw ValidationError("cannot evaluate on empty " + std::string(to_string(split)) + " split");
  if (entities.rows() != kg.num_entities() || relations.rows() != kg.num_relations() || entities.cols() != spec.dim ||
      relations.cols() != spec.relation_width()) {
    throw ContractError("model dimensions do not match the graph");
  }
  if (protocol.kind == ProtocolKind::Sampled && protocol.n_candidates < 1) {
    throw ValidationError("sampled protocol needs at least one candidate");
  }

  std::vector<Side> sides;
  if (protocol.sides != Sides::Head) sides.push_back(Side::Tail);
  if (protocol.sides != Sides::Tail) sides.push_back(Side::Head);
  const std::size_t n_queries = triples.size() * sides.size();
  std::vector<double> ranks(n_queries);

  const auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<EntityId> candidates;
    std::vector<char> mask;
    for (std::size_t q = begin; q < end; ++q) {
      ranks[q] = detail::rank_query(kg, filter, spec, entities, relations, triples[q / sides.size()],
                                    sides[q % sides.size()], protocol, q, candidates, mask);
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(protocol.threads, n_queries));
  if (n_threads == 1) {
    work(0, n_queries);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_threads);
    const std::size_t chunk = (n_queries + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(std::min(n_queries, t * chunk), std::min(n_queries, (t + 1) * chunk));
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  EvalResult result;
  result.overall = metrics_from_ranks(ranks);
  for (std::size_t si = 0; si < sides.size(); ++si) {
    std::vector<double> side_ranks;
    side_ranks.reserve(triples.size());
    for (std::size_t q = si; q < n_queries; q += sides.size()) side_ranks.push_back(ranks[q]);
    (sides[si] == Side::Head ? result.head : result.tail) = metrics_from_ranks(side_ranks);
  }
  return result;
}

inline nlohmann::ordered_json to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["mr"] = m.mr;
  j["mrr"] = m.mrr;
  j["hits1"] = m.hits1;
  j["hits3"] = m.hits3;
  j["hits10"] = m.hits10;
  j["n_queries"] = m.n_queries;
  return j;
}

inline nlohmann::ordered_json to_json(const EvalResult& r) {
  nlohmann::ordered_json j = to_json(r.overall);
  if (r.head) j["head"] = to_json(*r.head);
  if (r.tail) j["tail"] = to_json(*r.tail);
  return j;
}

// Fixed-width table, columns MR, MRR, Hit@10, Hit@3, Hit@1.
inline std::string format_table(const EvalResult& r) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-8s %10s %8s %8s %8s %8s\n", "side", "MR", "MRR", "Hit@10", "Hit@3", "Hit@1");
  out += buf;
  const auto row = [&](const char* name, const Metrics& m) {
    std::snprintf(buf, sizeof buf, "%-8s %10.2f %8.4f %8.4f %8.4f %8.4f\n", name, m.mr, m.mrr, m.hits10, m.hits3,
                  m.hits1);
    out += buf;
  };
  if (r.tail) row("tail", *r.tail);
  if (r.head) row("head", *r.head);
  row("all", r.overall);
  return out;
}

}  // namespace triplere
