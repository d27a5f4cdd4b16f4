#include <gtest/gtest.h>

#include <algorithm>
#include <deque>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "test_support.hpp"
#include "triplere/nodepiece.hpp"

namespace triplere {
namespace {

// a=0, b=1, c=2 with edges a-b and b-c.
KnowledgeGraph path_graph() { return KnowledgeGraph(Vocabulary::numeric(3, 1), {{0, 0, 1}, {1, 0, 2}}, {}, {}); }

KnowledgeGraph random_graph(std::uint64_t seed, std::size_t n_e, std::size_t n_r, std::size_t n) {
  SyntheticSpec s;
  s.n_entities = n_e;
  s.n_relations = n_r;
  s.n_triples = n;
  s.seed = seed;
  return generate_synthetic(s);
}

// Plain single-source BFS over the undirected train graph; -1 when unreachable.
std::vector<int> bfs_from(const KnowledgeGraph& kg, EntityId source) {
  std::vector<std::vector<EntityId>> nbrs(kg.num_entities());
  for (const Triple& t : kg.train()) {
    nbrs[static_cast<std::size_t>(t.head)].push_back(t.tail);
    nbrs[static_cast<std::size_t>(t.tail)].push_back(t.head);
  }
  std::vector<int> dist(kg.num_entities(), -1);
  std::deque<EntityId> queue{source};
  dist[static_cast<std::size_t>(source)] = 0;
  while (!queue.empty()) {
    const EntityId v = queue.front();
    queue.pop_front();
    for (EntityId w : nbrs[static_cast<std::size_t>(v)]) {
      if (dist[static_cast<std::size_t>(w)] < 0) {
        dist[static_cast<std::size_t>(w)] = dist[static_cast<std::size_t>(v)] + 1;
        queue.push_back(w);
      }
    }
  }
  return dist;
}

TEST(SelectAnchors, DegreeOnPathPicksTheMiddle) {
  const auto kg = path_graph();
  EXPECT_EQ(select_anchors(kg, 1, AnchorStrategy::Degree, 0).anchors, (std::vector<EntityId>{1}));
  // Ties by ascending id: a and c both have degree 1.
  EXPECT_EQ(select_anchors(kg, 2, AnchorStrategy::Degree, 0).anchors, (std::vector<EntityId>{0, 1}));
}

TEST(SelectAnchors, AllEntitiesForAnyStrategy) {
  const auto kg = random_graph(2, 30, 2, 60);
  for (auto s : {AnchorStrategy::Degree, AnchorStrategy::Random, AnchorStrategy::Mixed}) {
    const auto a = select_anchors(kg, 30, s, 5);
    ASSERT_EQ(a.anchors.size(), 30u);
    for (EntityId i = 0; i < 30; ++i) EXPECT_EQ(a.anchors[static_cast<std::size_t>(i)], i);
  }
}

TEST(SelectAnchors, DeterministicDistinctAndValidated) {
  const auto kg = random_graph(3, 100, 3, 300);
  for (auto s : {AnchorStrategy::Random, AnchorStrategy::Mixed}) {
    const auto a = select_anchors(kg, 10, s, 9);
    EXPECT_EQ(a, select_anchors(kg, 10, s, 9));
    EXPECT_TRUE(std::is_sorted(a.anchors.begin(), a.anchors.end()));
    EXPECT_EQ(std::set<EntityId>(a.anchors.begin(), a.anchors.end()).size(), 10u);
  }
  EXPECT_NE(select_anchors(kg, 10, AnchorStrategy::Random, 1).anchors,
            select_anchors(kg, 10, AnchorStrategy::Random, 2).anchors);
  EXPECT_THROW(select_anchors(kg, 0, AnchorStrategy::Degree, 0), ValidationError);
  EXPECT_THROW(select_anchors(kg, 101, AnchorStrategy::Degree, 0), ValidationError);
}

TEST(SelectAnchors, MixedTakesHalfByDegree) {
  const auto kg = random_graph(4, 100, 3, 400);
  const auto by_degree = select_anchors(kg, 5, AnchorStrategy::Degree, 0).anchors;
  const auto mixed = select_anchors(kg, 10, AnchorStrategy::Mixed, 3).anchors;
  for (EntityId a : by_degree) EXPECT_TRUE(std::binary_search(mixed.begin(), mixed.end(), a));
}

TEST(Tokenize, PathGraphHashes) {
  const auto kg = path_graph();
  const AnchorSet anchors{{0, 2}, AnchorStrategy::Degree, 0};
  const auto tok = tokenize_all(kg, anchors, 2, 0, 0);
  // Anchor indices: a is 0, c is 1.
  EXPECT_EQ(tok.hashes[1].anchors, (std::vector<AnchorToken>{{0, 1}, {1, 1}}));
  EXPECT_EQ(tok.hashes[0].anchors, (std::vector<AnchorToken>{{0, 0}, {1, 2}}));
  EXPECT_EQ(tok.max_distance, 2);
}

TEST(Tokenize, PaddingAndIsolatedNodes) {
  const KnowledgeGraph kg(Vocabulary::numeric(4, 2), {{0, 0, 1}, {1, 1, 2}}, {}, {});
  const AnchorSet anchors{{0, 2}, AnchorStrategy::Degree, 0};
  const auto tok = tokenize_all(kg, anchors, 3, 2, 0);
  EXPECT_EQ(tok.hashes[1].anchors[2], AnchorToken{});
  EXPECT_EQ(tok.hashes[3].anchors, std::vector<AnchorToken>(3));
  EXPECT_EQ(tok.hashes[3].context, (std::vector<RelationId>{kNoRelation, kNoRelation}));
  EXPECT_EQ(tok.hashes[1].context, (std::vector<RelationId>{0, 1}));
  EXPECT_EQ(tok.hashes[0].context, (std::vector<RelationId>{0, kNoRelation}));
  EXPECT_THROW(tokenize_all(kg, anchors, 0, 2, 0), ValidationError);
}

TEST(Tokenize, MatchesSingleSourceBfsOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 50 + rng() % 950;
    // Sparse enough to leave some components disconnected.
    const auto kg = random_graph(seed, n, 3, n + rng() % n);
    const auto anchors = select_anchors(kg, 1 + rng() % 30, AnchorStrategy::Mixed, seed);
    const std::size_t k = 1 + rng() % 8;
    const auto tok = tokenize_all(kg, anchors, k, 0, seed);

    std::vector<std::vector<int>> dist;
    for (EntityId a : anchors.anchors) dist.push_back(bfs_from(kg, a));
    int max_d = 0;
    for (std::size_t v = 0; v < n; ++v) {
      std::vector<AnchorToken> want;
      for (std::size_t i = 0; i < dist.size(); ++i) {
        if (dist[i][v] >= 0) want.push_back({static_cast<std::int32_t>(i), dist[i][v]});
      }
      std::sort(want.begin(), want.end(), [](const AnchorToken& x, const AnchorToken& y) {
        return std::pair(x.distance, x.anchor) < std::pair(y.distance, y.anchor);
      });
      if (want.size() > k) want.resize(k);
      for (const auto& t : want) max_d = std::max(max_d, t.distance);
      want.resize(k, AnchorToken{});
      ASSERT_EQ(tok.hashes[v].anchors, want) << "seed " << seed << " node " << v;
    }
    EXPECT_EQ(tok.max_distance, max_d);
  }
}

TEST(Tokenize, ContextIsASortedSampleOfIncidentRelations) {
  const auto kg = random_graph(6, 40, 10, 400);
  const auto anchors = select_anchors(kg, 6, AnchorStrategy::Degree, 0);
  const auto tok = tokenize_all(kg, anchors, 4, 3, 11);
  for (std::size_t e = 0; e < kg.num_entities(); ++e) {
    std::set<RelationId> incident;
    for (const auto& a : kg.adjacency(static_cast<EntityId>(e))) incident.insert(a.relation);
    const auto& ctx = tok.hashes[e].context;
    ASSERT_EQ(ctx.size(), 3u);
    const std::size_t real = std::min<std::size_t>(3, incident.size());
    for (std::size_t i = 0; i < 3; ++i) {
      if (i < real) {
        EXPECT_TRUE(incident.contains(ctx[i]));
        if (i > 0) {
          EXPECT_LT(ctx[i - 1], ctx[i]);
        }
      } else {
        EXPECT_EQ(ctx[i], kNoRelation);
      }
    }
  }
  // A different context seed changes which relations are kept somewhere.
  EXPECT_NE(tok, tokenize_all(kg, anchors, 4, 3, 12));
}

TEST(Tokenize, IgnoresHeldOutEdges) {
  const KnowledgeGraph kg(Vocabulary::numeric(3, 1), {{0, 0, 1}}, {{1, 0, 2}}, {{2, 0, 0}});
  const auto tok = tokenize_all(kg, {{0}, AnchorStrategy::Degree, 0}, 1, 1, 0);
  EXPECT_EQ(tok.hashes[2].anchors[0], AnchorToken{});
  EXPECT_EQ(tok.hashes[2].context[0], kNoRelation);
}

TEST(Tokenize, DeterministicAndJsonRoundTrip) {
  const auto kg = random_graph(7, 300, 5, 900);
  const auto a1 = select_anchors(kg, 17, AnchorStrategy::Mixed, 4);
  const auto t1 = tokenize_all(kg, a1, 5, 4, 4);
  const auto t2 = tokenize_all(kg, select_anchors(kg, 17, AnchorStrategy::Mixed, 4), 5, 4, 4);
  EXPECT_EQ(t1, t2);
  const std::string bytes = to_json(t1).dump();
  EXPECT_EQ(bytes, to_json(t2).dump());
  EXPECT_EQ(tokenization_from_json(nlohmann::json::parse(bytes)), t1);
  EXPECT_THROW(tokenization_from_json(nlohmann::json::parse("{\"anchors\": []}")), ParseError);
}

EncoderShape toy_shape(Encoding enc) {
  EncoderShape s;
  s.n_anchors = 3;
  s.n_relations = 2;
  s.dim = 4;
  s.atom_dim = 4;
  s.hidden = 8;
  s.k = 2;
  s.m = 1;
  s.max_distance = 2;
  s.encoding = enc;
  return s;
}

TEST(CountParameters, HandCountedToy) {
  ModelSpec spec;
  spec.kind = ModelKind::TripleREv1;
  spec.dim = 4;
  // atoms (3 anchors + 2 relations + 2 sentinels) x 4 = 28
  // distances (0, 1, 2, unreachable) x 4 = 16
  // w1 8 x (2 + 1) * 4 = 96, b1 8, w2 4 x 8 = 32, b2 4
  // relations 2 x 3 * 4 = 24
  EXPECT_EQ(count_parameters(spec, toy_shape(Encoding::AnchorR)), 28u + 16 + 96 + 8 + 32 + 4 + 24);
  // anchor: atoms 4 x 4, w1 8 x 8.
  EXPECT_EQ(count_parameters(spec, toy_shape(Encoding::Anchor)), 16u + 16 + 64 + 8 + 32 + 4 + 24);
  // anchor_rm: atoms 5 x 4 (relation atoms live in r_m), w1 8 x 12.
  EXPECT_EQ(count_parameters(spec, toy_shape(Encoding::AnchorRm)), 20u + 16 + 96 + 8 + 32 + 4 + 24);
}

TEST(CountParameters, AnchorBelowAnchorR) {
  ModelSpec spec;
  spec.dim = 200;
  for (std::size_t m : {1u, 5u, 12u}) {
    auto a = toy_shape(Encoding::Anchor), r = toy_shape(Encoding::AnchorR);
    a.m = r.m = m;
    EXPECT_LT(count_parameters(spec, a), count_parameters(spec, r));
  }
}

TEST(CountParameters, UnchangedWhenEntitiesDouble) {
  const auto kg = random_graph(8, 200, 4, 600);
  // Second graph: kg plus a disjoint relabelled copy, so |E| doubles.
  std::vector<Triple> train = kg.train();
  for (const Triple& t : kg.train()) train.push_back({t.head + 200, t.relation, t.tail + 200});
  const KnowledgeGraph doubled(Vocabulary::numeric(400, 4), train, {}, {});

  ModelSpec spec;
  spec.dim = 16;
  const auto anchors = select_anchors(kg, 14, AnchorStrategy::Degree, 0);
  std::uint64_t counts[2];
  int i = 0;
  for (const KnowledgeGraph* g : {&kg, &doubled}) {
    const auto tok = tokenize_all(*g, anchors, 5, 3, 0);
    counts[i++] = count_parameters(spec, make_encoder_shape(tok, 16, 0, 0, Encoding::AnchorR, Activation::Relu));
  }
  EXPECT_EQ(counts[0], counts[1]);
}

template <class T>
NodePieceEncoder<T> make_encoder(const EncoderShape& s, std::uint64_t seed) {
  auto p = init_encoder<T>(s, seed);
  // Non-zero biases exercise their gradients.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (T& v : p.b1.flat()) v = static_cast<T>(u(rng));
  for (T& v : p.b2.flat()) v = static_cast<T>(u(rng));
  return NodePieceEncoder<T>(s, std::move(p));
}

TEST(Encoder, SentinelHashIsFiniteAndIdenticalHashesAgree) {
  ModelSpec spec;
  spec.kind = ModelKind::TripleREv2;
  spec.dim = 4;
  for (auto enc : {Encoding::Anchor, Encoding::AnchorRm, Encoding::AnchorR}) {
    const auto s = toy_shape(enc);
    const auto encoder = make_encoder<double>(s, 1);
    const Matrix<double> relations = init_params<double>(spec, 1, 2, 0).relations;
    const NodeHash empty{std::vector<AnchorToken>(2), {kNoRelation}};
    for (double v : encode_entity(empty, encoder, spec, relations)) EXPECT_TRUE(std::isfinite(v));
    const NodeHash h{{{1, 0}, {2, 2}}, {1}};
    const NodeHash same = h;
    EXPECT_EQ(encode_entity(h, encoder, spec, relations), encode_entity(same, encoder, spec, relations));
    EXPECT_EQ(encode_entity(h, encoder, spec, relations).size(), 4u);
  }
}

TEST(Encoder, RejectsTokensOutsideTheVocabulary) {
  ModelSpec spec;
  spec.dim = 4;
  const auto encoder = make_encoder<double>(toy_shape(Encoding::AnchorR), 1);
  const Matrix<double> relations(2, 12);
  EXPECT_THROW(encoder.encode({{{3, 0}, {0, 0}}, {0}}, spec, relations), ContractError);
  EXPECT_THROW(encoder.encode({{{0, 3}, {0, 0}}, {0}}, spec, relations), ContractError);
  EXPECT_THROW(encoder.encode({{{0, 0}, {0, 0}}, {2}}, spec, relations), ContractError);
  EXPECT_THROW(encoder.encode({{{0, 0}}, {0}}, spec, relations), ContractError);
  auto bad = EncoderParams<double>::zeros(toy_shape(Encoding::Anchor));
  EXPECT_THROW(NodePieceEncoder<double>(toy_shape(Encoding::AnchorR), bad), ContractError);
}

TEST(Encoder, AnchorModeIgnoresContext) {
  ModelSpec spec;
  spec.dim = 4;
  const auto encoder = make_encoder<double>(toy_shape(Encoding::Anchor), 2);
  const Matrix<double> relations(2, 12);
  EXPECT_EQ(encoder.encode({{{0, 1}, {2, 0}}, {0}}, spec, relations),
            encoder.encode({{{0, 1}, {2, 0}}, {1}}, spec, relations));
}

TEST(Encoder, AnchorRmReadsTheTranslationSegment) {
  ModelSpec spec;
  spec.kind = ModelKind::TripleREv1;
  spec.dim = 4;
  const auto encoder = make_encoder<double>(toy_shape(Encoding::AnchorRm), 3);
  Matrix<double> relations = init_params<double>(spec, 1, 2, 5).relations;
  const NodeHash h{{{0, 1}, {1, 0}}, {1}};
  const auto before = encoder.encode(h, spec, relations);
  relations(1, 0) += 1.0;  // r_h of relation 1: not read
  EXPECT_EQ(encoder.encode(h, spec, relations), before);
  relations(1, 4) += 1.0;  // r_m of relation 1
  EXPECT_NE(encoder.encode(h, spec, relations), before);
}

// Central-difference check of every encoder parameter and, for anchor_rm, the
// relation rows, for L = <c, encode(hash)>.
void check_encoder_gradients(Encoding enc, std::size_t atom_dim, Activation act) {
  ModelSpec spec;
  spec.kind = ModelKind::TripleREv2;
  spec.dim = 4;
  auto shape = toy_shape(enc);
  shape.atom_dim = atom_dim;
  shape.activation = act;
  shape.m = 2;
  auto encoder = make_encoder<double>(shape, 7);
  Matrix<double> relations = init_params<double>(spec, 1, 2, 3).relations;
  for (double& v : relations.flat()) v *= 20;  // bring r_m to the scale of the atoms
  const NodeHash hash{{{2, 1}, {kNoAnchor, kNoDistance}}, {0, 1}};
  std::mt19937_64 rng(1);
  const auto c = testing::random_vector(rng, spec.dim);

  const auto loss = [&] {
    const auto out = encoder.encode(hash, spec, relations);
    double l = 0;
    for (std::size_t i = 0; i < out.size(); ++i) l += c[i] * out[i];
    return l;
  };

  EncoderCache<double> cache;
  encoder.encode(hash, spec, relations, &cache);
  auto grads = EncoderParams<double>::zeros(shape);
  Matrix<double> relation_grads(relations.rows(), relations.cols());
  encoder.backward(hash, spec, relations, cache, std::span<const double>(c), grads,
                   [&](RelationId r) { return relation_grads.row(static_cast<std::size_t>(r)); });

  std::vector<Matrix<double>*> params, analytic;
  encoder.params().for_each_tensor([&](const char*, Matrix<double>& m) { params.push_back(&m); });
  grads.for_each_tensor([&](const char*, Matrix<double>& m) { analytic.push_back(&m); });
  params.push_back(&relations);
  analytic.push_back(&relation_grads);
  double worst = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p]->size(); ++i) {
      const double numeric = testing::central_difference(loss, params[p]->flat()[i]);
      worst = std::max(worst, testing::relative_error(analytic[p]->flat()[i], numeric));
    }
  }
  EXPECT_LT(worst, 1e-4) << to_string(enc) << " atom_dim " << atom_dim;
}

TEST(Encoder, GradientsMatchCentralDifferences) {
  for (auto enc : {Encoding::Anchor, Encoding::AnchorRm, Encoding::AnchorR}) {
    check_encoder_gradients(enc, 4, Activation::Gelu);
    check_encoder_gradients(enc, 3, Activation::Gelu);
    check_encoder_gradients(enc, 4, Activation::Relu);
  }
}

TEST(Encoder, InitIsDeterministic) {
  const auto s = toy_shape(Encoding::AnchorR);
  EXPECT_EQ(init_encoder<float>(s, 5), init_encoder<float>(s, 5));
  EXPECT_NE(init_encoder<float>(s, 5), init_encoder<float>(s, 6));
}

}  // namespace
}  // namespace triplere
