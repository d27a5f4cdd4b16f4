#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "triplere/checkpoint.hpp"
#include "triplere/pipeline.hpp"

namespace triplere {
namespace {

using testing::read_file;
using testing::TempDir;

KnowledgeGraph toy_graph(std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.n_entities = 40;
  s.n_relations = 4;
  s.n_triples = 300;
  s.seed = seed;
  return generate_synthetic(s);
}

RunConfig toy_config(EntityMode mode = EntityMode::Table) {
  RunConfig c;
  c.model.dim = 8;
  c.train.batch_size = 16;
  c.train.n_negatives = 8;
  c.train.learning_rate = 0.01;
  c.train.max_steps = 20;
  c.train.eval_interval = 5;
  c.train.eval_candidates = 20;
  c.train.entity_mode = mode;
  c.nodepiece.n_anchors = 6;
  c.nodepiece.k = 3;
  c.nodepiece.m = 2;
  c.nodepiece.encoding = Encoding::AnchorRm;
  c.nodepiece.atom_dim = 5;
  return c;
}

template <class T>
void expect_same_state(const TrainState<T>& a, const TrainState<T>& b) {
  EXPECT_EQ(a.config, b.config);
  EXPECT_EQ(a.step, b.step);
  EXPECT_EQ(a.params.entities, b.params.entities);
  EXPECT_EQ(a.params.relations, b.params.relations);
  EXPECT_EQ(a.moments.entity_m, b.moments.entity_m);
  EXPECT_EQ(a.moments.entity_v, b.moments.entity_v);
  EXPECT_EQ(a.moments.relation_m, b.moments.relation_m);
  EXPECT_EQ(a.moments.relation_v, b.moments.relation_v);
  ASSERT_EQ(a.nodepiece.has_value(), b.nodepiece.has_value());
  if (a.nodepiece) {
    EXPECT_EQ(a.nodepiece->tokens, b.nodepiece->tokens);
    EXPECT_EQ(a.nodepiece->encoder.params(), b.nodepiece->encoder.params());
    EXPECT_EQ(a.moments.encoder_m, b.moments.encoder_m);
    EXPECT_EQ(a.moments.encoder_v, b.moments.encoder_v);
  }
}

nlohmann::json header_of(const std::string& bytes) {
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  return nlohmann::json::parse(bytes.substr(12, len));
}

TEST(Checkpoint, LayoutAndHeader) {
  const auto kg = toy_graph();
  const auto s = make_state<float>(kg, toy_config());
  const std::string bytes = serialize_checkpoint(s);
  EXPECT_EQ(bytes.substr(0, 4), "KGE1");
  const auto h = header_of(bytes);
  EXPECT_EQ(h["spec"]["model"], "triplere_v2");
  EXPECT_EQ(h["num_entities"], 40);
  EXPECT_EQ(h["num_relations"], 4);
  EXPECT_EQ(h["relation_layout"], "r_h|r_m|r_t");
  std::vector<std::string> names;
  for (const auto& t : h["tensors"]) names.push_back(t["name"]);
  EXPECT_EQ(names, (std::vector<std::string>{"entities", "relations", "entities.adam_m", "entities.adam_v",
                                             "relations.adam_m", "relations.adam_v"}));
  // Tensor data: the entity table comes first, float32 little-endian.
  const std::size_t data_start = bytes.size() - 4 * (3 * 40 * 8 + 3 * 4 * 24);
  float first;
  unsigned char le[4];
  for (int i = 0; i < 4; ++i) le[i] = static_cast<unsigned char>(bytes[data_start + static_cast<std::size_t>(i)]);
  const std::uint32_t bits = le[0] | (le[1] << 8) | (le[2] << 16) | (static_cast<std::uint32_t>(le[3]) << 24);
  std::memcpy(&first, &bits, 4);
  EXPECT_EQ(first, s.params.entities(0, 0));
}

TEST(Checkpoint, RoundTripTableAndNodePiece) {
  const auto kg = toy_graph();
  const auto filter = build_filter(kg);
  for (auto mode : {EntityMode::Table, EntityMode::NodePiece}) {
    auto s = make_state<float>(kg, toy_config(mode));
    for (int i = 0; i < 3; ++i) train_step(s, kg, filter);
    const std::string bytes = serialize_checkpoint(s);
    const auto back = deserialize_checkpoint<float>(bytes, kg);
    expect_same_state(s, back);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
  }
}

TEST(Checkpoint, NodePieceTensorsAreListed) {
  const auto kg = toy_graph();
  const auto h = header_of(serialize_checkpoint(make_state<float>(kg, toy_config(EntityMode::NodePiece))));
  std::vector<std::string> names;
  for (const auto& t : h["tensors"]) names.push_back(t["name"]);
  EXPECT_EQ(names[2], "encoder.atoms");
  EXPECT_NE(std::find(names.begin(), names.end(), "encoder.projection.adam_v"), names.end());
  EXPECT_EQ(h["tensors"][0]["shape"], nlohmann::json::array({0, 8}));
}

TEST(Checkpoint, RejectsCorruptFilesAndOtherGraphs) {
  const auto kg = toy_graph();
  const std::string bytes = serialize_checkpoint(make_state<float>(kg, toy_config()));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint<float>(bad, kg), ParseError);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes.substr(0, bytes.size() - 4), kg), ParseError);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes + "x", kg), ParseError);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes.substr(0, 30), kg), ParseError);
  EXPECT_THROW(deserialize_checkpoint<float>("KGE1", kg), ParseError);

  SyntheticSpec other;
  other.n_entities = 41;
  other.n_relations = 4;
  other.n_triples = 300;
  EXPECT_THROW(deserialize_checkpoint<float>(bytes, generate_synthetic(other)), ValidationError);
  EXPECT_THROW(load_checkpoint<float>("/nonexistent/ckpt.kge", kg), IoError);
}

TEST(Train, ZeroStepsWritesTheInitialization) {
  const auto kg = toy_graph();
  auto cfg = toy_config();
  cfg.train.max_steps = 0;
  TempDir dir;
  const auto result = train<float>(kg, cfg, {dir.path(), {}});
  EXPECT_TRUE(result.losses.empty());
  expect_same_state(load_checkpoint<float>(dir / "checkpoint_final.kge", kg), make_state<float>(kg, cfg));
}

TEST(Train, ResumeIsBitwiseIdentical) {
  const auto kg = toy_graph();
  for (auto mode : {EntityMode::Table, EntityMode::NodePiece}) {
    auto cfg = toy_config(mode);
    cfg.train.max_steps = 30;
    TempDir straight_dir, split_dir;
    const auto straight = train<float>(kg, cfg, {straight_dir.path(), {}});

    auto half = cfg;
    half.train.max_steps = 12;
    train<float>(kg, half, {split_dir.path(), {}});
    auto resumed_state = load_checkpoint<float>(split_dir / "checkpoint_final.kge", kg);
    EXPECT_EQ(resumed_state.step, 12u);
    resumed_state.config.train.max_steps = 30;
    const auto resumed = train<float>(kg, std::move(resumed_state), {split_dir.path(), {}});

    expect_same_state(straight.state, resumed.state);
    ASSERT_EQ(resumed.losses.size(), 18u);
    for (std::size_t i = 0; i < 18; ++i) EXPECT_EQ(resumed.losses[i], straight.losses[12 + i]);
    EXPECT_EQ(read_file(straight_dir / "checkpoint_final.kge"), read_file(split_dir / "checkpoint_final.kge"));
  }
}

TEST(Train, MetricsLogAndCheckpoints) {
  const auto kg = toy_graph();
  TempDir dir;
  std::vector<MetricsRecord> seen;
  const auto result = train<float>(kg, toy_config(), {dir.path(), [&](const MetricsRecord& r) { seen.push_back(r); }});
  EXPECT_EQ(result.losses.size(), 20u);
  ASSERT_EQ(result.records.size(), 4u);  // steps 5, 10, 15, 20
  EXPECT_EQ(seen.size(), 4u);
  std::istringstream log(read_file(dir / "metrics.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["step"], 5 * (n + 1));
    EXPECT_TRUE(j["loss"].is_number());
    EXPECT_TRUE(j["valid_mrr"].is_number());
    ++n;
  }
  EXPECT_EQ(n, 4u);
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint_best.kge"));
  const auto best = load_checkpoint<float>(dir / "checkpoint_best.kge", kg);
  const auto filter = build_filter(kg);
  EXPECT_EQ(validation_mrr(kg, filter, best), *result.best_valid_mrr);
  double max_mrr = 0;
  for (const auto& r : result.records) max_mrr = std::max(max_mrr, *r.valid_mrr);
  EXPECT_EQ(*result.best_valid_mrr, max_mrr);
}

TEST(Train, WithoutValidSplitBestIsFinal) {
  SyntheticSpec s;
  s.n_entities = 30;
  s.n_relations = 2;
  s.n_triples = 100;
  s.valid_fraction = 0;
  const auto kg = generate_synthetic(s);
  TempDir dir;
  const auto result = train<float>(kg, toy_config(), {dir.path(), {}});
  EXPECT_FALSE(result.best_valid_mrr);
  EXPECT_FALSE(result.records.back().valid_mrr);
  EXPECT_EQ(read_file(dir / "checkpoint_best.kge"), read_file(dir / "checkpoint_final.kge"));
  EXPECT_NE(read_file(dir / "metrics.jsonl").find("\"valid_mrr\":null"), std::string::npos);
}

}  // namespace
}  // namespace triplere
