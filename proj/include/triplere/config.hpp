#pragma once

// Run configuration: model spec, training hyperparameters and NodePiece
// settings, read from and written to one flat JSON object. The same key table
// drives the command-line flags (key "batch_size" is flag --batch-size).

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "models.hpp"
#include "nodepiece.hpp"

namespace triplere {

enum class EntityMode { Table, NodePiece };

inline std::string_view to_string(EntityMode m) { return m == EntityMode::Table ? "table" : "nodepiece"; }

inline EntityMode parse_entity_mode(std::string_view s) {
  if (s == "table") return EntityMode::Table;
  if (s == "nodepiece") return EntityMode::NodePiece;
  throw ValidationError("unknown entity mode '" + std::string(s) + "' (expected table or nodepiece)");
}

enum class NegativeMode { Raw, Filtered };

inline std::string_view to_string(NegativeMode m) { return m == NegativeMode::Raw ? "raw" : "filtered"; }

inline NegativeMode parse_negative_mode(std::string_view s) {
  if (s == "raw") return NegativeMode::Raw;
  if (s == "filtered") return NegativeMode::Filtered;
  throw ValidationError("unknown negative sampling mode '" + std::string(s) + "' (expected raw or filtered)");
}

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t n_negatives = 64;
  double adversarial_temperature = 1.0;
  double learning_rate = 0.0005;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;
  EntityMode entity_mode = EntityMode::Table;
  double regularization = 0.0;  // L3 coefficient on the batch's embeddings
  std::size_t eval_interval = 500;
  std::size_t eval_candidates = 500;
  NegativeMode negative_mode = NegativeMode::Raw;
  bool normalize_entities = false;  // L2-renormalize updated entity rows (table mode)
  std::size_t threads = 1;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct NodePieceConfig {
  std::size_t n_anchors = 0;  // 0: round(sqrt(|E|))
  AnchorStrategy strategy = AnchorStrategy::Degree;
  std::size_t k = 20;
  std::size_t m = 12;
  std::size_t atom_dim = 0;  // 0: model dim
  std::size_t hidden = 0;    // 0: model dim
  Activation activation = Activation::Relu;
  Encoding encoding = Encoding::Anchor;

  std::size_t anchors_for(std::size_t n_entities) const {
    if (n_anchors) return n_anchors;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n_entities)))));
  }

  friend bool operator==(const NodePieceConfig&, const NodePieceConfig&) = default;
};

struct RunConfig {
  ModelSpec model;
  TrainConfig train;
  NodePieceConfig nodepiece;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline void validate(const RunConfig& c) {
  validate(c.model);
  const auto& t = c.train;
  if (t.batch_size == 0) throw ValidationError("batch_size must be positive");
  if (t.n_negatives == 0) throw ValidationError("negatives must be positive");
  if (!(t.adversarial_temperature >= 0)) throw ValidationError("adversarial_temperature must be non-negative");
  if (!(t.learning_rate >= 0) || !std::isfinite(t.learning_rate)) throw ValidationError("learning_rate must be non-negative");
  if (!(t.regularization >= 0)) throw ValidationError("regularization must be non-negative");
  if (t.eval_candidates == 0) throw ValidationError("eval_candidates must be positive");
  if (t.threads == 0) throw ValidationError("threads must be positive");
  if (t.entity_mode == EntityMode::NodePiece) {
    if (c.nodepiece.k == 0) throw ValidationError("k must be at least 1");
    if (c.nodepiece.encoding == Encoding::AnchorRm && c.model.kind == ModelKind::PairRE) {
      throw ValidationError("anchor_rm encoding needs a model with a translation segment (not pairre)");
    }
  }
}

namespace detail {

enum class FieldKind { Unsigned, Real, Bool, Text };

struct ConfigField {
  const char* key;
  FieldKind kind;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

template <class Member>
ConfigField unsigned_field(const char* key, Member member) {
  return {key, FieldKind::Unsigned, [member](const RunConfig& c) { return nlohmann::json(member(c)); },
          [member, key](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_number_unsigned()) {
              if (!(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
                throw ValidationError(std::string("config key '") + key + "' expects a non-negative integer");
              }
            }
            member(c) = j.get<std::uint64_t>();
          }};
}

template <class Member>
ConfigField real_field(const char* key, Member member) {
  return {key, FieldKind::Real, [member](const RunConfig& c) { return nlohmann::json(member(c)); },
          [member, key](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_number()) throw ValidationError(std::string("config key '") + key + "' expects a number");
            member(c) = j.get<double>();
          }};
}

template <class Member, class Parse>
ConfigField text_field(const char* key, Member member, Parse parse) {
  return {key, FieldKind::Text, [member](const RunConfig& c) { return nlohmann::json(std::string(to_string(member(c)))); },
          [member, parse, key](RunConfig& c, const nlohmann::json& j) {
            if (!j.is_string()) throw ValidationError(std::string("config key '") + key + "' expects a string");
            member(c) = parse(j.get<std::string>());
          }};
}

#define TRIPLERE_MEMBER(path) [](auto& c) -> auto& { return c.path; }

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(text_field("model", TRIPLERE_MEMBER(model.kind), parse_model_kind));
    f.push_back(unsigned_field("dim", TRIPLERE_MEMBER(model.dim)));
    f.push_back({"norm", FieldKind::Unsigned, [](const RunConfig& c) { return nlohmann::json(c.model.norm_order); },
                 [](RunConfig& c, const nlohmann::json& j) {
                   if (!j.is_number_integer()) throw ValidationError("config key 'norm' expects 1 or 2");
                   c.model.norm_order = j.get<int>();
                 }});
    f.push_back(real_field("u", TRIPLERE_MEMBER(model.u)));
    f.push_back(real_field("gamma", TRIPLERE_MEMBER(model.gamma)));
    f.push_back(unsigned_field("batch_size", TRIPLERE_MEMBER(train.batch_size)));
    f.push_back(unsigned_field("negatives", TRIPLERE_MEMBER(train.n_negatives)));
    f.push_back(real_field("adversarial_temperature", TRIPLERE_MEMBER(train.adversarial_temperature)));
    f.push_back(real_field("learning_rate", TRIPLERE_MEMBER(train.learning_rate)));
    f.push_back(unsigned_field("steps", TRIPLERE_MEMBER(train.max_steps)));
    f.push_back(unsigned_field("seed", TRIPLERE_MEMBER(train.seed)));
    f.push_back(text_field("entity_mode", TRIPLERE_MEMBER(train.entity_mode), parse_entity_mode));
    f.push_back(real_field("regularization", TRIPLERE_MEMBER(train.regularization)));
    f.push_back(unsigned_field("eval_interval", TRIPLERE_MEMBER(train.eval_interval)));
    f.push_back(unsigned_field("eval_candidates", TRIPLERE_MEMBER(train.eval_candidates)));
    f.push_back(text_field("negative_mode", TRIPLERE_MEMBER(train.negative_mode), parse_negative_mode));
    f.push_back({"normalize_entities", FieldKind::Bool,
                 [](const RunConfig& c) { return nlohmann::json(c.train.normalize_entities); },
                 [](RunConfig& c, const nlohmann::json& j) {
                   if (!j.is_boolean()) throw ValidationError("config key 'normalize_entities' expects true or false");
                   c.train.normalize_entities = j.get<bool>();
                 }});
    f.push_back(unsigned_field("threads", TRIPLERE_MEMBER(train.threads)));
    f.push_back(unsigned_field("anchors", TRIPLERE_MEMBER(nodepiece.n_anchors)));
    f.push_back(text_field("anchor_strategy", TRIPLERE_MEMBER(nodepiece.strategy), parse_anchor_strategy));
    f.push_back(unsigned_field("k", TRIPLERE_MEMBER(nodepiece.k)));
    f.push_back(unsigned_field("m", TRIPLERE_MEMBER(nodepiece.m)));
    f.push_back(unsigned_field("atom_dim", TRIPLERE_MEMBER(nodepiece.atom_dim)));
    f.push_back(unsigned_field("hidden", TRIPLERE_MEMBER(nodepiece.hidden)));
    f.push_back(text_field("activation", TRIPLERE_MEMBER(nodepiece.activation), parse_activation));
    f.push_back(text_field("encoding", TRIPLERE_MEMBER(nodepiece.encoding), parse_encoding));
    return f;
  }();
  return fields;
}

#undef TRIPLERE_MEMBER

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  for (const auto& f : detail::config_fields()) j[f.key] = f.get(c);
  return j;
}

// Applies the keys present in `j` on top of `base`. Unknown keys are rejected.
inline RunConfig apply_config_json(RunConfig base, const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  const auto& fields = detail::config_fields();
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.key; });
    if (it == fields.end()) throw ValidationError("unknown config key '" + key + "'");
    it->set(base, value);
  }
  return base;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c = apply_config_json(RunConfig{}, j);
  validate(c);
  return c;
}

// Converts a command-line string for `key` into the JSON value its field expects.
inline nlohmann::json config_value_from_string(std::string_view key, const std::string& text) {
  const auto& fields = detail::config_fields();
  auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.key; });
  if (it == fields.end()) throw ValidationError("unknown config key '" + std::string(key) + "'");
  try {
    std::size_t pos = 0;
    switch (it->kind) {
      case detail::FieldKind::Unsigned: {
        if (text.empty() || text[0] == '-') break;
        const auto v = std::stoull(text, &pos);
        if (pos == text.size()) return v;
        break;
      }
      case detail::FieldKind::Real: {
        const auto v = std::stod(text, &pos);
        if (pos == text.size()) return v;
        break;
      }
      case detail::FieldKind::Bool:
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        break;
      case detail::FieldKind::Text: return text;
    }
  } catch (const std::exception&) {
  }
  throw ValidationError("invalid value '" + text + "' for --" + std::string(key));
}

}  // namespace triplere
