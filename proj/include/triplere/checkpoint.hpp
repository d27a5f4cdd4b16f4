#pragma once

// Checkpoint file layout:
//
//   bytes 0..3   magic "KGE1"
//   bytes 4..11  header length N, unsigned 64-bit little-endian
//   next N bytes UTF-8 JSON header:
//                  spec           model kind, dim, norm, u, gamma
//                  num_entities, num_relations, step
//                  config         full run configuration (same keys as the config file)
//                  relation_layout  segment order of relation rows
//                  tensors        [{name, shape: [rows, cols], offset}], offset in
//                                 bytes from the start of the tensor data
//   tensor data  little-endian IEEE-754 float32, row-major, in manifest order
//
// Relation rows are [r] (transe), [r_h | r_t] (pairre) or [r_h | r_m | r_t]
// (triplere). NodePiece token hashes are not stored: they are recomputed from
// the graph and the configuration, which determine them exactly.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "error.hpp"
#include "kgdata.hpp"
#include "training.hpp"

namespace triplere {

inline constexpr char kCheckpointMagic[4] = {'K', 'G', 'E', '1'};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

template <class T>
void put_floats(std::string& out, std::span<const T> values) {
  for (T x : values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

inline float get_float(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

inline std::string relation_layout(ModelKind k) {
  switch (k) {
    case ModelKind::TransE: return "r";
    case ModelKind::PairRE: return "r_h|r_t";
    default: return "r_h|r_m|r_t";
  }
}

// Works on const and mutable states alike.
template <class State, class Fn>
void for_each_checkpoint_tensor(State& s, Fn&& fn) {
  fn("entities", s.params.entities);
  fn("relations", s.params.relations);
  if (s.nodepiece) {
    s.nodepiece->encoder.params().for_each_tensor(
        [&](const char* name, auto& m) { fn(std::string("encoder.") + name, m); });
  }
  fn("entities.adam_m", s.moments.entity_m);
  fn("entities.adam_v", s.moments.entity_v);
  fn("relations.adam_m", s.moments.relation_m);
  fn("relations.adam_v", s.moments.relation_v);
  if (s.nodepiece) {
    s.moments.encoder_m.for_each_tensor(
        [&](const char* name, auto& m) { fn(std::string("encoder.") + name + ".adam_m", m); });
    s.moments.encoder_v.for_each_tensor(
        [&](const char* name, auto& m) { fn(std::string("encoder.") + name + ".adam_v", m); });
  }
}

}  // namespace detail

template <class T>
std::string serialize_checkpoint(const TrainState<T>& s) {
  nlohmann::ordered_json header;
  header["format"] = "KGE1";
  header["spec"] = {{"model", to_string(s.spec().kind)},
                    {"dim", s.spec().dim},
                    {"norm", s.spec().norm_order},
                    {"u", s.spec().u},
                    {"gamma", s.spec().gamma}};
  header["num_entities"] = s.num_entities();
  header["num_relations"] = s.params.relations.rows();
  header["step"] = s.step;
  header["config"] = to_json(s.config);
  header["relation_layout"] = detail::relation_layout(s.spec().kind);
  auto& manifest = header["tensors"] = nlohmann::ordered_json::array();
  std::string data;
  detail::for_each_checkpoint_tensor(s, [&](const std::string& name, const Matrix<T>& m) {
    manifest.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", data.size()}});
    detail::put_floats<T>(data, m.flat());
  });
  const std::string json = header.dump();
  std::string out(kCheckpointMagic, 4);
  detail::put_u64(out, json.size());
  out += json;
  out += data;
  return out;
}

template <class T>
void save_checkpoint(const TrainState<T>& state, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// Rebuilds a training state. `kg` supplies the graph for nodepiece-mode
// checkpoints (hashes are recomputed) and is checked against the stored sizes.
template <class T>
TrainState<T> deserialize_checkpoint(const std::string& bytes, const KnowledgeGraph& kg,
                                     const std::string& where = "checkpoint") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, kCheckpointMagic, 4) != 0) {
    throw ParseError(where + ": not a KGE1 checkpoint");
  }
  const std::uint64_t header_len = detail::get_u64(p + 4);
  if (header_len > bytes.size() - 12) throw ParseError(where + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": malformed header: " + e.what());
  }
  const std::size_t data_start = 12 + header_len;

  TrainState<T> s;
  try {
    const RunConfig config = config_from_json(header.at("config"));
    if (header.at("num_entities").get<std::size_t>() != kg.num_entities() ||
        header.at("num_relations").get<std::size_t>() != kg.num_relations()) {
      throw ValidationError(where + ": checkpoint was trained on a graph with " +
                            std::to_string(header.at("num_entities").get<std::size_t>()) + " entities and " +
                            std::to_string(header.at("num_relations").get<std::size_t>()) +
                            " relations; this graph has " + std::to_string(kg.num_entities()) + " and " +
                            std::to_string(kg.num_relations()));
    }
    s = make_state<T>(kg, config);
    s.step = header.at("step").get<std::uint64_t>();

    std::size_t consumed = 0;
    const auto& manifest = header.at("tensors");
    std::size_t idx = 0;
    detail::for_each_checkpoint_tensor(s, [&](const std::string& name, Matrix<T>& m) {
      if (idx >= manifest.size()) throw ParseError(where + ": tensor '" + name + "' missing");
      const auto& entry = manifest.at(idx++);
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (entry.at("name").get<std::string>() != name || shape.size() != 2 || shape[0] != m.rows() ||
          shape[1] != m.cols()) {
        throw ParseError(where + ": tensor '" + name + "' has an unexpected name or shape");
      }
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t n_bytes = m.size() * 4;
      if (offset != consumed || data_start + offset + n_bytes > bytes.size()) {
        throw ParseError(where + ": tensor '" + name + "' lies outside the file");
      }
      const unsigned char* src = p + data_start + offset;
      for (std::size_t i = 0; i < m.size(); ++i) m.flat()[i] = static_cast<T>(detail::get_float(src + 4 * i));
      consumed += n_bytes;
    });
    if (idx != manifest.size()) throw ParseError(where + ": unexpected extra tensors");
    if (data_start + consumed != bytes.size()) throw ParseError(where + ": trailing bytes after tensor data");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": malformed header: " + e.what());
  }
  return s;
}

template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path, const KnowledgeGraph& kg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint<T>(bytes, kg, path.string());
}

}  // namespace triplere
