// triplere: command-line front end for the triplere library.
//
//   generate  write a synthetic dataset directory
//   tokenize  anchor selection + NodePiece hashes for a dataset
//   train     train a model, writing checkpoints, metrics.jsonl and manifest.json
//   evaluate  link-prediction metrics for a checkpoint
//   score     score one named triple
//   params    parameter count for a model configuration
//
// Exit codes: 0 ok, 2 usage or validation error, 3 numeric failure.
// Results go to stdout as JSON; progress and warnings go to stderr.

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "triplere/triplere.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace triplere;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

// Relative dataset paths resolve against $TRIPLERE_DATA_ROOT when it is set.
fs::path data_path(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("TRIPLERE_DATA_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

std::string kebab(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

std::string hex(const unsigned char* p, unsigned n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < n; ++i) {
    out += digits[p[i] >> 4];
    out += digits[p[i] & 15];
  }
  return out;
}

std::string sha1_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1) throw IoError("SHA-1 failed");
  return hex(md, len);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Git blob id: SHA-1 of "blob <size>\0<content>".
std::string git_blob_hash(const fs::path& p) {
  const std::string content = read_bytes(p);
  return sha1_hex("blob " + std::to_string(content.size()) + '\0' + content);
}

// Inputs, artifacts and timings of one run.
class RunManifest {
 public:
  explicit RunManifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void add_input(const fs::path& p) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && (e.path().extension() == ".tsv" || name == "entities.txt" || name == "relations.txt")) {
          files.push_back(e.path());
        }
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) add_input(f);
      return;
    }
    inputs_.push_back({{"path", p.string()}, {"blob", git_blob_hash(p)}});
  }

  void add_artifact(const fs::path& p) {
    for (const auto& a : artifacts_) {
      if (a["path"] == p.string()) return;
    }
    artifacts_.push_back({{"path", p.string()}, {"blob", git_blob_hash(p)}});
  }

  void time(const std::string& phase, double seconds) { timings_[phase] = seconds; }

  json to_json(const RunConfig* config, std::optional<std::uint64_t> seed) const {
    json j;
    j["command"] = command_;
    if (config) j["config"] = triplere::to_json(*config);
    if (seed) j["seed"] = *seed;
    // Hash over the sorted "<blob> <path>" lines, like a flat git tree listing.
    std::vector<std::string> lines;
    for (const auto& i : inputs_) lines.push_back(i["blob"].get<std::string>() + " " + i["path"].get<std::string>());
    std::sort(lines.begin(), lines.end());
    std::string listing;
    for (const auto& l : lines) listing += l + "\n";
    j["inputs"] = inputs_;
    j["inputs_hash"] = sha1_hex(listing);
    j["artifacts"] = artifacts_;
    json t = timings_;
    t["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j["timings"] = t;
    return j;
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  json inputs_ = json::array();
  json artifacts_ = json::array();
  json timings_ = json::object();
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest_names(const std::string& name, const std::vector<std::string>& names, std::size_t n = 5) {
  std::vector<std::pair<std::size_t, const std::string*>> ranked;
  ranked.reserve(names.size());
  for (const auto& c : names) ranked.emplace_back(edit_distance(name, c), &c);
  const auto take = std::min(n, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(),
                    [](const auto& x, const auto& y) { return std::tie(x.first, *x.second) < std::tie(y.first, *y.second); });
  std::string out;
  for (std::size_t i = 0; i < take; ++i) out += (i ? ", " : "") + *ranked[i].second;
  return out;
}

// Thrown for unknown entity or relation names.
class UnknownName : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

EntityId entity_id(const Vocabulary& v, const std::string& name) {
  if (auto id = v.find_entity(name)) return *id;
  throw UnknownName("unknown entity '" + name + "'; nearest: " + nearest_names(name, v.entity_names()));
}

RelationId relation_id(const Vocabulary& v, const std::string& name) {
  if (auto id = v.find_relation(name)) return *id;
  throw UnknownName("unknown relation '" + name + "'; nearest: " + nearest_names(name, v.relation_names()));
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

// One string option per config key; set values override the config file.
struct ConfigFlags {
  std::map<std::string, std::string> values;
  std::string config_file;

  void attach(CLI::App* app, bool with_file) {
    if (with_file) app->add_option("--config", config_file, "JSON config file (flags override its keys)");
    const RunConfig defaults;
    for (const auto& f : detail::config_fields()) {
      app->add_option("--" + kebab(f.key), values[f.key], "default " + f.get(defaults).dump());
    }
  }

  RunConfig resolve(CLI::App* app) const {
    RunConfig c;
    if (!config_file.empty()) {
      json j;
      try {
        j = json::parse(read_bytes(config_file));
      } catch (const json::exception& e) {
        throw ValidationError(config_file + ": " + e.what());
      }
      c = apply_config_json(c, j);
    }
    nlohmann::json overrides = nlohmann::json::object();
    for (const auto& [key, text] : values) {
      if (app->count("--" + kebab(key))) overrides[key] = config_value_from_string(key, text);
    }
    c = apply_config_json(c, overrides);
    validate(c);
    return c;
  }
};

struct DataFlags {
  std::string data;
  std::string format = "tsv-names";

  void attach(CLI::App* app) {
    app->add_option("--data", data, "dataset directory or 4-column TSV file")->required();
    app->add_option("--format", format, "tsv-names or tsv-ids")->capture_default_str();
  }

  KnowledgeGraph load() const { return load_triples(data_path(data), parse_triple_format(format)); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TripleRE knowledge-graph embedding toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset directory");
  SyntheticSpec gen_spec;
  std::string gen_pattern = "random", gen_out;
  gen->add_option("--entities", gen_spec.n_entities)->required();
  gen->add_option("--relations", gen_spec.n_relations)->capture_default_str();
  gen->add_option("--triples", gen_spec.n_triples)->required();
  gen->add_option("--pattern", gen_pattern, "random, inverse-pairs or symmetric")->capture_default_str();
  gen->add_option("--seed", gen_spec.seed)->capture_default_str();
  gen->add_option("--valid-fraction", gen_spec.valid_fraction)->capture_default_str();
  gen->add_option("--test-fraction", gen_spec.test_fraction)->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // tokenize
  auto* tokc = app.add_subcommand("tokenize", "select anchors and hash every entity");
  DataFlags tok_data;
  ConfigFlags tok_cfg;
  std::string tok_out;
  tok_data.attach(tokc);
  tok_cfg.attach(tokc, true);
  tokc->add_option("--out", tok_out, "vocabulary JSON file (default: stdout)");

  // train
  auto* trainc = app.add_subcommand("train", "train a model");
  DataFlags train_data;
  ConfigFlags train_cfg;
  std::string train_out = "run", train_resume;
  train_data.attach(trainc);
  train_cfg.attach(trainc, true);
  trainc->add_option("--out", train_out, "output directory")->capture_default_str();
  trainc->add_option("--resume", train_resume, "checkpoint to continue from (its config is used; --steps may extend it)");

  // evaluate
  auto* evalc = app.add_subcommand("evaluate", "link-prediction metrics for a checkpoint");
  DataFlags eval_data;
  std::string eval_ckpt, eval_protocol = "filtered-full", eval_split = "test", eval_sides = "both";
  EvalProtocol protocol;
  bool eval_table = false;
  eval_data.attach(evalc);
  evalc->add_option("--checkpoint", eval_ckpt)->required();
  evalc->add_option("--protocol", eval_protocol, "filtered-full, raw-full or sampled")->capture_default_str();
  evalc->add_option("--split", eval_split, "train, valid or test")->capture_default_str();
  evalc->add_option("--sides", eval_sides, "head, tail or both")->capture_default_str();
  evalc->add_option("--candidates", protocol.n_candidates, "negatives per query (sampled)")->capture_default_str();
  evalc->add_option("--seed", protocol.seed, "sampling seed (sampled)")->capture_default_str();
  evalc->add_option("--threads", protocol.threads)->capture_default_str();
  evalc->add_flag("--table", eval_table, "print a fixed-width table instead of JSON");

  // score
  auto* scorec = app.add_subcommand("score", "score one triple given by names");
  DataFlags score_data;
  std::string score_ckpt, score_h, score_r, score_t;
  score_data.attach(scorec);
  scorec->add_option("--checkpoint", score_ckpt)->required();
  scorec->add_option("--head", score_h)->required();
  scorec->add_option("--relation", score_r)->required();
  scorec->add_option("--tail", score_t)->required();

  // params
  auto* paramsc = app.add_subcommand("params", "parameter count of a model configuration");
  ConfigFlags params_cfg;
  std::uint64_t p_entities = 0, p_relations = 0;
  std::int32_t p_max_distance = 0;
  params_cfg.attach(paramsc, true);
  paramsc->add_option("--entities", p_entities)->required();
  paramsc->add_option("--relations", p_relations)->required();
  paramsc->add_option("--max-distance", p_max_distance, "largest anchor distance (nodepiece)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) {
      gen_spec.pattern = parse_pattern(gen_pattern);
      RunManifest manifest("generate");
      const auto kg = generate_synthetic(gen_spec);
      const fs::path out = data_path(gen_out);
      save_graph(kg, out);
      for (const char* f : {"train.tsv", "valid.tsv", "test.tsv", "entities.txt", "relations.txt"}) {
        manifest.add_artifact(out / f);
      }
      json j = manifest.to_json(nullptr, gen_spec.seed);
      j["entities"] = kg.num_entities();
      j["relations"] = kg.num_relations();
      j["train"] = kg.train().size();
      j["valid"] = kg.valid().size();
      j["test"] = kg.test().size();
      print(j);
    } else if (*tokc) {
      const RunConfig cfg = tok_cfg.resolve(tokc);
      RunManifest manifest("tokenize");
      const auto kg = tok_data.load();
      manifest.add_input(data_path(tok_data.data));
      const auto t0 = std::chrono::steady_clock::now();
      const auto tok = tokenize_for(kg, cfg);
      manifest.time("tokenize_seconds", seconds_since(t0));
      const std::string body = to_json(tok).dump();
      if (tok_out.empty()) {
        std::cout << body << '\n';
      } else {
        std::ofstream out(tok_out, std::ios::binary | std::ios::trunc);
        if (!(out << body << '\n')) throw IoError("cannot write " + tok_out);
        out.close();
        manifest.add_artifact(tok_out);
        json j = manifest.to_json(&cfg, cfg.train.seed);
        j["anchors"] = tok.anchors.anchors.size();
        j["max_distance"] = tok.max_distance;
        print(j);
      }
    } else if (*trainc) {
      RunManifest manifest("train");
      const auto kg = train_data.load();
      manifest.add_input(data_path(train_data.data));
      TrainState<float> state;
      if (!train_resume.empty()) {
        state = load_checkpoint<float>(train_resume, kg);
        manifest.add_input(train_resume);
        if (trainc->count("--steps")) {
          state.config.train.max_steps = config_value_from_string("steps", train_cfg.values.at("steps")).get<std::uint64_t>();
        }
      } else {
        const RunConfig cfg = train_cfg.resolve(trainc);
        if (!train_cfg.config_file.empty()) manifest.add_input(train_cfg.config_file);
        state = make_state<float>(kg, cfg);
      }
      const fs::path out(train_out);
      TrainOptions opts;
      opts.out_dir = out;
      opts.on_record = [](const MetricsRecord& r) { std::cerr << to_json(r).dump() << '\n'; };
      const auto t0 = std::chrono::steady_clock::now();
      const auto result = train(kg, std::move(state), opts);
      manifest.time("train_seconds", seconds_since(t0));
      for (const char* f : {"checkpoint_best.kge", "checkpoint_final.kge", "metrics.jsonl"}) manifest.add_artifact(out / f);
      json j = manifest.to_json(&result.state.config, result.state.config.train.seed);
      std::ofstream(out / "manifest.json") << j.dump(2) << '\n';
      json summary;
      summary["steps"] = result.state.step;
      summary["final_loss"] = result.losses.empty() ? json(nullptr) : json(result.losses.back());
      summary["final_valid_mrr"] = result.final_valid_mrr ? json(*result.final_valid_mrr) : json(nullptr);
      summary["best_valid_mrr"] = result.best_valid_mrr ? json(*result.best_valid_mrr) : json(nullptr);
      summary["parameters"] = result.state.nodepiece
                                  ? count_parameters(result.state.spec(), result.state.nodepiece->encoder.shape())
                                  : count_parameters(result.state.spec(), kg.num_entities(), kg.num_relations());
      summary["out"] = out.string();
      print(summary);
    } else if (*evalc) {
      protocol.kind = parse_protocol(eval_protocol);
      protocol.sides = parse_sides(eval_sides);
      const Split split = parse_split(eval_split);
      const auto kg = eval_data.load();
      const auto state = load_checkpoint<float>(eval_ckpt, kg);
      const auto filter = build_filter(kg);
      const auto result = evaluate(kg, filter, state, protocol, split);
      if (eval_table) {
        std::cout << format_table(result);
      } else {
        json j = to_json(result);
        j["protocol"] = to_string(protocol.kind);
        j["split"] = to_string(split);
        if (protocol.kind == ProtocolKind::Sampled) j["candidates"] = protocol.n_candidates;
        print(j);
      }
    } else if (*scorec) {
      const auto kg = score_data.load();
      const auto state = load_checkpoint<float>(score_ckpt, kg);
      const auto& v = kg.vocab();
      const EntityId h = entity_id(v, score_h), t = entity_id(v, score_t);
      const RelationId r = relation_id(v, score_r);
      const Matrix<float> entities = materialize_entities(state);
      const float s = score<float>(state.spec(), entities.row(static_cast<std::size_t>(h)),
                                   state.params.relations.row(static_cast<std::size_t>(r)),
                                   entities.row(static_cast<std::size_t>(t)));
      std::cout << nlohmann::json(s).dump() << '\n';
    } else if (*paramsc) {
      const RunConfig cfg = params_cfg.resolve(paramsc);
      std::uint64_t n = 0;
      if (cfg.train.entity_mode == EntityMode::Table) {
        n = count_parameters(cfg.model, p_entities, p_relations);
      } else {
        const auto& np = cfg.nodepiece;
        EncoderShape s;
        s.n_anchors = np.anchors_for(p_entities);
        s.n_relations = p_relations;
        s.dim = cfg.model.dim;
        s.atom_dim = np.atom_dim ? np.atom_dim : cfg.model.dim;
        s.hidden = np.hidden ? np.hidden : cfg.model.dim;
        s.k = np.k;
        s.m = np.m;
        s.max_distance = p_max_distance;
        s.encoding = np.encoding;
        s.activation = np.activation;
        n = count_parameters(cfg.model, s);
      }
      std::cout << n << '\n';
    }
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return 0;
}
