#pragma once

// The training loop: steps, periodic validation, checkpoints and the
// JSON-lines metrics log.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "eval.hpp"
#include "kgdata.hpp"
#include "training.hpp"

namespace triplere {

struct MetricsRecord {
  std::uint64_t step = 0;
  std::optional<double> loss;  // mean training loss since the previous record
  std::optional<double> valid_mrr;
};

inline nlohmann::ordered_json to_json(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["loss"] = r.loss ? nlohmann::ordered_json(*r.loss) : nlohmann::ordered_json(nullptr);
  j["valid_mrr"] = r.valid_mrr ? nlohmann::ordered_json(*r.valid_mrr) : nlohmann::ordered_json(nullptr);
  return j;
}

struct TrainOptions {
  // When set, receives checkpoint_best.kge, checkpoint_final.kge and metrics.jsonl.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const MetricsRecord&)> on_record;
};

template <class T>
struct TrainResult {
  TrainState<T> state;
  std::vector<double> losses;  // one per step run
  std::vector<MetricsRecord> records;
  std::optional<double> best_valid_mrr;
  std::optional<double> final_valid_mrr;
};

// Sampled-protocol MRR on the valid split, as used for model selection.
template <class T>
double validation_mrr(const KnowledgeGraph& kg, const FilterIndex& filter, const TrainState<T>& s) {
  EvalProtocol protocol;
  protocol.kind = ProtocolKind::Sampled;
  protocol.n_candidates = s.config.train.eval_candidates;
  protocol.seed = s.config.train.seed;
  protocol.threads = s.config.train.threads;
  const Matrix<T> entities = materialize_entities(s);
  return evaluate(kg, filter, s.spec(), entities, s.params.relations, protocol, Split::Valid).overall.mrr;
}

// Continues `state` until config.train.max_steps. Validation runs every
// eval_interval steps and once at the end; with an empty valid split only the
// loss is recorded and the best checkpoint is the final one.
template <class T>
TrainResult<T> train(const KnowledgeGraph& kg, TrainState<T> state, const TrainOptions& options = {}) {
  namespace fs = std::filesystem;
  const FilterIndex filter = build_filter(kg);
  const TrainConfig& cfg = state.config.train;
  const bool can_validate = !kg.valid().empty();

  std::ofstream log;
  if (options.out_dir) {
    std::error_code ec;
    fs::create_directories(*options.out_dir, ec);
    if (ec) throw IoError("cannot create " + options.out_dir->string() + ": " + ec.message());
    const fs::path log_path = *options.out_dir / "metrics.jsonl";
    log.open(log_path, state.step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write " + log_path.string());
  }

  TrainResult<T> result{std::move(state), {}, {}, std::nullopt, std::nullopt};
  TrainState<T>& s = result.state;
  double loss_sum = 0;
  std::size_t loss_count = 0;

  const auto record = [&] {
    MetricsRecord r;
    r.step = s.step;
    if (loss_count) r.loss = loss_sum / static_cast<double>(loss_count);
    loss_sum = 0;
    loss_count = 0;
    if (can_validate) {
      r.valid_mrr = validation_mrr(kg, filter, s);
      result.final_valid_mrr = r.valid_mrr;
      if (!result.best_valid_mrr || *r.valid_mrr > *result.best_valid_mrr) {
        result.best_valid_mrr = r.valid_mrr;
        if (options.out_dir) save_checkpoint(s, *options.out_dir / "checkpoint_best.kge");
      }
    }
    result.records.push_back(r);
    if (log) {
      log << to_json(r).dump() << '\n';
      log.flush();
    }
    if (options.on_record) options.on_record(r);
  };

  while (s.step < cfg.max_steps) {
    const double l = static_cast<double>(train_step(s, kg, filter));
    result.losses.push_back(l);
    loss_sum += l;
    ++loss_count;
    if (cfg.eval_interval && s.step % cfg.eval_interval == 0 && s.step < cfg.max_steps) record();
  }
  if (result.records.empty() || result.records.back().step != s.step) record();

  if (options.out_dir) {
    save_checkpoint(s, *options.out_dir / "checkpoint_final.kge");
    if (!can_validate) save_checkpoint(s, *options.out_dir / "checkpoint_best.kge");
  }
  return result;
}

template <class T>
TrainResult<T> train(const KnowledgeGraph& kg, const RunConfig& config, const TrainOptions& options = {}) {
  return train(kg, make_state<T>(kg, config), options);
}

// Evaluates a training state (any entity mode) on `split`.
template <class T>
EvalResult evaluate(const KnowledgeGraph& kg, const FilterIndex& filter, const TrainState<T>& s,
                    const EvalProtocol& protocol, Split split) {
  const Matrix<T> entities = materialize_entities(s);
  return evaluate(kg, filter, s.spec(), entities, s.params.relations, protocol, split);
}

}  // namespace triplere
