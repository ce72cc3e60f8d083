#include "leaprec/rec_task.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "leaprec/errors.hpp"

namespace leaprec {

RecTask::RecTask(const InteractionLog& log, const TimeSlicedDataset& ds, ModelConfig gtl_cfg,
                 ModelConfig otl_cfg, RecTaskOptions opts)
    : ds_(ds), gtl_cfg_(gtl_cfg), otl_cfg_(otl_cfg), opts_(opts) {
  if (gtl_cfg_.dim == 0 && otl_cfg_.dim == 0) throw ConfigError("both branches have dim 0");
  if (opts_.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  seq_cap_ = std::max(gtl_cfg_.max_seq_len, otl_cfg_.max_seq_len);
  train_flat_ = ds_.train_flat();
  if (train_flat_.empty()) throw DataError("dataset has no training interactions");
  graph_ = build_graph(train_flat_, ds_.num_users, ds_.num_items);
  observed_train_ = observed_items(train_flat_, ds_.num_users);
  observed_full_ = observed_items(log.interactions, ds_.num_users);
  sequences_at_cut_ = user_sequences(train_flat_, ds_.num_users,
                                     std::numeric_limits<std::int64_t>::max(), seq_cap_);
}

const std::vector<std::vector<int>>& RecTask::slice_sequences(int slice) {
  auto it = slice_seq_cache_.find(slice);
  if (it != slice_seq_cache_.end()) return it->second;
  const std::int64_t ref =
      month_start_timestamp(ds_.slice_month_begin.at(static_cast<size_t>(slice)));
  auto seqs = user_sequences(train_flat_, ds_.num_users, ref, seq_cap_);
  return slice_seq_cache_.emplace(slice, std::move(seqs)).first->second;
}

StepEval RecTask::make_step(int slice, int epoch, int k, std::mt19937_64& rng) {
  (void)epoch;
  (void)k;
  const auto& sl = ds_.slices.at(static_cast<size_t>(slice));
  auto batch = sample_bpr_batch(sl, observed_train_, ds_.num_items, opts_.batch_size, rng,
                                &bpr_stats_);
  const std::uint64_t dropout_seed = rng();
  BuiltLoss built = build_batch_loss(gtl_cfg_, otl_cfg_, graph_, slice_sequences(slice), batch,
                                     /*train_mode=*/true, dropout_seed, opts_.literal_bpr);
  return [this, built](const ParameterSet& gamma, const ParameterSet& omega,
                       bool want_grads) -> StepEvalResult {
    const Bindings bindings = bind_branches(gamma, omega);
    StepEvalResult r;
    r.loss = built.tape->forward(bindings, built.loss).scalar_value();
    if (want_grads) {
      GradientMap grads = built.tape->backward(built.loss);
      r.grad_gamma = grads_to_params(gtl_cfg_, grads, "gtl.");
      r.grad_omega = grads_to_params(otl_cfg_, grads, "otl.");
    }
    return r;
  };
}

double RecTask::validation_metric(const ParameterSet& gamma, const ParameterSet& omega) {
  if (ds_.val.empty()) return std::nan("");
  EvalConfig ec;
  ec.k_list = {5};
  ec.num_negatives = opts_.val_negatives;
  ec.seed = opts_.eval_seed;
  return evaluate(gamma, omega, graph_, sequences_at_cut_, observed_full_, ds_.val, ec).ndcg.at(5);
}

EvalContext make_eval_context(const InteractionLog& log, const TimeSlicedDataset& ds,
                              bool extend_history_through_val, int max_seq_len) {
  EvalContext ctx;
  std::vector<Interaction> history = ds.train_flat();
  if (extend_history_through_val) {
    history.insert(history.end(), ds.val.begin(), ds.val.end());
  }
  if (history.empty()) throw DataError("no interaction history before the cut time");
  ctx.graph = build_graph(history, ds.num_users, ds.num_items);
  ctx.sequences = user_sequences(history, ds.num_users, std::numeric_limits<std::int64_t>::max(),
                                 max_seq_len);
  ctx.observed_full = observed_items(log.interactions, ds.num_users);
  return ctx;
}

StaticTrainResult train_static(const InteractionLog& log, const TimeSlicedDataset& ds,
                               const ModelConfig& model_cfg, const StaticTrainOptions& opts) {
  if (!(opts.alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (opts.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (opts.steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
  if (opts.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (model_cfg.dim < 1) throw ConfigError("static baseline needs dim >= 1");

  ModelConfig zero_cfg = model_cfg;
  zero_cfg.dim = 0;

  std::mt19937_64 rng(opts.seed);
  StaticTrainResult res;
  ParameterSet params(model_cfg, rng);
  res.unused_otl = ParameterSet(zero_cfg);

  const std::vector<Interaction> pooled = ds.train_flat();
  if (pooled.empty()) throw DataError("dataset has no training interactions");
  const InteractionGraph graph = build_graph(pooled, ds.num_users, ds.num_items);
  const auto observed_train = observed_items(pooled, ds.num_users);
  const auto observed_full = observed_items(log.interactions, ds.num_users);
  const auto sequences = user_sequences(pooled, ds.num_users,
                                        std::numeric_limits<std::int64_t>::max(),
                                        model_cfg.max_seq_len);

  double best_val = -std::numeric_limits<double>::infinity();
  bool has_val = false;
  bool have_snapshot = false;
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (int step = 0; step < opts.steps_per_epoch; ++step) {
      const std::string where =
          "static epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
      try {
        auto batch =
            sample_bpr_batch(pooled, observed_train, ds.num_items, opts.batch_size, rng, nullptr);
        const std::uint64_t dropout_seed = rng();
        BuiltLoss built = build_batch_loss(model_cfg, zero_cfg, graph, sequences, batch,
                                           /*train_mode=*/true, dropout_seed, opts.literal_bpr);
        const Bindings bindings = bind_branches(params, res.unused_otl);
        const double loss = built.tape->forward(bindings, built.loss).scalar_value();
        if (!std::isfinite(loss)) throw NumericError("non-finite loss");
        GradientMap grads = built.tape->backward(built.loss);
        params.apply_gradients(-opts.alpha, grads, "gtl.");
        res.loss_curve.push_back({epoch, 0, step, loss});
      } catch (const NumericError& e) {
        throw NumericError(where + ": " + e.what());
      }
    }
    res.epochs_run = epoch + 1;

    double val = std::nan("");
    if (!ds.val.empty()) {
      EvalConfig ec;
      ec.k_list = {5};
      ec.num_negatives = opts.val_negatives;
      ec.seed = opts.eval_seed;
      val = evaluate(params, res.unused_otl, graph, sequences, observed_full, ds.val, ec).ndcg.at(5);
    }
    bool improved = false;
    if (std::isfinite(val)) {
      has_val = true;
      if (val > best_val) {
        best_val = val;
        improved = true;
        epochs_since_best = 0;
      } else {
        ++epochs_since_best;
      }
    }
    if (!has_val || improved || !have_snapshot) {
      res.params = params;
      res.selected_epoch = epoch;
      res.best_val = std::isfinite(val) ? val : std::nan("");
      have_snapshot = true;
    }
    if (has_val && opts.patience > 0 && epochs_since_best >= opts.patience) break;
  }
  return res;
}

}  // namespace leaprec
