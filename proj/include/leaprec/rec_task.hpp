#pragma once

// Adapters between the recommender model and the meta-training loop: the
// slice task (mini-batch sampling, loss tape construction, validation
// scoring), the evaluation context builder, and the pooled static baseline
// trainer.

#include <cstdint>
#include <map>
#include <unordered_set>
#include <vector>

#include "leaprec/dataset.hpp"
#include "leaprec/meta.hpp"
#include "leaprec/metrics.hpp"
#include "leaprec/model.hpp"

namespace leaprec {

struct RecTaskOptions {
  int batch_size = 128;
  bool literal_bpr = false;
  int val_negatives = 99;
  std::uint64_t eval_seed = 909;
};

// One time slice = one inner task. Each make_step call draws a fresh
// mini-batch from the slice and freezes it (plus its dropout masks) into a
// re-evaluable loss. The dataset must outlive the task.
class RecTask : public InnerTask {
 public:
  RecTask(const InteractionLog& log, const TimeSlicedDataset& ds, ModelConfig gtl_cfg,
          ModelConfig otl_cfg, RecTaskOptions opts);

  int num_slices() const override { return ds_.num_slices(); }
  const ModelConfig& gamma_config() const override { return gtl_cfg_; }
  const ModelConfig& omega_config() const override { return otl_cfg_; }
  StepEval make_step(int slice, int epoch, int k, std::mt19937_64& rng) override;
  // NDCG@5 on the validation window with sampled negatives; NaN if no
  // validation interactions exist.
  double validation_metric(const ParameterSet& gamma, const ParameterSet& omega) override;

  const InteractionGraph& graph() const { return graph_; }
  // Histories strictly before slice t's first bucket month.
  const std::vector<std::vector<int>>& slice_sequences(int slice);
  const std::vector<std::vector<int>>& sequences_at_cut() const { return sequences_at_cut_; }
  const std::vector<std::unordered_set<int>>& observed_full() const { return observed_full_; }
  const BprSampleStats& sample_stats() const { return bpr_stats_; }

 private:
  const TimeSlicedDataset& ds_;
  ModelConfig gtl_cfg_;
  ModelConfig otl_cfg_;
  RecTaskOptions opts_;
  int seq_cap_ = 50;
  std::vector<Interaction> train_flat_;
  InteractionGraph graph_;
  std::vector<std::unordered_set<int>> observed_train_;
  std::vector<std::unordered_set<int>> observed_full_;
  std::vector<std::vector<int>> sequences_at_cut_;
  std::map<int, std::vector<std::vector<int>>> slice_seq_cache_;
  BprSampleStats bpr_stats_;
};

// Frozen structures for test/validation scoring: the interaction graph and
// user histories from the training horizon (optionally extended through the
// validation window) plus full-history observed sets for negative sampling.
struct EvalContext {
  InteractionGraph graph;
  std::vector<std::vector<int>> sequences;
  std::vector<std::unordered_set<int>> observed_full;
};

EvalContext make_eval_context(const InteractionLog& log, const TimeSlicedDataset& ds,
                              bool extend_history_through_val, int max_seq_len);

// --- Pooled (non-temporal) baseline ------------------------------------------

struct StaticTrainOptions {
  double alpha = 0.05;
  int batch_size = 128;
  int epochs = 20;
  int steps_per_epoch = 100;
  std::uint64_t seed = 42;
  bool literal_bpr = false;
  int patience = 5;
  int val_negatives = 99;
  std::uint64_t eval_seed = 909;
};

struct StaticTrainResult {
  ParameterSet params;      // the trained single branch
  ParameterSet unused_otl;  // matching dim-0 branch for combined-scoring calls
  std::vector<LossPoint> loss_curve;
  int epochs_run = 0;
  int selected_epoch = 0;
  double best_val = 0.0;
};

// Plain SGD on BPR batches drawn from the pooled training horizon — no time
// slices, no meta-gradients. Same validation-based snapshot selection as the
// meta trainer.
StaticTrainResult train_static(const InteractionLog& log, const TimeSlicedDataset& ds,
                               const ModelConfig& model_cfg, const StaticTrainOptions& opts);

}  // namespace leaprec
