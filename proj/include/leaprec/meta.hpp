#pragma once

// Trajectory-based meta-training: joint inner SGD over time slices with the
// GTL branch reset to its meta-parameters at every slice and the OTL branch
// carrying its parameters forward, first-order leap meta-gradients
// accumulated from the recorded trajectories, and per-protocol meta updates
// (the GTL meta-gradient is averaged over slices, the OTL one is not).

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "leaprec/model.hpp"

namespace leaprec {

struct TrainConfig {
  double alpha = 0.05;  // inner learning rate
  double beta = 0.01;   // GTL meta learning rate
  double eta = 0.01;    // OTL meta learning rate
  int inner_steps = 40;  // K
  int batch_size = 128;
  int epochs = 20;
  int granularity_months = 1;
  int dim_gtl = 16;
  int dim_otl = 16;
  std::uint64_t seed = 42;
  std::string meta_optimizer = "sgd";  // sgd | adam
  std::string meta_mode = "leap";      // leap | fomaml
  bool normalize_otl_meta = false;     // divide the OTL meta-gradient by T too
  int patience = 5;                    // early-stopping patience; <=0 disables

  void validate() const;  // throws ConfigError on bad values
};

// One recorded inner step of a single branch. The inner update is a plain
// gradient step, so delta == -alpha * grad exactly; loss_after is the same
// mini-batch re-scored at the post-step parameters.
struct TrajectoryStep {
  double loss_before = 0.0;
  double loss_after = 0.0;
  ParameterSet grad;
  ParameterSet delta;
};

struct TrajectoryRecord {
  std::vector<TrajectoryStep> steps;
};

// Squared trajectory length: sum_k ||delta_k||^2 + (loss_after_k - loss_before_k)^2.
double path_length_sq(const TrajectoryRecord& rec);

struct MetaState {
  ParameterSet gamma_bar;  // GTL meta parameters
  ParameterSet omega_bar;  // OTL meta parameters
  ParameterSet acc_gamma;  // meta-gradient accumulators, zeroed per outer iteration
  ParameterSet acc_omega;
  int epoch = 0;
  std::mt19937_64 rng;
  // Adam state (used when meta_optimizer == "adam")
  ParameterSet adam_m_gamma, adam_v_gamma, adam_m_omega, adam_v_omega;
  std::int64_t adam_step = 0;
};

// acc += sum_k -((loss_after_k - loss_before_k) * grad_k + delta_k)
void leap_accumulate(ParameterSet& acc, const TrajectoryRecord& rec, int expected_steps);

// acc += grad at the final inner step (first-order MAML).
void fomaml_accumulate(ParameterSet& acc, const TrajectoryRecord& rec, int expected_steps);

// Applies the accumulated meta-gradients: gamma_bar -= beta/T * acc_gamma,
// omega_bar -= eta * acc_omega (divided by T only with normalize_otl_meta),
// through Adam instead when configured. Accumulators stay untouched.
void meta_update(MetaState& state, int num_slices, const TrainConfig& cfg);

// --- Task abstraction ---------------------------------------------------------

struct StepEvalResult {
  double loss = 0.0;
  ParameterSet grad_gamma;  // empty unless gradients were requested
  ParameterSet grad_omega;
};

// Re-evaluates one frozen mini-batch at the given parameters (callable
// repeatedly: the trainer scores both the pre- and post-step parameters).
using StepEval =
    std::function<StepEvalResult(const ParameterSet& gamma, const ParameterSet& omega, bool want_grads)>;

class InnerTask {
 public:
  virtual ~InnerTask() = default;
  virtual int num_slices() const = 0;
  virtual const ModelConfig& gamma_config() const = 0;
  virtual const ModelConfig& omega_config() const = 0;
  // Freezes a mini-batch for inner step k of `slice` and returns its evaluator.
  virtual StepEval make_step(int slice, int epoch, int k, std::mt19937_64& rng) = 0;
  // Higher-is-better validation score for early stopping; NaN disables it.
  virtual double validation_metric(const ParameterSet& gamma, const ParameterSet& omega) {
    (void)gamma;
    (void)omega;
    return std::nan("");
  }
};

class TrainObserver {
 public:
  virtual ~TrainObserver() = default;
  virtual void on_epoch_start(int epoch) { (void)epoch; }
  virtual void on_slice_end(int epoch, int slice, const TrajectoryRecord& gamma_rec,
                            const TrajectoryRecord& omega_rec, const ParameterSet& gamma_final,
                            const ParameterSet& omega_final) {
    (void)epoch;
    (void)slice;
    (void)gamma_rec;
    (void)omega_rec;
    (void)gamma_final;
    (void)omega_final;
  }
  virtual void on_epoch_end(int epoch, const MetaState& state, double val_metric) {
    (void)epoch;
    (void)state;
    (void)val_metric;
  }
};

// --- Training loop ------------------------------------------------------------

struct LossPoint {
  int epoch = 0;
  int slice = 0;
  int step = 0;
  double loss = 0.0;
};

struct PathLengthPoint {
  int epoch = 0;
  int slice = 0;
  std::string branch;  // "gtl" | "otl"
  double d2 = 0.0;
};

struct TrainResult {
  MetaState state;
  ParameterSet deploy_gamma;  // last slice's final inner parameters
  ParameterSet deploy_omega;
  // (gamma_t^K, omega_t^K) for every slice, from the same epoch as the
  // deployment parameters.
  std::vector<std::pair<ParameterSet, ParameterSet>> slice_params;
  std::vector<LossPoint> loss_curve;          // loss at the pre-step parameters
  std::vector<PathLengthPoint> path_lengths;  // per (epoch, slice, branch)
  int epochs_run = 0;
  int selected_epoch = 0;                 // epoch the deployment snapshot came from
  double best_val = std::nan("");
};

// Runs the full outer loop: per epoch, accumulators are zeroed and the OTL
// carry-over restarts from omega_bar; slices run chronologically; one meta
// update per epoch. Early stopping tracks the validation metric on each
// epoch's deployment parameters when the task provides one. Throws
// NumericError (with epoch/slice/step context) on non-finite losses.
TrainResult train_meta(InnerTask& task, const TrainConfig& cfg, TrainObserver* observer = nullptr);

}  // namespace leaprec
