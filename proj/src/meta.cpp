#include "leaprec/meta.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "leaprec/errors.hpp"

namespace leaprec {

namespace {

void zero_params(ParameterSet& p) {
  for (size_t i = 0; i < p.num_tensors(); ++i) p.tensor(i).fill(0.0);
}

void scale_params(ParameterSet& p, double a) {
  for (size_t i = 0; i < p.num_tensors(); ++i) tensor_scale(p.tensor(i), a);
}

void adam_apply(ParameterSet& theta, ParameterSet& m, ParameterSet& v, const ParameterSet& acc,
                double grad_scale, double lr, std::int64_t t) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (size_t i = 0; i < theta.num_tensors(); ++i) {
    Tensor& th = theta.tensor(i);
    Tensor& mt = m.tensor(i);
    Tensor& vt = v.tensor(i);
    const Tensor& g = acc.tensor(i);
    for (std::int64_t j = 0; j < th.size(); ++j) {
      const double gj = grad_scale * g[j];
      mt[j] = b1 * mt[j] + (1.0 - b1) * gj;
      vt[j] = b2 * vt[j] + (1.0 - b2) * gj * gj;
      const double mhat = mt[j] / bias1;
      const double vhat = vt[j] / bias2;
      th[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!(eta > 0.0)) throw ConfigError("eta must be > 0");
  if (inner_steps < 1) throw ConfigError("inner_steps (K) must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (granularity_months < 1) throw ConfigError("granularity must be >= 1 month");
  if (dim_gtl < 0 || dim_otl < 0) throw ConfigError("branch dims must be >= 0");
  if (dim_gtl == 0 && dim_otl == 0) throw ConfigError("at least one branch needs dim > 0");
  if (meta_optimizer != "sgd" && meta_optimizer != "adam") {
    throw ConfigError("meta_optimizer must be sgd or adam, got '" + meta_optimizer + "'");
  }
  if (meta_mode != "leap" && meta_mode != "fomaml") {
    throw ConfigError("meta_mode must be leap or fomaml, got '" + meta_mode + "'");
  }
}

double path_length_sq(const TrajectoryRecord& rec) {
  double s = 0.0;
  for (const TrajectoryStep& step : rec.steps) {
    const double dl = step.loss_after - step.loss_before;
    s += step.delta.sq_norm() + dl * dl;
  }
  return s;
}

void leap_accumulate(ParameterSet& acc, const TrajectoryRecord& rec, int expected_steps) {
  if (static_cast<int>(rec.steps.size()) != expected_steps) {
    throw ShapeError("trajectory has " + std::to_string(rec.steps.size()) + " steps, expected " +
                     std::to_string(expected_steps));
  }
  for (const TrajectoryStep& step : rec.steps) {
    const double dl = step.loss_after - step.loss_before;
    acc.axpy(-dl, step.grad);
    acc.axpy(-1.0, step.delta);
  }
}

void fomaml_accumulate(ParameterSet& acc, const TrajectoryRecord& rec, int expected_steps) {
  if (static_cast<int>(rec.steps.size()) != expected_steps) {
    throw ShapeError("trajectory has " + std::to_string(rec.steps.size()) + " steps, expected " +
                     std::to_string(expected_steps));
  }
  acc.axpy(1.0, rec.steps.back().grad);
}

void meta_update(MetaState& state, int num_slices, const TrainConfig& cfg) {
  if (num_slices < 1) throw ConfigError("meta_update needs at least one slice");
  const double inv_t = 1.0 / static_cast<double>(num_slices);
  const double otl_scale = cfg.normalize_otl_meta ? inv_t : 1.0;
  if (cfg.meta_optimizer == "adam") {
    ++state.adam_step;
    adam_apply(state.gamma_bar, state.adam_m_gamma, state.adam_v_gamma, state.acc_gamma, inv_t,
               cfg.beta, state.adam_step);
    adam_apply(state.omega_bar, state.adam_m_omega, state.adam_v_omega, state.acc_omega, otl_scale,
               cfg.eta, state.adam_step);
  } else {
    state.gamma_bar.axpy(-cfg.beta * inv_t, state.acc_gamma);
    state.omega_bar.axpy(-cfg.eta * otl_scale, state.acc_omega);
  }
}

TrainResult train_meta(InnerTask& task, const TrainConfig& cfg, TrainObserver* observer) {
  cfg.validate();
  const int num_slices = task.num_slices();
  if (num_slices < 1) throw DataError("training needs at least one time slice");

  MetaState st;
  st.rng.seed(cfg.seed);
  st.gamma_bar = ParameterSet(task.gamma_config(), st.rng);
  st.omega_bar = ParameterSet(task.omega_config(), st.rng);
  st.acc_gamma = ParameterSet(task.gamma_config());
  st.acc_omega = ParameterSet(task.omega_config());
  if (cfg.meta_optimizer == "adam") {
    st.adam_m_gamma = ParameterSet(task.gamma_config());
    st.adam_v_gamma = ParameterSet(task.gamma_config());
    st.adam_m_omega = ParameterSet(task.omega_config());
    st.adam_v_omega = ParameterSet(task.omega_config());
  }

  TrainResult res;
  double best_val = -std::numeric_limits<double>::infinity();
  bool has_val = false;
  bool have_snapshot = false;
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (observer) observer->on_epoch_start(epoch);
    zero_params(st.acc_gamma);
    zero_params(st.acc_omega);
    ParameterSet omega_prime = st.omega_bar;  // OTL carry restarts from the meta parameters

    std::vector<std::pair<ParameterSet, ParameterSet>> slice_params;
    slice_params.reserve(static_cast<size_t>(num_slices));

    for (int t = 0; t < num_slices; ++t) {
      ParameterSet gamma = st.gamma_bar;  // GTL reset
      ParameterSet omega = std::move(omega_prime);
      TrajectoryRecord rec_g, rec_o;
      rec_g.steps.reserve(static_cast<size_t>(cfg.inner_steps));
      rec_o.steps.reserve(static_cast<size_t>(cfg.inner_steps));

      for (int k = 0; k < cfg.inner_steps; ++k) {
        const std::string where = "epoch " + std::to_string(epoch) + ", slice " + std::to_string(t) +
                                  ", step " + std::to_string(k);
        try {
          StepEval eval = task.make_step(t, epoch, k, st.rng);
          StepEvalResult before = eval(gamma, omega, true);
          if (!std::isfinite(before.loss)) throw NumericError("non-finite loss");

          TrajectoryStep sg, so;
          sg.loss_before = before.loss;
          so.loss_before = before.loss;
          sg.grad = std::move(before.grad_gamma);
          so.grad = std::move(before.grad_omega);
          sg.delta = sg.grad;
          so.delta = so.grad;
          scale_params(sg.delta, -cfg.alpha);
          scale_params(so.delta, -cfg.alpha);
          gamma.axpy(1.0, sg.delta);
          omega.axpy(1.0, so.delta);

          const StepEvalResult after = eval(gamma, omega, false);
          if (!std::isfinite(after.loss)) throw NumericError("non-finite post-step loss");
          sg.loss_after = after.loss;
          so.loss_after = after.loss;

          res.loss_curve.push_back({epoch, t, k, sg.loss_before});
          rec_g.steps.push_back(std::move(sg));
          rec_o.steps.push_back(std::move(so));
        } catch (const NumericError& e) {
          throw NumericError(where + ": " + e.what());
        }
      }

      omega_prime = omega;  // carried into the next slice
      if (cfg.meta_mode == "fomaml") {
        fomaml_accumulate(st.acc_gamma, rec_g, cfg.inner_steps);
        fomaml_accumulate(st.acc_omega, rec_o, cfg.inner_steps);
      } else {
        leap_accumulate(st.acc_gamma, rec_g, cfg.inner_steps);
        leap_accumulate(st.acc_omega, rec_o, cfg.inner_steps);
      }
      res.path_lengths.push_back({epoch, t, "gtl", path_length_sq(rec_g)});
      res.path_lengths.push_back({epoch, t, "otl", path_length_sq(rec_o)});
      if (observer) observer->on_slice_end(epoch, t, rec_g, rec_o, gamma, omega);
      slice_params.emplace_back(std::move(gamma), std::move(omega));
    }

    meta_update(st, num_slices, cfg);
    if (!st.gamma_bar.all_finite() || !st.omega_bar.all_finite()) {
      throw NumericError("meta parameters became non-finite after epoch " + std::to_string(epoch));
    }
    st.epoch = epoch + 1;
    res.epochs_run = epoch + 1;

    const double val =
        task.validation_metric(slice_params.back().first, slice_params.back().second);
    if (observer) observer->on_epoch_end(epoch, st, val);

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
      res.slice_params = std::move(slice_params);
      res.deploy_gamma = res.slice_params.back().first;
      res.deploy_omega = res.slice_params.back().second;
      res.selected_epoch = epoch;
      res.best_val = std::isfinite(val) ? val : std::nan("");
      have_snapshot = true;
    }
    if (has_val && cfg.patience > 0 && epochs_since_best >= cfg.patience) break;
  }

  res.state = std::move(st);
  return res;
}

}  // namespace leaprec
