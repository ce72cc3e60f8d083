#pragma once

// Experiment configuration shared by the CLI subcommands: one flat option
// set parseable from key=value config files with flag overrides, serialized
// verbatim into every run directory together with its hash.

#include <cstdint>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "leaprec/dataset.hpp"
#include "leaprec/meta.hpp"
#include "leaprec/model.hpp"

namespace leaprec {

struct RunConfig {
  // io
  std::string data;
  std::string out;       // output root; falls back to $LEAPREC_OUT_ROOT, then ./runs
  std::string run_name;  // run subdirectory; default <command>-<confighash8>
  // split
  int granularity = 1;
  std::string cut_month;  // YYYY-MM; first validation month
  int train_months = 0;   // alternative: cut = earliest data month + train_months
  int val_window = 6;     // months
  // model
  int dim_gtl = 16;
  int dim_otl = 16;
  int gnn_layers = 2;
  int sa_layers = 2;
  int max_seq_len = 50;
  double dropout = 0.2;
  // training
  double alpha = 0.05;
  double beta = 0.01;
  double eta = 0.01;
  int k_steps = 40;
  int batch_size = 128;
  int epochs = 20;
  int patience = 5;
  std::string meta_optimizer = "sgd";
  std::string meta_mode = "leap";
  std::uint64_t seed = 42;
  // evaluation
  std::string k_list = "1,5,10";
  int eval_negatives = 99;
  std::uint64_t eval_seed = 909;
  // mode flags
  bool literal_bpr = false;
  bool literal_attn = false;
  bool normalize_otl_meta = false;
  bool extend_history_through_val = false;
  bool record_slice_params = false;
  bool static_mf = false;
};

// Registers every RunConfig field on the app (plus --config file support).
void attach_run_options(CLI::App& app, RunConfig& rc);

// The app's full option state as a key=value config (includes defaults);
// written verbatim to <run dir>/config.txt.
std::string serialize_config(const CLI::App& app);

// FNV-1a 64-bit hash, 16 lowercase hex chars.
std::string fnv1a_hex(const std::string& text);

// "1,5,10" -> {1,5,10}; throws ConfigError on junk or non-positive entries.
std::vector<int> parse_k_list(const std::string& text);

// "YYYY-MM" -> absolute month index; throws ConfigError on bad format.
std::int64_t parse_month_arg(const std::string& text);

// Cut timestamp from cut_month or train_months (relative to the earliest
// interaction); throws ConfigError when neither is set.
std::int64_t resolve_cut_time(const RunConfig& rc, const InteractionLog& log);

std::string resolve_out_root(const RunConfig& rc);

// Creates (recursively) and returns out_root/name.
std::string prepare_run_dir(const std::string& out_root, const std::string& name);

TrainConfig to_train_config(const RunConfig& rc);

// Per-branch model shape; gtl picks dim_gtl, otherwise dim_otl.
ModelConfig branch_config(const RunConfig& rc, bool gtl, int num_users, int num_items);

// Pooled-baseline shape: one branch holding the full dim_gtl + dim_otl
// budget with no graph or attention stages.
ModelConfig static_config(const RunConfig& rc, int num_users, int num_items);

}  // namespace leaprec
