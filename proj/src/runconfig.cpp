#include "leaprec/runconfig.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "leaprec/errors.hpp"

namespace leaprec {

void attach_run_options(CLI::App& app, RunConfig& rc) {
  // ExistingFile so a mistyped --config path fails loudly instead of being
  // skipped and silently running on defaults.
  app.set_config("--config", "", "Read options from a key=value file (flags override)")
      ->check(CLI::ExistingFile);
  // Capture defaults so the serialized config is complete: a run's config.txt
  // must reparse to the identical state even for options never given.
  app.option_defaults()->always_capture_default(true);

  app.add_option("--data", rc.data, "Interaction file (user<TAB>item<TAB>unix_seconds)");
  app.add_option("--out", rc.out, "Output root (default $LEAPREC_OUT_ROOT or ./runs)");
  app.add_option("--run-name", rc.run_name, "Run directory name (default <command>-<confighash>)");

  app.add_option("--granularity", rc.granularity, "Months merged into one training slice")
      ->check(CLI::PositiveNumber);
  app.add_option("--cut-month", rc.cut_month, "First validation month, YYYY-MM");
  app.add_option("--train-months", rc.train_months,
                 "Training horizon in months from the earliest interaction (alternative to "
                 "--cut-month)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--val-window", rc.val_window, "Validation window in months (rest is test)")
      ->check(CLI::PositiveNumber);

  app.add_option("--dim-gtl", rc.dim_gtl, "GTL branch embedding dim (0 disables the branch)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--dim-otl", rc.dim_otl, "OTL branch embedding dim (0 disables the branch)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--gnn-layers", rc.gnn_layers, "Graph refinement layers")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--sa-layers", rc.sa_layers, "Self-attention blocks")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--max-seq-len", rc.max_seq_len, "History length kept per user")
      ->check(CLI::PositiveNumber);
  app.add_option("--dropout", rc.dropout, "Dropout rate inside attention blocks (training only)")
      ->check(CLI::Range(0.0, 0.999));

  app.add_option("--alpha", rc.alpha, "Inner SGD learning rate")->check(CLI::PositiveNumber);
  app.add_option("--beta", rc.beta, "GTL meta learning rate")->check(CLI::PositiveNumber);
  app.add_option("--eta", rc.eta, "OTL meta learning rate")->check(CLI::PositiveNumber);
  app.add_option("--k-steps", rc.k_steps, "Inner steps per slice (K)")
      ->check(CLI::PositiveNumber);
  app.add_option("--batch-size", rc.batch_size, "BPR mini-batch size")
      ->check(CLI::PositiveNumber);
  app.add_option("--epochs", rc.epochs, "Outer epochs")->check(CLI::PositiveNumber);
  app.add_option("--patience", rc.patience,
                 "Early-stopping patience in epochs (0 disables early stopping)");
  app.add_option("--meta-optimizer", rc.meta_optimizer, "Meta optimizer")
      ->check(CLI::IsMember({"sgd", "adam"}));
  app.add_option("--meta-mode", rc.meta_mode, "Meta-gradient mode")
      ->check(CLI::IsMember({"leap", "fomaml"}));
  app.add_option("--seed", rc.seed, "Training seed");

  app.add_option("--k-list", rc.k_list, "Comma-separated cutoffs for HR@K / NDCG@K");
  app.add_option("--eval-negatives", rc.eval_negatives, "Sampled negatives per positive")
      ->check(CLI::PositiveNumber);
  app.add_option("--eval-seed", rc.eval_seed, "Negative-sampling seed");

  app.add_flag("--literal-bpr", rc.literal_bpr,
               "Score pairs with -sigmoid(margin) instead of -ln sigmoid(margin)");
  app.add_flag("--literal-attn", rc.literal_attn,
               "Row-normalize raw attention scores instead of softmax");
  app.add_flag("--normalize-otl-meta", rc.normalize_otl_meta,
               "Divide the OTL meta-gradient by the slice count too");
  app.add_flag("--extend-history-through-val", rc.extend_history_through_val,
               "Include validation-window interactions in test-time histories");
  app.add_flag("--record-slice-params", rc.record_slice_params,
               "Checkpoint every slice's final inner parameters (needed by analyze)");
  app.add_flag("--static-mf", rc.static_mf,
               "Train the pooled matrix-factorization baseline instead");
}

std::string serialize_config(const CLI::App& app) {
  return app.config_to_str(/*default_also=*/true, /*write_description=*/false);
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::vector<int> parse_k_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t pos = 0;
    int k = 0;
    try {
      k = std::stoi(tok, &pos);
    } catch (const std::exception&) {
      throw ConfigError("bad k-list entry '" + tok + "'");
    }
    if (pos != tok.size() || k <= 0) throw ConfigError("bad k-list entry '" + tok + "'");
    out.push_back(k);
  }
  if (out.empty()) throw ConfigError("k-list is empty");
  return out;
}

std::int64_t parse_month_arg(const std::string& text) {
  int year = 0, month = 0;
  char extra = 0;
  if (std::sscanf(text.c_str(), "%d-%d%c", &year, &month, &extra) != 2 || month < 1 ||
      month > 12 || year < 1970 || year > 9999)
    throw ConfigError("bad month '" + text + "' (expected YYYY-MM)");
  return static_cast<std::int64_t>(year) * 12 + (month - 1);
}

std::int64_t resolve_cut_time(const RunConfig& rc, const InteractionLog& log) {
  if (!rc.cut_month.empty()) return month_start_timestamp(parse_month_arg(rc.cut_month));
  if (rc.train_months > 0) {
    if (log.interactions.empty()) throw DataError("no interactions to anchor --train-months");
    std::int64_t earliest = log.interactions.front().timestamp;
    for (const auto& it : log.interactions) earliest = std::min(earliest, it.timestamp);
    return month_start_timestamp(month_index_utc(earliest) + rc.train_months);
  }
  throw ConfigError("either --cut-month or --train-months is required");
}

std::string resolve_out_root(const RunConfig& rc) {
  if (!rc.out.empty()) return rc.out;
  if (const char* env = std::getenv("LEAPREC_OUT_ROOT"); env && *env) return env;
  return "runs";
}

std::string prepare_run_dir(const std::string& out_root, const std::string& name) {
  std::filesystem::path dir = std::filesystem::path(out_root) / name;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create run directory " + dir.string() + ": " + ec.message());
  return dir.string();
}

TrainConfig to_train_config(const RunConfig& rc) {
  TrainConfig cfg;
  cfg.alpha = rc.alpha;
  cfg.beta = rc.beta;
  cfg.eta = rc.eta;
  cfg.inner_steps = rc.k_steps;
  cfg.batch_size = rc.batch_size;
  cfg.epochs = rc.epochs;
  cfg.granularity_months = rc.granularity;
  cfg.dim_gtl = rc.dim_gtl;
  cfg.dim_otl = rc.dim_otl;
  cfg.seed = rc.seed;
  cfg.meta_optimizer = rc.meta_optimizer;
  cfg.meta_mode = rc.meta_mode;
  cfg.normalize_otl_meta = rc.normalize_otl_meta;
  cfg.patience = rc.patience;
  return cfg;
}

ModelConfig branch_config(const RunConfig& rc, bool gtl, int num_users, int num_items) {
  ModelConfig cfg;
  cfg.num_users = num_users;
  cfg.num_items = num_items;
  cfg.dim = gtl ? rc.dim_gtl : rc.dim_otl;
  cfg.gnn_layers = rc.gnn_layers;
  cfg.sa_layers = rc.sa_layers;
  cfg.max_seq_len = rc.max_seq_len;
  cfg.dropout = rc.dropout;
  cfg.literal_attn = rc.literal_attn;
  return cfg;
}

ModelConfig static_config(const RunConfig& rc, int num_users, int num_items) {
  ModelConfig cfg;
  cfg.num_users = num_users;
  cfg.num_items = num_items;
  cfg.dim = rc.dim_gtl + rc.dim_otl;
  cfg.gnn_layers = 0;
  cfg.sa_layers = 0;
  cfg.max_seq_len = rc.max_seq_len;
  cfg.dropout = 0.0;
  cfg.literal_attn = rc.literal_attn;
  return cfg;
}

}  // namespace leaprec
