#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "leaprec/checkpoint.hpp"
#include "leaprec/dataset.hpp"
#include "leaprec/errors.hpp"
#include "leaprec/meta.hpp"
#include "leaprec/metrics.hpp"
#include "leaprec/model.hpp"
#include "leaprec/rec_task.hpp"
#include "leaprec/runconfig.hpp"
#include "leaprec/synthetic.hpp"

namespace fs = std::filesystem;
using namespace leaprec;

namespace {

struct LoadedData {
  InteractionLog log;
  TimeSlicedDataset ds;
};

LoadedData load_data(const RunConfig& rc) {
  if (rc.data.empty()) throw ConfigError("--data is required");
  InteractionLog log = ingest(rc.data);
  const std::int64_t cut = resolve_cut_time(rc, log);
  TimeSlicedDataset ds = slice_by_time(log, rc.granularity, cut, rc.val_window);
  return {std::move(log), std::move(ds)};
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  out << content;
  out.close();
  if (!out) throw DataError("failed writing output file: " + path);
}

void write_loss_csv(const std::string& path, const std::vector<LossPoint>& points) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  out << "epoch,slice,step,loss\n";
  for (const auto& p : points)
    out << p.epoch << ',' << p.slice << ',' << p.step << ',' << p.loss << '\n';
  out.close();
  if (!out) throw DataError("failed writing output file: " + path);
}

void write_path_csv(const std::string& path, const std::vector<PathLengthPoint>& points,
                    const std::string& mode) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  out << "epoch,slice,branch,mode,d2\n";
  for (const auto& p : points)
    out << p.epoch << ',' << p.slice << ',' << p.branch << ',' << mode << ',' << p.d2 << '\n';
  out.close();
  if (!out) throw DataError("failed writing output file: " + path);
}

std::string slice_ckpt_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "slice_%02d.ckpt", t);
  return buf;
}

struct ProgressPrinter : TrainObserver {
  void on_epoch_end(int epoch, const MetaState&, double val) override {
    if (std::isnan(val))
      std::cerr << "[train] epoch " << epoch + 1 << " done\n";
    else
      std::cerr << "[train] epoch " << epoch + 1 << "  val ndcg@5 " << val << '\n';
  }
};

std::string make_run_dir(const RunConfig& rc, const std::string& command,
                         const std::string& serialized) {
  const std::string hash = fnv1a_hex(serialized);
  const std::string name =
      rc.run_name.empty() ? command + "-" + hash.substr(0, 8) : rc.run_name;
  const std::string dir = prepare_run_dir(resolve_out_root(rc), name);
  write_text((fs::path(dir) / "config.txt").string(), serialized);
  return dir;
}

void print_split_summary(const LoadedData& d) {
  std::cerr << "[data] " << d.log.interactions.size() << " interactions, " << d.log.num_users()
            << " users, " << d.log.num_items() << " items\n[split] " << d.ds.num_slices()
            << " slices x " << d.ds.granularity_months << " month(s), cut "
            << format_month(month_index_utc(d.ds.cut_time)) << ", val " << d.ds.val.size()
            << " rows, test " << d.ds.test.size() << " rows\n";
}

// ---- train ----------------------------------------------------------------

int cmd_train(const RunConfig& rc, const std::string& serialized) {
  LoadedData d = load_data(rc);
  print_split_summary(d);
  const std::string dir = make_run_dir(rc, "train", serialized);
  const std::string hash = fnv1a_hex(serialized);

  nlohmann::json summary;
  summary["config_hash"] = hash;
  summary["slices"] = d.ds.num_slices();

  if (rc.static_mf) {
    StaticTrainOptions opts;
    opts.alpha = rc.alpha;
    opts.batch_size = rc.batch_size;
    opts.epochs = rc.epochs;
    opts.steps_per_epoch = d.ds.num_slices() * rc.k_steps;  // same update budget as meta runs
    opts.seed = rc.seed;
    opts.literal_bpr = rc.literal_bpr;
    opts.patience = rc.patience;
    opts.val_negatives = rc.eval_negatives;
    opts.eval_seed = rc.eval_seed;
    StaticTrainResult res = train_static(d.log, d.ds, static_config(rc, d.log.num_users(), d.log.num_items()), opts);
    save_checkpoint((fs::path(dir) / "deployment.ckpt").string(), res.params, res.unused_otl, hash);
    write_loss_csv((fs::path(dir) / "loss.csv").string(), res.loss_curve);
    summary["mode"] = "static-mf";
    summary["epochs_run"] = res.epochs_run;
    summary["selected_epoch"] = res.selected_epoch;
    summary["best_val_ndcg5"] = res.best_val;
  } else {
    RecTaskOptions opts;
    opts.batch_size = rc.batch_size;
    opts.literal_bpr = rc.literal_bpr;
    opts.val_negatives = rc.eval_negatives;
    opts.eval_seed = rc.eval_seed;
    RecTask task(d.log, d.ds,
                 branch_config(rc, true, d.log.num_users(), d.log.num_items()),
                 branch_config(rc, false, d.log.num_users(), d.log.num_items()), opts);
    ProgressPrinter printer;
    TrainResult res = train_meta(task, to_train_config(rc), &printer);

    save_checkpoint((fs::path(dir) / "deployment.ckpt").string(), res.deploy_gamma,
                    res.deploy_omega, hash);
    save_checkpoint((fs::path(dir) / "meta.ckpt").string(), res.state.gamma_bar,
                    res.state.omega_bar, hash);
    write_loss_csv((fs::path(dir) / "loss.csv").string(), res.loss_curve);
    write_path_csv((fs::path(dir) / "path_length.csv").string(), res.path_lengths, rc.meta_mode);
    if (rc.record_slice_params) {
      const fs::path sp = fs::path(dir) / "slice_params";
      std::error_code ec;
      fs::create_directories(sp, ec);
      if (ec) throw DataError("cannot create " + sp.string() + ": " + ec.message());
      for (std::size_t t = 0; t < res.slice_params.size(); ++t)
        save_checkpoint((sp / slice_ckpt_name(static_cast<int>(t))).string(),
                        res.slice_params[t].first, res.slice_params[t].second, hash);
    }
    if (task.sample_stats().retry_cap_hits > 0)
      std::cerr << "[train] negative sampling hit the retry cap "
                << task.sample_stats().retry_cap_hits << " time(s)\n";
    summary["mode"] = rc.meta_mode;
    summary["epochs_run"] = res.epochs_run;
    summary["selected_epoch"] = res.selected_epoch;
    if (!std::isnan(res.best_val)) summary["best_val_ndcg5"] = res.best_val;
  }
  write_text((fs::path(dir) / "train_summary.json").string(), summary.dump(2) + "\n");
  std::cout << "wrote " << dir << '\n';
  return 0;
}

// ---- evaluate ---------------------------------------------------------------

int cmd_evaluate(const RunConfig& rc, const std::string& checkpoint_path, const std::string& split,
                 const std::string& serialized) {
  if (checkpoint_path.empty()) throw ConfigError("--checkpoint is required");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  LoadedData d = load_data(rc);

  const ModelConfig& gcfg = ckpt.gtl.config();
  if (gcfg.num_users != d.log.num_users() || gcfg.num_items != d.log.num_items())
    throw DataError("checkpoint expects " + std::to_string(gcfg.num_users) + " users x " +
                    std::to_string(gcfg.num_items) + " items, data has " +
                    std::to_string(d.log.num_users()) + " x " +
                    std::to_string(d.log.num_items()));

  const std::vector<Interaction>& targets = split == "val" ? d.ds.val : d.ds.test;
  if (targets.empty()) throw DataError("no interactions in the " + split + " window");

  const int seq_len = std::max(gcfg.max_seq_len, ckpt.otl.config().max_seq_len);
  const bool extend = split == "test" && rc.extend_history_through_val;
  EvalContext ctx = make_eval_context(d.log, d.ds, extend, seq_len);

  EvalConfig ecfg;
  ecfg.k_list = parse_k_list(rc.k_list);
  ecfg.num_negatives = rc.eval_negatives;
  ecfg.seed = rc.eval_seed;
  EvalReport report = evaluate(ckpt.gtl, ckpt.otl, ctx.graph, ctx.sequences, ctx.observed_full,
                               targets, ecfg);

  nlohmann::json j = nlohmann::json::parse(eval_report_json(report));
  j["config_hash"] = fnv1a_hex(serialized);
  j["checkpoint"] = checkpoint_path;
  j["checkpoint_config_hash"] = ckpt.config_hash;
  j["split"] = split;
  j["data"] = rc.data;

  const std::string dir = make_run_dir(rc, "evaluate", serialized);
  write_text((fs::path(dir) / "report.json").string(), j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  std::cerr << "wrote " << dir << '\n';
  return 0;
}

// ---- analyze ----------------------------------------------------------------

std::vector<Checkpoint> load_slice_checkpoints(const std::string& run_dir) {
  std::vector<Checkpoint> out;
  const fs::path sp = fs::path(run_dir) / "slice_params";
  for (int t = 0;; ++t) {
    const fs::path p = sp / slice_ckpt_name(t);
    if (!fs::exists(p)) break;
    out.push_back(load_checkpoint(p.string()));
  }
  if (out.empty())
    throw DataError("no recorded slice parameters under " + sp.string() +
                    "; re-run train with --record-slice-params");
  return out;
}

// group label -> item indices, from a raw_item<TAB>group file mapped through
// the data's item ids.
std::pair<std::vector<std::string>, std::vector<std::vector<int>>> read_group_file(
    const std::string& path, const InteractionLog& log) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open groups file: " + path);
  std::map<std::string, std::vector<int>> by_label;
  std::string line;
  int lineno = 0, unknown = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw DataError("groups file " + path + " line " + std::to_string(lineno) +
                      ": expected item<TAB>group");
    const std::string raw = line.substr(0, tab);
    const std::string label = line.substr(tab + 1);
    auto it = log.item_index.find(raw);
    if (it == log.item_index.end()) {
      ++unknown;
      continue;
    }
    by_label[label].push_back(it->second);
  }
  if (unknown > 0)
    std::cerr << "[analyze] " << unknown << " grouped item(s) absent from the data, skipped\n";
  if (by_label.empty()) throw DataError("groups file " + path + " matched no items");
  std::pair<std::vector<std::string>, std::vector<std::vector<int>>> out;
  for (auto& [label, items] : by_label) {
    out.first.push_back(label);
    out.second.push_back(std::move(items));
  }
  return out;
}

int cmd_analyze(const RunConfig& rc, const std::string& run_dir, const std::string& groups_file,
                int top_n, const std::string& serialized) {
  if (run_dir.empty()) throw ConfigError("--run-dir is required");
  LoadedData d = load_data(rc);
  std::vector<Checkpoint> ckpts = load_slice_checkpoints(run_dir);

  std::vector<std::string> labels;
  std::vector<std::vector<int>> groups;
  if (!groups_file.empty()) {
    std::tie(labels, groups) = read_group_file(groups_file, d.log);
  } else {
    PopularityGroups pg = popularity_groups(d.ds, top_n);
    groups = pg.groups;
    for (int t = 0; t < static_cast<int>(groups.size()); ++t)
      labels.push_back("peak-" + d.ds.slice_label(t));
  }

  const std::string dir = make_run_dir(rc, "analyze", serialized);

  // Per-group per-slice interaction counts (plot-ready popularity curves).
  {
    std::vector<std::unordered_set<int>> member(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g)
      member[g].insert(groups[g].begin(), groups[g].end());
    std::vector<std::vector<std::int64_t>> counts(groups.size(),
                                                  std::vector<std::int64_t>(d.ds.num_slices(), 0));
    for (int t = 0; t < d.ds.num_slices(); ++t)
      for (const auto& it : d.ds.slices[static_cast<std::size_t>(t)])
        for (std::size_t g = 0; g < groups.size(); ++g)
          if (member[g].count(it.item)) ++counts[g][static_cast<std::size_t>(t)];
    std::ofstream out((fs::path(dir) / "popularity.csv").string());
    out << "group,slice,count,share\n";
    for (std::size_t g = 0; g < groups.size(); ++g) {
      std::int64_t total = 0;
      for (auto c : counts[g]) total += c;
      for (int t = 0; t < d.ds.num_slices(); ++t)
        out << labels[g] << ',' << t << ',' << counts[g][static_cast<std::size_t>(t)] << ','
            << (total > 0 ? static_cast<double>(counts[g][static_cast<std::size_t>(t)]) /
                                static_cast<double>(total)
                          : 0.0)
            << '\n';
    }
    if (!out) throw DataError("failed writing popularity.csv");
  }

  // Shift series between consecutive slices' deployed parameters.
  for (const bool gtl_branch : {true, false}) {
    const std::string name = gtl_branch ? "shift_gtl.csv" : "shift_otl.csv";
    std::ofstream out((fs::path(dir) / name).string());
    out << "group,slice,mean_shift,items\n";
    const bool enabled =
        (gtl_branch ? ckpts.front().gtl.config().dim : ckpts.front().otl.config().dim) > 0;
    if (enabled) {
      for (std::size_t t = 1; t < ckpts.size(); ++t) {
        const ShiftReport rep = gtl_branch
                                    ? embedding_shift(ckpts[t - 1].gtl, ckpts[t].gtl, groups)
                                    : embedding_shift(ckpts[t - 1].otl, ckpts[t].otl, groups);
        for (std::size_t g = 0; g < groups.size(); ++g)
          out << labels[g] << ',' << t << ',' << rep.group_mean[g] << ',' << rep.group_counted[g]
              << '\n';
      }
    }
    if (!out) throw DataError("failed writing " + name);
  }

  if (ckpts.size() < 2)
    std::cerr << "[analyze] single slice checkpoint: shift report has no pairs\n";
  std::cout << "wrote " << dir << '\n';
  return 0;
}

// ---- ablate -----------------------------------------------------------------

struct AblateRow {
  std::string label;
  RunConfig rc;
  std::map<int, double> hr, ndcg;
  double mrr = 0.0;
  double best_val = 0.0;
  int epochs_run = 0;
};

void run_ablate_entry(AblateRow& row, const InteractionLog& log) {
  const RunConfig& rc = row.rc;
  TimeSlicedDataset ds = slice_by_time(log, rc.granularity, resolve_cut_time(rc, log),
                                       rc.val_window);
  RecTaskOptions opts;
  opts.batch_size = rc.batch_size;
  opts.literal_bpr = rc.literal_bpr;
  opts.val_negatives = rc.eval_negatives;
  opts.eval_seed = rc.eval_seed;
  RecTask task(log, ds, branch_config(rc, true, log.num_users(), log.num_items()),
               branch_config(rc, false, log.num_users(), log.num_items()), opts);
  TrainResult res = train_meta(task, to_train_config(rc), nullptr);

  if (ds.test.empty()) throw DataError("no interactions in the test window");
  const int seq_len = rc.max_seq_len;
  EvalContext ctx = make_eval_context(log, ds, rc.extend_history_through_val, seq_len);
  EvalConfig ecfg;
  ecfg.k_list = {1, 5, 10};
  ecfg.num_negatives = rc.eval_negatives;
  ecfg.seed = rc.eval_seed;
  EvalReport rep = evaluate(res.deploy_gamma, res.deploy_omega, ctx.graph, ctx.sequences,
                            ctx.observed_full, ds.test, ecfg);
  row.hr = rep.hr;
  row.ndcg = rep.ndcg;
  row.mrr = rep.mrr;
  row.best_val = std::isnan(res.best_val) ? 0.0 : res.best_val;
  row.epochs_run = res.epochs_run;
}

std::string trend_line(const std::vector<std::string>& labels, const std::vector<double>& vals) {
  bool nondec = true, noninc = true;
  for (std::size_t i = 1; i < vals.size(); ++i) {
    if (vals[i] < vals[i - 1]) nondec = false;
    if (vals[i] > vals[i - 1]) noninc = false;
  }
  const std::size_t best =
      static_cast<std::size_t>(std::max_element(vals.begin(), vals.end()) - vals.begin());
  if (nondec && noninc) return "trend: constant";
  if (nondec) return "trend: nondecreasing (best at " + labels[best] + ")";
  if (noninc) return "trend: nonincreasing (best at " + labels[best] + ")";
  return "trend: non-monotonic (best at " + labels[best] + ")";
}

int cmd_ablate(const RunConfig& rc, const std::string& sweep, const std::string& serialized) {
  LoadedData d = load_data(rc);  // validates data + split up front
  print_split_summary(d);

  std::vector<AblateRow> rows;
  if (sweep == "dims") {
    // Dimensionality splits, scaled from the canonical 128-budget grid to
    // the configured total embedding budget.
    const int total = rc.dim_gtl + rc.dim_otl;
    if (total <= 0) throw ConfigError("dims sweep needs dim_gtl + dim_otl > 0");
    const std::vector<std::pair<int, int>> base = {{128, 0}, {121, 40}, {91, 91}, {40, 121}, {0, 128}};
    for (const auto& [a, b] : base) {
      AblateRow row;
      row.rc = rc;
      row.rc.dim_gtl = static_cast<int>(std::lround(a * total / 128.0));
      row.rc.dim_otl = static_cast<int>(std::lround(b * total / 128.0));
      row.label = "(" + std::to_string(row.rc.dim_gtl) + "," + std::to_string(row.rc.dim_otl) + ")";
      rows.push_back(std::move(row));
    }
  } else if (sweep == "k") {
    for (int k : {1, 5, 10, 20}) {
      AblateRow row;
      row.rc = rc;
      row.rc.k_steps = k;
      row.label = "k=" + std::to_string(k);
      rows.push_back(std::move(row));
    }
  } else {  // granularity
    for (int g : {1, 2, 3}) {
      AblateRow row;
      row.rc = rc;
      row.rc.granularity = g;
      row.label = "granularity=" + std::to_string(g);
      rows.push_back(std::move(row));
    }
  }

  for (auto& row : rows) {
    std::cerr << "[ablate] " << row.label << '\n';
    run_ablate_entry(row, d.log);
  }

  const std::string dir = make_run_dir(rc, "ablate", serialized);
  {
    std::ofstream out((fs::path(dir) / "ablate.csv").string());
    out << "sweep,label,dim_gtl,dim_otl,k_steps,granularity,hr1,hr5,hr10,ndcg5,ndcg10,mrr,"
           "best_val,epochs_run\n";
    for (const auto& row : rows)
      out << sweep << ',' << '"' << row.label << '"' << ',' << row.rc.dim_gtl << ','
          << row.rc.dim_otl << ',' << row.rc.k_steps << ',' << row.rc.granularity << ','
          << row.hr.at(1) << ',' << row.hr.at(5) << ',' << row.hr.at(10) << ','
          << row.ndcg.at(5) << ',' << row.ndcg.at(10) << ',' << row.mrr << ',' << row.best_val
          << ',' << row.epochs_run << '\n';
    if (!out) throw DataError("failed writing ablate.csv");
  }
  {
    std::vector<std::string> labels;
    std::vector<double> vals;
    std::string body = "sweep: " + sweep + "\nmetric: ndcg@5\n";
    for (const auto& row : rows) {
      labels.push_back(row.label);
      vals.push_back(row.ndcg.at(5));
      body += row.label + " " + std::to_string(row.ndcg.at(5)) + "\n";
    }
    body += trend_line(labels, vals) + "\n";
    write_text((fs::path(dir) / "monotonicity.txt").string(), body);
    std::cout << body;
  }
  std::cout << "wrote " << dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LeapRec: trajectory-based meta-learning for temporal recommendation"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic drifting-interaction dataset");
  SyntheticSpec spec;
  std::string gen_out;
  gen->add_option("--out-file", gen_out, "Interaction file to write")->required();
  gen->add_option("--users", spec.num_users)->check(CLI::PositiveNumber);
  gen->add_option("--items", spec.num_items)->check(CLI::PositiveNumber);
  gen->add_option("--months", spec.num_slices, "Emitted calendar months starting 2020-01")
      ->check(CLI::PositiveNumber);
  gen->add_option("--per-month", spec.interactions_per_slice)->check(CLI::PositiveNumber);
  gen->add_option("--profile", spec.profile)->check(CLI::IsMember({"stationary", "drifting"}));
  gen->add_option("--groups", spec.num_groups)->check(CLI::PositiveNumber);
  gen->add_option("--stable-prob", spec.stable_pref_prob)->check(CLI::Range(0.0, 0.999));
  gen->add_option("--pool-size", spec.stable_pool_size)->check(CLI::PositiveNumber);
  gen->add_option("--seed", spec.seed);

  RunConfig rc;
  auto* train = app.add_subcommand("train", "Meta-train on time slices and checkpoint the result");
  attach_run_options(*train, rc);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Rank held-out interactions with a checkpoint");
  attach_run_options(*evaluate_cmd, rc);
  std::string ckpt_path, split = "test";
  evaluate_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint to score with");
  evaluate_cmd->add_option("--split", split, "Target window")->check(CLI::IsMember({"test", "val"}));

  auto* analyze = app.add_subcommand("analyze", "Embedding-shift and popularity diagnostics");
  attach_run_options(*analyze, rc);
  std::string run_dir, groups_file;
  int top_n = 100;
  analyze->add_option("--run-dir", run_dir, "Train run directory with recorded slice parameters");
  analyze->add_option("--groups-file", groups_file,
                      "item<TAB>group ground truth (default: peak-slice popularity groups)");
  analyze->add_option("--top-n", top_n, "Items kept per popularity group")
      ->check(CLI::PositiveNumber);

  auto* ablate = app.add_subcommand("ablate", "Sweep one axis, train+evaluate each point");
  attach_run_options(*ablate, rc);
  std::string sweep = "dims";
  ablate->add_option("--sweep", sweep, "Axis to sweep")
      ->check(CLI::IsMember({"dims", "k", "granularity"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      validate_spec(spec);
      SyntheticResult res = generate_synthetic(spec, gen_out);
      write_text(gen_out + ".config.txt", gen->config_to_str(true, false));
      std::cout << "wrote " << res.interactions_path << " (" << res.num_interactions
                << " rows) and " << res.groups_path << '\n';
      return 0;
    }
    if (train->parsed()) return cmd_train(rc, serialize_config(*train));
    if (evaluate_cmd->parsed())
      return cmd_evaluate(rc, ckpt_path, split, serialize_config(*evaluate_cmd));
    if (analyze->parsed())
      return cmd_analyze(rc, run_dir, groups_file, top_n, serialize_config(*analyze));
    if (ablate->parsed()) return cmd_ablate(rc, sweep, serialize_config(*ablate));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const ShapeError& e) {
    std::cerr << "internal shape error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
