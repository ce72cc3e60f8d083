#include "leaprec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <unordered_map>

#include "json.hpp"
#include "leaprec/errors.hpp"
#include "leaprec/kernels.hpp"
#include "leaprec/rng.hpp"

namespace leaprec {

int sampled_rank(double positive_score, const std::vector<double>& negative_scores) {
  int rank = 1;
  for (double s : negative_scores) {
    if (s >= positive_score) ++rank;
  }
  return rank;
}

MetricPoint rank_metrics(double positive_score, const std::vector<double>& negative_scores,
                         const std::vector<int>& k_list) {
  if (negative_scores.empty()) throw DataError("rank_metrics needs at least one negative");
  MetricPoint p;
  p.rank = sampled_rank(positive_score, negative_scores);
  for (int k : k_list) {
    const bool hit = p.rank <= k;
    p.hr[k] = hit ? 1.0 : 0.0;
    p.ndcg[k] = hit ? 1.0 / std::log2(static_cast<double>(p.rank) + 1.0) : 0.0;
  }
  p.mrr = 1.0 / static_cast<double>(p.rank);
  return p;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::json j;
  for (const auto& [k, v] : report.hr) j["hr"]["@" + std::to_string(k)] = v;
  for (const auto& [k, v] : report.ndcg) j["ndcg"]["@" + std::to_string(k)] = v;
  j["mrr"] = report.mrr;
  j["n_evaluated"] = report.n_evaluated;
  j["negatives_per_positive"] = report.negatives_per_positive;
  j["seed"] = report.seed;
  return j.dump(2);
}

void write_eval_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << eval_report_json(report) << "\n";
  if (!out) throw DataError("write failed: " + path);
}

EvalReport evaluate(const ParameterSet& gtl, const ParameterSet& otl,
                    const InteractionGraph& graph, const std::vector<std::vector<int>>& sequences,
                    const std::vector<std::unordered_set<int>>& observed_full,
                    const std::vector<Interaction>& targets, const EvalConfig& cfg) {
  if (targets.empty()) throw DataError("evaluation target set is empty");
  if (!gtl.all_finite() || !otl.all_finite()) {
    throw NumericError("evaluation parameters are not finite");
  }
  if (cfg.num_negatives < 1) throw ConfigError("num_negatives must be >= 1");

  struct Branch {
    const ParameterSet* params;
    Tensor refined;
  };
  std::vector<Branch> branches;
  if (gtl.config().dim > 0) branches.push_back({&gtl, gnn_refine(gtl, graph)});
  if (otl.config().dim > 0) branches.push_back({&otl, gnn_refine(otl, graph)});
  if (branches.empty()) throw ConfigError("both branches have dim 0");
  const int num_items = branches.front().params->config().num_items;
  const int num_users = branches.front().params->config().num_users;

  // User vectors once per distinct user, then a read-only scoring pass.
  std::vector<int> users;
  std::unordered_map<int, int> user_slot;
  for (const Interaction& t : targets) {
    if (user_slot.emplace(t.user, static_cast<int>(users.size())).second) users.push_back(t.user);
  }
  std::vector<std::vector<Tensor>> user_vecs(branches.size());
  for (size_t b = 0; b < branches.size(); ++b) {
    user_vecs[b].resize(users.size());
  }
#pragma omp parallel for schedule(static) if (users.size() > 8 && kernels::max_threads() > 1)
  for (std::int64_t ui = 0; ui < static_cast<std::int64_t>(users.size()); ++ui) {
    const int u = users[static_cast<size_t>(ui)];
    for (size_t b = 0; b < branches.size(); ++b) {
      user_vecs[b][static_cast<size_t>(ui)] = sa_user_vector(
          *branches[b].params, branches[b].refined, sequences.at(static_cast<size_t>(u)), u);
    }
  }

  struct Contribution {
    int rank = 0;
  };
  std::vector<Contribution> contribs(targets.size());

#pragma omp parallel for schedule(static) if (targets.size() > 8 && kernels::max_threads() > 1)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(targets.size()); ++i) {
    const Interaction& tgt = targets[static_cast<size_t>(i)];
    const int slot = user_slot.at(tgt.user);
    const auto& seen = observed_full.at(static_cast<size_t>(tgt.user));

    std::mt19937_64 rng(splitmix(cfg.seed ^ static_cast<std::uint64_t>(i)));
    std::uniform_int_distribution<int> pick(0, num_items - 1);
    std::vector<int> negs;
    negs.reserve(static_cast<size_t>(cfg.num_negatives));
    std::unordered_set<int> taken;
    const int max_draws = 50 * cfg.num_negatives;
    int draws = 0;
    while (static_cast<int>(negs.size()) < cfg.num_negatives && draws < max_draws) {
      ++draws;
      const int cand = pick(rng);
      if (seen.count(cand) || taken.count(cand)) continue;
      taken.insert(cand);
      negs.push_back(cand);
    }
    if (static_cast<int>(negs.size()) < cfg.num_negatives) {
      // Small catalogue: rank against the full unobserved complement
      // (shuffled, capped at the request) rather than re-using observed
      // items, which would be negatives in name only.
      negs.clear();
      for (int cand = 0; cand < num_items; ++cand) {
        if (!seen.count(cand) && cand != tgt.item) negs.push_back(cand);
      }
      for (size_t n = negs.size(); n > 1; --n) {
        const size_t j = static_cast<size_t>(rng() % n);
        std::swap(negs[j], negs[n - 1]);
      }
      if (static_cast<int>(negs.size()) > cfg.num_negatives) negs.resize(static_cast<size_t>(cfg.num_negatives));
      if (negs.empty()) {
        contribs[static_cast<size_t>(i)].rank = 0;  // unrankable: user observed everything
        continue;
      }
    }

    double pos_score = 0.0;
    std::vector<double> neg_scores(negs.size(), 0.0);
    for (size_t b = 0; b < branches.size(); ++b) {
      const Tensor& uvec = user_vecs[b][static_cast<size_t>(slot)];
      pos_score += score_item(uvec, branches[b].refined, num_users, tgt.item);
      for (size_t n = 0; n < negs.size(); ++n) {
        neg_scores[n] += score_item(uvec, branches[b].refined, num_users, negs[n]);
      }
    }
    contribs[static_cast<size_t>(i)].rank = sampled_rank(pos_score, neg_scores);
  }

  EvalReport report;
  report.seed = cfg.seed;
  report.negatives_per_positive = cfg.num_negatives;
  for (int k : cfg.k_list) {
    report.hr[k] = 0.0;
    report.ndcg[k] = 0.0;
  }
  std::int64_t ranked = 0;
  for (const Contribution& c : contribs) {  // fixed-order merge: thread-count independent
    if (c.rank == 0) continue;
    ++ranked;
    for (int k : cfg.k_list) {
      if (c.rank <= k) {
        report.hr[k] += 1.0;
        report.ndcg[k] += 1.0 / std::log2(static_cast<double>(c.rank) + 1.0);
      }
    }
    report.mrr += 1.0 / static_cast<double>(c.rank);
  }
  if (ranked == 0) throw DataError("no target was rankable: every user has observed every item");
  if (ranked < static_cast<std::int64_t>(targets.size()))
    std::cerr << "[eval] skipped " << targets.size() - static_cast<size_t>(ranked)
              << " target(s) whose user observed the whole catalogue\n";
  report.n_evaluated = ranked;
  const double n = static_cast<double>(ranked);
  for (int k : cfg.k_list) {
    report.hr[k] /= n;
    report.ndcg[k] /= n;
  }
  report.mrr /= n;
  return report;
}

ShiftReport embedding_shift(const ParameterSet& prev, const ParameterSet& cur,
                            const std::vector<std::vector<int>>& item_groups) {
  const Tensor& ep = prev.at("emb");
  const Tensor& ec = cur.at("emb");
  if (!ep.same_shape(ec)) throw ShapeError("embedding tables differ in shape across slices");
  const int num_users = prev.config().num_users;
  const int num_items = prev.config().num_items;
  const int d = ep.cols();

  ShiftReport report;
  report.group_mean.assign(item_groups.size(), 0.0);
  report.group_counted.assign(item_groups.size(), 0);

  std::vector<double> a(static_cast<size_t>(d)), b(static_cast<size_t>(d));
  for (size_t g = 0; g < item_groups.size(); ++g) {
    double sum = 0.0;
    int counted = 0;
    for (int item : item_groups[g]) {
      if (item < 0 || item >= num_items) throw DataError("shift group item out of range");
      const int row = num_users + item;
      double np = 0.0, nc = 0.0;
      for (int j = 0; j < d; ++j) {
        np += ep.at(row, j) * ep.at(row, j);
        nc += ec.at(row, j) * ec.at(row, j);
      }
      if (np == 0.0 || nc == 0.0) {
        ++report.skipped_zero;
        continue;
      }
      np = std::sqrt(np);
      nc = std::sqrt(nc);
      double s = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = ep.at(row, j) / np - ec.at(row, j) / nc;
        s += diff * diff;
      }
      sum += s;
      ++counted;
    }
    report.group_mean[g] = counted > 0 ? sum / counted : 0.0;
    report.group_counted[g] = counted;
  }
  return report;
}

PopularityGroups popularity_groups(const TimeSlicedDataset& ds, int top_n) {
  if (top_n < 1) throw ConfigError("top_n must be >= 1");
  const int T = ds.num_slices();
  const int num_items = ds.num_items;

  // per-item per-slice interaction counts over the training slices
  std::vector<std::vector<std::int64_t>> counts(static_cast<size_t>(num_items),
                                                std::vector<std::int64_t>(static_cast<size_t>(T), 0));
  std::vector<std::int64_t> totals(static_cast<size_t>(num_items), 0);
  for (int t = 0; t < T; ++t) {
    for (const Interaction& x : ds.slices[static_cast<size_t>(t)]) {
      ++counts[static_cast<size_t>(x.item)][static_cast<size_t>(t)];
      ++totals[static_cast<size_t>(x.item)];
    }
  }

  std::vector<std::vector<int>> peaked(static_cast<size_t>(T));  // items whose count peaks at t
  for (int i = 0; i < num_items; ++i) {
    if (totals[static_cast<size_t>(i)] == 0) continue;
    int peak = 0;
    for (int t = 1; t < T; ++t) {
      if (counts[static_cast<size_t>(i)][static_cast<size_t>(t)] >
          counts[static_cast<size_t>(i)][static_cast<size_t>(peak)]) {
        peak = t;  // strict > keeps the earliest slice on ties
      }
    }
    peaked[static_cast<size_t>(peak)].push_back(i);
  }

  PopularityGroups out;
  out.groups.resize(static_cast<size_t>(T));
  out.curves.assign(static_cast<size_t>(T), std::vector<double>(static_cast<size_t>(T), 0.0));
  for (int t = 0; t < T; ++t) {
    auto& items = peaked[static_cast<size_t>(t)];
    std::sort(items.begin(), items.end(), [&](int a, int b) {
      if (totals[static_cast<size_t>(a)] != totals[static_cast<size_t>(b)]) {
        return totals[static_cast<size_t>(a)] > totals[static_cast<size_t>(b)];
      }
      return a < b;
    });
    if (static_cast<int>(items.size()) > top_n) items.resize(static_cast<size_t>(top_n));
    out.groups[static_cast<size_t>(t)] = items;

    std::int64_t group_total = 0;
    for (int i : items) {
      for (int s = 0; s < T; ++s) {
        out.curves[static_cast<size_t>(t)][static_cast<size_t>(s)] +=
            static_cast<double>(counts[static_cast<size_t>(i)][static_cast<size_t>(s)]);
        group_total += counts[static_cast<size_t>(i)][static_cast<size_t>(s)];
      }
    }
    if (group_total > 0) {
      for (int s = 0; s < T; ++s) {
        out.curves[static_cast<size_t>(t)][static_cast<size_t>(s)] /= static_cast<double>(group_total);
      }
    }
  }
  return out;
}

}  // namespace leaprec
