#pragma once

// Sampled-negative ranking metrics (HR@K, NDCG@K, MRR), the per-group
// embedding-shift diagnostic between consecutive slices' deployed
// parameters, and peak-slice item popularity groups.

#include <cstdint>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "leaprec/dataset.hpp"
#include "leaprec/model.hpp"

namespace leaprec {

// Pessimistic sampled rank: 1 + number of negatives scoring >= the positive.
int sampled_rank(double positive_score, const std::vector<double>& negative_scores);

struct MetricPoint {
  int rank = 0;
  std::map<int, double> hr;    // K -> 1[rank <= K]
  std::map<int, double> ndcg;  // K -> 1[rank <= K] / log2(rank + 1)
  double mrr = 0.0;            // 1 / rank
};

// Per-interaction metric contributions. Throws DataError on empty negatives.
MetricPoint rank_metrics(double positive_score, const std::vector<double>& negative_scores,
                         const std::vector<int>& k_list);

struct EvalConfig {
  std::vector<int> k_list = {1, 5, 10};
  int num_negatives = 99;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::map<int, double> hr;
  std::map<int, double> ndcg;
  double mrr = 0.0;
  std::int64_t n_evaluated = 0;
  int negatives_per_positive = 99;
  std::uint64_t seed = 0;
};

std::string eval_report_json(const EvalReport& report);
void write_eval_report(const EvalReport& report, const std::string& path);

// Scores every target interaction against num_negatives sampled negatives
// (uniform over items outside the user's full observed history, drawn
// deterministically per target from cfg.seed) with combined GTL+OTL scores.
// `sequences` provide the frozen user histories used by the self-attention
// stage; a dim-0 branch contributes nothing. Throws DataError on an empty
// target list, NumericError on non-finite parameters.
EvalReport evaluate(const ParameterSet& gtl, const ParameterSet& otl,
                    const InteractionGraph& graph, const std::vector<std::vector<int>>& sequences,
                    const std::vector<std::unordered_set<int>>& observed_full,
                    const std::vector<Interaction>& targets, const EvalConfig& cfg);

// --- Embedding shift ---------------------------------------------------------

struct ShiftReport {
  std::vector<double> group_mean;  // mean ||normalized(prev) - normalized(cur)||^2 per group
  std::vector<int> group_counted;  // items that entered each group's mean
  int skipped_zero = 0;            // items skipped because a row was a zero vector
};

// Shift of raw item-embedding rows between two parameter sets (same config),
// rows L2-normalized before differencing; item_groups hold item indices.
ShiftReport embedding_shift(const ParameterSet& prev, const ParameterSet& cur,
                            const std::vector<std::vector<int>>& item_groups);

// --- Popularity groups ---------------------------------------------------------

struct PopularityGroups {
  std::vector<std::vector<int>> groups;    // per slice: items peaking there (<= top_n each)
  std::vector<std::vector<double>> curves;  // [group][slice] relative interaction counts
};

// Groups items by the training slice where their interaction count peaks
// (ties -> earliest slice); each group keeps its top_n items by total count.
// Curves are per-group per-slice counts normalized to sum 1 over slices.
PopularityGroups popularity_groups(const TimeSlicedDataset& ds, int top_n = 100);

}  // namespace leaprec
