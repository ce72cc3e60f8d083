#pragma once

// Interaction ingestion, calendar-month time slicing, bipartite interaction
// graphs, per-user history sequences and BPR triple sampling.

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "leaprec/tensor.hpp"

namespace leaprec {

struct Interaction {
  int user = 0;
  int item = 0;
  std::int64_t timestamp = 0;  // unix seconds, UTC

  friend bool operator==(const Interaction& a, const Interaction& b) {
    return a.user == b.user && a.item == b.item && a.timestamp == b.timestamp;
  }
};

// Canonical order: (timestamp, raw user id, raw item id) at ingest time.
// Indices are assigned by first appearance in canonical order, so ingest is
// independent of input row order and ingest(write(log)) == log.
struct InteractionLog {
  std::vector<Interaction> interactions;
  std::vector<std::string> user_ids;  // index -> raw id
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, int> user_index;
  std::unordered_map<std::string, int> item_index;

  int num_users() const { return static_cast<int>(user_ids.size()); }
  int num_items() const { return static_cast<int>(item_ids.size()); }

  friend bool operator==(const InteractionLog& a, const InteractionLog& b) {
    return a.interactions == b.interactions && a.user_ids == b.user_ids && a.item_ids == b.item_ids;
  }
};

struct IngestOptions {
  char delimiter = '\t';
  bool has_header = false;
  bool persist_id_maps = true;  // writes <path>.users.tsv / <path>.items.tsv
  bool verbose = true;          // one-line count summary on stderr
};

// Throws DataError with the 1-based line number on malformed rows; empty
// input (no data rows) is an error. Exact (u,i,t) duplicates are dropped.
InteractionLog ingest(const std::string& path, const IngestOptions& opts = {});

// Inverse of ingest: emits raw ids in canonical order.
void write_log(const InteractionLog& log, const std::string& path, char delimiter = '\t');

// Two-column text (raw_id <TAB> index), one file per entity type.
void write_id_maps(const InteractionLog& log, const std::string& base_path);

// --- UTC calendar helpers -------------------------------------------------

// Absolute month number (year*12 + month-1) of a unix timestamp in UTC.
std::int64_t month_index_utc(std::int64_t timestamp);

// Calendar-month shift; day-of-month clamps to the target month's last day.
std::int64_t add_calendar_months(std::int64_t timestamp, int months);

std::string format_month(std::int64_t absolute_month);  // "YYYY-MM"

// Unix timestamp of the first instant of an absolute month (UTC).
std::int64_t month_start_timestamp(std::int64_t absolute_month);

// --- Temporal split ---------------------------------------------------------

struct TimeSlicedDataset {
  std::vector<std::vector<Interaction>> slices;  // training, chronological
  std::vector<std::int64_t> slice_month_begin;   // first absolute month of each slice's bucket
  std::vector<Interaction> val;                  // [cut, cut + val_window months)
  std::vector<Interaction> test;                 // at/after the validation window
  int granularity_months = 1;
  std::int64_t cut_time = 0;
  int val_window_months = 6;
  int num_users = 0;
  int num_items = 0;

  int num_slices() const { return static_cast<int>(slices.size()); }
  std::vector<Interaction> train_flat() const;
  std::string slice_label(int t) const;  // "YYYY-MM" of the slice's first bucket month
};

// Buckets training interactions (t < cut_time) into slices of
// `granularity_months` calendar months, anchored at the earliest training
// month. Empty buckets are dropped with a stderr warning. Throws DataError
// if nothing precedes cut_time.
TimeSlicedDataset slice_by_time(const InteractionLog& log, int granularity_months,
                                std::int64_t cut_time, int val_window_months = 6);

// --- Interaction graph ------------------------------------------------------

struct GraphEdge {
  int src = 0;
  int dst = 0;
  double coeff = 0.0;
};

// Bipartite graph over U+I nodes (users first, then items offset by U).
// Edge coefficients are 1/sqrt(|N_src||N_dst|) over distinct neighbours;
// self coefficients are 1/|N_m| (1 for isolated nodes).
struct InteractionGraph {
  int num_users = 0;
  int num_items = 0;
  std::vector<GraphEdge> edges;    // both directions, sorted by (src, dst)
  std::vector<double> self_coeff;  // size U+I
  std::vector<int> degree;         // distinct-neighbour degree per node

  int num_nodes() const { return num_users + num_items; }
  int item_node(int item) const { return num_users + item; }
  Tensor dense_adjacency() const;  // (U+I)x(U+I) coefficient matrix, zero diagonal
};

InteractionGraph build_graph(const std::vector<Interaction>& interactions, int num_users,
                             int num_items);

// --- Sequences and sampling -------------------------------------------------

// Per-user item sequences: interactions strictly before reference_time,
// chronological, truncated to the max_seq_len most recent.
std::vector<std::vector<int>> user_sequences(const std::vector<Interaction>& interactions,
                                             int num_users, std::int64_t reference_time,
                                             int max_seq_len);

// Per-user set of items appearing in `interactions`.
std::vector<std::unordered_set<int>> observed_items(const std::vector<Interaction>& interactions,
                                                    int num_users);

struct BprTriple {
  int user = 0;
  int pos = 0;
  int neg = 0;
};

struct BprSampleStats {
  std::int64_t retry_cap_hits = 0;  // negatives accepted via the 100-retry escape hatch
  std::int64_t triples = 0;
};

// Positives uniform over the slice; negatives uniform over items,
// rejection-resampled against observed[u] with a 100-retry cap (then any
// item != pos is accepted and the event is counted + logged).
std::vector<BprTriple> sample_bpr_batch(const std::vector<Interaction>& slice,
                                        const std::vector<std::unordered_set<int>>& observed,
                                        int num_items, int batch_size, std::mt19937_64& rng,
                                        BprSampleStats* stats = nullptr);

}  // namespace leaprec
