#include "leaprec/dataset.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "leaprec/errors.hpp"

namespace leaprec {

namespace {

struct RawRow {
  std::string user;
  std::string item;
  std::int64_t timestamp;
};

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

bool parse_int64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  size_t idx = 0;
  try {
    out = std::stoll(s, &idx);
  } catch (const std::exception&) {
    return false;
  }
  return idx == s.size();
}

}  // namespace

InteractionLog ingest(const std::string& path, const IngestOptions& opts) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file: " + path);

  std::vector<RawRow> rows;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (opts.has_header && line_no == 1) continue;
    const auto fields = split_line(line, opts.delimiter);
    if (fields.size() != 3) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 3 fields, got " +
                      std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": empty user or item id");
    }
    RawRow row;
    row.user = fields[0];
    row.item = fields[1];
    if (!parse_int64(fields[2], row.timestamp)) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad timestamp '" + fields[2] + "'");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path + ": no interactions");

  std::stable_sort(rows.begin(), rows.end(), [](const RawRow& a, const RawRow& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.user != b.user) return a.user < b.user;
    return a.item < b.item;
  });

  InteractionLog log;
  const std::int64_t raw_count = static_cast<std::int64_t>(rows.size());
  for (const RawRow& row : rows) {
    if (!log.interactions.empty()) {
      const Interaction& prev = log.interactions.back();
      if (prev.timestamp == row.timestamp && log.user_ids[static_cast<size_t>(prev.user)] == row.user &&
          log.item_ids[static_cast<size_t>(prev.item)] == row.item) {
        continue;  // exact (u,i,t) duplicate
      }
    }
    auto [uit, uin] = log.user_index.try_emplace(row.user, log.num_users());
    if (uin) log.user_ids.push_back(row.user);
    auto [iit, iin] = log.item_index.try_emplace(row.item, log.num_items());
    if (iin) log.item_ids.push_back(row.item);
    log.interactions.push_back({uit->second, iit->second, row.timestamp});
  }

  if (opts.persist_id_maps) write_id_maps(log, path);
  if (opts.verbose) {
    const std::int64_t kept = static_cast<std::int64_t>(log.interactions.size());
    std::cerr << "[data] " << path << ": U=" << log.num_users() << " I=" << log.num_items()
              << " actions=" << kept;
    if (kept != raw_count) std::cerr << " (dropped " << raw_count - kept << " duplicates)";
    std::cerr << "\n";
  }
  return log;
}

void write_log(const InteractionLog& log, const std::string& path, char delimiter) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write interaction file: " + path);
  for (const Interaction& x : log.interactions) {
    out << log.user_ids[static_cast<size_t>(x.user)] << delimiter
        << log.item_ids[static_cast<size_t>(x.item)] << delimiter << x.timestamp << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

void write_id_maps(const InteractionLog& log, const std::string& base_path) {
  const auto write_map = [](const std::string& file, const std::vector<std::string>& ids) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write id map: " + file);
    for (size_t i = 0; i < ids.size(); ++i) out << ids[i] << '\t' << i << "\n";
    if (!out) throw DataError("write failed: " + file);
  };
  write_map(base_path + ".users.tsv", log.user_ids);
  write_map(base_path + ".items.tsv", log.item_ids);
}

std::int64_t month_index_utc(std::int64_t timestamp) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{timestamp}};
  const year_month_day ymd{floor<days>(tp)};
  return static_cast<std::int64_t>(static_cast<int>(ymd.year())) * 12 +
         static_cast<std::int64_t>(static_cast<unsigned>(ymd.month())) - 1;
}

std::int64_t add_calendar_months(std::int64_t timestamp, int months) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{timestamp}};
  const auto day_point = floor<days>(tp);
  const seconds time_of_day = tp - day_point;
  year_month_day ymd{day_point};
  ymd += std::chrono::months{months};
  if (!ymd.ok()) ymd = ymd.year() / ymd.month() / last;
  return (sys_days{ymd} + time_of_day).time_since_epoch().count();
}

std::string format_month(std::int64_t absolute_month) {
  std::int64_t year = absolute_month / 12;
  std::int64_t month = absolute_month % 12;
  if (month < 0) {
    month += 12;
    year -= 1;
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04lld-%02lld", static_cast<long long>(year),
                static_cast<long long>(month + 1));
  return buf;
}

std::int64_t month_start_timestamp(std::int64_t absolute_month) {
  using namespace std::chrono;
  std::int64_t y = absolute_month / 12;
  std::int64_t m = absolute_month % 12;
  if (m < 0) {
    m += 12;
    y -= 1;
  }
  const year_month_day ymd{year{static_cast<int>(y)}, month{static_cast<unsigned>(m + 1)}, day{1}};
  return duration_cast<seconds>(sys_days{ymd}.time_since_epoch()).count();
}

std::vector<Interaction> TimeSlicedDataset::train_flat() const {
  std::vector<Interaction> out;
  for (const auto& slice : slices) out.insert(out.end(), slice.begin(), slice.end());
  return out;
}

std::string TimeSlicedDataset::slice_label(int t) const {
  return format_month(slice_month_begin.at(static_cast<size_t>(t)));
}

TimeSlicedDataset slice_by_time(const InteractionLog& log, int granularity_months,
                                std::int64_t cut_time, int val_window_months) {
  if (granularity_months < 1) throw ConfigError("granularity must be >= 1 month");
  if (val_window_months < 0) throw ConfigError("validation window must be >= 0 months");

  TimeSlicedDataset ds;
  ds.granularity_months = granularity_months;
  ds.cut_time = cut_time;
  ds.val_window_months = val_window_months;
  ds.num_users = log.num_users();
  ds.num_items = log.num_items();

  const std::int64_t val_end = add_calendar_months(cut_time, val_window_months);

  std::int64_t anchor_month = 0;
  bool have_train = false;
  for (const Interaction& x : log.interactions) {
    if (x.timestamp < cut_time) {
      anchor_month = month_index_utc(x.timestamp);  // canonical order: first is earliest
      have_train = true;
      break;
    }
  }
  if (!have_train) throw DataError("no training interactions before the cut time");

  std::map<std::int64_t, std::vector<Interaction>> buckets;  // bucket index -> interactions
  std::int64_t max_bucket = 0;
  for (const Interaction& x : log.interactions) {
    if (x.timestamp < cut_time) {
      const std::int64_t b = (month_index_utc(x.timestamp) - anchor_month) / granularity_months;
      buckets[b].push_back(x);
      max_bucket = std::max(max_bucket, b);
    } else if (x.timestamp < val_end) {
      ds.val.push_back(x);
    } else {
      ds.test.push_back(x);
    }
  }

  for (std::int64_t b = 0; b <= max_bucket; ++b) {
    auto it = buckets.find(b);
    if (it == buckets.end()) {
      std::cerr << "[data] dropping empty slice starting "
                << format_month(anchor_month + b * granularity_months) << "\n";
      continue;
    }
    ds.slices.push_back(std::move(it->second));
    ds.slice_month_begin.push_back(anchor_month + b * granularity_months);
  }
  return ds;
}

Tensor InteractionGraph::dense_adjacency() const {
  Tensor a({num_nodes(), num_nodes()});
  for (const GraphEdge& e : edges) a.at(e.src, e.dst) = e.coeff;
  return a;
}

InteractionGraph build_graph(const std::vector<Interaction>& interactions, int num_users,
                             int num_items) {
  InteractionGraph g;
  g.num_users = num_users;
  g.num_items = num_items;

  std::set<std::pair<int, int>> pairs;  // (user, item), distinct
  for (const Interaction& x : interactions) {
    if (x.user < 0 || x.user >= num_users || x.item < 0 || x.item >= num_items) {
      throw DataError("interaction index out of range: user " + std::to_string(x.user) + ", item " +
                      std::to_string(x.item));
    }
    pairs.insert({x.user, x.item});
  }

  g.degree.assign(static_cast<size_t>(g.num_nodes()), 0);
  for (const auto& [u, i] : pairs) {
    ++g.degree[static_cast<size_t>(u)];
    ++g.degree[static_cast<size_t>(g.item_node(i))];
  }

  g.self_coeff.resize(static_cast<size_t>(g.num_nodes()));
  for (int m = 0; m < g.num_nodes(); ++m) {
    const int d = g.degree[static_cast<size_t>(m)];
    g.self_coeff[static_cast<size_t>(m)] = d == 0 ? 1.0 : 1.0 / d;
  }

  g.edges.reserve(pairs.size() * 2);
  for (const auto& [u, i] : pairs) {
    const int in = g.item_node(i);
    const double c =
        1.0 / std::sqrt(static_cast<double>(g.degree[static_cast<size_t>(u)]) *
                        static_cast<double>(g.degree[static_cast<size_t>(in)]));
    g.edges.push_back({u, in, c});
    g.edges.push_back({in, u, c});
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const GraphEdge& a, const GraphEdge& b) {
    if (a.src != b.src) return a.src < b.src;
    return a.dst < b.dst;
  });
  return g;
}

std::vector<std::vector<int>> user_sequences(const std::vector<Interaction>& interactions,
                                             int num_users, std::int64_t reference_time,
                                             int max_seq_len) {
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
  std::vector<std::vector<Interaction>> per_user(static_cast<size_t>(num_users));
  for (const Interaction& x : interactions) {
    if (x.timestamp < reference_time) per_user[static_cast<size_t>(x.user)].push_back(x);
  }
  std::vector<std::vector<int>> out(static_cast<size_t>(num_users));
  for (int u = 0; u < num_users; ++u) {
    auto& hist = per_user[static_cast<size_t>(u)];
    std::stable_sort(hist.begin(), hist.end(),
                     [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
    const size_t keep = std::min<size_t>(hist.size(), static_cast<size_t>(max_seq_len));
    auto& seq = out[static_cast<size_t>(u)];
    seq.reserve(keep);
    for (size_t j = hist.size() - keep; j < hist.size(); ++j) seq.push_back(hist[j].item);
  }
  return out;
}

std::vector<std::unordered_set<int>> observed_items(const std::vector<Interaction>& interactions,
                                                    int num_users) {
  std::vector<std::unordered_set<int>> out(static_cast<size_t>(num_users));
  for (const Interaction& x : interactions) out[static_cast<size_t>(x.user)].insert(x.item);
  return out;
}

std::vector<BprTriple> sample_bpr_batch(const std::vector<Interaction>& slice,
                                        const std::vector<std::unordered_set<int>>& observed,
                                        int num_items, int batch_size, std::mt19937_64& rng,
                                        BprSampleStats* stats) {
  if (slice.empty()) throw DataError("cannot sample BPR triples from an empty slice");
  if (num_items < 2) throw DataError("negative sampling needs at least 2 items");
  std::uniform_int_distribution<size_t> pick_pos(0, slice.size() - 1);
  std::uniform_int_distribution<int> pick_item(0, num_items - 1);

  std::vector<BprTriple> batch;
  batch.reserve(static_cast<size_t>(batch_size));
  std::int64_t cap_hits = 0;
  for (int b = 0; b < batch_size; ++b) {
    const Interaction& pos = slice[pick_pos(rng)];
    const auto& seen = observed[static_cast<size_t>(pos.user)];
    int neg = -1;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int cand = pick_item(rng);
      if (!seen.count(cand)) {
        neg = cand;
        break;
      }
    }
    if (neg < 0) {
      ++cap_hits;
      do {
        neg = pick_item(rng);
      } while (neg == pos.item);
    }
    batch.push_back({pos.user, pos.item, neg});
  }
  if (stats) {
    stats->retry_cap_hits += cap_hits;
    stats->triples += batch_size;
  }
  if (cap_hits > 0) {
    std::cerr << "[data] negative sampling hit the retry cap " << cap_hits << "/" << batch_size
              << " times; accepted negatives != positive\n";
  }
  return batch;
}

}  // namespace leaprec
