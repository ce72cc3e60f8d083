#include "leaprec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "leaprec/dataset.hpp"
#include "leaprec/rng.hpp"
#include "leaprec/errors.hpp"

namespace leaprec {
namespace {

constexpr std::int64_t kBaseMonth = 2020LL * 12;  // 2020-01

double uniform01(std::mt19937_64& rng) {
  // 53-bit mantissa draw; avoids distribution objects so the stream is
  // identical across standard library implementations.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int sample_cdf(const std::vector<double>& cdf, std::mt19937_64& rng) {
  const double u = uniform01(rng) * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<int>(it - cdf.begin());
}

std::vector<double> zipf_cdf(std::size_t n) {
  std::vector<double> cdf(n);
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    acc += 1.0 / static_cast<double>(1 + r);
    cdf[r] = acc;
  }
  return cdf;
}

}  // namespace

std::vector<SyntheticGroupSpec> default_groups(const SyntheticSpec& spec) {
  const int g_count = std::min(spec.num_groups, spec.num_items);
  std::vector<SyntheticGroupSpec> groups(static_cast<std::size_t>(g_count));
  for (int g = 0; g < g_count; ++g) {
    const int begin = static_cast<int>(static_cast<std::int64_t>(spec.num_items) * g / g_count);
    const int end =
        static_cast<int>(static_cast<std::int64_t>(spec.num_items) * (g + 1) / g_count);
    for (int i = begin; i < end; ++i) groups[g].items.push_back(i);
    groups[g].slice_weights.assign(static_cast<std::size_t>(spec.num_slices), 0.0);
  }
  const int s_count = spec.num_slices;
  if (spec.profile == "stationary") {
    for (auto& grp : groups)
      for (double& w : grp.slice_weights) w = 1.0 / g_count;
    return groups;
  }
  // Drifting: group g is active on a contiguous window of ~2S/(G+1) slices
  // with ~50% overlap between neighbours, so a drift is gradual and the
  // last group opens well before the end and stays active through it.
  for (int g = 0; g < g_count; ++g) {
    const int start = static_cast<int>(static_cast<std::int64_t>(s_count) * g / (g_count + 1));
    int end = g == g_count - 1
                  ? s_count
                  : static_cast<int>(static_cast<std::int64_t>(s_count) * (g + 2) / (g_count + 1));
    end = std::min(std::max(end, start + 1), s_count);
    for (int t = start; t < end; ++t) groups[g].slice_weights[static_cast<std::size_t>(t)] = 1.0;
  }
  // Normalize per slice across groups.
  for (int t = 0; t < s_count; ++t) {
    double sum = 0.0;
    for (const auto& grp : groups) sum += grp.slice_weights[static_cast<std::size_t>(t)];
    for (auto& grp : groups) grp.slice_weights[static_cast<std::size_t>(t)] /= sum;
  }
  return groups;
}

void validate_spec(const SyntheticSpec& spec) {
  if (spec.num_users <= 0) throw ConfigError("synthetic spec: num_users must be positive");
  if (spec.num_items <= 0) throw ConfigError("synthetic spec: num_items must be positive");
  if (spec.num_slices <= 0) throw ConfigError("synthetic spec: num_slices must be positive");
  if (spec.interactions_per_slice <= 0)
    throw ConfigError("synthetic spec: interactions_per_slice must be positive");
  if (spec.stable_pref_prob < 0.0 || spec.stable_pref_prob >= 1.0)
    throw ConfigError("synthetic spec: stable_pref_prob must be in [0, 1)");
  if (spec.groups.empty()) {
    if (spec.profile != "stationary" && spec.profile != "drifting")
      throw ConfigError("synthetic spec: profile must be 'stationary' or 'drifting', got '" +
                        spec.profile + "'");
    if (spec.num_groups <= 0) throw ConfigError("synthetic spec: num_groups must be positive");
    return;
  }
  std::vector<char> covered(static_cast<std::size_t>(spec.num_items), 0);
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    const auto& grp = spec.groups[g];
    if (grp.items.empty())
      throw ConfigError("synthetic spec: group " + std::to_string(g) + " has no items");
    for (int item : grp.items) {
      if (item < 0 || item >= spec.num_items)
        throw ConfigError("synthetic spec: group " + std::to_string(g) + " item " +
                          std::to_string(item) + " out of range");
      if (covered[static_cast<std::size_t>(item)])
        throw ConfigError("synthetic spec: item " + std::to_string(item) +
                          " appears in more than one group");
      covered[static_cast<std::size_t>(item)] = 1;
    }
    if (grp.slice_weights.size() != static_cast<std::size_t>(spec.num_slices))
      throw ConfigError("synthetic spec: group " + std::to_string(g) + " has " +
                        std::to_string(grp.slice_weights.size()) + " slice weights, expected " +
                        std::to_string(spec.num_slices));
    for (double w : grp.slice_weights)
      if (!(w >= 0.0))
        throw ConfigError("synthetic spec: group " + std::to_string(g) +
                          " has a negative slice weight");
  }
  for (int t = 0; t < spec.num_slices; ++t) {
    double sum = 0.0;
    for (const auto& grp : spec.groups) sum += grp.slice_weights[static_cast<std::size_t>(t)];
    if (sum <= 0.0)
      throw ConfigError("synthetic spec: no group is active at slice " + std::to_string(t));
  }
}

SyntheticResult generate_synthetic(const SyntheticSpec& spec, const std::string& out_path) {
  validate_spec(spec);
  const std::vector<SyntheticGroupSpec> groups =
      spec.groups.empty() ? default_groups(spec) : spec.groups;

  // Group lookup per item (-1 = ungrouped; those can only appear via stable
  // pools, never via the mixture).
  std::vector<int> item_group(static_cast<std::size_t>(spec.num_items), -1);
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (int item : groups[g].items) item_group[static_cast<std::size_t>(item)] = static_cast<int>(g);

  std::vector<std::vector<double>> item_cdf(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) item_cdf[g] = zipf_cdf(groups[g].items.size());

  // Per-slice group CDFs (unnormalized weights; sample_cdf scales by the sum
  // so exact zeros stay impossible to draw).
  std::vector<std::vector<double>> group_cdf(static_cast<std::size_t>(spec.num_slices));
  for (int t = 0; t < spec.num_slices; ++t) {
    auto& cdf = group_cdf[static_cast<std::size_t>(t)];
    cdf.resize(groups.size());
    double acc = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      acc += groups[g].slice_weights[static_cast<std::size_t>(t)];
      cdf[g] = acc;
    }
  }

  std::mt19937_64 rng(mix_seed(spec.seed, 0x5e17));

  // Each user gets a small fixed pool per group; a stable draw first picks
  // the group from the slice mixture (so inactive groups stay at exactly
  // zero), then a pool item instead of a popularity-ranked one.
  const int pool_per_group =
      std::max(1, std::min(spec.stable_pool_size, spec.num_items / std::max<int>(1, (int)groups.size())));
  std::vector<std::vector<std::vector<int>>> user_pool(
      static_cast<std::size_t>(spec.num_users),
      std::vector<std::vector<int>>(groups.size()));
  for (int u = 0; u < spec.num_users; ++u) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& items = groups[g].items;
      auto& pool = user_pool[static_cast<std::size_t>(u)][g];
      const int take = std::min<int>(pool_per_group, static_cast<int>(items.size()));
      std::vector<int> idx(items.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
      for (int i = 0; i < take; ++i) {
        const std::size_t j =
            static_cast<std::size_t>(i) +
            static_cast<std::size_t>(uniform01(rng) * static_cast<double>(idx.size() - i));
        std::swap(idx[static_cast<std::size_t>(i)], idx[std::min(j, idx.size() - 1)]);
        pool.push_back(items[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
      }
    }
  }

  struct Row {
    int user;
    int item;
    std::int64_t ts;
  };
  std::vector<Row> rows;
  rows.reserve(static_cast<std::size_t>(spec.num_slices) *
                   static_cast<std::size_t>(spec.interactions_per_slice) +
               static_cast<std::size_t>(spec.num_users + spec.num_items));

  auto stamp_in_month = [&](int t) {
    const std::int64_t begin = month_start_timestamp(kBaseMonth + t);
    const std::int64_t end = month_start_timestamp(kBaseMonth + t + 1);
    return begin + static_cast<std::int64_t>(uniform01(rng) * static_cast<double>(end - begin));
  };

  auto sample_mixture_item = [&](int t, int user) {
    const int g = sample_cdf(group_cdf[static_cast<std::size_t>(t)], rng);
    if (user >= 0 && uniform01(rng) < spec.stable_pref_prob) {
      const auto& pool = user_pool[static_cast<std::size_t>(user)][static_cast<std::size_t>(g)];
      if (!pool.empty())
        return pool[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size()))];
    }
    const int r = sample_cdf(item_cdf[static_cast<std::size_t>(g)], rng);
    return groups[static_cast<std::size_t>(g)].items[static_cast<std::size_t>(r)];
  };

  for (int t = 0; t < spec.num_slices; ++t) {
    for (int n = 0; n < spec.interactions_per_slice; ++n) {
      const int user = static_cast<int>(uniform01(rng) * static_cast<double>(spec.num_users));
      const int item = sample_mixture_item(t, user);
      rows.push_back({user, item, stamp_in_month(t)});
    }
  }

  // Coverage injections: any user or grouped item that never appeared gets
  // one interaction in a month where its group is active, keeping inactive
  // slices exactly empty of that group.
  std::vector<char> seen_user(static_cast<std::size_t>(spec.num_users), 0);
  std::vector<char> seen_item(static_cast<std::size_t>(spec.num_items), 0);
  for (const Row& r : rows) {
    seen_user[static_cast<std::size_t>(r.user)] = 1;
    seen_item[static_cast<std::size_t>(r.item)] = 1;
  }
  for (int i = 0; i < spec.num_items; ++i) {
    if (seen_item[static_cast<std::size_t>(i)] || item_group[static_cast<std::size_t>(i)] < 0)
      continue;
    const auto& w = groups[static_cast<std::size_t>(item_group[static_cast<std::size_t>(i)])]
                        .slice_weights;
    int t = 0;
    while (t < spec.num_slices && w[static_cast<std::size_t>(t)] <= 0.0) ++t;
    if (t == spec.num_slices) continue;  // group never active; leave the item out
    const int user = static_cast<int>(uniform01(rng) * static_cast<double>(spec.num_users));
    rows.push_back({user, i, stamp_in_month(t)});
    seen_user[static_cast<std::size_t>(user)] = 1;
  }
  for (int u = 0; u < spec.num_users; ++u) {
    if (seen_user[static_cast<std::size_t>(u)]) continue;
    const int t = static_cast<int>(uniform01(rng) * static_cast<double>(spec.num_slices));
    rows.push_back({u, sample_mixture_item(t, u), stamp_in_month(t)});
  }

  std::ofstream out(out_path);
  if (!out) throw DataError("cannot open output file: " + out_path);
  for (const Row& r : rows) out << "u" << r.user << '\t' << "i" << r.item << '\t' << r.ts << '\n';
  out.close();
  if (!out) throw DataError("failed writing output file: " + out_path);

  const std::string groups_path = out_path + ".groups.tsv";
  std::ofstream gout(groups_path);
  if (!gout) throw DataError("cannot open output file: " + groups_path);
  for (int i = 0; i < spec.num_items; ++i)
    if (item_group[static_cast<std::size_t>(i)] >= 0)
      gout << "i" << i << '\t' << item_group[static_cast<std::size_t>(i)] << '\n';
  gout.close();
  if (!gout) throw DataError("failed writing output file: " + groups_path);

  return {out_path, groups_path, static_cast<std::int64_t>(rows.size())};
}

}  // namespace leaprec
