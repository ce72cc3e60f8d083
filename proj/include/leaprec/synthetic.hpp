#pragma once

// Synthetic interaction generator: items belong to groups whose popularity
// weights move across monthly slices (stationary or drifting profiles);
// each interaction samples a user, then an item from the slice's
// group-weighted mixture or from the user's stable preference pool.

#include <cstdint>
#include <string>
#include <vector>

namespace leaprec {

struct SyntheticGroupSpec {
  std::vector<int> items;             // item indices in [0, num_items)
  std::vector<double> slice_weights;  // length num_slices, nonnegative
};

struct SyntheticSpec {
  int num_users = 300;
  int num_items = 200;
  int num_slices = 10;  // emitted calendar months, starting 2020-01
  int interactions_per_slice = 3000;
  std::string profile = "drifting";  // drifting | stationary (used when groups empty)
  int num_groups = 4;
  double stable_pref_prob = 0.25;  // chance of drawing from the user's stable pool
  int stable_pool_size = 8;
  std::uint64_t seed = 7;
  // Optional explicit groups; derived from profile/num_groups when empty.
  // Weights are normalized per slice over groups; zero stays exactly zero.
  std::vector<SyntheticGroupSpec> groups;
};

// Throws ConfigError on infeasible specs (no items/users/slices, bad
// profile, malformed custom groups).
void validate_spec(const SyntheticSpec& spec);

// The groups generate_synthetic uses when spec.groups is empty: items split
// into num_groups contiguous ranges; stationary = equal constant weights,
// drifting = overlapping activity windows with the last group running
// through the final slice.
std::vector<SyntheticGroupSpec> default_groups(const SyntheticSpec& spec);

struct SyntheticResult {
  std::string interactions_path;
  std::string groups_path;  // item<TAB>group ground truth
  std::int64_t num_interactions;
};

// Writes `out_path` (user<TAB>item<TAB>unix_seconds rows) and
// `out_path + ".groups.tsv"`. Every user and item appears at least once
// (missing ones get one injected interaction in an active month).
// Deterministic per seed.
SyntheticResult generate_synthetic(const SyntheticSpec& spec, const std::string& out_path);

}  // namespace leaprec
