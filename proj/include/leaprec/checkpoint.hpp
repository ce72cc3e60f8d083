#pragma once

// Versioned parameter container: magic + version + JSON header (branch
// configs, tensor layout, config hash) followed by the tensors as
// little-endian float32 in declared order (GTL branch first).

#include <string>

#include "leaprec/model.hpp"

namespace leaprec {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParameterSet gtl;
  ParameterSet otl;
  std::string config_hash;
};

void save_checkpoint(const std::string& path, const ParameterSet& gtl, const ParameterSet& otl,
                     const std::string& config_hash);

// Throws DataError on bad magic, unknown version, layout mismatch or
// truncated payload.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace leaprec
