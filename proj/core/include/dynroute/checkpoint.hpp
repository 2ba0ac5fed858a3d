#ifndef DYNROUTE_CHECKPOINT_HPP_
#define DYNROUTE_CHECKPOINT_HPP_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dynroute/tape.hpp"

namespace dynroute {

inline constexpr const char* kCheckpointMagic = "DYNROUTE-CKPT-1";

// On-disk layout:
//   DYNROUTE-CKPT-1\n
//   meta <single line of free text>\n
//   tensors <N>\n
//   <name> <rank> <d0> ... <d(rank-1)>\n     (N lines)
//   data\n
//   <little-endian float64 values of every tensor, in manifest order>
struct Checkpoint {
  std::string meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                      const std::string& meta);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies checkpoint tensors into `params`. Names and shapes must match the
// set exactly; otherwise ConfigError.
void load_into(const Checkpoint& ckpt, ParameterSet& params);

}  // namespace dynroute

#endif  // DYNROUTE_CHECKPOINT_HPP_
