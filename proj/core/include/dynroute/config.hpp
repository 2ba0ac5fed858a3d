#ifndef DYNROUTE_CONFIG_HPP_
#define DYNROUTE_CONFIG_HPP_

#include <filesystem>
#include <string>

#include "dynroute/data_synth.hpp"
#include "dynroute/trainer.hpp"

namespace dynroute {

inline constexpr const char* kConfigSchema = "dynroute-config/1";

// Whole-run configuration file. Every field has a default; unknown keys are
// rejected.
struct RunConfig {
  TrainSetup setup;
  SynthConfig data;

  // Module-level validation plus cross-section consistency.
  void validate() const;

  // Applies DYNROUTE_SEED (if set) to the data and training seeds.
  void apply_seed_env();
  void set_seed(std::uint64_t seed);
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical single-line JSON with every field spelled out.
std::string to_json(const RunConfig& config);

}  // namespace dynroute

#endif  // DYNROUTE_CONFIG_HPP_
