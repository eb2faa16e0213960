#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "anyreid/data.hpp"
#include "anyreid/encoder.hpp"
#include "anyreid/evalkit.hpp"
#include "anyreid/train.hpp"

namespace anyreid {

struct EvalConfig {
  std::vector<ScenarioSpec> scenarios = default_scenarios();
  bool exclude_same_camera = false;
};

// Everything a run needs. The grid shape lives in `data` and is mirrored into the
// encoder; the run seed drives data generation, initialization and batch order.
struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  SyntheticConfig data;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string out_dir = "run";

  // Copies the seed and grid shape into the sub-configs. Call after editing fields.
  void sync();
  // Throws ConfigError.
  void validate() const;
};

// INI text:
//   [encoder] dim depth heads decoupled identity_attention weight_std token_std
//   [loss]    w1 w2 margin ce_epsilon
//   [optim]   lr epochs P K
//   [data]    num_identities samples_per_identity latent_dim shared_strength noise_std
//             content_overlap num_cameras test_fraction num_patches patch_dim
//   [eval]    scenarios exclude_same_camera
//   [run]     seed out_dir
// Missing keys keep their defaults. Unknown sections or keys, duplicates and malformed
// values throw ConfigError.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::filesystem::path& path);

// Round-trips through parse_run_config.
std::string to_ini(const RunConfig& config);

}  // namespace anyreid
