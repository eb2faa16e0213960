#pragma once

#include <cstdint>
#include <filesystem>

#include "anyreid/encoder.hpp"
#include "anyreid/params.hpp"

namespace anyreid {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment estimates live alongside the parameters they track.
class AdamOptimizer {
 public:
  AdamOptimizer(const ParamSet& like, AdamConfig config);

  // Throws NumericalError("diverged") on a non-finite gradient, leaving `params` untouched.
  void step(ParamSet& params, const ParamSet& grads);

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  ParamSet first_;
  ParamSet second_;
  std::int64_t steps_ = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "MDRP", u32 version, config echo (u32 dim, depth, heads, num_patches, patch_dim,
// decoupled, identity_attention, num_classes, modality count; f64 weight_std, token_std),
// u64 scalar count, then every parameter array as f64 little-endian in canonical order.
void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path);
// Throws StoreError.
EncoderParams load_checkpoint(const std::filesystem::path& path);

}  // namespace anyreid
