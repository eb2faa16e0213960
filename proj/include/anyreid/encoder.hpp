#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "anyreid/params.hpp"
#include "anyreid/repr.hpp"

namespace anyreid {

// One modality image of a sample, already cut into n flattened patches of p pixels.
struct PatchGrid {
  Modality modality = Modality::R;
  Matrix patches;  // n x p
};

struct EncoderConfig {
  int dim = 64;
  int depth = 2;
  int heads = 4;
  int num_patches = 16;
  int patch_dim = 48;
  // true: a specific and a shared token per modality are prepended.
  // false: a single [CLS] token common to all modalities (no decoupling).
  bool decoupled = true;
  // Ablation: each token attends only to itself.
  bool identity_attention = false;
  // Identity classifier heads are stored with the encoder; 0 disables them.
  int num_classes = 0;
  double weight_std = 0.02;
  double token_std = 0.02;

  int sequence_length() const { return num_patches + (decoupled ? 2 : 1); }
  int outputs_per_sequence() const { return decoupled ? 2 : 1; }
  // Throws ConfigError.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct EncoderParams {
  EncoderConfig config;
  ParamSet tensors;
};

// Truncated-normal weights (std weight_std, cut at 2 std), normal tokens and positional
// embeddings, zero biases, unit LayerNorm gains. Deterministic in `seed`.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

// Runs the encoder over a batch of grids and keeps every activation needed for the
// backward pass. Each grid is one sequence; sequences never interact.
class EncoderPass {
 public:
  EncoderPass(const EncoderParams& params, std::span<const PatchGrid> grids);
  ~EncoderPass();
  EncoderPass(EncoderPass&&) noexcept;
  EncoderPass& operator=(EncoderPass&&) noexcept;

  // (sequences * outputs_per_sequence) x dim. For decoupled encoders row 2s is the
  // specific feature of sequence s and row 2s+1 its shared feature.
  const Matrix& outputs() const;

  // Accumulates parameter gradients of a scalar whose gradient with respect to
  // outputs() is `d_outputs`.
  void backward(const Matrix& d_outputs, ParamSet& grads) const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

// Specific and shared outputs (raw, not normalized). A non-decoupled encoder returns its
// single [CLS] output in both fields.
DecoupledFeature encode(const PatchGrid& grid, const EncoderParams& params);

}  // namespace anyreid
