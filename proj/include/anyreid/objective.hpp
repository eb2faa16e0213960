#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "anyreid/data.hpp"
#include "anyreid/encoder.hpp"
#include "anyreid/metric.hpp"
#include "anyreid/params.hpp"

namespace anyreid {

struct LossConfig {
  double w1 = kDefaultRolWeight;
  double w2 = kDefaultKdlWeight;
  double margin = kDefaultMargin;
  double ce_epsilon = kDefaultCeEpsilon;
};

struct LossReport {
  double l_ce = 0.0;
  double l_tri = 0.0;
  double l_rol = 0.0;
  double l_kdl = 0.0;
  double l_mml = 0.0;
  double l_total = 0.0;
  ParamSet gradients;  // keyed like EncoderParams::tensors
};

// Full training objective L = L_ce + L_tri + w1 * L_rol + w2 * L_kdl on one batch.
// `labels` are classifier indices in [0, num_classes). Decoupled encoders use one
// classifier per modality on [sp_M, sh_M]; otherwise a single classifier sees the
// concatenated modality outputs and the orthogonality/discrepancy terms are not used.
LossReport total_loss(const EncoderParams& params, std::span<const GridSample> batch,
                      std::span<const std::uint32_t> labels, const LossConfig& config);

// Inference helper: normalized representation of every sample, all modalities present.
std::vector<LabeledSample> extract_features(const EncoderParams& params,
                                            std::span<const GridSample> samples);

}  // namespace anyreid
