#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "anyreid/repr.hpp"

namespace anyreid {

inline constexpr double kDefaultRolWeight = 1.5;
inline constexpr double kDefaultKdlWeight = 5.25;
inline constexpr double kDefaultMargin = 0.3;
inline constexpr double kDefaultCeEpsilon = 0.1;
inline constexpr double kKdlEpsilon = 1e-12;

// Ideal slot-similarity structure: identity on the specific block, zero cross blocks,
// all-ones on the shared block.
struct TargetMatrix {
  Matrix entries;
  static TargetMatrix ideal();
};

// Outer product of a sample mask with itself.
struct PairMask {
  Matrix entries;
  static PairMask from(const SlotMask& mask);
};

// A scalar loss and its gradient with respect to a matrix input.
struct MatrixLoss {
  double loss = 0.0;
  Matrix grad;
};

// Representation orthogonality loss on already-normalized slots:
// sum_ij mask_ij (<v_i, v_j> - A_ij)^2. Gradient is with respect to the normalized slots.
// Throws Error when `rep` is not normalized.
MatrixLoss rol_loss(const SampleRepresentation& rep, const TargetMatrix& target,
                    const PairMask& pair_mask);

// Same loss on raw slots; normalization is part of the differentiated graph, so the
// gradient is with respect to the raw (pre-normalization) slots.
MatrixLoss rol_loss_raw(const Matrix& raw_slots, const SlotMask& mask, const TargetMatrix& target);

// Raw per-sample slots (2M x d, full availability) plus identity labels.
struct FeatureBatch {
  std::vector<Matrix> slots;
  std::vector<std::uint32_t> labels;
};

// Checks the PK layout: every identity appears exactly `instances` times and the batch
// holds `identities * instances` samples. Throws Error.
void check_pk_layout(std::span<const std::uint32_t> labels, int identities, int instances);

struct KdlTerms {
  double loss = 0.0;
  double d_pos = 0.0;  // ratio over the farthest positives
  double d_neg = 0.0;  // ratio over the nearest negatives
  double max_pos_combined = 0.0, max_pos_specific = 0.0, max_pos_shared = 0.0;
  double min_neg_combined = 0.0, min_neg_specific = 0.0, min_neg_shared = 0.0;
};

// Knowledge discrepancy loss for one anchor. Distances use the concatenation over all
// modalities of the specific slots, the shared slots, or both. Only the combined
// distances carry gradient; specific-only and shared-only distances are detached.
// Gradients (scaled by `scale`) are accumulated into `grads` when non-null.
// Throws Error("degenerate anchor") without a positive or a negative.
KdlTerms kdl_anchor_loss(const FeatureBatch& batch, std::size_t anchor,
                         std::vector<Matrix>* grads = nullptr, double scale = 1.0);

struct BatchLoss {
  double loss = 0.0;
  std::vector<Matrix> grads;  // one per sample, shaped like its input
  int valid_anchors = 0;
};

// Mean of kdl_anchor_loss over every anchor that has a positive and a negative.
BatchLoss kdl_loss(const FeatureBatch& batch);

// Batch-hard triplet loss on flat embeddings: mean over anchors of
// max(0, max_p d(a,p) - min_n d(a,n) + margin). Anchors lacking a positive or negative
// are skipped; throws Error when all are.
struct EmbeddingLoss {
  double loss = 0.0;
  std::vector<Vector> grads;
  int valid_anchors = 0;
};
EmbeddingLoss triplet_loss(std::span<const Vector> embeddings,
                           std::span<const std::uint32_t> labels, double margin);

// Label-smoothing cross-entropy averaged over one logit vector per modality.
// Target weight 1 - eps + eps/C, others eps/C. Throws Error on an out-of-range identity.
struct LogitLoss {
  double loss = 0.0;
  std::vector<Vector> grads;
};
LogitLoss label_smoothing_ce(std::span<const Vector> logits, std::uint32_t identity,
                             double epsilon);

double combine_mml(double rol, double kdl, double w1, double w2);

struct MmlTerms {
  double l_rol = 0.0;
  double l_kdl = 0.0;
  double l_mml = 0.0;
  std::vector<Matrix> grads;  // gradient of l_mml per sample
};

// ROL averaged over samples (through normalization) and KDL averaged over valid
// anchors, combined as w1 * ROL + w2 * KDL.
MmlTerms mml_loss(const FeatureBatch& batch, double w1, double w2);

}  // namespace anyreid
