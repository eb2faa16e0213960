#pragma once

#include <array>
#include <cstdint>
#include <span>

#include <Eigen/Dense>

#include "anyreid/modality.hpp"

namespace anyreid {

using Vector = Eigen::VectorXd;
// Row-major so each slot (and each token) is a contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SlotMatrix = Matrix;
using SlotMask = std::array<std::uint8_t, kNumSlots>;

inline constexpr double kDegenerateNorm = 1e-12;
inline constexpr double kUnitNormTolerance = 1e-6;

// Specific and shared embedding of one modality, as produced by the encoder.
struct DecoupledFeature {
  Modality modality = Modality::R;
  Vector specific;
  Vector shared;
};

// Fixed-layout sample representation: slots [sp_R, sp_N, sp_T, sh_R, sh_N, sh_T]
// plus the availability mask in the same layout. Immutable once built.
class SampleRepresentation {
 public:
  // Validates every invariant; throws Error on violation.
  SampleRepresentation(SlotMatrix slots, const SlotMask& mask, bool normalized);

  const SlotMatrix& slots() const { return slots_; }
  const SlotMask& mask() const { return mask_; }
  bool normalized() const { return normalized_; }
  Eigen::Index dim() const { return slots_.cols(); }

  auto slot(std::size_t k) const { return slots_.row(static_cast<Eigen::Index>(k)); }
  auto specific(Modality m) const { return slot(specific_slot(m)); }
  auto shared(Modality m) const { return slot(shared_slot(m)); }
  bool has(Modality m) const { return mask_[specific_slot(m)] != 0; }
  ModalitySet modalities() const;

 private:
  SlotMatrix slots_;
  SlotMask mask_;
  bool normalized_;
};

SlotMask mask_for(ModalitySet present);

// Places each feature at its modality's slots; absent modalities become zero slots
// with mask 0. Throws Error ("no modality", duplicates, dimension mismatch).
SampleRepresentation build_representation(std::span<const DecoupledFeature> features,
                                          ModalitySet modality_set);

// Rescales every present slot to unit L2 norm. Throws Error("degenerate feature")
// when a present slot has norm below 1e-12.
SampleRepresentation normalize_slots(const SampleRepresentation& rep);

// Reads the present modalities back out as features, in modality order.
std::vector<DecoupledFeature> features_of(const SampleRepresentation& rep);

// Zeroes the slots and mask entries of modalities outside `keep`.
SampleRepresentation restrict_to(const SampleRepresentation& rep, ModalitySet keep);

struct LabeledSample {
  std::uint32_t identity = 0;
  std::uint32_t camera = 0;
  SampleRepresentation representation;
};

}  // namespace anyreid
