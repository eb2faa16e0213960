#include "anyreid/repr.hpp"

#include <cmath>
#include <string>

#include "anyreid/error.hpp"

namespace anyreid {

SampleRepresentation::SampleRepresentation(SlotMatrix slots, const SlotMask& mask, bool normalized)
    : slots_(std::move(slots)), mask_(mask), normalized_(normalized) {
  if (slots_.rows() != static_cast<Eigen::Index>(kNumSlots))
    throw Error("representation must have " + std::to_string(kNumSlots) + " slots");
  if (slots_.cols() <= 0) throw Error("representation dimension must be positive");
  if (!slots_.allFinite()) throw Error("representation has non-finite entries");
  bool any = false;
  for (Modality m : kAllModalities) {
    if (mask_[specific_slot(m)] > 1 || mask_[shared_slot(m)] > 1)
      throw Error("mask entries must be 0 or 1");
    if (mask_[specific_slot(m)] != mask_[shared_slot(m)])
      throw Error("specific and shared mask of a modality must agree");
    any = any || mask_[specific_slot(m)] != 0;
  }
  if (!any) throw Error("no modality");
  for (std::size_t k = 0; k < kNumSlots; ++k) {
    auto row = slot(k);
    if (mask_[k] == 0 && !row.isZero(0.0)) throw Error("masked-out slot must be zero");
    if (normalized_ && mask_[k] != 0 && std::abs(row.norm() - 1.0) > kUnitNormTolerance)
      throw Error("normalized representation has a non-unit slot");
  }
}

ModalitySet SampleRepresentation::modalities() const {
  ModalitySet set;
  for (Modality m : kAllModalities)
    if (has(m)) set.insert(m);
  return set;
}

SlotMask mask_for(ModalitySet present) {
  SlotMask mask{};
  for (Modality m : present.members()) {
    mask[specific_slot(m)] = 1;
    mask[shared_slot(m)] = 1;
  }
  return mask;
}

SampleRepresentation build_representation(std::span<const DecoupledFeature> features,
                                          ModalitySet modality_set) {
  if (modality_set.empty()) throw Error("no modality");
  if (features.empty()) throw Error("no features supplied");
  const Eigen::Index d = features.front().specific.size();
  if (d <= 0) throw Error("feature dimension must be positive");

  SlotMatrix slots = SlotMatrix::Zero(kNumSlots, d);
  ModalitySet seen;
  for (const auto& f : features) {
    if (seen.contains(f.modality))
      throw Error(std::string("duplicate modality ") + modality_letter(f.modality));
    if (!modality_set.contains(f.modality))
      throw Error(std::string("feature for modality outside the set: ") +
                  modality_letter(f.modality));
    if (f.specific.size() != d || f.shared.size() != d)
      throw Error("dimension mismatch between features");
    seen.insert(f.modality);
    slots.row(specific_slot(f.modality)) = f.specific.transpose();
    slots.row(shared_slot(f.modality)) = f.shared.transpose();
  }
  if (!(seen == modality_set)) throw Error("features do not cover the modality set");
  return SampleRepresentation(std::move(slots), mask_for(modality_set), false);
}

SampleRepresentation normalize_slots(const SampleRepresentation& rep) {
  SlotMatrix slots = rep.slots();
  for (std::size_t k = 0; k < kNumSlots; ++k) {
    if (rep.mask()[k] == 0) continue;
    auto row = slots.row(static_cast<Eigen::Index>(k));
    const double norm = row.norm();
    if (norm < kDegenerateNorm) throw Error("degenerate feature");
    row /= norm;
  }
  return SampleRepresentation(std::move(slots), rep.mask(), true);
}

std::vector<DecoupledFeature> features_of(const SampleRepresentation& rep) {
  std::vector<DecoupledFeature> out;
  for (Modality m : rep.modalities().members())
    out.push_back({m, rep.specific(m).transpose(), rep.shared(m).transpose()});
  return out;
}

SampleRepresentation restrict_to(const SampleRepresentation& rep, ModalitySet keep) {
  SlotMatrix slots = rep.slots();
  SlotMask mask = rep.mask();
  for (Modality m : kAllModalities) {
    if (keep.contains(m)) continue;
    slots.row(specific_slot(m)).setZero();
    slots.row(shared_slot(m)).setZero();
    mask[specific_slot(m)] = 0;
    mask[shared_slot(m)] = 0;
  }
  return SampleRepresentation(std::move(slots), mask, rep.normalized());
}

}  // namespace anyreid
