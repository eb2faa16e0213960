#pragma once

#include <span>
#include <vector>

#include "anyreid/repr.hpp"

namespace anyreid {

struct SimilarityBreakdown {
  double sim_specific = 0.0;
  double sim_shared = 0.0;
  double sim_total = 0.0;
  int valid_specific_pairs = 0;
  int valid_shared_pairs = 0;
};

// Specific similarity: dot products of same-modality specific slots where both sides
// are present, divided by the product of the two specific-mask sums.
double sim_specific(const SampleRepresentation& q, const SampleRepresentation& g);

// Shared similarity: mean of all cross-modality shared dot products over the valid
// (query-present, gallery-present) pairs.
double sim_shared(const SampleRepresentation& q, const SampleRepresentation& g);

// Average of the two components, with the pair counts.
SimilarityBreakdown sim_total(const SampleRepresentation& q, const SampleRepresentation& g);

// Scores q against every gallery entry. Work is split into contiguous shards across
// at most `max_threads` threads (0 reads ANYREID_THREADS, default 1); every output is
// computed independently, so results do not depend on the split.
std::vector<SimilarityBreakdown> score_gallery(const SampleRepresentation& q,
                                               std::span<const SampleRepresentation> gallery,
                                               unsigned max_threads = 0);

// Thread cap from ANYREID_THREADS (>= 1), or 1 when unset or invalid.
unsigned thread_cap_from_env();

}  // namespace anyreid
