#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "anyreid/data.hpp"
#include "anyreid/encoder.hpp"
#include "anyreid/objective.hpp"
#include "anyreid/optim.hpp"

namespace anyreid {

struct TrainConfig {
  LossConfig loss;
  AdamConfig adam;
  int epochs = 20;
  int identities_per_batch = 16;  // P
  int instances_per_identity = 4; // K
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

// Mean of each loss term over the batches of one epoch.
struct EpochLog {
  int epoch = 0;
  double l_ce = 0.0;
  double l_tri = 0.0;
  double l_rol = 0.0;
  double l_kdl = 0.0;
  double l_mml = 0.0;
  double l_total = 0.0;
};

inline constexpr const char* kTrainLogHeader = "epoch,l_ce,l_tri,l_rol,l_kdl,l_mml,l_total";
void write_log_row(const EpochLog& row, std::ostream& out);

// One epoch of P x K batches. Every identity's samples are shuffled, padded by
// resampling when there are fewer than K, and cut into groups of K; batches then draw
// P distinct identities among those with groups left. Leftover groups are dropped.
// Batches list sample indices identity-major.
std::vector<std::vector<std::size_t>> pk_batches(std::span<const std::uint32_t> labels, int P,
                                                 int K, std::mt19937_64& rng);

// Dense classifier indices for the identities of `samples`, by ascending identity.
std::vector<std::uint32_t> class_labels(std::span<const GridSample> samples, int* num_classes);

struct TrainResult {
  EncoderParams final_params;
  EncoderParams best_params;  // lowest epoch-mean l_total
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

// Trains from init_params(encoder with num_classes set from the data, seed).
// `on_epoch` sees each row as soon as it is complete. Throws NumericalError on divergence.
TrainResult train(EncoderConfig encoder, std::span<const GridSample> samples,
                  const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace anyreid
