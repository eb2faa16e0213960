#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "anyreid/encoder.hpp"
#include "anyreid/error.hpp"
#include "anyreid/repr.hpp"

namespace anyreid {

struct SyntheticConfig {
  int num_identities = 100;
  int samples_per_identity = 8;
  int latent_dim = 16;
  double shared_strength = 0.7;
  double noise_std = 0.1;
  // Correlation between the per-modality content maps W_M (0: independent maps).
  double content_overlap = 0.5;
  std::uint64_t seed = 0;
  int num_cameras = 4;
  double test_fraction = 0.5;
  int num_patches = 16;
  int patch_dim = 48;

  // Throws ConfigError.
  void validate() const;
};

// All modality views of one capture.
struct GridSample {
  std::uint32_t identity = 0;
  std::uint32_t camera = 0;
  std::array<PatchGrid, kNumModalities> grids;
};

struct SyntheticDataset {
  std::vector<GridSample> train;
  std::vector<GridSample> test;
};

// Per identity a content latent c and per modality a style latent s; per modality fixed
// random render maps W_M and S_M, the W_M sharing a common component weighted by
// content_overlap. A modality view is
//   shared_strength * W_M c + (1 - shared_strength) * S_M s_M + noise,
// reshaped to n x p. Train and test hold disjoint identities. Deterministic in seed.
SyntheticDataset generate_dataset(const SyntheticConfig& cfg);

// --- Feature store ---------------------------------------------------------

enum class StoreErrc { io, bad_magic, bad_version, truncated, corrupt, inconsistent };

const char* to_string(StoreErrc code);

class StoreError : public Error {
 public:
  StoreError(StoreErrc code, const std::string& what) : Error(what), code_(code) {}
  StoreErrc code() const { return code_; }

 private:
  StoreErrc code_;
};

inline constexpr std::uint32_t kStoreVersion = 1;

// Little-endian layout: "MDFS", u32 version, u32 d, u32 modality count, u64 records;
// per record u32 identity, u32 camera, one mask byte per slot, then 2M*d f32 values in
// slot order (zeros for masked-out slots).
void write_store(const std::vector<LabeledSample>& samples, const std::filesystem::path& path);
std::vector<LabeledSample> read_store(const std::filesystem::path& path);

// --- Grid datasets ---------------------------------------------------------

// "MDGR", u32 version, u32 n, u32 p, u32 modality count, u64 samples; per sample u32
// identity, u32 camera, then M*n*p f64 values in modality order.
void write_grids(const std::vector<GridSample>& samples, const std::filesystem::path& path);
std::vector<GridSample> read_grids(const std::filesystem::path& path);

// UTF-8 "key = value" manifest, one entry per line, sorted by key.
void write_manifest(const std::map<std::string, std::string>& entries,
                    const std::filesystem::path& path);
std::map<std::string, std::string> read_manifest(const std::filesystem::path& path);
std::map<std::string, std::string> manifest_entries(const SyntheticConfig& cfg);

}  // namespace anyreid
