#include "anyreid/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "binary_io.hpp"

namespace anyreid {
namespace {

constexpr char kStoreMagic[] = "MDFS";
constexpr char kGridMagic[] = "MDGR";
constexpr std::uint32_t kGridVersion = 1;

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double std) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * dist(rng);
  return m;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (num_identities < 2) throw ConfigError("num_identities must be at least 2");
  if (samples_per_identity < 2) throw ConfigError("samples_per_identity must be at least 2");
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
  if (!(shared_strength >= 0.0 && shared_strength <= 1.0))
    throw ConfigError("shared_strength must lie in [0, 1]");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (!(content_overlap >= 0.0 && content_overlap <= 1.0))
    throw ConfigError("content_overlap must lie in [0, 1]");
  if (num_cameras < 1) throw ConfigError("num_cameras must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in (0, 1)");
  const int test_ids = static_cast<int>(std::lround(test_fraction * num_identities));
  if (test_ids < 1 || test_ids >= num_identities)
    throw ConfigError("test_fraction leaves an empty split");
  if (num_patches < 1 || patch_dim < 1) throw ConfigError("grid shape must be positive");
}

SyntheticDataset generate_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const Eigen::Index pixels = static_cast<Eigen::Index>(cfg.num_patches) * cfg.patch_dim;
  const double map_std = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));

  // Content maps share a common part so that one scene renders alike across spectra.
  const Matrix common = gaussian(rng, pixels, cfg.latent_dim, map_std);
  const double rho = cfg.content_overlap;
  std::array<Matrix, kNumModalities> content_maps;
  std::array<Matrix, kNumModalities> style_maps;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    content_maps[m] = std::sqrt(rho) * common +
                      std::sqrt(1.0 - rho) * gaussian(rng, pixels, cfg.latent_dim, map_std);
    style_maps[m] = gaussian(rng, pixels, cfg.latent_dim, map_std);
  }

  std::vector<std::uint32_t> order(static_cast<std::size_t>(cfg.num_identities));
  std::iota(order.begin(), order.end(), 0U);
  std::shuffle(order.begin(), order.end(), rng);
  const auto test_ids = static_cast<std::size_t>(std::lround(cfg.test_fraction * cfg.num_identities));
  const std::size_t train_ids = order.size() - test_ids;

  SyntheticDataset ds;
  std::normal_distribution<double> noise(0.0, 1.0);
  const double a = cfg.shared_strength;
  for (std::uint32_t id = 0; id < static_cast<std::uint32_t>(cfg.num_identities); ++id) {
    const Matrix content = gaussian(rng, cfg.latent_dim, 1, 1.0);
    std::array<Eigen::VectorXd, kNumModalities> clean;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      const Matrix style = gaussian(rng, cfg.latent_dim, 1, 1.0);
      clean[m] = a * (content_maps[m] * content) + (1.0 - a) * (style_maps[m] * style);
    }
    const bool in_train =
        std::find(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_ids), id) !=
        order.begin() + static_cast<std::ptrdiff_t>(train_ids);
    auto& split = in_train ? ds.train : ds.test;
    for (int j = 0; j < cfg.samples_per_identity; ++j) {
      GridSample s;
      s.identity = id;
      s.camera = static_cast<std::uint32_t>(j % cfg.num_cameras);
      for (std::size_t m = 0; m < kNumModalities; ++m) {
        Eigen::VectorXd pix = clean[m];
        if (cfg.noise_std > 0.0)
          for (Eigen::Index k = 0; k < pixels; ++k) pix(k) += cfg.noise_std * noise(rng);
        s.grids[m].modality = kAllModalities[m];
        s.grids[m].patches = Eigen::Map<const Matrix>(pix.data(), cfg.num_patches, cfg.patch_dim);
      }
      split.push_back(std::move(s));
    }
  }
  return ds;
}

const char* to_string(StoreErrc code) {
  switch (code) {
    case StoreErrc::io:
      return "io";
    case StoreErrc::bad_magic:
      return "bad_magic";
    case StoreErrc::bad_version:
      return "bad_version";
    case StoreErrc::truncated:
      return "truncated";
    case StoreErrc::corrupt:
      return "corrupt";
    case StoreErrc::inconsistent:
      return "inconsistent";
  }
  return "unknown";
}

void write_store(const std::vector<LabeledSample>& samples, const std::filesystem::path& path) {
  const Eigen::Index d = samples.empty() ? 0 : samples.front().representation.dim();
  io::ByteWriter w;
  w.raw({kStoreMagic, 4});
  w.u32(kStoreVersion);
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(kNumModalities));
  w.u64(samples.size());
  for (const auto& s : samples) {
    const auto& rep = s.representation;
    if (rep.dim() != d) throw StoreError(StoreErrc::inconsistent, "inconsistent slot dimension");
    w.u32(s.identity);
    w.u32(s.camera);
    for (auto bit : rep.mask()) w.u8(bit);
    const Matrix& slots = rep.slots();
    for (Eigen::Index i = 0; i < slots.size(); ++i) w.f32(static_cast<float>(slots.data()[i]));
  }
  w.save(path);
}

std::vector<LabeledSample> read_store(const std::filesystem::path& path) {
  auto r = io::ByteReader::load(path);
  if (r.remaining() < 4 || r.raw(4) != std::string_view(kStoreMagic, 4))
    throw StoreError(StoreErrc::bad_magic, "not a feature store: " + path.string());
  if (const auto v = r.u32(); v != kStoreVersion)
    throw StoreError(StoreErrc::bad_version, "unsupported store version " + std::to_string(v));
  const std::uint32_t d = r.u32();
  const std::uint32_t mods = r.u32();
  const std::uint64_t count = r.u64();
  if (mods != kNumModalities)
    throw StoreError(StoreErrc::corrupt, "store modality count does not match configuration");
  if (d == 0 && count > 0) throw StoreError(StoreErrc::corrupt, "zero slot dimension");

  std::vector<LabeledSample> out;
  const std::size_t record_bytes = 8 + kNumSlots + kNumSlots * static_cast<std::size_t>(d) * 4;
  if (count > r.remaining() / std::max<std::size_t>(record_bytes, 1))
    throw StoreError(StoreErrc::truncated, "truncated store");
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t identity = r.u32();
    const std::uint32_t camera = r.u32();
    SlotMask mask{};
    for (auto& bit : mask) bit = r.u8();
    Matrix slots(kNumSlots, d);
    for (Eigen::Index k = 0; k < slots.size(); ++k) slots.data()[k] = r.f32();
    bool unit = true;
    for (std::size_t k = 0; k < kNumSlots; ++k)
      if (mask[k] != 0 && std::abs(slots.row(static_cast<Eigen::Index>(k)).norm() - 1.0) >
                              kUnitNormTolerance)
        unit = false;
    try {
      out.push_back({identity, camera, SampleRepresentation(std::move(slots), mask, unit)});
    } catch (const Error& e) {
      throw StoreError(StoreErrc::corrupt,
                       "record " + std::to_string(i) + " is invalid: " + e.what());
    }
  }
  if (r.remaining() != 0) throw StoreError(StoreErrc::corrupt, "trailing bytes after records");
  return out;
}

void write_grids(const std::vector<GridSample>& samples, const std::filesystem::path& path) {
  const Eigen::Index n = samples.empty() ? 0 : samples.front().grids[0].patches.rows();
  const Eigen::Index p = samples.empty() ? 0 : samples.front().grids[0].patches.cols();
  io::ByteWriter w;
  w.raw({kGridMagic, 4});
  w.u32(kGridVersion);
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(static_cast<std::uint32_t>(p));
  w.u32(static_cast<std::uint32_t>(kNumModalities));
  w.u64(samples.size());
  for (const auto& s : samples) {
    w.u32(s.identity);
    w.u32(s.camera);
    for (const auto& g : s.grids) {
      if (g.patches.rows() != n || g.patches.cols() != p)
        throw StoreError(StoreErrc::inconsistent, "inconsistent grid shape");
      for (Eigen::Index k = 0; k < g.patches.size(); ++k) w.f64(g.patches.data()[k]);
    }
  }
  w.save(path);
}

std::vector<GridSample> read_grids(const std::filesystem::path& path) {
  auto r = io::ByteReader::load(path);
  if (r.remaining() < 4 || r.raw(4) != std::string_view(kGridMagic, 4))
    throw StoreError(StoreErrc::bad_magic, "not a grid dataset: " + path.string());
  if (const auto v = r.u32(); v != kGridVersion)
    throw StoreError(StoreErrc::bad_version, "unsupported grid version " + std::to_string(v));
  const std::uint32_t n = r.u32();
  const std::uint32_t p = r.u32();
  const std::uint32_t mods = r.u32();
  const std::uint64_t count = r.u64();
  if (mods != kNumModalities) throw StoreError(StoreErrc::corrupt, "modality count mismatch");
  const std::size_t record_bytes = 8 + kNumModalities * std::size_t{n} * p * 8;
  if (count > r.remaining() / std::max<std::size_t>(record_bytes, 1))
    throw StoreError(StoreErrc::truncated, "truncated store");
  std::vector<GridSample> out(count);
  for (auto& s : out) {
    s.identity = r.u32();
    s.camera = r.u32();
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      s.grids[m].modality = kAllModalities[m];
      s.grids[m].patches.resize(n, p);
      for (Eigen::Index k = 0; k < s.grids[m].patches.size(); ++k)
        s.grids[m].patches.data()[k] = r.f64();
    }
  }
  if (r.remaining() != 0) throw StoreError(StoreErrc::corrupt, "trailing bytes after records");
  return out;
}

void write_manifest(const std::map<std::string, std::string>& entries,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StoreError(StoreErrc::io, "cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
}

std::map<std::string, std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StoreError(StoreErrc::io, "cannot open " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw StoreError(StoreErrc::corrupt, "bad manifest line: " + line);
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> manifest_entries(const SyntheticConfig& cfg) {
  auto num = [](double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  };
  return {
      {"num_identities", std::to_string(cfg.num_identities)},
      {"samples_per_identity", std::to_string(cfg.samples_per_identity)},
      {"latent_dim", std::to_string(cfg.latent_dim)},
      {"shared_strength", num(cfg.shared_strength)},
      {"noise_std", num(cfg.noise_std)},
      {"content_overlap", num(cfg.content_overlap)},
      {"seed", std::to_string(cfg.seed)},
      {"num_cameras", std::to_string(cfg.num_cameras)},
      {"test_fraction", num(cfg.test_fraction)},
      {"num_patches", std::to_string(cfg.num_patches)},
      {"patch_dim", std::to_string(cfg.patch_dim)},
  };
}

}  // namespace anyreid
