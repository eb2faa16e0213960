#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "anyreid/data.hpp"
#include "support/oracles.hpp"

using namespace anyreid;
namespace fs = std::filesystem;

namespace {

SyntheticConfig tiny() {
  SyntheticConfig c;
  c.num_identities = 10;
  c.samples_per_identity = 4;
  c.latent_dim = 4;
  c.num_patches = 3;
  c.patch_dim = 4;
  return c;
}

bool same_grids(const std::vector<GridSample>& a, const std::vector<GridSample>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].identity != b[i].identity || a[i].camera != b[i].camera) return false;
    for (std::size_t m = 0; m < kNumModalities; ++m)
      if (a[i].grids[m].modality != b[i].grids[m].modality ||
          a[i].grids[m].patches != b[i].grids[m].patches)
        return false;
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("anyreid_test_" + name);
}

std::vector<LabeledSample> random_store(std::mt19937_64& rng, std::size_t count, int dim) {
  const auto subsets = oracle::all_subsets();
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto set = subsets[rng() % subsets.size()];
    out.push_back({static_cast<std::uint32_t>(rng() % 50), static_cast<std::uint32_t>(rng() % 4),
                   oracle::random_unit(rng, set, dim)});
  }
  return out;
}

StoreErrc store_error(const fs::path& p) {
  try {
    read_store(p);
  } catch (const StoreError& e) {
    return e.code();
  }
  FAIL("read_store accepted the file");
  return StoreErrc::io;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("config validation") {
    auto c = tiny();
    CHECK_NOTHROW(c.validate());
    c.num_identities = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.samples_per_identity = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.noise_std = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.shared_strength = 1.5;
    CHECK_THROWS_AS(generate_dataset(c), ConfigError);
    c = tiny();
    c.content_overlap = -0.2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("same seed gives the same dataset, other seeds differ") {
    const auto a = generate_dataset(tiny());
    const auto b = generate_dataset(tiny());
    CHECK(same_grids(a.train, b.train));
    CHECK(same_grids(a.test, b.test));
    auto c = tiny();
    c.seed = 1;
    CHECK_FALSE(same_grids(a.train, generate_dataset(c).train));
  }

  TEST_CASE("splits are identity-disjoint, sized and camera round-robin") {
    auto c = tiny();
    c.num_cameras = 3;
    const auto ds = generate_dataset(c);
    std::set<std::uint32_t> train, test;
    for (const auto& s : ds.train) train.insert(s.identity);
    for (const auto& s : ds.test) test.insert(s.identity);
    for (auto id : train) CHECK_FALSE(test.contains(id));
    CHECK(train.size() == 5);
    CHECK(test.size() == 5);
    CHECK(ds.train.size() == 20);
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
      CHECK(ds.train[i].camera == (i % 4) % 3);
      for (std::size_t m = 0; m < kNumModalities; ++m) {
        CHECK(ds.train[i].grids[m].modality == kAllModalities[m]);
        CHECK(ds.train[i].grids[m].patches.rows() == 3);
        CHECK(ds.train[i].grids[m].patches.cols() == 4);
      }
    }
  }

  TEST_CASE("shared strength 1 without noise: views depend on identity alone") {
    auto c = tiny();
    c.shared_strength = 1.0;
    c.noise_std = 0.0;
    const auto ds = generate_dataset(c);
    for (std::size_t i = 1; i < ds.train.size(); ++i)
      if (ds.train[i].identity == ds.train[i - 1].identity)
        for (std::size_t m = 0; m < kNumModalities; ++m)
          CHECK(ds.train[i].grids[m].patches == ds.train[i - 1].grids[m].patches);
    // full overlap makes every modality render the content identically
    c.content_overlap = 1.0;
    const auto same = generate_dataset(c);
    for (const auto& s : same.test) {
      CHECK((s.grids[0].patches - s.grids[1].patches).norm() < 1e-12);
      CHECK((s.grids[0].patches - s.grids[2].patches).norm() < 1e-12);
    }
  }

  TEST_CASE("shared strength 0: content plays no part") {
    auto c = tiny();
    c.shared_strength = 0.0;
    auto d = c;
    d.content_overlap = 1.0;
    CHECK(same_grids(generate_dataset(c).train, generate_dataset(d).train));
    c.shared_strength = d.shared_strength = 0.5;
    CHECK_FALSE(same_grids(generate_dataset(c).train, generate_dataset(d).train));
  }

  TEST_CASE("feature store round trip is bit-exact") {
    std::mt19937_64 rng(3);
    const auto samples = random_store(rng, 100, 8);
    const auto path = temp_file("store.mdfs");
    write_store(samples, path);
    const std::string bytes = slurp(path);
    CHECK(bytes.substr(0, 4) == "MDFS");
    // header 24 bytes, then per record 8 + 6 + 6 * 8 * 4
    CHECK(bytes.size() == 24 + 100 * (8 + 6 + 6 * 8 * 4));
    const auto back = read_store(path);
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].identity == samples[i].identity);
      CHECK(back[i].camera == samples[i].camera);
      CHECK(back[i].representation.mask() == samples[i].representation.mask());
      CHECK(back[i].representation.normalized());
      // f32 payload, so agreement to single precision
      CHECK((back[i].representation.slots() - samples[i].representation.slots())
                .cwiseAbs()
                .maxCoeff() < 1e-6);
    }
    const auto again = temp_file("store2.mdfs");
    write_store(back, again);
    CHECK(slurp(again) == bytes);
    fs::remove(again);
    fs::remove(path);
  }

  TEST_CASE("masked-out slots read back as zeros") {
    Matrix slots = Matrix::Zero(6, 2);
    slots(0, 0) = 1.0;
    slots(3, 1) = 1.0;
    const SlotMask mask = {1, 0, 0, 1, 0, 0};
    const std::vector<LabeledSample> one = {{7, 1, SampleRepresentation(slots, mask, true)}};
    const auto path = temp_file("mask.mdfs");
    write_store(one, path);
    const auto back = read_store(path);
    CHECK(back[0].representation.mask() == mask);
    for (int k : {1, 2, 4, 5}) CHECK(back[0].representation.slots().row(k).isZero(0.0));
    fs::remove(path);
  }

  TEST_CASE("store error codes") {
    std::mt19937_64 rng(4);
    const auto path = temp_file("bad.mdfs");
    write_store(random_store(rng, 5, 4), path);
    const std::string bytes = slurp(path);

    spit(path, bytes.substr(0, bytes.size() - 1));
    CHECK(store_error(path) == StoreErrc::truncated);
    spit(path, bytes.substr(0, 10));
    CHECK(store_error(path) == StoreErrc::truncated);
    std::string bad = bytes;
    bad[1] = 'Z';
    spit(path, bad);
    CHECK(store_error(path) == StoreErrc::bad_magic);
    bad = bytes;
    bad[4] = 2;
    spit(path, bad);
    CHECK(store_error(path) == StoreErrc::bad_version);
    spit(path, bytes + "x");
    CHECK(store_error(path) == StoreErrc::corrupt);
    // a mask byte that is neither 0 nor 1
    bad = bytes;
    bad[24 + 8] = 7;
    spit(path, bad);
    CHECK(store_error(path) == StoreErrc::corrupt);
    fs::remove(path);
    CHECK(store_error(path) == StoreErrc::io);

    auto mixed = random_store(rng, 2, 4);
    mixed.push_back(random_store(rng, 1, 5).front());
    CHECK_THROWS_AS(write_store(mixed, path), StoreError);
  }

  TEST_CASE("grid files and manifest round trip") {
    const auto ds = generate_dataset(tiny());
    const auto grids = temp_file("train.grids");
    write_grids(ds.train, grids);
    CHECK(same_grids(read_grids(grids), ds.train));
    const std::string bytes = slurp(grids);
    spit(grids, bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS_AS(read_grids(grids), StoreError);
    fs::remove(grids);

    auto entries = manifest_entries(tiny());
    CHECK(entries.at("seed") == "0");
    CHECK(entries.contains("shared_strength"));
    CHECK(entries.contains("content_overlap"));
    const auto manifest = temp_file("manifest.txt");
    write_manifest(entries, manifest);
    CHECK(read_manifest(manifest) == entries);
    fs::remove(manifest);
  }
}
