#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "anyreid/data.hpp"
#include "anyreid/encoder.hpp"
#include "anyreid/error.hpp"
#include "anyreid/optim.hpp"

using namespace anyreid;
namespace fs = std::filesystem;

namespace {

EncoderConfig small(bool decoupled = true) {
  EncoderConfig c;
  c.dim = 16;
  c.depth = 1;
  c.heads = 2;
  c.num_patches = 6;
  c.patch_dim = 5;
  c.decoupled = decoupled;
  return c;
}

PatchGrid random_grid(std::mt19937_64& rng, const EncoderConfig& c, Modality m) {
  std::normal_distribution<double> n(0.0, 1.0);
  PatchGrid g{m, Matrix(c.num_patches, c.patch_dim)};
  for (Eigen::Index i = 0; i < g.patches.size(); ++i) g.patches.data()[i] = n(rng);
  return g;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("anyreid_test_" + name);
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("output shapes") {
    EncoderConfig c;
    c.num_patches = 16;
    c.patch_dim = 12;
    c.dim = 64;
    const auto params = init_params(c, 1);
    std::mt19937_64 rng(1);
    const auto f = encode(random_grid(rng, c, Modality::N), params);
    CHECK(f.modality == Modality::N);
    CHECK(f.specific.size() == 64);
    CHECK(f.shared.size() == 64);
    CHECK(f.specific.allFinite());

    PatchGrid wrong{Modality::R, Matrix::Zero(15, 12)};
    CHECK_THROWS_AS(encode(wrong, params), Error);
  }

  TEST_CASE("config validation") {
    auto c = small();
    c.heads = 3;  // 16 not divisible by 3
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small();
    c.depth = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small();
    c.weight_std = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(small().sequence_length() == 8);
    CHECK(small(false).sequence_length() == 7);
  }

  TEST_CASE("initialization is deterministic in the seed") {
    const auto a = init_params(small(), 5);
    const auto b = init_params(small(), 5);
    const auto other = init_params(small(), 6);
    CHECK(a.tensors == b.tensors);
    CHECK_FALSE(a.tensors == other.tensors);
    CHECK(a.tensors.all_finite());
    // truncation at two standard deviations
    const Matrix& w = a.tensors.at("patch.weight");
    CHECK(w.cwiseAbs().maxCoeff() <= 2.0 * 0.02);
    CHECK(a.tensors.at("patch.bias").isZero(0.0));
    CHECK(a.tensors.at("block0.ln1.gamma").isOnes(0.0));
  }

  TEST_CASE("zero weight std: output ignores the patches") {
    auto c = small();
    c.weight_std = 0.0;
    const auto params = init_params(c, 2);
    CHECK(params.tensors.at("patch.weight").isZero(0.0));
    CHECK(params.tensors.at("block0.attn.qkv.weight").isZero(0.0));
    std::mt19937_64 rng(2);
    const auto f1 = encode(random_grid(rng, c, Modality::T), params);
    const auto f2 = encode(random_grid(rng, c, Modality::T), params);
    CHECK(f1.specific == f2.specific);
    CHECK(f1.shared == f2.shared);
  }

  TEST_CASE("shared backbone: equal tokens give equal outputs across modalities") {
    auto params = init_params(small(), 3);
    Matrix& sp = params.tensors.at("token.specific");
    Matrix& sh = params.tensors.at("token.shared");
    sp.row(2) = sp.row(0);
    sh.row(2) = sh.row(0);
    std::mt19937_64 rng(3);
    auto g = random_grid(rng, params.config, Modality::R);
    const auto a = encode(g, params);
    g.modality = Modality::T;
    const auto b = encode(g, params);
    CHECK(a.specific == b.specific);
    CHECK(a.shared == b.shared);
    g.modality = Modality::N;
    CHECK_FALSE(encode(g, params).specific == a.specific);
  }

  TEST_CASE("non-decoupled encoder returns its single output twice") {
    const auto params = init_params(small(false), 4);
    CHECK_FALSE(params.tensors.contains("token.specific"));
    std::mt19937_64 rng(4);
    const auto f = encode(random_grid(rng, params.config, Modality::R), params);
    CHECK(f.specific == f.shared);
  }

  TEST_CASE("batched pass matches per-grid encoding; sequences do not interact") {
    const auto params = init_params(small(), 7);
    std::mt19937_64 rng(7);
    std::vector<PatchGrid> grids;
    for (Modality m : kAllModalities) grids.push_back(random_grid(rng, params.config, m));
    const EncoderPass pass(params, grids);
    REQUIRE(pass.outputs().rows() == 6);
    for (std::size_t s = 0; s < grids.size(); ++s) {
      const auto f = encode(grids[s], params);
      const auto r = static_cast<Eigen::Index>(2 * s);
      CHECK((pass.outputs().row(r).transpose() - f.specific).norm() < 1e-12);
      CHECK((pass.outputs().row(r + 1).transpose() - f.shared).norm() < 1e-12);
    }
  }

  TEST_CASE("token independence under identity attention") {
    auto c = small();
    c.identity_attention = true;
    const auto params = init_params(c, 8);
    std::mt19937_64 rng(8);
    const std::vector<PatchGrid> grids = {random_grid(rng, c, Modality::N)};
    const EncoderPass pass(params, grids);

    Matrix d_spec = Matrix::Zero(2, c.dim);
    d_spec.row(0).setOnes();
    Matrix d_both = d_spec;
    d_both.row(1).setConstant(-0.5);

    ParamSet g_spec = params.tensors.zeros_like();
    pass.backward(d_spec, g_spec);
    CHECK(g_spec.at("token.shared").isZero(0.0));
    CHECK_FALSE(g_spec.at("token.specific").isZero(0.0));
    CHECK(g_spec.at("patch.weight").isZero(0.0));

    ParamSet g_both = params.tensors.zeros_like();
    pass.backward(d_both, g_both);
    CHECK(g_both.at("token.specific") == g_spec.at("token.specific"));
    CHECK_FALSE(g_both.at("token.shared").isZero(0.0));
  }

  TEST_CASE("Adam: zero gradient is a no-op, quadratic descends, NaN diverges") {
    ParamSet p;
    p.add("x", Matrix::Constant(1, 3, 2.0));
    AdamOptimizer adam(p, AdamConfig{});
    const ParamSet before = p;
    adam.step(p, p.zeros_like());
    CHECK(p == before);

    auto loss = [](const ParamSet& s) { return s.at("x").squaredNorm(); };
    for (int i = 0; i < 5; ++i) {
      const double l0 = loss(p);
      ParamSet g = p.zeros_like();
      g.at("x") = 2.0 * p.at("x");
      adam.step(p, g);
      CHECK(loss(p) < l0);
    }
    CHECK(adam.steps() == 6);

    // first step moves each coordinate by lr against the gradient sign
    ParamSet q;
    q.add("x", Matrix::Constant(1, 2, 1.0));
    AdamOptimizer fresh(q, AdamConfig{});
    ParamSet g = q.zeros_like();
    g.at("x") << 3.0, -0.25;
    fresh.step(q, g);
    CHECK(q.at("x")(0, 0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
    CHECK(q.at("x")(0, 1) == doctest::Approx(1.0 + 1e-3).epsilon(1e-9));

    const ParamSet saved = q;
    g.at("x")(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(fresh.step(q, g), doctest::Contains("diverged"), NumericalError);
    CHECK(q == saved);
  }

  TEST_CASE("identical Adam runs are bit-identical") {
    auto run = [] {
      auto params = init_params(small(), 11);
      AdamOptimizer adam(params.tensors, AdamConfig{});
      std::mt19937_64 rng(11);
      for (int i = 0; i < 3; ++i) {
        const std::vector<PatchGrid> grids = {random_grid(rng, params.config, Modality::R)};
        const EncoderPass pass(params, grids);
        ParamSet g = params.tensors.zeros_like();
        pass.backward(pass.outputs(), g);
        adam.step(params.tensors, g);
      }
      return params.tensors;
    };
    CHECK(run() == run());
  }

  TEST_CASE("checkpoint round trip and error paths") {
    auto c = small();
    c.num_classes = 4;
    const auto params = init_params(c, 12);
    const auto path = temp_file("ckpt.bin");
    save_checkpoint(params, path);
    const auto back = load_checkpoint(path);
    CHECK(back.config == params.config);
    CHECK(back.tensors == params.tensors);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    CHECK(bytes.substr(0, 4) == "MDRP");

    auto write = [&](const std::string& b) {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << b;
    };
    auto code_of = [&] {
      try {
        load_checkpoint(path);
      } catch (const StoreError& e) {
        return e.code();
      }
      FAIL("no error");
      return StoreErrc::io;
    };
    write(bytes.substr(0, bytes.size() - 3));
    CHECK(code_of() == StoreErrc::truncated);
    std::string bad = bytes;
    bad[0] = 'X';
    write(bad);
    CHECK(code_of() == StoreErrc::bad_magic);
    bad = bytes;
    bad[4] = 9;
    write(bad);
    CHECK(code_of() == StoreErrc::bad_version);
    write(bytes + "extra");
    CHECK(code_of() == StoreErrc::corrupt);
    fs::remove(path);
    CHECK(code_of() == StoreErrc::io);
  }
}
