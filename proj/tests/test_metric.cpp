#include <doctest.h>

#include <cmath>
#include <random>

#include "anyreid/error.hpp"
#include "anyreid/metric.hpp"
#include "support/fd.hpp"
#include "support/oracles.hpp"

using namespace anyreid;

namespace {

Matrix gaussian(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::vector<std::uint32_t> pk(int p, int k) {
  std::vector<std::uint32_t> l;
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < k; ++j) l.push_back(static_cast<std::uint32_t>(i));
  return l;
}

// Slots with chosen specific and shared offsets along disjoint axes.
Matrix offset_slots(double sp, double sh) {
  Matrix m = Matrix::Zero(6, 2);
  m(0, 0) = sp;
  m(3, 1) = sh;
  return m;
}

}  // namespace

TEST_SUITE("metric") {
  TEST_CASE("target and pair mask structure") {
    const auto a = TargetMatrix::ideal().entries;
    CHECK(a.topLeftCorner(3, 3) == Matrix::Identity(3, 3));
    CHECK(a.topRightCorner(3, 3).isZero(0.0));
    CHECK(a.bottomLeftCorner(3, 3).isZero(0.0));
    CHECK(a.bottomRightCorner(3, 3) == Matrix::Ones(3, 3));
    CHECK(a == a.transpose());
    CHECK(PairMask::from(mask_for(ModalitySet::all())).entries == Matrix::Ones(6, 6));
    const auto pm = PairMask::from(mask_for(*ModalitySet::parse("R"))).entries;
    CHECK(pm.sum() == 4.0);
    CHECK(pm(0, 3) == 1.0);
    CHECK(pm(1, 1) == 0.0);
  }

  TEST_CASE("ROL closed forms") {
    Matrix ideal = Matrix::Zero(6, 4);
    ideal(0, 0) = ideal(1, 1) = ideal(2, 2) = 1.0;
    for (int k = 3; k < 6; ++k) ideal(k, 3) = 1.0;
    const SlotMask full = mask_for(ModalitySet::all());
    const auto target = TargetMatrix::ideal();
    const auto pm = PairMask::from(full);
    CHECK(std::abs(rol_loss({ideal, full, true}, target, pm).loss) <= 1e-12);

    Matrix same = Matrix::Zero(6, 4);
    same.col(1).setOnes();
    CHECK(std::abs(rol_loss({same, full, true}, target, pm).loss - 24.0) <= 1e-9);
    CHECK(std::abs(rol_loss_raw(same * 7.0, full, target).loss - 24.0) <= 1e-9);
    CHECK(std::abs(oracle::rol(same, full) - 24.0) <= 1e-9);

    CHECK_THROWS_AS(rol_loss({same * 2.0, full, false}, target, pm), Error);
  }

  TEST_CASE("property: ROL matches the loop oracle, is non-negative, ignores the diagonal") {
    std::mt19937_64 rng(8);
    const auto target = TargetMatrix::ideal();
    for (int t = 0; t < 100; ++t) {
      const auto set = oracle::all_subsets()[static_cast<std::size_t>(t % 7)];
      const SlotMask mask = mask_for(set);
      Matrix raw = gaussian(rng, 6, 1 + t % 6);
      for (int k = 0; k < 6; ++k)
        if (!mask[k]) raw.row(k).setZero();
      const double l = rol_loss_raw(raw, mask, target).loss;
      CHECK(l >= 0.0);
      CHECK(l == doctest::Approx(oracle::rol(raw, mask)).epsilon(1e-12));
      const auto rep = normalize_slots(SampleRepresentation(raw, mask, false));
      const auto normalized = rol_loss(rep, target, PairMask::from(mask));
      CHECK(normalized.loss == doctest::Approx(l).epsilon(1e-12));
      // specific diagonal errors vanish for unit slots
      const Matrix v = rep.slots() * rep.slots().transpose();
      for (int m = 0; m < 3; ++m)
        if (mask[m]) CHECK(std::abs(v(m, m) - 1.0) < 1e-12);
    }
  }

  TEST_CASE("ROL gradient through normalization, d = 4") {
    std::mt19937_64 rng(9);
    const auto target = TargetMatrix::ideal();
    const SlotMask full = mask_for(ModalitySet::all());
    for (int t = 0; t < 5; ++t) {
      Matrix raw = gaussian(rng, 6, 4);
      std::vector<double*> xs;
      oracle::append_coords(raw, xs);
      std::vector<double> analytic;
      oracle::append_values(rol_loss_raw(raw, full, target).grad, analytic);
      const auto numeric = oracle::central_diff([&] { return oracle::rol(raw, full); }, xs);
      CHECK(oracle::rel_err(analytic, numeric) < 1e-4);
    }
  }

  TEST_CASE("KDL Pythagorean case") {
    FeatureBatch b;
    b.slots = {Matrix::Zero(6, 2), offset_slots(3, 4), offset_slots(6, 8)};
    b.labels = {0, 0, 1};
    const KdlTerms t = kdl_anchor_loss(b, 0);
    CHECK(t.max_pos_combined == doctest::Approx(5.0));
    CHECK(t.d_pos == doctest::Approx(5.0 / 12.0));
    CHECK(t.d_neg == doctest::Approx(5.0 / 12.0));
    CHECK(std::abs(t.loss - 1.0) <= 1e-9);
  }

  TEST_CASE("KDL degenerate anchors") {
    FeatureBatch b;
    b.slots = {offset_slots(1, 1), offset_slots(2, 2)};
    b.labels = {0, 1};
    CHECK_THROWS_WITH_AS(kdl_anchor_loss(b, 0), "degenerate anchor", Error);
    b.labels = {0, 0};
    CHECK_THROWS_WITH_AS(kdl_anchor_loss(b, 0), "degenerate anchor", Error);
    CHECK_THROWS_AS(kdl_loss(b), Error);
  }

  TEST_CASE("KDL detached branches get exactly zero gradient") {
    // Anchor at the origin. Positive 1 is the farthest by combined distance; positive 2
    // has the largest specific-only distance. Negative 3 is the nearest combined; negative
    // 4 has the smallest shared-only distance.
    FeatureBatch b;
    b.slots = {Matrix::Zero(6, 2), offset_slots(3, 4), offset_slots(4, 0.5),
               offset_slots(6, 1), offset_slots(9, 0.2)};
    b.labels = {0, 0, 0, 1, 1};
    std::vector<Matrix> grads(b.slots.size(), Matrix::Zero(6, 2));
    const KdlTerms t = kdl_anchor_loss(b, 0, &grads);
    CHECK(t.max_pos_specific == doctest::Approx(4.0));
    CHECK(t.min_neg_shared == doctest::Approx(0.2));
    CHECK(grads[2].isZero(0.0));
    CHECK(grads[4].isZero(0.0));
    CHECK_FALSE(grads[1].isZero(0.0));
    CHECK_FALSE(grads[3].isZero(0.0));
  }

  TEST_CASE("property: KDL gradient matches frozen-branch differences and stays in bounds") {
    std::mt19937_64 rng(10);
    for (int t = 0; t < 10; ++t) {
      FeatureBatch b;
      b.labels = pk(2, 2);
      for (int i = 0; i < 4; ++i) b.slots.push_back(gaussian(rng, 6, 4));
      const auto frozen = b.slots;
      const BatchLoss l = kdl_loss(b);
      CHECK(l.valid_anchors == 4);
      CHECK(l.loss > 0.0);
      CHECK(l.loss < 2.0);
      CHECK(l.loss == doctest::Approx(oracle::kdl_frozen(b.slots, frozen, b.labels)));
      std::vector<double*> xs;
      std::vector<double> analytic;
      for (auto& s : b.slots) oracle::append_coords(s, xs);
      for (const auto& g : l.grads) oracle::append_values(g, analytic);
      const auto numeric =
          oracle::central_diff([&] { return oracle::kdl_frozen(b.slots, frozen, b.labels); }, xs);
      CHECK(oracle::rel_err(analytic, numeric) < 1e-4);
    }
  }

  TEST_CASE("triplet closed forms") {
    // one dimension: anchor 0, positive at 1, negative at 3 -> satisfied
    std::vector<Vector> e = {Vector::Constant(1, 0.0), Vector::Constant(1, 1.0),
                             Vector::Constant(1, 3.0)};
    std::vector<std::uint32_t> l = {0, 0, 1};
    const auto sat = triplet_loss(std::span(e).first(3), l, 0.3);
    // anchor 0: 1 - 3 + .3 < 0; anchor 1: 1 - 2 + .3 < 0; anchor 2 has no positive
    CHECK(sat.loss == 0.0);
    CHECK(sat.valid_anchors == 2);

    std::vector<Vector> h = {Vector::Constant(1, 0.0), Vector::Constant(1, 2.0),
                             Vector::Constant(1, -1.0), Vector::Constant(1, -3.0)};
    std::vector<std::uint32_t> hl = {0, 0, 1, 1};
    // anchor 0: max_p 2, min_n 1 -> 1.3
    const auto one = triplet_loss(std::span(h).first(3), std::span(hl).first(3), 0.3);
    CHECK(one.valid_anchors == 2);
    // anchor 1: max_p 2, min_n 3 -> 0; mean over two anchors
    CHECK(one.loss == doctest::Approx(1.3 / 2.0));

    std::vector<std::uint32_t> same = {0, 0, 0};
    CHECK_THROWS_AS(triplet_loss(std::span(e).first(3), same, 0.3), Error);
  }

  TEST_CASE("triplet gradient") {
    std::mt19937_64 rng(12);
    const auto labels = pk(3, 2);
    std::vector<Vector> e;
    for (std::size_t i = 0; i < labels.size(); ++i) e.push_back(gaussian(rng, 5, 1).col(0));
    const auto l = triplet_loss(e, labels, 1.0);
    std::vector<double*> xs;
    std::vector<double> analytic;
    for (auto& v : e) oracle::append_coords(v, xs);
    for (const auto& g : l.grads) oracle::append_values(g, analytic);
    const auto numeric = oracle::central_diff([&] { return triplet_loss(e, labels, 1.0).loss; }, xs);
    CHECK(oracle::rel_err(analytic, numeric) < 1e-4);
  }

  TEST_CASE("label smoothing cross-entropy") {
    std::vector<Vector> uniform = {Vector::Zero(7)};
    CHECK(label_smoothing_ce(uniform, 3, 0.1).loss == doctest::Approx(std::log(7.0)));
    CHECK(label_smoothing_ce(uniform, 3, 0.0).loss == doctest::Approx(std::log(7.0)));

    Vector z(3);
    z << 2.0, 0.0, 0.0;
    const double lse = std::log(std::exp(2.0) + 2.0);
    const double q0 = 1.0 - 0.1 + 0.1 / 3.0;
    const double qo = 0.1 / 3.0;
    const double hand = -(q0 * (2.0 - lse) + 2.0 * qo * (0.0 - lse));
    std::vector<Vector> one = {z};
    CHECK(label_smoothing_ce(one, 0, 0.1).loss == doctest::Approx(hand).epsilon(1e-14));

    Vector sharp = Vector::Zero(4);
    sharp(1) = 60.0;
    std::vector<Vector> s = {sharp};
    CHECK(label_smoothing_ce(s, 1, 0.0).loss < 1e-20);

    // mean over modalities
    std::vector<Vector> two = {z, Vector::Zero(3)};
    CHECK(label_smoothing_ce(two, 0, 0.1).loss ==
          doctest::Approx((hand + std::log(3.0)) / 2.0).epsilon(1e-14));
    CHECK_THROWS_AS(label_smoothing_ce(one, 3, 0.1), Error);

    std::mt19937_64 rng(13);
    std::vector<Vector> logits;
    for (int m = 0; m < 3; ++m) logits.push_back(gaussian(rng, 6, 1).col(0));
    const auto l = label_smoothing_ce(logits, 4, 0.1);
    std::vector<double*> xs;
    std::vector<double> analytic;
    for (auto& v : logits) oracle::append_coords(v, xs);
    for (const auto& g : l.grads) oracle::append_values(g, analytic);
    const auto numeric =
        oracle::central_diff([&] { return label_smoothing_ce(logits, 4, 0.1).loss; }, xs);
    CHECK(oracle::rel_err(analytic, numeric) < 1e-4);
  }

  TEST_CASE("MML combination") {
    CHECK(combine_mml(2.0, 1.0, kDefaultRolWeight, kDefaultKdlWeight) == doctest::Approx(8.25));
    CHECK(combine_mml(4.0, 2.0, 1.5, 5.25) == doctest::Approx(2 * combine_mml(2.0, 1.0, 1.5, 5.25)));
    std::mt19937_64 rng(14);
    FeatureBatch b;
    b.labels = pk(2, 2);
    for (int i = 0; i < 4; ++i) b.slots.push_back(gaussian(rng, 6, 3));
    const auto zero = mml_loss(b, 0.0, 0.0);
    CHECK(zero.l_mml == 0.0);
    for (const auto& g : zero.grads) CHECK(g.isZero(0.0));
    const auto full = mml_loss(b, 1.5, 5.25);
    CHECK(full.l_mml == doctest::Approx(1.5 * full.l_rol + 5.25 * full.l_kdl));
    CHECK_THROWS_AS(mml_loss(b, -1.0, 0.0), Error);
  }

  TEST_CASE("PK layout check") {
    CHECK_NOTHROW(check_pk_layout(pk(3, 4), 3, 4));
    CHECK_THROWS_AS(check_pk_layout(pk(3, 4), 4, 3), Error);
    auto bad = pk(2, 2);
    bad[3] = 0;
    CHECK_THROWS_AS(check_pk_layout(bad, 2, 2), Error);
  }
}
