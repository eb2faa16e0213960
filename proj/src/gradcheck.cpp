#include "anyreid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "anyreid/error.hpp"
#include "anyreid/metric.hpp"
#include "anyreid/objective.hpp"

namespace anyreid {
namespace {

constexpr auto kMods = static_cast<Eigen::Index>(kNumModalities);
constexpr auto kSlots = static_cast<Eigen::Index>(kNumSlots);

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double std = 1.0) {
  std::normal_distribution<double> dist(0.0, std);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

std::vector<std::uint32_t> pk_labels(int identities, int instances) {
  std::vector<std::uint32_t> out;
  for (int p = 0; p < identities; ++p)
    for (int k = 0; k < instances; ++k) out.push_back(static_cast<std::uint32_t>(p));
  return out;
}

template <typename Range>
std::vector<double*> coords_of(Range& mats) {
  std::vector<double*> out;
  for (auto& m : mats)
    for (Eigen::Index k = 0; k < m.size(); ++k) out.push_back(m.data() + k);
  return out;
}

template <typename Range>
Vector flatten_all(const Range& mats) {
  Eigen::Index total = 0;
  for (const auto& m : mats) total += m.size();
  Vector v(total);
  Eigen::Index at = 0;
  for (const auto& m : mats) {
    v.segment(at, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    at += m.size();
  }
  return v;
}

SuiteResult finish(std::string name, Vector analytic, const Vector& numeric, double tol,
                   const GradcheckOptions& opt) {
  if (opt.corrupt == name && analytic.size() > 0) analytic[0] += 0.1 * (analytic.norm() + 1.0);
  SuiteResult r;
  r.name = std::move(name);
  r.tolerance = tol;
  r.max_rel_error = relative_error(analytic, numeric);
  r.passed = r.max_rel_error < tol;
  return r;
}

SuiteResult check_rol(std::mt19937_64& rng, const GradcheckOptions& opt) {
  const auto target = TargetMatrix::ideal();
  double worst = 0.0;
  SuiteResult r;
  for (std::string_view set : {"RNT", "RT", "N"}) {
    const SlotMask mask = mask_for(*ModalitySet::parse(set));
    Matrix slots = gaussian(rng, kSlots, 4);
    for (Eigen::Index k = 0; k < kSlots; ++k)
      if (mask[static_cast<std::size_t>(k)] == 0) slots.row(k).setZero();
    std::vector<double*> coords;
    for (Eigen::Index k = 0; k < kSlots; ++k)
      if (mask[static_cast<std::size_t>(k)] != 0)
        for (Eigen::Index c = 0; c < slots.cols(); ++c) coords.push_back(&slots(k, c));
    const Matrix grad = rol_loss_raw(slots, mask, target).grad;
    Vector analytic(static_cast<Eigen::Index>(coords.size()));
    Eigen::Index at = 0;
    for (Eigen::Index k = 0; k < kSlots; ++k)
      if (mask[static_cast<std::size_t>(k)] != 0)
        for (Eigen::Index c = 0; c < slots.cols(); ++c) analytic[at++] = grad(k, c);
    const Vector numeric = numeric_gradient(
        [&] { return rol_loss_raw(slots, mask, target).loss; }, coords, opt.step);
    r = finish("rol", analytic, numeric, kLossGradTolerance, opt);
    worst = std::max(worst, r.max_rel_error);
  }
  r.max_rel_error = worst;
  r.passed = worst < r.tolerance;
  return r;
}

double block_distance(const Matrix& a, const Matrix& b, Eigen::Index first) {
  return (a.middleRows(first, kMods) - b.middleRows(first, kMods)).norm();
}

// KDL over the batch with the specific-only and shared-only distances held at the values
// they had in `frozen_from`. Its true gradient is what the detached loss reports.
double frozen_kdl(const FeatureBatch& live, const FeatureBatch& frozen_from) {
  const std::size_t n = live.slots.size();
  double total = 0.0;
  int anchors = 0;
  for (std::size_t a = 0; a < n; ++a) {
    double pc = -1.0, ps = -1.0, ph = -1.0;
    double nc = 1e300, ns = 1e300, nh = 1e300;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double sp = block_distance(frozen_from.slots[a], frozen_from.slots[j], 0);
      const double sh = block_distance(frozen_from.slots[a], frozen_from.slots[j], kMods);
      const double c = std::hypot(block_distance(live.slots[a], live.slots[j], 0),
                                  block_distance(live.slots[a], live.slots[j], kMods));
      if (live.labels[j] == live.labels[a]) {
        pc = std::max(pc, c);
        ps = std::max(ps, sp);
        ph = std::max(ph, sh);
      } else {
        nc = std::min(nc, c);
        ns = std::min(ns, sp);
        nh = std::min(nh, sh);
      }
    }
    if (pc < 0.0 || nc > 1e299) continue;
    const double dp = pc / (pc + ps + ph + kKdlEpsilon);
    const double dn = nc / (nc + ns + nh + kKdlEpsilon);
    total += std::abs(dp) + std::abs(dn - 1.0);
    ++anchors;
  }
  return total / anchors;
}

// Samples that reach an anchor only through detached distances must get no gradient.
std::string detached_leaks(const FeatureBatch& batch) {
  const std::size_t n = batch.slots.size();
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<Matrix> grads;
    for (const auto& s : batch.slots) grads.push_back(Matrix::Zero(s.rows(), s.cols()));
    kdl_anchor_loss(batch, a, &grads);
    std::size_t hp = n, hn = n;
    double bp = -1.0, bn = 1e300;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double c = std::hypot(block_distance(batch.slots[a], batch.slots[j], 0),
                                  block_distance(batch.slots[a], batch.slots[j], kMods));
      if (batch.labels[j] == batch.labels[a]) {
        if (c > bp) bp = c, hp = j;
      } else if (c < bn) {
        bn = c, hn = j;
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a || j == hp || j == hn) continue;
      if ((grads[j].array() != 0.0).any())
        return "anchor " + std::to_string(a) + " leaks gradient into sample " + std::to_string(j);
    }
  }
  return {};
}

SuiteResult check_kdl(std::mt19937_64& rng, const GradcheckOptions& opt) {
  FeatureBatch batch;
  batch.labels = pk_labels(2, 2);
  for (std::size_t i = 0; i < batch.labels.size(); ++i) batch.slots.push_back(gaussian(rng, kSlots, 4));
  const FeatureBatch frozen = batch;
  const BatchLoss loss = kdl_loss(batch);
  auto coords = coords_of(batch.slots);
  const Vector numeric =
      numeric_gradient([&] { return frozen_kdl(batch, frozen); }, coords, opt.step);
  SuiteResult r = finish("kdl", flatten_all(loss.grads), numeric, kLossGradTolerance, opt);
  if (auto leak = detached_leaks(batch); !leak.empty()) {
    r.passed = false;
    r.detail = leak;
  }
  return r;
}

SuiteResult check_triplet(std::mt19937_64& rng, const GradcheckOptions& opt) {
  const auto labels = pk_labels(4, 2);
  std::vector<Vector> emb;
  for (std::size_t i = 0; i < labels.size(); ++i) emb.push_back(gaussian(rng, 5, 1).col(0));
  constexpr double margin = 1.0;  // keeps most hinges active
  const EmbeddingLoss loss = triplet_loss(emb, labels, margin);
  auto coords = coords_of(emb);
  const Vector numeric =
      numeric_gradient([&] { return triplet_loss(emb, labels, margin).loss; }, coords, opt.step);
  return finish("triplet", flatten_all(loss.grads), numeric, kLossGradTolerance, opt);
}

SuiteResult check_ce(std::mt19937_64& rng, const GradcheckOptions& opt) {
  std::vector<Vector> logits;
  for (std::size_t m = 0; m < kNumModalities; ++m) logits.push_back(gaussian(rng, 5, 1, 2.0).col(0));
  const LogitLoss loss = label_smoothing_ce(logits, 2, kDefaultCeEpsilon);
  auto coords = coords_of(logits);
  const Vector numeric = numeric_gradient(
      [&] { return label_smoothing_ce(logits, 2, kDefaultCeEpsilon).loss; }, coords, opt.step);
  return finish("ce", flatten_all(loss.grads), numeric, kLossGradTolerance, opt);
}

SuiteResult check_end_to_end(std::mt19937_64& rng, const GradcheckOptions& opt) {
  SuiteResult worst;
  for (bool decoupled : {true, false}) {
    EncoderConfig cfg;
    cfg.dim = 16;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.num_patches = 6;
    cfg.patch_dim = 5;
    cfg.decoupled = decoupled;
    cfg.num_classes = 3;
    cfg.weight_std = 0.3;
    cfg.token_std = 0.3;
    EncoderParams params = init_params(cfg, rng());
    const auto labels = pk_labels(3, 2);
    std::vector<GridSample> batch;
    for (std::uint32_t id : labels) {
      GridSample s;
      s.identity = id;
      for (std::size_t m = 0; m < kNumModalities; ++m)
        s.grids[m] = {kAllModalities[m], gaussian(rng, cfg.num_patches, cfg.patch_dim)};
      batch.push_back(std::move(s));
    }
    // The discrepancy term is left out: its detached branches make it a
    // pseudo-gradient, checked on its own in the kdl suite.
    LossConfig loss;
    loss.w2 = 0.0;
    const LossReport rep = total_loss(params, batch, labels, loss);
    std::vector<double*> coords;
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      Matrix& m = params.tensors.value(i);
      for (Eigen::Index k = 0; k < m.size(); ++k) coords.push_back(m.data() + k);
    }
    Vector analytic(static_cast<Eigen::Index>(coords.size()));
    for (std::size_t k = 0; k < coords.size(); ++k)
      analytic[static_cast<Eigen::Index>(k)] = rep.gradients.scalar(k);
    const Vector numeric = numeric_gradient(
        [&] { return total_loss(params, batch, labels, loss).l_total; }, coords, opt.step);
    SuiteResult r = finish("end_to_end", analytic, numeric, kEndToEndGradTolerance, opt);
    if (r.max_rel_error >= worst.max_rel_error) worst = r;
  }
  return worst;
}

}  // namespace

double relative_error(const Vector& analytic, const Vector& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
  return (analytic - numeric).norm() / scale;
}

Vector numeric_gradient(const std::function<double()>& f, std::span<double* const> coords,
                        double step) {
  Vector g(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t k = 0; k < coords.size(); ++k) {
    double& x = *coords[k];
    const double saved = x;
    x = saved + step;
    const double up = f();
    x = saved - step;
    const double down = f();
    x = saved;
    g[static_cast<Eigen::Index>(k)] = (up - down) / (2.0 * step);
  }
  return g;
}

std::vector<SuiteResult> run_gradcheck(const GradcheckOptions& options) {
  if (!options.corrupt.empty() &&
      std::find(kGradcheckSuites.begin(), kGradcheckSuites.end(), options.corrupt) ==
          kGradcheckSuites.end())
    throw ConfigError("unknown gradcheck suite '" + options.corrupt + "'");
  std::mt19937_64 rng(options.seed);
  std::vector<SuiteResult> out;
  out.push_back(check_rol(rng, options));
  out.push_back(check_kdl(rng, options));
  out.push_back(check_triplet(rng, options));
  out.push_back(check_ce(rng, options));
  out.push_back(check_end_to_end(rng, options));
  return out;
}

}  // namespace anyreid
