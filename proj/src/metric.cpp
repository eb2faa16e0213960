#include "anyreid/metric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "anyreid/error.hpp"

namespace anyreid {
namespace {

constexpr auto kSlots = static_cast<Eigen::Index>(kNumSlots);
constexpr auto kMods = static_cast<Eigen::Index>(kNumModalities);

double sign(double x) { return (x > 0.0) - (x < 0.0); }

// Frobenius distance between two slot blocks, and the block difference.
double block_distance(const Matrix& a, const Matrix& b, Eigen::Index first, Eigen::Index rows) {
  return (a.middleRows(first, rows) - b.middleRows(first, rows)).norm();
}

// Accumulates scale * d||a - b|| into the gradients of a and b (zero at coincidence).
void add_distance_grad(const FeatureBatch& batch, std::size_t a, std::size_t b, double dist,
                       double scale, std::vector<Matrix>& grads) {
  if (dist <= 0.0 || scale == 0.0) return;
  const Matrix diff = (batch.slots[a] - batch.slots[b]) * (scale / dist);
  grads[a] += diff;
  grads[b] -= diff;
}

}  // namespace

TargetMatrix TargetMatrix::ideal() {
  TargetMatrix t{Matrix::Zero(kSlots, kSlots)};
  t.entries.topLeftCorner(kMods, kMods).setIdentity();
  t.entries.bottomRightCorner(kMods, kMods).setOnes();
  return t;
}

PairMask PairMask::from(const SlotMask& mask) {
  Eigen::VectorXd m(kSlots);
  for (Eigen::Index i = 0; i < kSlots; ++i) m(i) = mask[static_cast<std::size_t>(i)];
  return PairMask{m * m.transpose()};
}

MatrixLoss rol_loss(const SampleRepresentation& rep, const TargetMatrix& target,
                    const PairMask& pair_mask) {
  if (!rep.normalized()) throw Error("representation orthogonality loss needs normalized slots");
  const Matrix& u = rep.slots();
  const Matrix err = pair_mask.entries.cwiseProduct(u * u.transpose() - target.entries);
  MatrixLoss out;
  out.loss = err.squaredNorm();
  // err is symmetric, so both index positions contribute equally.
  out.grad = 4.0 * err * u;
  return out;
}

MatrixLoss rol_loss_raw(const Matrix& raw_slots, const SlotMask& mask,
                        const TargetMatrix& target) {
  if (raw_slots.rows() != kSlots) throw Error("slot matrix must have 2M rows");
  Matrix unit = Matrix::Zero(raw_slots.rows(), raw_slots.cols());
  Eigen::VectorXd norms = Eigen::VectorXd::Zero(kSlots);
  for (Eigen::Index k = 0; k < kSlots; ++k) {
    if (mask[static_cast<std::size_t>(k)] == 0) continue;
    norms(k) = raw_slots.row(k).norm();
    if (norms(k) < kDegenerateNorm) throw Error("degenerate feature");
    unit.row(k) = raw_slots.row(k) / norms(k);
  }
  const PairMask pm = PairMask::from(mask);
  const Matrix err = pm.entries.cwiseProduct(unit * unit.transpose() - target.entries);
  const Matrix grad_unit = 4.0 * err * unit;

  MatrixLoss out;
  out.loss = err.squaredNorm();
  out.grad = Matrix::Zero(raw_slots.rows(), raw_slots.cols());
  for (Eigen::Index k = 0; k < kSlots; ++k) {
    if (norms(k) == 0.0) continue;
    const auto g = grad_unit.row(k);
    out.grad.row(k) = (g - g.dot(unit.row(k)) * unit.row(k)) / norms(k);
  }
  return out;
}

void check_pk_layout(std::span<const std::uint32_t> labels, int identities, int instances) {
  if (identities <= 0 || instances <= 0) throw Error("P and K must be positive");
  if (labels.size() != static_cast<std::size_t>(identities) * static_cast<std::size_t>(instances))
    throw Error("batch size must equal P * K");
  std::map<std::uint32_t, int> counts;
  for (auto l : labels) ++counts[l];
  if (counts.size() != static_cast<std::size_t>(identities))
    throw Error("batch must contain exactly P identities");
  for (const auto& [_, c] : counts)
    if (c != instances) throw Error("every identity must appear exactly K times");
}

KdlTerms kdl_anchor_loss(const FeatureBatch& batch, std::size_t anchor, std::vector<Matrix>* grads,
                         double scale) {
  const std::size_t n = batch.slots.size();
  if (anchor >= n || batch.labels.size() != n) throw Error("anchor index out of range");
  const Matrix& a = batch.slots[anchor];

  constexpr double inf = std::numeric_limits<double>::infinity();
  KdlTerms t;
  t.max_pos_combined = t.max_pos_specific = t.max_pos_shared = -inf;
  t.min_neg_combined = t.min_neg_specific = t.min_neg_shared = inf;
  std::size_t hardest_pos = n;
  std::size_t hardest_neg = n;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == anchor) continue;
    const Matrix& b = batch.slots[j];
    const double sp = block_distance(a, b, 0, kMods);
    const double sh = block_distance(a, b, kMods, kMods);
    const double both = std::sqrt(sp * sp + sh * sh);
    if (batch.labels[j] == batch.labels[anchor]) {
      if (both > t.max_pos_combined) {
        t.max_pos_combined = both;
        hardest_pos = j;
      }
      t.max_pos_specific = std::max(t.max_pos_specific, sp);
      t.max_pos_shared = std::max(t.max_pos_shared, sh);
    } else {
      if (both < t.min_neg_combined) {
        t.min_neg_combined = both;
        hardest_neg = j;
      }
      t.min_neg_specific = std::min(t.min_neg_specific, sp);
      t.min_neg_shared = std::min(t.min_neg_shared, sh);
    }
  }
  if (hardest_pos == n || hardest_neg == n) throw Error("degenerate anchor");

  // Detached parts of each denominator.
  const double pos_rest = t.max_pos_specific + t.max_pos_shared + kKdlEpsilon;
  const double neg_rest = t.min_neg_specific + t.min_neg_shared + kKdlEpsilon;
  const double pos_den = t.max_pos_combined + pos_rest;
  const double neg_den = t.min_neg_combined + neg_rest;
  t.d_pos = t.max_pos_combined / pos_den;
  t.d_neg = t.min_neg_combined / neg_den;
  t.loss = std::abs(t.d_pos - 0.0) + std::abs(t.d_neg - 1.0);

  if (grads != nullptr) {
    const double g_pos = scale * sign(t.d_pos) * pos_rest / (pos_den * pos_den);
    const double g_neg = scale * sign(t.d_neg - 1.0) * neg_rest / (neg_den * neg_den);
    add_distance_grad(batch, anchor, hardest_pos, t.max_pos_combined, g_pos, *grads);
    add_distance_grad(batch, anchor, hardest_neg, t.min_neg_combined, g_neg, *grads);
  }
  return t;
}

namespace {

bool has_positive_and_negative(std::span<const std::uint32_t> labels, std::size_t anchor) {
  bool pos = false;
  bool neg = false;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (j == anchor) continue;
    (labels[j] == labels[anchor] ? pos : neg) = true;
  }
  return pos && neg;
}

}  // namespace

BatchLoss kdl_loss(const FeatureBatch& batch) {
  const std::size_t n = batch.slots.size();
  BatchLoss out;
  out.grads.reserve(n);
  for (const auto& s : batch.slots) out.grads.push_back(Matrix::Zero(s.rows(), s.cols()));
  std::vector<std::size_t> anchors;
  for (std::size_t a = 0; a < n; ++a)
    if (has_positive_and_negative(batch.labels, a)) anchors.push_back(a);
  if (anchors.empty()) throw Error("degenerate anchor");
  const double w = 1.0 / static_cast<double>(anchors.size());
  for (std::size_t a : anchors) out.loss += w * kdl_anchor_loss(batch, a, &out.grads, w).loss;
  out.valid_anchors = static_cast<int>(anchors.size());
  return out;
}

EmbeddingLoss triplet_loss(std::span<const Vector> embeddings,
                           std::span<const std::uint32_t> labels, double margin) {
  const std::size_t n = embeddings.size();
  if (labels.size() != n) throw Error("label count mismatch");
  EmbeddingLoss out;
  for (const auto& e : embeddings) out.grads.push_back(Vector::Zero(e.size()));

  struct Term {
    std::size_t anchor, pos, neg;
    double dp, dn;
  };
  std::vector<Term> terms;
  for (std::size_t a = 0; a < n; ++a) {
    double dp = -1.0;
    double dn = std::numeric_limits<double>::infinity();
    std::size_t p = n;
    std::size_t q = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double dist = (embeddings[a] - embeddings[j]).norm();
      if (labels[j] == labels[a]) {
        if (dist > dp) {
          dp = dist;
          p = j;
        }
      } else if (dist < dn) {
        dn = dist;
        q = j;
      }
    }
    if (p == n || q == n) continue;
    terms.push_back({a, p, q, dp, dn});
  }
  if (terms.empty()) throw Error("triplet loss: no anchor has both a positive and a negative");

  const double w = 1.0 / static_cast<double>(terms.size());
  for (const auto& t : terms) {
    const double hinge = t.dp - t.dn + margin;
    if (hinge <= 0.0) continue;
    out.loss += w * hinge;
    if (t.dp > 0.0) {
      const Vector g = (embeddings[t.anchor] - embeddings[t.pos]) * (w / t.dp);
      out.grads[t.anchor] += g;
      out.grads[t.pos] -= g;
    }
    if (t.dn > 0.0) {
      const Vector g = (embeddings[t.anchor] - embeddings[t.neg]) * (w / t.dn);
      out.grads[t.anchor] -= g;
      out.grads[t.neg] += g;
    }
  }
  out.valid_anchors = static_cast<int>(terms.size());
  return out;
}

LogitLoss label_smoothing_ce(std::span<const Vector> logits, std::uint32_t identity,
                             double epsilon) {
  if (logits.empty()) throw Error("no logits");
  LogitLoss out;
  const double w = 1.0 / static_cast<double>(logits.size());
  for (const Vector& z : logits) {
    const auto classes = z.size();
    if (static_cast<Eigen::Index>(identity) >= classes)
      throw Error("identity " + std::to_string(identity) + " out of range for " +
                  std::to_string(classes) + " classes");
    const double mx = z.maxCoeff();
    const double log_sum = mx + std::log((z.array() - mx).exp().sum());
    const Vector log_prob = z.array() - log_sum;
    Vector q = Vector::Constant(classes, epsilon / static_cast<double>(classes));
    q(identity) += 1.0 - epsilon;
    out.loss -= w * q.dot(log_prob);
    out.grads.push_back(w * (log_prob.array().exp().matrix() - q));
  }
  return out;
}

double combine_mml(double rol, double kdl, double w1, double w2) { return w1 * rol + w2 * kdl; }

MmlTerms mml_loss(const FeatureBatch& batch, double w1, double w2) {
  if (w1 < 0.0 || w2 < 0.0) throw Error("loss weights must be non-negative");
  const std::size_t n = batch.slots.size();
  if (n == 0) throw Error("empty batch");
  MmlTerms out;
  for (const auto& s : batch.slots) out.grads.push_back(Matrix::Zero(s.rows(), s.cols()));

  const TargetMatrix target = TargetMatrix::ideal();
  const SlotMask full = mask_for(ModalitySet::all());
  const double per_sample = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const MatrixLoss r = rol_loss_raw(batch.slots[i], full, target);
    out.l_rol += per_sample * r.loss;
    out.grads[i] += (w1 * per_sample) * r.grad;
  }
  const BatchLoss k = kdl_loss(batch);
  out.l_kdl = k.loss;
  for (std::size_t i = 0; i < n; ++i) out.grads[i] += w2 * k.grads[i];
  out.l_mml = combine_mml(out.l_rol, out.l_kdl, w1, w2);
  return out;
}

}  // namespace anyreid
