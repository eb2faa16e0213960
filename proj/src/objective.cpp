#include "anyreid/objective.hpp"

#include <cmath>
#include <string>

#include "anyreid/error.hpp"

namespace anyreid {
namespace {

constexpr auto kMods = static_cast<Eigen::Index>(kNumModalities);

std::vector<PatchGrid> flatten_grids(std::span<const GridSample> samples) {
  std::vector<PatchGrid> seqs;
  seqs.reserve(samples.size() * kNumModalities);
  for (const auto& s : samples)
    for (const auto& g : s.grids) seqs.push_back(g);
  return seqs;
}

// Row of the encoder output holding sample i, modality m, output o.
Eigen::Index output_row(const EncoderConfig& cfg, std::size_t i, std::size_t m, int o) {
  return static_cast<Eigen::Index>((i * kNumModalities + m) * cfg.outputs_per_sequence() + o);
}

// Raw 2M x d slot matrix of one sample.
Matrix sample_slots(const EncoderConfig& cfg, const Matrix& out, std::size_t i) {
  Matrix slots(kNumSlots, cfg.dim);
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const auto sp = output_row(cfg, i, m, 0);
    const auto sh = output_row(cfg, i, m, cfg.decoupled ? 1 : 0);
    slots.row(static_cast<Eigen::Index>(m)) = out.row(sp);
    slots.row(kMods + static_cast<Eigen::Index>(m)) = out.row(sh);
  }
  return slots;
}

// Row-major flattening: slot rows end to end.
Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

// Adds a gradient on a sample's 2M x d slots back onto encoder output rows.
void scatter_slot_grad(const EncoderConfig& cfg, const Matrix& grad, std::size_t i,
                       Matrix& d_out) {
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    d_out.row(output_row(cfg, i, m, 0)) += grad.row(static_cast<Eigen::Index>(m));
    d_out.row(output_row(cfg, i, m, cfg.decoupled ? 1 : 0)) +=
        grad.row(kMods + static_cast<Eigen::Index>(m));
  }
}

}  // namespace

LossReport total_loss(const EncoderParams& params, std::span<const GridSample> batch,
                      std::span<const std::uint32_t> labels, const LossConfig& config) {
  const EncoderConfig& cfg = params.config;
  if (cfg.num_classes <= 0) throw Error("total loss needs classifier heads");
  if (labels.size() != batch.size()) throw Error("label count does not match batch");
  if (batch.empty()) throw Error("empty batch");
  const std::size_t n = batch.size();
  const int d = cfg.dim;

  const auto seqs = flatten_grids(batch);
  EncoderPass pass(params, seqs);
  const Matrix& out = pass.outputs();
  Matrix d_out = Matrix::Zero(out.rows(), out.cols());

  LossReport report;
  report.gradients = params.tensors.zeros_like();
  const double per_sample = 1.0 / static_cast<double>(n);

  // Identity classification.
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Matrix> inputs;
    std::vector<std::string> heads;
    if (cfg.decoupled) {
      for (std::size_t m = 0; m < kNumModalities; ++m) {
        Matrix x(1, 2 * d);
        x.leftCols(d) = out.row(output_row(cfg, i, m, 0));
        x.rightCols(d) = out.row(output_row(cfg, i, m, 1));
        inputs.push_back(std::move(x));
        heads.push_back(std::string("head.") + modality_letter(kAllModalities[m]));
      }
    } else {
      Matrix x(1, kMods * d);
      for (std::size_t m = 0; m < kNumModalities; ++m)
        x.middleCols(static_cast<Eigen::Index>(m) * d, d) = out.row(output_row(cfg, i, m, 0));
      inputs.push_back(std::move(x));
      heads.emplace_back("head.fused");
    }
    std::vector<Vector> logits;
    for (std::size_t h = 0; h < inputs.size(); ++h) {
      const Matrix z = inputs[h] * params.tensors.at(heads[h] + ".weight") +
                       params.tensors.at(heads[h] + ".bias");
      logits.push_back(z.row(0).transpose());
    }
    const LogitLoss ce = label_smoothing_ce(logits, labels[i], config.ce_epsilon);
    report.l_ce += per_sample * ce.loss;
    for (std::size_t h = 0; h < inputs.size(); ++h) {
      const Matrix dz = per_sample * ce.grads[h].transpose();
      const Matrix& w = params.tensors.at(heads[h] + ".weight");
      report.gradients.at(heads[h] + ".weight").noalias() += inputs[h].transpose() * dz;
      report.gradients.at(heads[h] + ".bias") += dz;
      const Matrix dx = dz * w.transpose();
      if (cfg.decoupled) {
        d_out.row(output_row(cfg, i, h, 0)) += dx.leftCols(d);
        d_out.row(output_row(cfg, i, h, 1)) += dx.rightCols(d);
      } else {
        for (std::size_t m = 0; m < kNumModalities; ++m)
          d_out.row(output_row(cfg, i, m, 0)) += dx.middleCols(static_cast<Eigen::Index>(m) * d, d);
      }
    }
  }

  // Batch-hard triplet on the concatenated feature of each sample.
  FeatureBatch features;
  features.labels.assign(labels.begin(), labels.end());
  std::vector<Vector> embeddings;
  for (std::size_t i = 0; i < n; ++i) {
    features.slots.push_back(sample_slots(cfg, out, i));
    if (cfg.decoupled) {
      embeddings.push_back(flatten(features.slots.back()));
    } else {
      embeddings.push_back(flatten(Matrix(features.slots.back().topRows(kMods))));
    }
  }
  const EmbeddingLoss tri = triplet_loss(embeddings, features.labels, config.margin);
  report.l_tri = tri.loss;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Map<const Matrix> g(tri.grads[i].data(), cfg.decoupled ? kMods * 2 : kMods, d);
    if (cfg.decoupled) {
      scatter_slot_grad(cfg, g, i, d_out);
    } else {
      for (std::size_t m = 0; m < kNumModalities; ++m)
        d_out.row(output_row(cfg, i, m, 0)) += g.row(static_cast<Eigen::Index>(m));
    }
  }

  // Modality-aware metric learning.
  if (cfg.decoupled) {
    const MmlTerms mml = mml_loss(features, config.w1, config.w2);
    report.l_rol = mml.l_rol;
    report.l_kdl = mml.l_kdl;
    report.l_mml = mml.l_mml;
    for (std::size_t i = 0; i < n; ++i) scatter_slot_grad(cfg, mml.grads[i], i, d_out);
  }

  report.l_total = report.l_ce + report.l_tri + report.l_mml;
  if (!std::isfinite(report.l_total)) throw NumericalError("diverged: non-finite loss");
  pass.backward(d_out, report.gradients);
  return report;
}

std::vector<LabeledSample> extract_features(const EncoderParams& params,
                                            std::span<const GridSample> samples) {
  constexpr std::size_t kChunk = 64;
  const EncoderConfig& cfg = params.config;
  std::vector<LabeledSample> out;
  out.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const auto chunk = samples.subspan(begin, std::min(kChunk, samples.size() - begin));
    const auto seqs = flatten_grids(chunk);
    EncoderPass pass(params, seqs);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      std::vector<DecoupledFeature> feats;
      for (std::size_t m = 0; m < kNumModalities; ++m) {
        DecoupledFeature f;
        f.modality = kAllModalities[m];
        f.specific = pass.outputs().row(output_row(cfg, i, m, 0)).transpose();
        f.shared = pass.outputs().row(output_row(cfg, i, m, cfg.decoupled ? 1 : 0)).transpose();
        feats.push_back(std::move(f));
      }
      out.push_back({chunk[i].identity, chunk[i].camera,
                     normalize_slots(build_representation(feats, ModalitySet::all()))});
    }
  }
  return out;
}

}  // namespace anyreid
