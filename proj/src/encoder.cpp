#include "anyreid/encoder.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "anyreid/error.hpp"

namespace anyreid {
namespace {

constexpr double kLayerNormEps = 1e-5;

std::string block_key(int layer, const char* leaf) {
  return "block" + std::to_string(layer) + "." + leaf;
}

Matrix row_vector(int n, double value) { return Matrix::Constant(1, n, value); }

// ---------------------------------------------------------------------------
// Layer primitives. Activations are stacked rows: (sequences * tokens) x width.

void linear_forward(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& y) {
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
}

// dx = dy * w^T; dw += x^T * dy; db += colsum(dy)
void linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db,
                     Matrix* dx) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  if (dx != nullptr) dx->noalias() = dy * w.transpose();
}

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

void layer_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, Matrix& y,
                        LayerNormCache& cache) {
  const auto cols = static_cast<double>(x.cols());
  cache.xhat.resize(x.rows(), x.cols());
  cache.rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / cols;
    const auto centered = x.row(r).array() - mean;
    const double var = centered.square().sum() / cols;
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd(r) = rstd;
    cache.xhat.row(r) = centered * rstd;
  }
  y = cache.xhat.array().rowwise() * gamma.row(0).array();
  y.rowwise() += beta.row(0);
}

void layer_norm_backward(const Matrix& dy, const Matrix& gamma, const LayerNormCache& cache,
                         Matrix& dgamma, Matrix& dbeta, Matrix& dx) {
  const auto cols = static_cast<double>(dy.cols());
  dgamma.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
  dbeta.row(0) += dy.colwise().sum();
  dx.resize(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gamma.row(0));
    const double mean_d = dxhat.sum() / cols;
    const double mean_dx = dxhat.dot(cache.xhat.row(r)) / cols;
    dx.row(r) =
        cache.rstd(r) * (dxhat.array() - mean_d - cache.xhat.row(r).array() * mean_dx).matrix();
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------

struct BlockCache {
  Matrix x_in;
  LayerNormCache ln1;
  Matrix h1;
  Matrix qkv;
  std::vector<Matrix> probs;  // per (sequence, head): tokens x tokens
  Matrix attn;                // concatenated head outputs
  Matrix x_mid;
  LayerNormCache ln2;
  Matrix h2;
  Matrix pre_act;
  Matrix act;
};

}  // namespace

void EncoderConfig::validate() const {
  if (dim <= 0 || depth < 0 || heads <= 0 || num_patches <= 0 || patch_dim <= 0)
    throw ConfigError("encoder dimensions must be positive");
  if (dim % heads != 0) throw ConfigError("encoder dim must be divisible by heads");
  if (num_classes < 0) throw ConfigError("num_classes must be non-negative");
  if (!(weight_std >= 0.0) || !(token_std >= 0.0))
    throw ConfigError("initialization std must be non-negative");
}

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto normal = [&](int rows, int cols, double std) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * dist(rng);
    return m;
  };
  auto trunc_normal = [&](int rows, int cols, double std) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double z = dist(rng);
      while (std::abs(z) > 2.0) z = dist(rng);
      m.data()[i] = std * z;
    }
    return m;
  };

  const int d = config.dim;
  const int m = static_cast<int>(kNumModalities);
  EncoderParams params{config, {}};
  ParamSet& t = params.tensors;
  t.add("patch.weight", trunc_normal(config.patch_dim, d, config.weight_std));
  t.add("patch.bias", Matrix::Zero(1, d));
  if (config.decoupled) {
    t.add("token.specific", normal(m, d, config.token_std));
    t.add("token.shared", normal(m, d, config.token_std));
  } else {
    t.add("token.cls", normal(1, d, config.token_std));
  }
  t.add("pos", normal(config.sequence_length(), d, config.weight_std));
  for (int l = 0; l < config.depth; ++l) {
    t.add(block_key(l, "ln1.gamma"), row_vector(d, 1.0));
    t.add(block_key(l, "ln1.beta"), Matrix::Zero(1, d));
    t.add(block_key(l, "attn.qkv.weight"), trunc_normal(d, 3 * d, config.weight_std));
    t.add(block_key(l, "attn.qkv.bias"), Matrix::Zero(1, 3 * d));
    t.add(block_key(l, "attn.out.weight"), trunc_normal(d, d, config.weight_std));
    t.add(block_key(l, "attn.out.bias"), Matrix::Zero(1, d));
    t.add(block_key(l, "ln2.gamma"), row_vector(d, 1.0));
    t.add(block_key(l, "ln2.beta"), Matrix::Zero(1, d));
    t.add(block_key(l, "mlp.fc1.weight"), trunc_normal(d, 4 * d, config.weight_std));
    t.add(block_key(l, "mlp.fc1.bias"), Matrix::Zero(1, 4 * d));
    t.add(block_key(l, "mlp.fc2.weight"), trunc_normal(4 * d, d, config.weight_std));
    t.add(block_key(l, "mlp.fc2.bias"), Matrix::Zero(1, d));
  }
  t.add("final_ln.gamma", row_vector(d, 1.0));
  t.add("final_ln.beta", Matrix::Zero(1, d));
  if (config.num_classes > 0) {
    const int c = config.num_classes;
    if (config.decoupled) {
      for (Modality mod : kAllModalities) {
        const std::string prefix = std::string("head.") + modality_letter(mod);
        t.add(prefix + ".weight", trunc_normal(2 * d, c, config.weight_std));
        t.add(prefix + ".bias", Matrix::Zero(1, c));
      }
    } else {
      t.add("head.fused.weight", trunc_normal(m * d, c, config.weight_std));
      t.add("head.fused.bias", Matrix::Zero(1, c));
    }
  }
  return params;
}

struct EncoderPass::State {
  const EncoderParams* params = nullptr;
  std::vector<Modality> modalities;
  Matrix patches;  // (S*n) x p
  std::vector<BlockCache> blocks;
  Matrix x_final;
  LayerNormCache final_ln;
  Matrix normed;
  Matrix outputs;
  int sequences = 0;

  void forward_block(int layer, const Matrix& x, Matrix& out, BlockCache& c);
  void backward_block(int layer, const BlockCache& c, const Matrix& d_out, ParamSet& grads,
                      Matrix& d_in) const;
};

void EncoderPass::State::forward_block(int layer, const Matrix& x, Matrix& out, BlockCache& c) {
  const EncoderConfig& cfg = params->config;
  const ParamSet& t = params->tensors;
  const int d = cfg.dim;
  const int tokens = cfg.sequence_length();
  const int heads = cfg.heads;
  const int hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  c.x_in = x;
  layer_norm_forward(x, t.at(block_key(layer, "ln1.gamma")), t.at(block_key(layer, "ln1.beta")),
                     c.h1, c.ln1);
  linear_forward(c.h1, t.at(block_key(layer, "attn.qkv.weight")),
                 t.at(block_key(layer, "attn.qkv.bias")), c.qkv);

  c.attn.resize(x.rows(), d);
  c.probs.assign(static_cast<std::size_t>(sequences * heads), Matrix());
  for (int s = 0; s < sequences; ++s) {
    for (int h = 0; h < heads; ++h) {
      const auto q = c.qkv.block(s * tokens, h * hd, tokens, hd);
      const auto k = c.qkv.block(s * tokens, d + h * hd, tokens, hd);
      const auto v = c.qkv.block(s * tokens, 2 * d + h * hd, tokens, hd);
      Matrix& p = c.probs[static_cast<std::size_t>(s * heads + h)];
      if (cfg.identity_attention) {
        p = Matrix::Identity(tokens, tokens);
      } else {
        p.noalias() = scale * (q * k.transpose());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          const double mx = p.row(r).maxCoeff();
          p.row(r) = (p.row(r).array() - mx).exp();
          p.row(r) /= p.row(r).sum();
        }
      }
      c.attn.block(s * tokens, h * hd, tokens, hd).noalias() = p * v;
    }
  }
  Matrix projected;
  linear_forward(c.attn, t.at(block_key(layer, "attn.out.weight")),
                 t.at(block_key(layer, "attn.out.bias")), projected);
  c.x_mid = x + projected;

  layer_norm_forward(c.x_mid, t.at(block_key(layer, "ln2.gamma")),
                     t.at(block_key(layer, "ln2.beta")), c.h2, c.ln2);
  linear_forward(c.h2, t.at(block_key(layer, "mlp.fc1.weight")),
                 t.at(block_key(layer, "mlp.fc1.bias")), c.pre_act);
  c.act = c.pre_act.unaryExpr([](double v) { return gelu(v); });
  Matrix mlp;
  linear_forward(c.act, t.at(block_key(layer, "mlp.fc2.weight")),
                 t.at(block_key(layer, "mlp.fc2.bias")), mlp);
  out = c.x_mid + mlp;
}

void EncoderPass::State::backward_block(int layer, const BlockCache& c, const Matrix& d_out,
                                        ParamSet& grads, Matrix& d_in) const {
  const EncoderConfig& cfg = params->config;
  const ParamSet& t = params->tensors;
  const int d = cfg.dim;
  const int tokens = cfg.sequence_length();
  const int heads = cfg.heads;
  const int hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // MLP branch.
  Matrix d_act;
  linear_backward(c.act, t.at(block_key(layer, "mlp.fc2.weight")), d_out,
                  grads.at(block_key(layer, "mlp.fc2.weight")),
                  grads.at(block_key(layer, "mlp.fc2.bias")), &d_act);
  const Matrix d_pre = d_act.cwiseProduct(c.pre_act.unaryExpr([](double v) { return gelu_grad(v); }));
  Matrix d_h2;
  linear_backward(c.h2, t.at(block_key(layer, "mlp.fc1.weight")), d_pre,
                  grads.at(block_key(layer, "mlp.fc1.weight")),
                  grads.at(block_key(layer, "mlp.fc1.bias")), &d_h2);
  Matrix d_mid_ln;
  layer_norm_backward(d_h2, t.at(block_key(layer, "ln2.gamma")), c.ln2,
                      grads.at(block_key(layer, "ln2.gamma")),
                      grads.at(block_key(layer, "ln2.beta")), d_mid_ln);
  const Matrix d_mid = d_out + d_mid_ln;

  // Attention branch.
  Matrix d_attn;
  linear_backward(c.attn, t.at(block_key(layer, "attn.out.weight")), d_mid,
                  grads.at(block_key(layer, "attn.out.weight")),
                  grads.at(block_key(layer, "attn.out.bias")), &d_attn);
  Matrix d_qkv = Matrix::Zero(c.qkv.rows(), c.qkv.cols());
  for (int s = 0; s < sequences; ++s) {
    for (int h = 0; h < heads; ++h) {
      const auto q = c.qkv.block(s * tokens, h * hd, tokens, hd);
      const auto k = c.qkv.block(s * tokens, d + h * hd, tokens, hd);
      const auto v = c.qkv.block(s * tokens, 2 * d + h * hd, tokens, hd);
      const Matrix& p = c.probs[static_cast<std::size_t>(s * heads + h)];
      const auto d_o = d_attn.block(s * tokens, h * hd, tokens, hd);
      d_qkv.block(s * tokens, 2 * d + h * hd, tokens, hd).noalias() = p.transpose() * d_o;
      if (cfg.identity_attention) continue;
      const Matrix d_p = d_o * v.transpose();
      Matrix d_scores(tokens, tokens);
      for (Eigen::Index r = 0; r < tokens; ++r) {
        const double inner = d_p.row(r).dot(p.row(r));
        d_scores.row(r) = p.row(r).cwiseProduct((d_p.row(r).array() - inner).matrix());
      }
      d_scores *= scale;
      d_qkv.block(s * tokens, h * hd, tokens, hd).noalias() = d_scores * k;
      d_qkv.block(s * tokens, d + h * hd, tokens, hd).noalias() = d_scores.transpose() * q;
    }
  }
  Matrix d_h1;
  linear_backward(c.h1, t.at(block_key(layer, "attn.qkv.weight")), d_qkv,
                  grads.at(block_key(layer, "attn.qkv.weight")),
                  grads.at(block_key(layer, "attn.qkv.bias")), &d_h1);
  Matrix d_in_ln;
  layer_norm_backward(d_h1, t.at(block_key(layer, "ln1.gamma")), c.ln1,
                      grads.at(block_key(layer, "ln1.gamma")),
                      grads.at(block_key(layer, "ln1.beta")), d_in_ln);
  d_in = d_mid + d_in_ln;
}

EncoderPass::EncoderPass(const EncoderParams& params, std::span<const PatchGrid> grids)
    : state_(std::make_unique<State>()) {
  const EncoderConfig& cfg = params.config;
  const ParamSet& t = params.tensors;
  const int n = cfg.num_patches;
  const int d = cfg.dim;
  const int tokens = cfg.sequence_length();
  const int lead = tokens - n;
  State& st = *state_;
  st.params = &params;
  st.sequences = static_cast<int>(grids.size());

  st.patches.resize(static_cast<Eigen::Index>(grids.size()) * n, cfg.patch_dim);
  for (std::size_t s = 0; s < grids.size(); ++s) {
    const PatchGrid& g = grids[s];
    if (g.patches.rows() != n || g.patches.cols() != cfg.patch_dim)
      throw Error("patch grid shape does not match encoder config");
    if (!g.patches.allFinite()) throw Error("patch grid has non-finite entries");
    st.modalities.push_back(g.modality);
    st.patches.middleRows(static_cast<Eigen::Index>(s) * n, n) = g.patches;
  }
  Matrix embedded;
  linear_forward(st.patches, t.at("patch.weight"), t.at("patch.bias"), embedded);

  Matrix x(static_cast<Eigen::Index>(grids.size()) * tokens, d);
  const Matrix& pos = t.at("pos");
  for (int s = 0; s < st.sequences; ++s) {
    const auto mod = static_cast<Eigen::Index>(index_of(st.modalities[static_cast<std::size_t>(s)]));
    if (cfg.decoupled) {
      x.row(s * tokens) = t.at("token.specific").row(mod);
      x.row(s * tokens + 1) = t.at("token.shared").row(mod);
    } else {
      x.row(s * tokens) = t.at("token.cls").row(0);
    }
    x.middleRows(s * tokens + lead, n) = embedded.middleRows(s * n, n);
    x.middleRows(s * tokens, tokens) += pos;
  }

  st.blocks.resize(static_cast<std::size_t>(cfg.depth));
  for (int l = 0; l < cfg.depth; ++l) {
    Matrix next;
    st.forward_block(l, x, next, st.blocks[static_cast<std::size_t>(l)]);
    x = std::move(next);
  }
  st.x_final = std::move(x);
  layer_norm_forward(st.x_final, t.at("final_ln.gamma"), t.at("final_ln.beta"), st.normed,
                     st.final_ln);

  const int outs = cfg.outputs_per_sequence();
  st.outputs.resize(static_cast<Eigen::Index>(st.sequences) * outs, d);
  for (int s = 0; s < st.sequences; ++s)
    st.outputs.middleRows(s * outs, outs) = st.normed.middleRows(s * tokens, outs);
}

EncoderPass::~EncoderPass() = default;
EncoderPass::EncoderPass(EncoderPass&&) noexcept = default;
EncoderPass& EncoderPass::operator=(EncoderPass&&) noexcept = default;

const Matrix& EncoderPass::outputs() const { return state_->outputs; }

void EncoderPass::backward(const Matrix& d_outputs, ParamSet& grads) const {
  const State& st = *state_;
  const EncoderConfig& cfg = st.params->config;
  const ParamSet& t = st.params->tensors;
  const int n = cfg.num_patches;
  const int tokens = cfg.sequence_length();
  const int lead = tokens - n;
  const int outs = cfg.outputs_per_sequence();
  if (d_outputs.rows() != st.outputs.rows() || d_outputs.cols() != st.outputs.cols())
    throw Error("output gradient shape mismatch");

  Matrix d_normed = Matrix::Zero(st.normed.rows(), st.normed.cols());
  for (int s = 0; s < st.sequences; ++s)
    d_normed.middleRows(s * tokens, outs) = d_outputs.middleRows(s * outs, outs);
  Matrix d_x;
  layer_norm_backward(d_normed, t.at("final_ln.gamma"), st.final_ln, grads.at("final_ln.gamma"),
                      grads.at("final_ln.beta"), d_x);

  for (int l = cfg.depth - 1; l >= 0; --l) {
    Matrix d_prev;
    st.backward_block(l, st.blocks[static_cast<std::size_t>(l)], d_x, grads, d_prev);
    d_x = std::move(d_prev);
  }

  Matrix& d_pos = grads.at("pos");
  Matrix d_embedded(static_cast<Eigen::Index>(st.sequences) * n, cfg.dim);
  for (int s = 0; s < st.sequences; ++s) {
    const auto block = d_x.middleRows(s * tokens, tokens);
    d_pos += block;
    const auto mod = static_cast<Eigen::Index>(index_of(st.modalities[static_cast<std::size_t>(s)]));
    if (cfg.decoupled) {
      grads.at("token.specific").row(mod) += block.row(0);
      grads.at("token.shared").row(mod) += block.row(1);
    } else {
      grads.at("token.cls").row(0) += block.row(0);
    }
    d_embedded.middleRows(s * n, n) = block.middleRows(lead, n);
  }
  linear_backward(st.patches, t.at("patch.weight"), d_embedded, grads.at("patch.weight"),
                  grads.at("patch.bias"), nullptr);
}

DecoupledFeature encode(const PatchGrid& grid, const EncoderParams& params) {
  EncoderPass pass(params, std::span<const PatchGrid>(&grid, 1));
  const Matrix& out = pass.outputs();
  DecoupledFeature f;
  f.modality = grid.modality;
  f.specific = out.row(0).transpose();
  f.shared = out.row(params.config.decoupled ? 1 : 0).transpose();
  return f;
}

}  // namespace anyreid
