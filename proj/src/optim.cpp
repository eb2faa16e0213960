#include "anyreid/optim.hpp"

#include <cmath>

#include "anyreid/data.hpp"
#include "anyreid/error.hpp"
#include "binary_io.hpp"

namespace anyreid {
namespace {
constexpr char kCheckpointMagic[] = "MDRP";
}

AdamOptimizer::AdamOptimizer(const ParamSet& like, AdamConfig config)
    : config_(config), first_(like.zeros_like()), second_(like.zeros_like()) {
  if (!(config_.lr > 0.0)) throw ConfigError("learning rate must be positive");
}

void AdamOptimizer::step(ParamSet& params, const ParamSet& grads) {
  if (!params.same_layout(first_) || !grads.same_layout(first_))
    throw Error("gradient keys do not match parameter keys");
  if (!grads.all_finite()) throw NumericalError("diverged");
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads.value(i);
    Matrix& m = first_.value(i);
    Matrix& v = second_.value(i);
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    params.value(i).array() -=
        config_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.eps);
  }
}

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path) {
  const EncoderConfig& c = params.config;
  io::ByteWriter w;
  w.raw({kCheckpointMagic, 4});
  w.u32(kCheckpointVersion);
  for (int v : {c.dim, c.depth, c.heads, c.num_patches, c.patch_dim}) w.u32(static_cast<std::uint32_t>(v));
  w.u32(c.decoupled ? 1 : 0);
  w.u32(c.identity_attention ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.u32(static_cast<std::uint32_t>(kNumModalities));
  w.f64(c.weight_std);
  w.f64(c.token_std);
  w.u64(params.tensors.scalar_count());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const Matrix& m = params.tensors.value(i);
    for (Eigen::Index k = 0; k < m.size(); ++k) w.f64(m.data()[k]);
  }
  w.save(path);
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
  auto r = io::ByteReader::load(path);
  if (r.remaining() < 4 || r.raw(4) != std::string_view(kCheckpointMagic, 4))
    throw StoreError(StoreErrc::bad_magic, "not a checkpoint: " + path.string());
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw StoreError(StoreErrc::bad_version, "unsupported checkpoint version " + std::to_string(v));
  EncoderConfig c;
  c.dim = static_cast<int>(r.u32());
  c.depth = static_cast<int>(r.u32());
  c.heads = static_cast<int>(r.u32());
  c.num_patches = static_cast<int>(r.u32());
  c.patch_dim = static_cast<int>(r.u32());
  c.decoupled = r.u32() != 0;
  c.identity_attention = r.u32() != 0;
  c.num_classes = static_cast<int>(r.u32());
  if (r.u32() != kNumModalities)
    throw StoreError(StoreErrc::corrupt, "checkpoint modality count does not match");
  c.weight_std = r.f64();
  c.token_std = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw StoreError(StoreErrc::corrupt, std::string("checkpoint config invalid: ") + e.what());
  }
  EncoderParams params = init_params(c, 0);
  if (r.u64() != params.tensors.scalar_count())
    throw StoreError(StoreErrc::corrupt, "checkpoint parameter count does not match its config");
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    Matrix& m = params.tensors.value(i);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.f64();
  }
  if (r.remaining() != 0) throw StoreError(StoreErrc::corrupt, "trailing bytes in checkpoint");
  return params;
}

}  // namespace anyreid
