#include "anyreid/train.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "anyreid/error.hpp"

namespace anyreid {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (identities_per_batch < 2) throw ConfigError("P must be at least 2");
  if (instances_per_identity < 2) throw ConfigError("K must be at least 2");
  if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(loss.w1 >= 0.0) || !(loss.w2 >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (!(loss.margin >= 0.0)) throw ConfigError("margin must be non-negative");
  if (!(loss.ce_epsilon >= 0.0 && loss.ce_epsilon < 1.0))
    throw ConfigError("ce_epsilon must lie in [0, 1)");
}

void write_log_row(const EpochLog& r, std::ostream& out) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.epoch, r.l_ce, r.l_tri,
                r.l_rol, r.l_kdl, r.l_mml, r.l_total);
  out << buf << '\n';
}

std::vector<std::vector<std::size_t>> pk_batches(std::span<const std::uint32_t> labels, int P,
                                                 int K, std::mt19937_64& rng) {
  std::map<std::uint32_t, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(i);

  std::vector<std::vector<std::vector<std::size_t>>> groups;  // per identity
  for (auto& [id, idx] : by_id) {
    std::shuffle(idx.begin(), idx.end(), rng);
    while (idx.size() < static_cast<std::size_t>(K)) {
      std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
      idx.push_back(idx[pick(rng)]);
    }
    std::vector<std::vector<std::size_t>> g;
    for (std::size_t s = 0; s + K <= idx.size(); s += K)
      g.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                     idx.begin() + static_cast<std::ptrdiff_t>(s + K));
    groups.push_back(std::move(g));
  }

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> avail;
  for (std::size_t i = 0; i < groups.size(); ++i) avail.push_back(i);
  while (avail.size() >= static_cast<std::size_t>(P)) {
    std::shuffle(avail.begin(), avail.end(), rng);
    std::vector<std::size_t> chosen(avail.begin(), avail.begin() + P);
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::size_t> batch;
    for (std::size_t id : chosen) {
      auto& g = groups[id];
      batch.insert(batch.end(), g.back().begin(), g.back().end());
      g.pop_back();
    }
    batches.push_back(std::move(batch));
    std::erase_if(avail, [&](std::size_t id) { return groups[id].empty(); });
  }
  return batches;
}

std::vector<std::uint32_t> class_labels(std::span<const GridSample> samples, int* num_classes) {
  std::map<std::uint32_t, std::uint32_t> index;
  for (const auto& s : samples) index.emplace(s.identity, 0);
  std::uint32_t next = 0;
  for (auto& [id, cls] : index) cls = next++;
  std::vector<std::uint32_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(index.at(s.identity));
  if (num_classes) *num_classes = static_cast<int>(index.size());
  return out;
}

TrainResult train(EncoderConfig encoder, std::span<const GridSample> samples,
                  const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (samples.empty()) throw Error("no training samples");
  const auto labels = class_labels(samples, &encoder.num_classes);
  if (encoder.num_classes < config.identities_per_batch)
    throw ConfigError("training split has fewer identities than P");

  TrainResult result{init_params(encoder, config.seed), {}, 0, {}};
  result.best_params = result.final_params;
  AdamOptimizer opt(result.final_params.tensors, config.adam);
  // Separate stream from init_params so batch order does not shift with model size.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  double best = 0.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches =
        pk_batches(labels, config.identities_per_batch, config.instances_per_identity, rng);
    if (batches.empty()) throw ConfigError("training split too small for one P x K batch");
    EpochLog row;
    row.epoch = epoch;
    for (const auto& b : batches) {
      std::vector<GridSample> batch;
      std::vector<std::uint32_t> batch_labels;
      for (std::size_t i : b) {
        batch.push_back(samples[i]);
        batch_labels.push_back(labels[i]);
      }
      const LossReport rep = total_loss(result.final_params, batch, batch_labels, config.loss);
      opt.step(result.final_params.tensors, rep.gradients);
      row.l_ce += rep.l_ce;
      row.l_tri += rep.l_tri;
      row.l_rol += rep.l_rol;
      row.l_kdl += rep.l_kdl;
      row.l_mml += rep.l_mml;
      row.l_total += rep.l_total;
    }
    const double n = static_cast<double>(batches.size());
    for (double* v : {&row.l_ce, &row.l_tri, &row.l_rol, &row.l_kdl, &row.l_mml, &row.l_total})
      *v /= n;
    if (epoch == 1 || row.l_total < best) {
      best = row.l_total;
      result.best_epoch = epoch;
      result.best_params = result.final_params;
    }
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

}  // namespace anyreid
