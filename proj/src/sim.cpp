#include "anyreid/sim.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <thread>

namespace anyreid {
namespace {

using Mat3 = Eigen::Matrix<double, kNumModalities, kNumModalities>;
using Vec3 = Eigen::Matrix<double, kNumModalities, 1>;

Vec3 shared_mask(const SampleRepresentation& r) {
  Vec3 m;
  for (Modality mod : kAllModalities) m(index_of(mod)) = r.mask()[shared_slot(mod)];
  return m;
}

int specific_count(const SampleRepresentation& r) {
  int n = 0;
  for (Modality m : kAllModalities) n += r.mask()[specific_slot(m)];
  return n;
}

}  // namespace

double sim_specific(const SampleRepresentation& q, const SampleRepresentation& g) {
  double sum = 0.0;
  for (Modality m : kAllModalities) {
    if (q.has(m) && g.has(m)) sum += q.specific(m).dot(g.specific(m));
  }
  return sum / static_cast<double>(specific_count(q) * specific_count(g));
}

double sim_shared(const SampleRepresentation& q, const SampleRepresentation& g) {
  const auto sh_q = q.slots().bottomRows(kNumModalities);
  const auto sh_g = g.slots().bottomRows(kNumModalities);
  const Mat3 pairwise = sh_q * sh_g.transpose();
  const Mat3 pair_mask = shared_mask(q) * shared_mask(g).transpose();
  return pairwise.cwiseProduct(pair_mask).sum() / pair_mask.sum();
}

SimilarityBreakdown sim_total(const SampleRepresentation& q, const SampleRepresentation& g) {
  SimilarityBreakdown out;
  out.sim_specific = sim_specific(q, g);
  out.sim_shared = sim_shared(q, g);
  out.sim_total = (out.sim_specific + out.sim_shared) / 2.0;
  for (Modality m : kAllModalities)
    out.valid_specific_pairs += (q.has(m) && g.has(m)) ? 1 : 0;
  out.valid_shared_pairs =
      static_cast<int>(q.modalities().size() * g.modalities().size());
  return out;
}

unsigned thread_cap_from_env() {
  const char* raw = std::getenv("ANYREID_THREADS");
  if (raw == nullptr) return 1;
  unsigned value = 0;
  const char* end = raw + std::strlen(raw);
  auto [ptr, ec] = std::from_chars(raw, end, value);
  if (ec != std::errc{} || ptr != end || value == 0) return 1;
  return value;
}

std::vector<SimilarityBreakdown> score_gallery(const SampleRepresentation& q,
                                               std::span<const SampleRepresentation> gallery,
                                               unsigned max_threads) {
  std::vector<SimilarityBreakdown> out(gallery.size());
  if (gallery.empty()) return out;

  const unsigned cap = max_threads == 0 ? thread_cap_from_env() : max_threads;
  const std::size_t shards = std::min<std::size_t>(cap, gallery.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = sim_total(q, gallery[i]);
  };
  if (shards <= 1) {
    work(0, gallery.size());
    return out;
  }
  const std::size_t chunk = (gallery.size() + shards - 1) / shards;
  {
    std::vector<std::jthread> pool;
    for (std::size_t begin = 0; begin < gallery.size(); begin += chunk)
      pool.emplace_back(work, begin, std::min(gallery.size(), begin + chunk));
  }
  return out;
}

}  // namespace anyreid
