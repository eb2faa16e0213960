#include "anyreid/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "anyreid/error.hpp"
#include "anyreid/sim.hpp"

namespace anyreid {
namespace {

constexpr std::string_view kScenarioSyntax =
    "expected QUERY-to-GALLERY with each side a non-empty set of distinct letters from "
    "R, N, T (e.g. RT-to-NT)";

ModalitySet parse_side(std::string_view side, std::string_view whole) {
  auto set = ModalitySet::parse(side);
  if (!set || set->empty())
    throw ConfigError("invalid scenario '" + std::string(whole) + "': " +
                      std::string(kScenarioSyntax));
  return *set;
}

}  // namespace

std::string ScenarioSpec::name() const { return query.to_string() + "-to-" + gallery.to_string(); }

ScenarioSpec ScenarioSpec::parse(std::string_view name) {
  constexpr std::string_view sep = "-to-";
  const auto pos = name.find(sep);
  if (pos == std::string_view::npos)
    throw ConfigError("invalid scenario '" + std::string(name) + "': " +
                      std::string(kScenarioSyntax));
  return {parse_side(name.substr(0, pos), name), parse_side(name.substr(pos + sep.size()), name)};
}

std::vector<ScenarioSpec> default_scenarios() {
  std::vector<ScenarioSpec> out;
  for (std::string_view n : {"RNT-to-RNT", "RT-to-RT", "RT-to-NT", "RT-to-N", "R-to-N", "R-to-NT",
                             "RN-to-RN", "R-to-R"})
    out.push_back(ScenarioSpec::parse(n));
  return out;
}

std::vector<ScenarioSpec> parse_scenario_list(std::string_view list) {
  std::vector<ScenarioSpec> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = std::min(list.find(',', start), list.size());
    std::string_view item = list.substr(start, comma - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    out.push_back(ScenarioSpec::parse(item));
    start = comma + 1;
  }
  return out;
}

std::vector<LabeledSample> apply_scenario(std::span<const LabeledSample> samples,
                                          const ScenarioSpec& scenario, ScenarioSide side) {
  const ModalitySet keep = side == ScenarioSide::query ? scenario.query : scenario.gallery;
  std::vector<LabeledSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back({s.identity, s.camera, restrict_to(s.representation, keep)});
  return out;
}

bool QueryRanking::has_positive() const {
  return std::any_of(matches.begin(), matches.end(), [](auto m) { return m != 0; });
}

RankingResult rank_gallery(std::span<const LabeledSample> queries,
                           std::span<const LabeledSample> gallery, const EvalOptions& options,
                           std::span<const std::size_t> query_ids,
                           std::span<const std::size_t> gallery_ids) {
  if (!query_ids.empty() && query_ids.size() != queries.size())
    throw Error("query id count mismatch");
  if (!gallery_ids.empty() && gallery_ids.size() != gallery.size())
    throw Error("gallery id count mismatch");
  auto qid = [&](std::size_t i) { return query_ids.empty() ? i : query_ids[i]; };
  auto gid = [&](std::size_t j) { return gallery_ids.empty() ? j : gallery_ids[j]; };

  std::vector<SampleRepresentation> reps;
  reps.reserve(gallery.size());
  for (const auto& g : gallery) reps.push_back(g.representation);

  RankingResult result;
  result.queries.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto scores = score_gallery(queries[i].representation, reps, options.threads);
    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      if (options.exclude_self && gid(j) == qid(i)) continue;
      if (options.exclude_same_camera && gallery[j].identity == queries[i].identity &&
          gallery[j].camera == queries[i].camera)
        continue;
      kept.push_back(j);
    }
    std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
      return scores[a].sim_total > scores[b].sim_total;
    });
    QueryRanking qr;
    qr.query = i;
    qr.gallery = kept;
    for (std::size_t j : kept) {
      qr.scores.push_back(scores[j].sim_total);
      qr.matches.push_back(gallery[j].identity == queries[i].identity ? 1 : 0);
    }
    result.queries.push_back(std::move(qr));
  }
  return result;
}

std::optional<double> average_precision(std::span<const std::uint8_t> matches) {
  double sum = 0.0;
  std::size_t found = 0;
  for (std::size_t r = 0; r < matches.size(); ++r) {
    if (matches[r] == 0) continue;
    ++found;
    sum += static_cast<double>(found) / static_cast<double>(r + 1);
  }
  if (found == 0) return std::nullopt;
  return sum / static_cast<double>(found);
}

double mean_average_precision(const RankingResult& rankings) {
  double sum = 0.0;
  std::size_t valid = 0;
  for (const auto& q : rankings.queries) {
    if (auto ap = average_precision(q.matches)) {
      sum += *ap;
      ++valid;
    }
  }
  if (valid == 0) throw Error("no query has a positive in the gallery");
  return sum / static_cast<double>(valid);
}

double cmc_at_k(const RankingResult& rankings, int k) {
  if (k < 1) throw Error("CMC rank must be at least 1");
  std::size_t valid = 0;
  std::size_t hits = 0;
  for (const auto& q : rankings.queries) {
    if (!q.has_positive()) continue;
    ++valid;
    const auto top = std::min<std::size_t>(static_cast<std::size_t>(k), q.matches.size());
    if (std::any_of(q.matches.begin(), q.matches.begin() + static_cast<std::ptrdiff_t>(top),
                    [](auto m) { return m != 0; }))
      ++hits;
  }
  return valid == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(valid);
}

double expected_random_ap(std::size_t gallery, std::size_t positives) {
  if (positives == 0 || positives > gallery) throw Error("invalid random-AP arguments");
  if (gallery == 1) return 1.0;
  const auto n = static_cast<double>(gallery);
  const auto m = static_cast<double>(positives);
  double harmonic = 0.0;
  for (std::size_t k = 1; k <= gallery; ++k) harmonic += 1.0 / static_cast<double>(k);
  return (m - 1.0) / (n - 1.0) + harmonic * (n - m) / (n * (n - 1.0));
}

double random_ranking_map(const RankingResult& rankings) {
  double sum = 0.0;
  std::size_t valid = 0;
  for (const auto& q : rankings.queries) {
    const auto pos = static_cast<std::size_t>(std::count(q.matches.begin(), q.matches.end(), 1));
    if (pos == 0) continue;
    sum += expected_random_ap(q.matches.size(), pos);
    ++valid;
  }
  if (valid == 0) throw Error("no query has a positive in the gallery");
  return sum / static_cast<double>(valid);
}

EvalReport evaluate(const RankingResult& rankings, const std::string& scenario,
                    std::size_t gallery_size) {
  EvalReport r;
  r.scenario = scenario;
  r.map = mean_average_precision(rankings);
  r.r1 = cmc_at_k(rankings, 1);
  r.r5 = cmc_at_k(rankings, 5);
  r.r10 = cmc_at_k(rankings, 10);
  for (const auto& q : rankings.queries) (q.has_positive() ? r.num_query : r.dropped_queries)++;
  r.num_gallery = gallery_size;
  r.random_map = random_ranking_map(rankings);
  return r;
}

std::vector<EvalReport> run_scenario_matrix(std::span<const LabeledSample> samples,
                                            std::span<const ScenarioSpec> scenarios,
                                            const EvalOptions& options) {
  std::vector<EvalReport> out;
  for (const auto& sc : scenarios) {
    const auto queries = apply_scenario(samples, sc, ScenarioSide::query);
    const auto gallery = apply_scenario(samples, sc, ScenarioSide::gallery);
    const RankingResult ranking = rank_gallery(queries, gallery, options);
    out.push_back(evaluate(ranking, sc.name(), gallery.size()));
  }
  return out;
}

EvalReport average_report(std::span<const EvalReport> reports) {
  EvalReport avg;
  avg.scenario = "average";
  if (reports.empty()) return avg;
  const auto n = static_cast<double>(reports.size());
  double q = 0.0;
  double g = 0.0;
  for (const auto& r : reports) {
    avg.map += r.map / n;
    avg.r1 += r.r1 / n;
    avg.r5 += r.r5 / n;
    avg.r10 += r.r10 / n;
    avg.random_map += r.random_map / n;
    q += static_cast<double>(r.num_query) / n;
    g += static_cast<double>(r.num_gallery) / n;
  }
  avg.num_query = static_cast<std::size_t>(std::lround(q));
  avg.num_gallery = static_cast<std::size_t>(std::lround(g));
  return avg;
}

std::string report_row(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%.4f,%zu,%zu", r.scenario.c_str(), r.map, r.r1,
                r.r5, r.r10, r.num_query, r.num_gallery);
  return buf;
}

void write_report_csv(std::span<const EvalReport> reports, std::ostream& out) {
  out << kReportHeader << '\n';
  for (const auto& r : reports) out << report_row(r) << '\n';
}

}  // namespace anyreid
