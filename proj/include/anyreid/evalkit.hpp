#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "anyreid/repr.hpp"

namespace anyreid {

// Query and gallery modality subsets, named like "RT-to-NT".
struct ScenarioSpec {
  ModalitySet query;
  ModalitySet gallery;

  std::string name() const;
  // Throws ConfigError with the accepted syntax on malformed input.
  static ScenarioSpec parse(std::string_view name);
  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

// RNT-to-RNT, RT-to-RT, RT-to-NT, RT-to-N, R-to-N, R-to-NT, RN-to-RN, R-to-R.
std::vector<ScenarioSpec> default_scenarios();

// Comma-separated scenario names. Throws ConfigError.
std::vector<ScenarioSpec> parse_scenario_list(std::string_view list);

enum class ScenarioSide { query, gallery };

// Drops the modalities that the given side of the scenario does not observe.
std::vector<LabeledSample> apply_scenario(std::span<const LabeledSample> samples,
                                          const ScenarioSpec& scenario, ScenarioSide side);

// One query's ranking over the gallery entries that survive filtering.
struct QueryRanking {
  std::size_t query = 0;
  std::vector<std::size_t> gallery;  // gallery indices, best first
  std::vector<double> scores;        // sim_total, non-increasing
  std::vector<std::uint8_t> matches; // 1 where the gallery identity equals the query's
  bool has_positive() const;
};

struct RankingResult {
  std::vector<QueryRanking> queries;
};

struct EvalOptions {
  // Skip gallery entries with the same sample id as the query.
  bool exclude_self = true;
  // Skip gallery entries sharing both identity and camera with the query.
  bool exclude_same_camera = false;
  unsigned threads = 0;  // 0: ANYREID_THREADS
};

// Ranks every query against the gallery by descending sim_total, ties by ascending
// gallery index. Sample ids identify self-matches; pass empty spans when query and
// gallery are the same list (ids are then the positions).
RankingResult rank_gallery(std::span<const LabeledSample> queries,
                           std::span<const LabeledSample> gallery, const EvalOptions& options,
                           std::span<const std::size_t> query_ids = {},
                           std::span<const std::size_t> gallery_ids = {});

// Mean over positives of (j / r_j), r_j the 1-based rank of the j-th positive.
// Empty when the list has no positive.
std::optional<double> average_precision(std::span<const std::uint8_t> matches);

// Mean AP over queries with at least one positive. Throws Error when there are none.
double mean_average_precision(const RankingResult& rankings);

// Fraction of queries (with at least one positive) that have a positive in the top k.
double cmc_at_k(const RankingResult& rankings, int k);

// Expected AP of a uniformly random ranking of `gallery` items, `positives` relevant.
double expected_random_ap(std::size_t gallery, std::size_t positives);
// Mean of expected_random_ap over the valid queries of a ranking.
double random_ranking_map(const RankingResult& rankings);

struct EvalReport {
  std::string scenario;
  double map = 0.0;
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  std::size_t num_query = 0;    // queries with at least one positive
  std::size_t num_gallery = 0;
  std::size_t dropped_queries = 0;  // queries without any positive
  double random_map = 0.0;
};

EvalReport evaluate(const RankingResult& rankings, const std::string& scenario,
                    std::size_t gallery_size);

// Query and gallery are both `samples` with the scenario's masks applied; each query
// skips itself.
std::vector<EvalReport> run_scenario_matrix(std::span<const LabeledSample> samples,
                                            std::span<const ScenarioSpec> scenarios,
                                            const EvalOptions& options = {});

// Column-wise mean of the reports, named "average".
EvalReport average_report(std::span<const EvalReport> reports);

inline constexpr std::string_view kReportHeader = "scenario,mAP,R1,R5,R10,num_query,num_gallery";
std::string report_row(const EvalReport& report);
void write_report_csv(std::span<const EvalReport> reports, std::ostream& out);

}  // namespace anyreid
