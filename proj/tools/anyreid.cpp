// anyreid: generate synthetic data, train, extract, evaluate and query any-to-any ReID.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "anyreid/config.hpp"
#include "anyreid/data.hpp"
#include "anyreid/error.hpp"
#include "anyreid/evalkit.hpp"
#include "anyreid/gradcheck.hpp"
#include "anyreid/objective.hpp"
#include "anyreid/optim.hpp"
#include "anyreid/sim.hpp"
#include "anyreid/train.hpp"

namespace fs = std::filesystem;
using namespace anyreid;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dataset;
  std::string checkpoint;
  std::string store;
  std::string scenarios;
  std::string corrupt;
  int k = 10;
  long id = -1;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  cfg.sync();
  cfg.validate();
  return cfg;
}

fs::path dataset_dir(const Options& o, const RunConfig& cfg) {
  return o.dataset.empty() ? fs::path(cfg.out_dir) / "data" : fs::path(o.dataset);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory '" + dir.string() + "': " + ec.message());
}

int cmd_gen_data(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const fs::path dir = o.out.empty() ? dataset_dir(o, cfg) : fs::path(o.out);
  ensure_dir(dir);
  const SyntheticDataset ds = generate_dataset(cfg.data);
  for (auto [name, split] : {std::pair{"train", &ds.train}, std::pair{"test", &ds.test}}) {
    write_grids(*split, dir / (std::string(name) + ".grids"));
    auto manifest = manifest_entries(cfg.data);
    manifest["split"] = name;
    manifest["samples"] = std::to_string(split->size());
    write_manifest(manifest, dir / (std::string(name) + ".manifest"));
    std::printf("%s: %zu samples\n", name, split->size());
  }
  std::printf("wrote %s\n", dir.string().c_str());
  return 0;
}

void check_grid_shape(const std::vector<GridSample>& samples, const EncoderConfig& enc) {
  if (samples.empty()) throw Error("dataset split is empty");
  const Matrix& g = samples.front().grids[0].patches;
  if (g.rows() != enc.num_patches || g.cols() != enc.patch_dim)
    throw Error("dataset grids are " + std::to_string(g.rows()) + "x" + std::to_string(g.cols()) +
                " but the model expects " + std::to_string(enc.num_patches) + "x" +
                std::to_string(enc.patch_dim));
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const fs::path out = o.out.empty() ? fs::path(cfg.out_dir) : fs::path(o.out);
  const auto samples = read_grids(dataset_dir(o, cfg) / "train.grids");
  check_grid_shape(samples, cfg.encoder);
  ensure_dir(out);
  {
    std::ofstream f(out / "config.ini");
    f << to_ini(cfg);
  }
  std::ofstream log(out / "train_log.csv");
  if (!log) throw Error("cannot write training log in '" + out.string() + "'");
  log << kTrainLogHeader << '\n';
  std::cout << kTrainLogHeader << '\n';
  const TrainResult result = train(cfg.encoder, samples, cfg.train, [&](const EpochLog& row) {
    write_log_row(row, log);
    log.flush();
    write_log_row(row, std::cout);
  });
  save_checkpoint(result.final_params, out / "final.ckpt");
  save_checkpoint(result.best_params, out / "best.ckpt");
  std::printf("best epoch %d; checkpoints in %s\n", result.best_epoch, out.string().c_str());
  return 0;
}

int cmd_extract(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const EncoderParams params = load_checkpoint(o.checkpoint);
  if (!o.config.empty()) {
    EncoderConfig expected = cfg.encoder;
    expected.num_classes = params.config.num_classes;
    if (!(expected == params.config))
      throw ConfigError("checkpoint '" + o.checkpoint + "' does not match the encoder config");
  }
  const auto samples = read_grids(dataset_dir(o, cfg) / "test.grids");
  check_grid_shape(samples, params.config);
  const fs::path out = o.out.empty() ? fs::path(cfg.out_dir) / "features.mdfs" : fs::path(o.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  const auto features = extract_features(params, samples);
  write_store(features, out);
  std::printf("wrote %zu records (d=%d) to %s\n", features.size(), params.config.dim,
              out.string().c_str());
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const auto scenarios = o.scenarios.empty() ? cfg.eval.scenarios : parse_scenario_list(o.scenarios);
  const auto samples = read_store(o.store);
  EvalOptions opts;
  opts.exclude_same_camera = cfg.eval.exclude_same_camera;
  const auto reports = run_scenario_matrix(samples, scenarios, opts);
  if (!o.out.empty()) {
    std::ofstream f(o.out);
    if (!f) throw Error("cannot write report '" + o.out + "'");
    write_report_csv(reports, f);
  }
  write_report_csv(reports, std::cout);
  std::cout << report_row(average_report(reports)) << '\n';
  return 0;
}

int cmd_query(const Options& o) {
  const auto samples = read_store(o.store);
  if (o.id < 0 || static_cast<std::size_t>(o.id) >= samples.size())
    throw ConfigError("unknown query id " + std::to_string(o.id) + " (store holds " +
                      std::to_string(samples.size()) + " records)");
  if (o.k < 1) throw ConfigError("--k must be at least 1");
  const ScenarioSpec sc = ScenarioSpec::parse(o.scenarios.empty() ? "RNT-to-RNT" : o.scenarios);
  const auto q = static_cast<std::size_t>(o.id);
  const SampleRepresentation query = restrict_to(samples[q].representation, sc.query);
  std::printf("query %zu identity %u camera %u scenario %s\n", q, samples[q].identity,
              samples[q].camera, sc.name().c_str());
  std::printf("rank,gallery_id,identity,camera,sim_total,sim_specific,sim_shared,match\n");
  const auto gallery = apply_scenario(samples, sc, ScenarioSide::gallery);
  const std::vector<LabeledSample> queries{{samples[q].identity, samples[q].camera, query}};
  const RankingResult ranking = rank_gallery(queries, gallery, EvalOptions{}, std::span(&q, 1));
  const QueryRanking& r = ranking.queries.front();
  const std::size_t shown = std::min<std::size_t>(static_cast<std::size_t>(o.k), r.gallery.size());
  for (std::size_t i = 0; i < shown; ++i) {
    const std::size_t g = r.gallery[i];
    const SimilarityBreakdown b = sim_total(query, gallery[g].representation);
    std::printf("%zu,%zu,%u,%u,%.6f,%.6f,%.6f,%d\n", i + 1, g, gallery[g].identity,
                gallery[g].camera, b.sim_total, b.sim_specific, b.sim_shared, r.matches[i]);
  }
  return 0;
}

int cmd_gradcheck(const Options& o) {
  GradcheckOptions opts;
  if (!o.config.empty() || o.seed) opts.seed = resolve_config(o).seed;
  opts.corrupt = o.corrupt;
  bool ok = true;
  std::printf("suite,max_rel_error,tolerance,status\n");
  for (const auto& r : run_gradcheck(opts)) {
    std::printf("%s,%.3e,%.0e,%s%s%s\n", r.name.c_str(), r.max_rel_error, r.tolerance,
                r.passed ? "PASS" : "FAIL", r.detail.empty() ? "" : ": ", r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modality-decoupled any-to-any re-identification"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Overrides the config seed");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  add_common(gen);
  gen->add_option("--out", o.out, "Dataset directory (default OUT_DIR/data)");

  auto* tr = app.add_subcommand("train", "Train an encoder");
  add_common(tr);
  tr->add_option("--dataset", o.dataset, "Dataset directory (default OUT_DIR/data)");
  tr->add_option("--out", o.out, "Run directory (default OUT_DIR)");

  auto* ex = app.add_subcommand("extract", "Encode the test split into a feature store");
  add_common(ex);
  ex->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ex->add_option("--dataset", o.dataset, "Dataset directory (default OUT_DIR/data)");
  ex->add_option("--out", o.out, "Store path (default OUT_DIR/features.mdfs)");

  auto* ev = app.add_subcommand("eval", "Evaluate a feature store over scenarios");
  add_common(ev);
  ev->add_option("--store", o.store, "Feature store")->required();
  ev->add_option("--scenarios", o.scenarios, "Comma-separated scenarios, e.g. RT-to-N,R-to-NT");
  ev->add_option("--out", o.out, "Also write the CSV report here");

  auto* qu = app.add_subcommand("query", "List the top-k gallery matches of one record");
  qu->add_option("--store", o.store, "Feature store")->required();
  qu->add_option("--id", o.id, "Record index of the query")->required();
  qu->add_option("--scenarios", o.scenarios, "One scenario (default RNT-to-RNT)");
  qu->add_option("--k", o.k, "Entries to list");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  add_common(gc);
  gc->add_option("--corrupt", o.corrupt, "Perturb one suite's analytic gradient")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*tr) return cmd_train(o);
    if (*ex) return cmd_extract(o);
    if (*ev) return cmd_eval(o);
    if (*qu) return cmd_query(o);
    if (*gc) return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const StoreError& e) {
    std::fprintf(stderr, "error (%s): %s\n", to_string(e.code()), e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
