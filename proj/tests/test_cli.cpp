#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(ANYREID_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Workspace {
  fs::path dir = fs::temp_directory_path() / "anyreid_cli_test";
  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "tiny.ini") << "[encoder]\ndim = 8\ndepth = 1\nheads = 2\n"
                                       "[optim]\nepochs = 1\nP = 3\nK = 2\n"
                                       "[data]\nnum_identities = 12\nsamples_per_identity = 4\n"
                                       "num_patches = 4\npatch_dim = 6\nlatent_dim = 4\n"
                                       "[run]\nseed = 3\nout_dir = "
                                    << (dir / "run").string() << "\n";
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string cfg() const { return "--config " + (dir / "tiny.ini").string(); }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("full pipeline through the command line") {
    Workspace w;
    const fs::path run_dir = w.dir / "run";
    auto gen = run("gen-data " + w.cfg());
    REQUIRE(gen.code == 0);
    CHECK(fs::exists(run_dir / "data" / "train.manifest"));
    CHECK(fs::exists(run_dir / "data" / "test.manifest"));
    const std::string first = slurp(run_dir / "data" / "train.grids");
    REQUIRE(run("gen-data " + w.cfg()).code == 0);
    CHECK(slurp(run_dir / "data" / "train.grids") == first);
    CHECK(slurp(run_dir / "data" / "test.manifest").find("seed = 3") != std::string::npos);

    auto tr = run("train " + w.cfg());
    REQUIRE(tr.code == 0);
    CHECK(tr.out.rfind("epoch,l_ce,l_tri,l_rol,l_kdl,l_mml,l_total\n1,", 0) == 0);
    CHECK(fs::exists(run_dir / "best.ckpt"));
    CHECK(fs::exists(run_dir / "config.ini"));
    const std::string log = slurp(run_dir / "train_log.csv");
    CHECK(std::count(log.begin(), log.end(), '\n') == 2);

    REQUIRE(run("extract " + w.cfg() + " --checkpoint " + (run_dir / "final.ckpt").string()).code == 0);
    const std::string store = (run_dir / "features.mdfs").string();
    auto ev = run("eval " + w.cfg() + " --store " + store + " --out " + (w.dir / "r.csv").string());
    REQUIRE(ev.code == 0);
    const std::string csv = slurp(w.dir / "r.csv");
    CHECK(csv.rfind("scenario,mAP,R1,R5,R10,num_query,num_gallery\nRNT-to-RNT,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
    CHECK(ev.out.find("\naverage,") != std::string::npos);
    auto sub = run("eval --store " + store + " --scenarios R-to-N,RT-to-NT");
    CHECK(sub.code == 0);
    CHECK(sub.out.find("\nR-to-N,") != std::string::npos);
    CHECK(sub.out.find("RNT-to-RNT") == std::string::npos);

    auto q = run("query --store " + store + " --id 0 --k 3 --scenarios R-to-N");
    CHECK(q.code == 0);
    CHECK(q.out.find("rank,gallery_id,identity,camera,sim_total,sim_specific,sim_shared,match\n1,") !=
          std::string::npos);
    CHECK(run("query --store " + store + " --id 100000").code == 1);

    // retraining with the same seed reproduces the checkpoint
    const std::string ckpt = slurp(run_dir / "final.ckpt");
    REQUIRE(run("train " + w.cfg() + " --out " + (w.dir / "again").string() + " --dataset " +
                (run_dir / "data").string())
                .code == 0);
    CHECK(slurp(w.dir / "again" / "final.ckpt") == ckpt);

    // a corrupted store is a runtime error
    std::ofstream(w.dir / "junk.mdfs") << "nonsense";
    CHECK(run("eval --store " + (w.dir / "junk.mdfs").string()).code == 2);
  }

  TEST_CASE("usage and configuration errors exit 1") {
    Workspace w;
    CHECK(run("").code == 1);
    CHECK(run("frobnicate").code == 1);
    CHECK(run("eval").code == 1);
    CHECK(run("gen-data --config /nonexistent.ini").code == 1);
    CHECK(run("--help").code == 0);
    std::ofstream(w.dir / "one.ini") << "[data]\nnum_identities = 1\n";
    CHECK(run("gen-data --config " + (w.dir / "one.ini").string()).code == 1);
    std::ofstream(w.dir / "typo.ini") << "[optim]\nlearning_rate = 1\n";
    CHECK(run("train --config " + (w.dir / "typo.ini").string()).code == 1);
    CHECK(run("eval --store x --scenarios X-to-R").code == 1);
    // missing dataset is a runtime error
    CHECK(run("train " + w.cfg() + " --dataset " + (w.dir / "none").string()).code == 2);
  }

  TEST_CASE("gradcheck command") {
    auto ok = run("gradcheck");
    CHECK(ok.code == 0);
    CHECK(ok.out.rfind("suite,max_rel_error,tolerance,status\nrol,", 0) == 0);
    CHECK(std::count(ok.out.begin(), ok.out.end(), '\n') == 6);
    auto bad = run("gradcheck --corrupt triplet");
    CHECK(bad.code == 2);
    CHECK(bad.out.find("triplet,") != std::string::npos);
    CHECK(bad.out.find("FAIL") != std::string::npos);
  }
}
