#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "support.hpp"
#include "zsar/io.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run zsar_cli(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt";
  const auto err = scratch / "stderr.txt";
  const std::string cmd = std::string(ZSAR_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = zsar::io::read_file(out);
  r.err = zsar::io::read_file(err);
  return r;
}

const char* kSmallSpec =
    "n_concepts=8\nn_seen=4\nn_unseen=3\nconcepts_per_class=2\nvideos_per_class=6\n"
    "val_videos_per_class=2\ndescriptions_per_class=4\nd_latent=8\nd_in_visual=10\nd_in_text=10\n";

const char* kSmallConfig = "d=8\nk=4\nepochs=3\nbatch_size=16\nlr=0.01\npatience=0\n";

}  // namespace

TEST_CASE("cli: usage errors exit 2, help exits 0") {
  testing::TempDir tmp("cli-usage");
  CHECK(zsar_cli("", tmp.path()).code == 2);
  CHECK(zsar_cli("frobnicate", tmp.path()).code == 2);
  CHECK(zsar_cli("train --bogus 1", tmp.path()).code == 2);
  CHECK(zsar_cli("gradcheck --instances notanumber", tmp.path()).code == 2);

  const auto help = zsar_cli("--help", tmp.path());
  CHECK(help.code == 0);
  for (const char* sub : {"dedup", "rank", "stats", "gen", "train", "eval", "ablate", "gradcheck",
                          "export-embeddings"}) {
    CAPTURE(sub);
    CHECK(help.out.find(sub) != std::string::npos);
    const auto h = zsar_cli(std::string(sub) + " --help", tmp.path());
    CHECK(h.code == 0);
    CHECK(h.out.find("--config") != std::string::npos);
    CHECK(h.out.find("--seed") != std::string::npos);
  }
  const auto gc = zsar_cli("gradcheck --help", tmp.path());
  CHECK(gc.out.find("[20]") != std::string::npos);
  CHECK(gc.out.find("[1e-05]") != std::string::npos);
}

TEST_CASE("cli: validation errors exit 1 and name the file") {
  testing::TempDir tmp("cli-valid");
  const auto r = zsar_cli("gen --config " + (tmp / "missing.cfg").string() + " --out " + (tmp / "g").string(),
                          tmp.path());
  CHECK(r.code == 1);
  CHECK(r.err.find("missing.cfg") != std::string::npos);
  CHECK_FALSE(fs::exists(tmp / "g"));

  zsar::io::write_file_atomic(tmp / "bad.cfg", "tua=0.1\n");
  const auto bad = zsar_cli("gen --config " + (tmp / "bad.cfg").string() + " --out " + (tmp / "g").string(),
                            tmp.path());
  CHECK(bad.code == 1);
  CHECK(bad.err.find("tua") != std::string::npos);
}

TEST_CASE("cli: dedup fixture gives 14 canonical actions") {
  testing::TempDir tmp("cli-dedup");
  const fs::path data = ZSAR_TEST_DATA;
  const auto r = zsar_cli("dedup --names " + (data / "dedup_names.txt").string() + " --out " +
                              (tmp / "d").string(),
                          tmp.path());
  REQUIRE(r.code == 0);
  const auto table = zsar::io::read_file(tmp / "d/actions.tsv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 14);
  CHECK(table == r.out);
  CHECK(fs::exists(tmp / "d/config.cfg"));
}

TEST_CASE("cli: gen, train, eval, export") {
  testing::TempDir tmp("cli-pipeline");
  zsar::io::write_file_atomic(tmp / "spec.cfg", kSmallSpec);
  zsar::io::write_file_atomic(tmp / "run.cfg", kSmallConfig);
  const std::string spec = (tmp / "spec.cfg").string();
  const std::string cfg = (tmp / "run.cfg").string();

  REQUIRE(zsar_cli("gen --spec " + spec + " --seed 3 --out " + (tmp / "g1").string(), tmp.path()).code == 0);
  REQUIRE(zsar_cli("gen --spec " + spec + " --seed 3 --out " + (tmp / "g2").string(), tmp.path()).code == 0);
  for (const char* f : {"videos.zsf", "descriptions.zsf", "definitions.zsf", "split.json"}) {
    CHECK(zsar::io::read_file(tmp / "g1" / f) == zsar::io::read_file(tmp / "g2" / f));
  }
  CHECK(fs::exists(tmp / "g1/config.cfg"));

  const std::string data = (tmp / "g1").string();
  const std::string split = (tmp / "g1/split.json").string();
  for (const char* run : {"r1", "r2"}) {
    REQUIRE(zsar_cli("train --config " + cfg + " --seed 4 --data " + data + " --split " + split + " --out " +
                         (tmp / run).string(),
                     tmp.path())
                .code == 0);
  }
  for (const char* f : {"checkpoint.zck", "metrics.jsonl", "loss_trace.txt", "config.cfg"}) {
    CAPTURE(f);
    CHECK(zsar::io::read_file(tmp / "r1" / f) == zsar::io::read_file(tmp / "r2" / f));
  }
  const auto echoed = zsar::io::load_run_config(tmp / "r1/config.cfg");
  CHECK(echoed.seed == 4);
  CHECK(echoed.d == 8);

  const auto ev = zsar_cli("eval --data " + data + " --split " + split + " --checkpoint " +
                               (tmp / "r1/checkpoint.zck").string() + " --out " + (tmp / "e").string(),
                           tmp.path());
  CHECK(ev.code == 0);
  CHECK(fs::exists(tmp / "e/metrics.tsv"));
  CHECK(fs::exists(tmp / "e/metrics.json"));

  const auto ex = zsar_cli("export-embeddings --data " + data + " --split " + split + " --checkpoint " +
                               (tmp / "r1/checkpoint.zck").string() + " --out " + (tmp / "x").string(),
                           tmp.path());
  CHECK(ex.code == 0);
  CHECK(zsar::io::load_feature_store(tmp / "x/classes.zsf").rows() == 7);
}

TEST_CASE("cli: a failing run leaves no partial output") {
  testing::TempDir tmp("cli-partial");
  zsar::io::write_file_atomic(tmp / "spec.cfg", kSmallSpec);
  REQUIRE(zsar_cli("gen --spec " + (tmp / "spec.cfg").string() + " --out " + (tmp / "g").string(), tmp.path())
              .code == 0);
  // split names an unknown video id, so training fails
  auto split = zsar::io::read_file(tmp / "g/split.json");
  split.replace(split.find("\"v0_0\""), 6, "\"zz_9\"");
  zsar::io::write_file_atomic(tmp / "bad.json", split);
  const auto r = zsar_cli("train --data " + (tmp / "g").string() + " --split " + (tmp / "bad.json").string() +
                              " --out " + (tmp / "run").string(),
                          tmp.path());
  CHECK(r.code == 1);
  CHECK_FALSE(fs::exists(tmp / "run"));
  for (const auto& e : fs::directory_iterator(tmp.path())) {
    CHECK(e.path().filename().string().find(".tmp-") == std::string::npos);
  }

  // a non-empty directory that is not a previous output is never replaced
  fs::create_directories(tmp / "keep");
  zsar::io::write_file_atomic(tmp / "keep/notes.txt", "mine\n");
  CHECK(zsar_cli("gen --out " + (tmp / "keep").string(), tmp.path()).code == 1);
  CHECK(zsar::io::read_file(tmp / "keep/notes.txt") == "mine\n");
}

TEST_CASE("cli: gradcheck") {
  testing::TempDir tmp("cli-gc");
  const auto r = zsar_cli("gradcheck --instances 2 --seed 7", tmp.path());
  CHECK(r.code == 0);
  CHECK(r.out.find("max_rel_error") != std::string::npos);
  CHECK(zsar_cli("gradcheck --instances 1 --tolerance 1e-30", tmp.path()).code == 1);
}
