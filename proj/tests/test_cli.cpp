#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "bts/experiment.hpp"
#include "support/fixtures.hpp"

namespace {

namespace fs = std::filesystem;

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  fs::path out_file = scratch / "cli_stdout.txt";
  fs::path err_file = scratch / "cli_stderr.txt";
  std::string cmd = std::string(BTS_CLI_PATH) + " " + args + " > " +
                    out_file.string() + " 2> " + err_file.string();
  int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

// one fixture + prepared manifest shared by the heavier invocations
struct CliWorld {
  fixtures::TempDir dir{"cli"};
  fs::path manifest;
  fs::path cache;

  CliWorld() {
    fixtures::make_full_tree(dir.path());
    manifest = dir.path() / "manifest.jsonl";
    cache = dir.path() / "cache";
    auto r = run_cli("prepare --data-root " + dir.path().string() +
                         " --split-list " +
                         fixtures::split_list_path(dir.path()).string() +
                         " --manifest " + manifest.string() + " --cache-dir " +
                         cache.string(),
                     dir.path());
    REQUIRE(r.exit_code == 0);
  }

  std::string train_args(const std::string& output, const std::string& extra = "") {
    return "train --manifest " + manifest.string() + " --output " + output +
           " --cache-dir " + cache.string() +
           " --encoder stub --d 6 --seeds 0,1 --epochs 2" + extra;
  }
};

}  // namespace

TEST_CASE("prepare writes the manifest, cache and description table") {
  CliWorld world;
  CHECK(fs::exists(world.manifest));
  CHECK(fs::exists(world.dir.path() / "descriptions.jsonl"));
  CHECK(fs::is_directory(world.cache));
  CHECK(!fs::is_empty(world.cache));

  auto manifest = bts::read_manifest(world.manifest);
  CHECK(manifest.entries.size() == 16);
  for (const auto& e : manifest.entries) CHECK(e.segment_hash != 0);
}

TEST_CASE("prepare reports counts and the template inventory") {
  fixtures::TempDir dir("prep");
  fixtures::make_mini_tree(dir.path());
  auto r = run_cli("prepare --data-root " + dir.path().string() +
                       " --split-list " +
                       fixtures::split_list_path(dir.path()).string() +
                       " --manifest " + (dir.path() / "m.jsonl").string(),
                   dir.path());
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("train cycles: 2") != std::string::npos);
  CHECK(r.out.find("counts differ from the official ICBHI totals") !=
        std::string::npos);
  CHECK(r.out.find("unique text descriptions over all subsets: 359") !=
        std::string::npos);
}

TEST_CASE("prepare on an empty directory fails with a category") {
  fixtures::TempDir dir("empty");
  fs::create_directories(dir.path() / "data");
  std::ofstream(dir.path() / "split.txt") << "";
  auto r = run_cli("prepare --data-root " + (dir.path() / "data").string() +
                       " --split-list " + (dir.path() / "split.txt").string() +
                       " --manifest " + (dir.path() / "m.jsonl").string(),
                   dir.path());
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("error: MissingAnnotation") != std::string::npos);
}

TEST_CASE("train/evaluate/scenario/report drive a full round trip") {
  CliWorld world;
  fixtures::TempDir out("cli_out");

  auto train = run_cli(world.train_args(out.path().string()), world.dir.path());
  REQUIRE(train.exit_code == 0);
  CHECK(train.out.find("BTS") != std::string::npos);

  // locate the run directory the CLI reported
  auto pos = train.out.find("run dir: ");
  REQUIRE(pos != std::string::npos);
  auto eol = train.out.find('\n', pos);
  std::string run_dir = train.out.substr(pos + 9, eol - pos - 9);
  CHECK(fs::exists(fs::path(run_dir) / "report.json"));

  // resume is a no-op once the report exists
  auto resume =
      run_cli(world.train_args(out.path().string(), " --resume"), world.dir.path());
  CHECK(resume.exit_code == 0);
  CHECK(resume.out.find("already has a report") != std::string::npos);

  // scenario sweep over the trained run
  auto scenario = run_cli("scenario --run-dir " + run_dir + " --cache-dir " +
                              world.cache.string(),
                          world.dir.path());
  REQUIRE(scenario.exit_code == 0);
  CHECK(scenario.out.find("BTS[BMI]") != std::string::npos);
  CHECK(scenario.out.find("BTS[Partial Metadata]") != std::string::npos);
  CHECK(scenario.out.find("BTS[No Metadata]") != std::string::npos);

  // single-scenario re-evaluation with an embedding dump
  auto dump_path = out.path() / "embeddings.jsonl";
  auto evaluate = run_cli("evaluate --run-dir " + run_dir +
                              " --scenario nometa --cache-dir " +
                              world.cache.string() + " --dump-embeddings " +
                              dump_path.string(),
                          world.dir.path());
  REQUIRE(evaluate.exit_code == 0);
  CHECK(evaluate.out.find("BTS[No Metadata]") != std::string::npos);
  CHECK(fs::exists(dump_path));
  std::string first_line;
  std::getline(std::ifstream(dump_path), first_line);
  CHECK(first_line.find("z_audio") != std::string::npos);
  CHECK(first_line.find("z_text") != std::string::npos);

  // report renders the main table
  auto report = run_cli("report " + run_dir, world.dir.path());
  CHECK(report.exit_code == 0);
  CHECK(report.out.find("Method") != std::string::npos);
  CHECK(report.out.find("Score (%)") != std::string::npos);

  auto slices = run_cli("report " + run_dir + " --style slices", world.dir.path());
  CHECK(slices.exit_code == 0);
  CHECK(slices.out.find("AKGC417L") != std::string::npos);
}

TEST_CASE("train refuses a missing encoder checkpoint up front") {
  CliWorld world;
  fixtures::TempDir out("cli_badckpt");
  auto r = run_cli("train --manifest " + world.manifest.string() + " --output " +
                       out.path().string() + " --encoder /nonexistent.btsm" +
                       " --seeds 0 --epochs 1",
                   world.dir.path());
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("error: CheckpointNotFound") != std::string::npos);
}

TEST_CASE("report on a missing directory surfaces MissingReport") {
  fixtures::TempDir dir("noreport");
  auto r = run_cli("report " + (dir.path() / "nothing_here").string(), dir.path());
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("error: MissingReport") != std::string::npos);
}

TEST_CASE("audio-only training is labeled as the baseline") {
  CliWorld world;
  fixtures::TempDir out("cli_audio");
  auto r = run_cli(world.train_args(out.path().string(), " --mode audio"),
                   world.dir.path());
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("Audio-CLAP") != std::string::npos);
}
