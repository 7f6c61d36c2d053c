#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "prefopt/cli.hpp"
#include "prefopt/data.hpp"
#include "prefopt/rng.hpp"

using namespace prefopt;

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("prefopt_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

ModelOptions small_model(uint64_t seed = 1) {
  ModelOptions m;
  m.d_model = 16;
  m.n_heads = 2;
  m.d_ff = 24;
  m.seed = seed;
  return m;
}

PrepareOptions synthetic_prepare(const std::string& out, int directions = 2, int per_dir = 6,
                                 uint64_t seed = 7) {
  PrepareOptions p;
  p.synthetic = true;
  p.directions = directions;
  p.pairs_per_direction = per_dir;
  p.corruption_rates = {0.3};
  p.seed = seed;
  p.out_dir = out;
  return p;
}

}  // namespace

TEST_CASE("prepare --synthetic writes balanced splits and a manifest") {
  TempDir tmp("prep");
  const PrepareOptions opts = synthetic_prepare(tmp.str("data"), 4, 10);
  REQUIRE(cmd_prepare(opts) == kExitOk);

  for (const char* split : {"train", "validation", "evaluation"}) {
    const fs::path file = tmp.path / "data" / (std::string(split) + ".jsonl");
    REQUIRE(fs::exists(file));
    CHECK(load_pairs(file).size() == 40);
  }
  const json manifest = json::parse(slurp(tmp.path / "data" / "manifest.json"));
  CHECK(manifest["command"] == "prepare");
  CHECK(manifest["dataset"]["train"]["counts_per_direction"].size() == 4);
  CHECK(manifest["dataset"]["train"]["per_direction"] == 10);
  CHECK(manifest["outputs"].contains("train.jsonl"));

  SUBCASE("rerun with the same seed reproduces identical bytes") {
    TempDir tmp2("prep2");
    PrepareOptions again = opts;
    again.out_dir = tmp2.str("data");
    REQUIRE(cmd_prepare(again) == kExitOk);
    CHECK(slurp(tmp.path / "data" / "train.jsonl") == slurp(tmp2.path / "data" / "train.jsonl"));
    CHECK(json::parse(slurp(tmp2.path / "data" / "manifest.json"))["outputs"] ==
          manifest["outputs"]);
  }

  SUBCASE("different seed changes the corpus") {
    TempDir tmp3("prep3");
    PrepareOptions other = opts;
    other.seed = 8;
    other.out_dir = tmp3.str("data");
    REQUIRE(cmd_prepare(other) == kExitOk);
    CHECK(slurp(tmp.path / "data" / "train.jsonl") != slurp(tmp3.path / "data" / "train.jsonl"));
  }
}

TEST_CASE("prepare validates its inputs") {
  TempDir tmp("prepbad");
  PrepareOptions neither;
  neither.out_dir = tmp.str("x");
  CHECK(cmd_prepare(neither) == kExitUserError);

  PrepareOptions both = synthetic_prepare(tmp.str("y"));
  both.input = "some.jsonl";
  CHECK(cmd_prepare(both) == kExitUserError);

  // Synthetic corpus cannot satisfy a larger per-direction balance.
  PrepareOptions underfull = synthetic_prepare(tmp.str("z"), 2, 5);
  underfull.per_direction = 50;
  CHECK(cmd_prepare(underfull) == kExitUserError);
}

TEST_CASE("prepare file input drops the 50-char boundary source") {
  TempDir tmp("prepfile");
  std::vector<PreferencePair> raw;
  auto add = [&](const std::string& id, size_t chars) {
    PreferencePair p;
    p.id = id;
    p.direction = "en-de";
    p.source_text = std::string(chars, 's');
    p.preferred = "pref " + id;
    p.dispreferred = "disp " + id;
    raw.push_back(p);
  };
  add("keep1", 51);
  add("boundary", 50);  // exactly 50 chars: strictly-greater filter drops it
  add("keep2", 60);
  add("keep3", 70);
  const fs::path input = tmp.path / "raw.jsonl";
  write_pairs(input, raw);

  PrepareOptions opts;
  opts.input = input.string();
  opts.per_direction = 3;
  opts.seed = 5;
  opts.split = "train";
  opts.out_dir = tmp.str("out");
  REQUIRE(cmd_prepare(opts) == kExitOk);

  const auto kept = load_pairs(tmp.path / "out" / "train.jsonl");
  REQUIRE(kept.size() == 3);
  for (const auto& p : kept) CHECK(p.id != "boundary");

  // Asking for 4 per direction can only fail once the boundary row is gone.
  PrepareOptions too_many = opts;
  too_many.per_direction = 4;
  too_many.out_dir = tmp.str("out2");
  CHECK(cmd_prepare(too_many) == kExitUserError);
}

TEST_CASE("train writes checkpoint, history and manifest") {
  TempDir tmp("train");
  REQUIRE(cmd_prepare(synthetic_prepare(tmp.str("data"), 2, 6)) == kExitOk);

  TrainOptions topt;
  topt.data_path = tmp.str("data/train.jsonl");
  topt.objective = "capo";
  topt.epochs = 1;
  topt.batch_size = 4;
  topt.base_lr = 1e-3;
  topt.model = small_model();
  topt.out_dir = tmp.str("run");
  REQUIRE(cmd_train(topt) == kExitOk);

  CHECK(fs::exists(tmp.path / "run" / "checkpoint.bin"));
  // 12 pairs at batch 4 -> 3 steps plus the header line.
  CHECK(line_count(tmp.path / "run" / "history.csv") == 4);
  const json manifest = json::parse(slurp(tmp.path / "run" / "manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["steps"] == 3);
  CHECK(manifest["config"]["objective"] == "capo");
  CHECK(manifest["outputs"].contains("checkpoint.bin"));

  SUBCASE("dpo without a reference is a user error") {
    TrainOptions bad = topt;
    bad.objective = "dpo";
    bad.out_dir = tmp.str("run_bad");
    CHECK(cmd_train(bad) == kExitUserError);
  }

  SUBCASE("dpo with the initial policy as reference works") {
    TrainOptions dpo = topt;
    dpo.objective = "dpo";
    dpo.ref_init_from_policy = true;
    dpo.out_dir = tmp.str("run_dpo");
    REQUIRE(cmd_train(dpo) == kExitOk);
    CHECK(fs::exists(tmp.path / "run_dpo" / "reference.bin"));
    const std::string first_row = [&] {
      std::ifstream in(tmp.path / "run_dpo" / "history.csv");
      std::string header, row;
      std::getline(in, header);
      std::getline(in, row);
      return row;
    }();
    CHECK(first_row.find("0.69314718055994") != std::string::npos);
  }

  SUBCASE("unknown objective is a user error") {
    TrainOptions bad = topt;
    bad.objective = "ppo";
    bad.out_dir = tmp.str("run_bad2");
    CHECK(cmd_train(bad) == kExitUserError);
  }
}

TEST_CASE("eval emits reports, csvs and histograms") {
  TempDir tmp("eval");
  REQUIRE(cmd_prepare(synthetic_prepare(tmp.str("data"), 2, 6)) == kExitOk);

  TrainOptions topt;
  topt.data_path = tmp.str("data/train.jsonl");
  topt.epochs = 1;
  topt.batch_size = 4;
  topt.base_lr = 1e-3;
  topt.model = small_model();
  topt.out_dir = tmp.str("run");
  REQUIRE(cmd_train(topt) == kExitOk);

  SUBCASE("single checkpoint") {
    EvalOptions eopt;
    eopt.checkpoints = {tmp.str("run/checkpoint.bin")};
    eopt.data_path = tmp.str("data/evaluation.jsonl");
    eopt.out_dir = tmp.str("eval");
    REQUIRE(cmd_eval(eopt) == kExitOk);
    const json report = json::parse(slurp(tmp.path / "eval" / "report.json"));
    CHECK(report["per_language"].size() == 2);
    CHECK_FALSE(report.contains("correlation_bleu_vs_shift"));
    CHECK(fs::exists(tmp.path / "eval" / "delta_r_en-ar.csv"));
    CHECK(fs::exists(tmp.path / "eval" / "histogram_en-ar.csv"));
    CHECK(fs::exists(tmp.path / "eval" / "histogram.csv"));
    // 6 samples per direction plus a header.
    CHECK(line_count(tmp.path / "eval" / "delta_r_en-ar.csv") == 7);
    CHECK(line_count(tmp.path / "eval" / "histogram.csv") == 61);
  }

  SUBCASE("identical checkpoints compare with zero shifts and a warning") {
    EvalOptions eopt;
    eopt.checkpoints = {tmp.str("run/checkpoint.bin"), tmp.str("run/checkpoint.bin")};
    eopt.data_path = tmp.str("data/evaluation.jsonl");
    eopt.out_dir = tmp.str("eval_same");
    REQUIRE(cmd_eval(eopt) == kExitOk);
    const json report = json::parse(slurp(tmp.path / "eval_same" / "report.json"));
    CHECK_FALSE(report.contains("correlation_bleu_vs_shift"));
    CHECK(report.contains("correlation_warning"));
    for (const auto& [dir, shift] : report["reward_shift_per_language"].items())
      CHECK(shift.get<double>() == 0.0);
    CHECK(fs::exists(tmp.path / "eval_same" / "delta_r_a_en-ar.csv"));
    CHECK(fs::exists(tmp.path / "eval_same" / "delta_r_b_en-ar.csv"));
  }

  SUBCASE("distinct checkpoints populate the correlation") {
    TrainOptions second = topt;
    second.model.seed = 99;
    second.shuffle_seed = 3;
    second.out_dir = tmp.str("run2");
    REQUIRE(cmd_train(second) == kExitOk);
    EvalOptions eopt;
    eopt.checkpoints = {tmp.str("run/checkpoint.bin"), tmp.str("run2/checkpoint.bin")};
    eopt.data_path = tmp.str("data/evaluation.jsonl");
    eopt.out_dir = tmp.str("eval_cmp");
    REQUIRE(cmd_eval(eopt) == kExitOk);
    const json report = json::parse(slurp(tmp.path / "eval_cmp" / "report.json"));
    CHECK(report.contains("correlation_bleu_vs_shift"));
    const double r = report["correlation_bleu_vs_shift"].get<double>();
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
  }

  SUBCASE("architecture mismatch fails cleanly") {
    TrainOptions second = topt;
    second.model.d_model = 32;
    second.model.n_heads = 1;
    second.model.d_ff = 48;
    second.out_dir = tmp.str("run_other");
    REQUIRE(cmd_train(second) == kExitOk);
    EvalOptions eopt;
    eopt.checkpoints = {tmp.str("run/checkpoint.bin"), tmp.str("run_other/checkpoint.bin")};
    eopt.data_path = tmp.str("data/evaluation.jsonl");
    eopt.out_dir = tmp.str("eval_bad");
    CHECK(cmd_eval(eopt) == kExitUserError);
  }

  SUBCASE("dpo delta_r without a reference checkpoint is a user error") {
    EvalOptions eopt;
    eopt.checkpoints = {tmp.str("run/checkpoint.bin")};
    eopt.data_path = tmp.str("data/evaluation.jsonl");
    eopt.objective = "dpo";
    eopt.out_dir = tmp.str("eval_dpo");
    CHECK(cmd_eval(eopt) == kExitUserError);
    eopt.ref_checkpoint = tmp.str("run/checkpoint.bin");
    CHECK(cmd_eval(eopt) == kExitOk);
  }
}

TEST_CASE("sweep writes an ascending table and per-alpha runs") {
  TempDir tmp("sweep");
  REQUIRE(cmd_prepare(synthetic_prepare(tmp.str("data"), 2, 6)) == kExitOk);

  SweepOptions sopt;
  sopt.alphas = {2.0, 0.5};  // deliberately unsorted
  sopt.train_path = tmp.str("data/train.jsonl");
  sopt.val_path = tmp.str("data/validation.jsonl");
  sopt.epochs = 1;
  sopt.batch_size = 4;
  sopt.base_lr = 1e-3;
  sopt.model = small_model();
  sopt.out_dir = tmp.str("sweep");
  REQUIRE(cmd_sweep(sopt) == kExitOk);

  std::ifstream table(tmp.path / "sweep" / "sweep.csv");
  std::string header, row1, row2;
  std::getline(table, header);
  std::getline(table, row1);
  std::getline(table, row2);
  CHECK(header == "alpha,final_loss,val_reward_accuracy");
  CHECK(row1.substr(0, 4) == "0.5,");
  CHECK(row2.substr(0, 2) == "2,");
  CHECK(fs::exists(tmp.path / "sweep" / "alpha_0.5" / "checkpoint.bin"));
  CHECK(fs::exists(tmp.path / "sweep" / "alpha_2" / "history.csv"));
  const json manifest = json::parse(slurp(tmp.path / "sweep" / "manifest.json"));
  CHECK(manifest["errors"].empty());
}

TEST_CASE("sweep records failed rows and succeeds when any row completes") {
  TempDir tmp("sweepfail");
  REQUIRE(cmd_prepare(synthetic_prepare(tmp.str("data"), 2, 6)) == kExitOk);

  SweepOptions sopt;
  sopt.alphas = {-1.0, 2.0};  // alpha < 0 fails validation, 2.0 trains
  sopt.train_path = tmp.str("data/train.jsonl");
  sopt.val_path = tmp.str("data/validation.jsonl");
  sopt.epochs = 1;
  sopt.batch_size = 4;
  sopt.base_lr = 1e-3;
  sopt.model = small_model();
  sopt.out_dir = tmp.str("sweep");
  REQUIRE(cmd_sweep(sopt) == kExitOk);

  const json manifest = json::parse(slurp(tmp.path / "sweep" / "manifest.json"));
  REQUIRE(manifest["errors"].size() == 1);
  CHECK(manifest["errors"][0]["alpha"] == -1.0);
  CHECK_FALSE(manifest["errors"][0]["error"].get<std::string>().empty());
  CHECK(line_count(tmp.path / "sweep" / "sweep.csv") == 2);  // header + the good row

  SweepOptions all_bad = sopt;
  all_bad.alphas = {-1.0, -2.0};
  all_bad.out_dir = tmp.str("sweep_bad");
  CHECK(cmd_sweep(all_bad) == kExitUserError);
}

TEST_CASE("output root environment variable resolves relative paths") {
  CHECK(resolve_out_dir("/abs/path") == "/abs/path");
  ::setenv("PREFOPT_OUTPUT_ROOT", "/tmp/prefopt_root", 1);
  CHECK(resolve_out_dir("rel") == "/tmp/prefopt_root/rel");
  ::unsetenv("PREFOPT_OUTPUT_ROOT");
  CHECK(resolve_out_dir("rel") == "rel");
}
