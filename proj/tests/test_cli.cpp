#include <doctest.h>

#include <defsynth/datamodel.hpp>
#include <defsynth/runconfig.hpp>
#include <defsynth/trainer.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <sys/wait.h>

using namespace defsynth;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Runs the installed binary with `args`, capturing both streams.
CliResult run_cli(const std::string& args) {
  static int counter = 0;
  fs::path out_file = fs::temp_directory_path() / ("defsynth_cli_out_" +
                                                   std::to_string(counter));
  fs::path err_file = fs::temp_directory_path() / ("defsynth_cli_err_" +
                                                   std::to_string(counter));
  ++counter;
  std::string cmd = std::string(DEFSYNTH_CLI_PATH) + " " + args + " > " +
                    out_file.string() + " 2> " + err_file.string();
  int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  fs::remove(out_file);
  fs::remove(err_file);
  return r;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("defsynth_climod_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Shared micro pipeline state, built once: toy data and a 12-update run.
struct Pipeline {
  fs::path root;
  fs::path toy;
  fs::path run;

  Pipeline() {
    root = fresh_dir("pipeline");
    toy = root / "toy";
    run = root / "run";
    CliResult mk = run_cli("make-toy-data --out " + toy.string() +
                           " --image_size 16 --samples_per_class 3 --seed 5");
    REQUIRE(mk.exit_code == 0);
    CliResult tr = run_cli(
        "train --data " + toy.string() + " --out " + run.string() +
        " --iterations 12 --image_size 16 --base_width 4 --res_blocks 1 "
        "--disc_stages 2 --batch_size 2 --checkpoint_period 6 --seed 3");
    REQUIRE(tr.exit_code == 0);
  }
};

const Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("cli rejects bad invocations with exit 1") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("").exit_code == 1);            // a subcommand is required
  CHECK(run_cli("unknown-sub").exit_code == 1);

  CliResult unknown = run_cli("make-toy-data --imag_size 16 --out /tmp/defsynth_cli_uk");
  CHECK(unknown.exit_code == 1);
  CHECK(unknown.err.find("imag_size") != std::string::npos);

  CliResult invalid = run_cli("train --data x --n_critic 0 --out /tmp/defsynth_cli_nc");
  CHECK(invalid.exit_code == 1);
  CHECK(invalid.err.find("n_critic") != std::string::npos);
  CHECK(invalid.err.find("at least 1") != std::string::npos);

  CliResult missing = run_cli("train --out /tmp/defsynth_cli_nd --iterations 6");
  CHECK(missing.exit_code == 1);
  CHECK(missing.err.find("--data") != std::string::npos);

  CliResult badval = run_cli("make-toy-data --image_size soon --out /tmp/defsynth_cli_bv");
  CHECK(badval.exit_code == 1);
  CHECK(badval.err.find("image_size") != std::string::npos);
}

TEST_CASE("cli reports runtime failures with exit 2") {
  fs::path out = fresh_dir("rt");
  CliResult r = run_cli("train --data " + (out / "no_such_root").string() + " --out " +
                        out.string() + " --iterations 6");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("make-toy-data writes a loadable dataset and a run manifest") {
  const Pipeline& p = pipeline();
  data::DatasetManifest m = data::load_manifest(p.toy.string(), data::Split::train);
  CHECK(m.records.size() == 18);  // 6 classes x 3
  data::DatasetManifest val = data::load_manifest(p.toy.string(), data::Split::val);
  CHECK(val.records.size() == 6);

  json manifest = cfg::read_run_manifest(p.toy);
  CHECK(manifest["subcommand"] == "make-toy-data");
  CHECK(manifest["seed"] == 5);
  CHECK(manifest["config"]["image_size"] == 16);
  CHECK(manifest["config"]["samples_per_class"] == 3);
  bool has_index = false;
  for (const auto& a : manifest["artifacts"])
    if (a == "index.csv") has_index = true;
  CHECK(has_index);
}

TEST_CASE("train run leaves a schedule-complete log and resumable checkpoints") {
  const Pipeline& p = pipeline();
  CHECK(fs::exists(p.run / "ckpt_6"));
  CHECK(fs::exists(p.run / "ckpt_12"));

  std::ifstream log(p.run / "train_log.jsonl");
  REQUIRE(log.good());
  std::string line;
  int rows = 0, d_steps = 0, g_steps = 0;
  while (std::getline(log, line)) {
    train::LossRow row = train::loss_row_from_json(line);
    (row.kind == 'd' ? d_steps : g_steps) += 1;
    ++rows;
  }
  CHECK(rows == 12);
  CHECK(d_steps == 10);
  CHECK(g_steps == 2);

  json manifest = cfg::read_run_manifest(p.run);
  CHECK(manifest["subcommand"] == "train");
  CHECK(manifest["config"]["iterations"] == 12);
  CHECK(manifest["config"]["data"] == p.toy.string());

  SUBCASE("resume without a checkpoint in a fresh directory fails as validation") {
    fs::path empty = fresh_dir("resume_none");
    CliResult r = run_cli("train --data " + p.toy.string() + " --out " + empty.string() +
                          " --resume true --iterations 12 --image_size 16 --base_width 4 "
                          "--res_blocks 1 --disc_stages 2 --batch_size 2");
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("no checkpoint") != std::string::npos);
  }
}

TEST_CASE("generate writes a corpus, honoring boxes and determinism") {
  const Pipeline& p = pipeline();

  SUBCASE("plain corpus with restorations") {
    fs::path out = fresh_dir("gen_plain");
    CliResult r = run_cli("generate --checkpoint " + p.run.string() + " --data " +
                          p.toy.string() + " --out " + out.string() +
                          " --count 4 --with-restorations --seed 11");
    CHECK(r.exit_code == 0);
    data::DatasetManifest corpus = data::load_manifest(out.string(), data::Split::train);
    CHECK(corpus.records.size() == 8);
    int synthetic = 0, restored = 0;
    for (const auto& rec : corpus.records) {
      if (rec.source == data::Source::synthetic) ++synthetic;
      if (rec.source == data::Source::restored) ++restored;
    }
    CHECK(synthetic == 4);
    CHECK(restored == 4);
    json manifest = cfg::read_run_manifest(out);
    CHECK(manifest["config"]["with_restorations"] == true);
    CHECK(manifest["seed"] == 11);
  }

  SUBCASE("box-conditioned corpus pins the category") {
    fs::path out = fresh_dir("gen_box");
    CliResult r = run_cli("generate --checkpoint " + p.run.string() + " --data " +
                          p.toy.string() + " --out " + out.string() +
                          " --count 3 --box crack:2,2,10,10 --seed 12");
    CHECK(r.exit_code == 0);
    data::DatasetManifest corpus = data::load_manifest(out.string(), data::Split::train);
    REQUIRE(corpus.records.size() == 3);
    for (const auto& rec : corpus.records)
      CHECK(rec.label == data::LabelVector::single(0));
  }

  SUBCASE("repeat invocations with one seed produce identical manifests") {
    fs::path a = fresh_dir("gen_rep_a");
    fs::path b = fresh_dir("gen_rep_b");
    std::string tail = " --data " + p.toy.string() + " --count 3 --seed 8";
    REQUIRE(run_cli("generate --checkpoint " + p.run.string() + " --out " + a.string() +
                    tail).exit_code == 0);
    REQUIRE(run_cli("generate --checkpoint " + p.run.string() + " --out " + b.string() +
                    tail).exit_code == 0);
    CHECK(cfg::read_run_manifest(a) == cfg::read_run_manifest(b));
    CHECK(slurp(a / "index.csv") == slurp(b / "index.csv"));
    CHECK(slurp(a / "images/synthetic/0.png") == slurp(b / "images/synthetic/0.png"));
  }

  SUBCASE("conflicting control sources are rejected") {
    fs::path out = fresh_dir("gen_conflict");
    CliResult r = run_cli("generate --checkpoint " + p.run.string() + " --data " +
                          p.toy.string() + " --out " + out.string() +
                          " --count 2 --box crack:0,0,4,4 --control-map nope.zip");
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("not both") != std::string::npos);
  }
}

TEST_CASE("eval-fid emits the report fields") {
  const Pipeline& p = pipeline();
  fs::path corpus = fresh_dir("fid_corpus");
  REQUIRE(run_cli("generate --checkpoint " + p.run.string() + " --data " + p.toy.string() +
                  " --out " + corpus.string() + " --count 5 --seed 2").exit_code == 0);
  fs::path out = fresh_dir("fid_out");
  CliResult r = run_cli("eval-fid --real " + p.toy.string() + " --fake " + corpus.string() +
                        " --k 4 --seed 6 --baseline true --out " + out.string());
  CHECK(r.exit_code == 0);

  json report = json::parse(slurp(out / "fid_report.json"));
  CHECK(report["embedder"] == "pixel_pca");
  CHECK(report["k"] == 4);
  CHECK(report["n_real"] == 15);  // 18 train records minus 3 normals
  CHECK(report["n_fake"] == 5);
  CHECK(report["seed"] == 6);
  CHECK(report["fid"].get<double>() >= 0.0);
  CHECK(report["ideal_split_fid"].get<double>() >= 0.0);
  CHECK(json::parse(r.out) == report);

  SUBCASE("an unknown embedder is a validation error") {
    CliResult bad = run_cli("eval-fid --real " + p.toy.string() + " --fake " +
                            corpus.string() + " --embedder inception_v9 --out " +
                            out.string());
    CHECK(bad.exit_code == 1);
    CHECK(bad.err.find("unknown embedder") != std::string::npos);
  }
}

TEST_CASE("train-inspector consumes real and augmented data") {
  const Pipeline& p = pipeline();
  fs::path corpus = fresh_dir("insp_corpus");
  REQUIRE(run_cli("generate --checkpoint " + p.run.string() + " --data " + p.toy.string() +
                  " --out " + corpus.string() +
                  " --count 4 --with-restorations --seed 21").exit_code == 0);

  fs::path base_out = fresh_dir("insp_base");
  CliResult base = run_cli("train-inspector --real " + p.toy.string() + " --out " +
                           base_out.string() + " --epochs 2 --input_size 16 --seed 9");
  CHECK(base.exit_code == 0);
  CHECK(base.err.find("source head disabled") != std::string::npos);
  CHECK(fs::exists(base_out / "metrics.jsonl"));
  CHECK(fs::exists(base_out / "inspector_best.bin"));

  fs::path aug_out = fresh_dir("insp_aug");
  CliResult aug = run_cli("train-inspector --real " + p.toy.string() + " --augmentation " +
                          corpus.string() + " --out " + aug_out.string() +
                          " --epochs 2 --input_size 16 --seed 9");
  CHECK(aug.exit_code == 0);
  CHECK(aug.err.find("source head disabled") == std::string::npos);
  CHECK(aug.out.find("4 synthetic, 4 restored") != std::string::npos);

  json manifest = cfg::read_run_manifest(aug_out);
  CHECK(manifest["subcommand"] == "train-inspector");
  CHECK(manifest["config"]["augmentation"] == corpus.string());
  CHECK(manifest["config"]["lambda_grl"] == 1.0);

  SUBCASE("config file plus flag override round-trips into the manifest") {
    fs::path cfg_file = fresh_dir("insp_cfg") / "insp.json";
    std::ofstream(cfg_file) << R"({"epochs": 3, "lambda_grl": 0.5, "input_size": 16})";
    fs::path out = fresh_dir("insp_file");
    CliResult r = run_cli("train-inspector --real " + p.toy.string() + " --config " +
                          cfg_file.string() + " --out " + out.string() +
                          " --epochs 2 --seed 4");
    CHECK(r.exit_code == 0);
    json m = cfg::read_run_manifest(out);
    CHECK(m["config"]["epochs"] == 2);       // flag beats file
    CHECK(m["config"]["lambda_grl"] == 0.5); // file beats default
    CHECK(m["config"]["input_size"] == 16);
    CHECK(m["config"]["seed"] == 4);
  }
}
