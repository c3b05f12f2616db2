#include <doctest.h>

#include <defsynth/runconfig.hpp>

#include <filesystem>
#include <fstream>
#include <string>

using namespace defsynth;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("defsynth_cfg_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

template <typename F>
std::string thrown_message(F&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

#define CHECK_THROWS_WITH_SUBSTR(expr, substr)                          \
  do {                                                                  \
    std::string msg_ = thrown_message([&] { (void)(expr); });           \
    INFO("message: " << msg_);                                          \
    CHECK(msg_.find(substr) != std::string::npos);                      \
  } while (0)

const json kDefaults{{"iterations", 2000},
                     {"lr_start", 2e-4},
                     {"resume", false},
                     {"data", std::string("")},
                     {"seed", 1}};

}  // namespace

TEST_CASE("value coercion follows the prototype's type") {
  CHECK(cfg::coerce_value(json(5), "12", "k") == json(12));
  CHECK(cfg::coerce_value(json(0.5), "2.5e-3", "k") == json(2.5e-3));
  CHECK(cfg::coerce_value(json(true), "false", "k") == json(false));
  CHECK(cfg::coerce_value(json(false), "1", "k") == json(true));
  CHECK(cfg::coerce_value(json("x"), "path/to/y", "k") == json("path/to/y"));

  CHECK_THROWS_WITH_SUBSTR(cfg::coerce_value(json(5), "12abc", "iters"),
                           "invalid value '12abc' for key 'iters'");
  CHECK_THROWS_WITH_SUBSTR(cfg::coerce_value(json(0.5), "fast", "lr"), "key 'lr'");
  CHECK_THROWS_WITH_SUBSTR(cfg::coerce_value(json(true), "maybe", "flag"), "key 'flag'");
  CHECK_THROWS_WITH_SUBSTR(cfg::coerce_value(json::array(), "x", "arr"), "non-scalar");
}

TEST_CASE("config resolution layers defaults, file, and overrides") {
  SUBCASE("no file, no overrides: defaults pass through") {
    json r = cfg::resolve_config(kDefaults, json(), {});
    CHECK(r == kDefaults);
  }

  SUBCASE("file values replace defaults, overrides beat the file") {
    json file{{"iterations", 500}, {"data", "toy_root"}};
    json r = cfg::resolve_config(kDefaults, file, {{"iterations", "750"}, {"seed", "9"}});
    CHECK(r["iterations"] == 750);
    CHECK(r["data"] == "toy_root");
    CHECK(r["seed"] == 9);
    CHECK(r["lr_start"] == 2e-4);
  }

  SUBCASE("later overrides win") {
    json r = cfg::resolve_config(kDefaults, json(), {{"seed", "3"}, {"seed", "4"}});
    CHECK(r["seed"] == 4);
  }

  SUBCASE("string file values are coerced like overrides") {
    json file{{"iterations", "123"}, {"resume", "true"}};
    json r = cfg::resolve_config(kDefaults, file, {});
    CHECK(r["iterations"] == 123);
    CHECK(r["resume"] == true);
  }

  SUBCASE("an integer default accepts an integer-valued file number") {
    json file{{"lr_start", 1}};  // int into float slot is fine
    json r = cfg::resolve_config(kDefaults, file, {});
    CHECK(r["lr_start"] == 1);
  }

  SUBCASE("unknown keys are named in the error") {
    CHECK_THROWS_WITH_SUBSTR(cfg::resolve_config(kDefaults, json{{"iters", 5}}, {}),
                             "unknown config key 'iters'");
    CHECK_THROWS_WITH_SUBSTR(cfg::resolve_config(kDefaults, json(), {{"lr", "0.1"}}),
                             "unknown override key 'lr'");
  }

  SUBCASE("type mismatches in the file are rejected") {
    CHECK_THROWS_WITH_SUBSTR(
        cfg::resolve_config(kDefaults, json{{"iterations", json::array()}}, {}),
        "wrong type");
    CHECK_THROWS_WITH_SUBSTR(cfg::resolve_config(kDefaults, json::array(), {}),
                             "JSON object");
  }
}

TEST_CASE("config files load with clear failure modes") {
  fs::path dir = fresh_dir("files");
  fs::path good = dir / "good.json";
  std::ofstream(good) << R"({"iterations": 42})";
  CHECK(cfg::load_config_file(good)["iterations"] == 42);

  fs::path bad = dir / "bad.json";
  std::ofstream(bad) << "{nope";
  CHECK_THROWS_WITH_SUBSTR(cfg::load_config_file(bad), "not valid JSON");
  CHECK_THROWS_WITH_SUBSTR(cfg::load_config_file(dir / "absent.json"), "cannot open");
}

TEST_CASE("run manifest round trip is deterministic") {
  fs::path dir = fresh_dir("manifest");
  json config = cfg::resolve_config(kDefaults, json(), {{"seed", "7"}});
  cfg::write_run_manifest(dir, "train", config, 7, {"train_log.jsonl", "ckpt_10"});

  json back = cfg::read_run_manifest(dir);
  CHECK(back["subcommand"] == "train");
  CHECK(back["seed"] == 7);
  CHECK(back["config"] == config);
  CHECK(back["artifacts"] == json::array({"train_log.jsonl", "ckpt_10"}));

  SUBCASE("same invocation twice produces identical bytes") {
    std::ifstream first(dir / "run_manifest.json");
    std::string bytes_a{std::istreambuf_iterator<char>(first),
                        std::istreambuf_iterator<char>()};
    cfg::write_run_manifest(dir, "train", config, 7, {"train_log.jsonl", "ckpt_10"});
    std::ifstream second(dir / "run_manifest.json");
    std::string bytes_b{std::istreambuf_iterator<char>(second),
                        std::istreambuf_iterator<char>()};
    CHECK(bytes_a == bytes_b);
  }

  SUBCASE("missing manifest throws") {
    CHECK_THROWS_WITH_SUBSTR(cfg::read_run_manifest(fresh_dir("nothing")),
                             "no run manifest");
  }
}
