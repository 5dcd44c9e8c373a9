#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "plab/pipeline.hpp"
#include "test_util.hpp"

using namespace plab;
using plab::testing::read_file;
using plab::testing::TempDir;
using plab::testing::write_file;
namespace fs = std::filesystem;

namespace {

const char* const kSmallConfig = R"({
  "seed": 3,
  "dataset": {"synth": {"n_train": 400, "n_test": 200}},
  "train": {"bucket_bits": 14},
  "attack": {"type": "LF", "budget": 30},
  "sweep": {"budgets": [10, 30, 100], "seeds": [1, 2]},
  "defense": {"name": "dpa", "k": 4},
  "advgen": {"limit": 20}
})";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PLAB_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = read_file(e.path());
  return out;
}

std::string with(const std::string& base, const std::string& patch) {
  auto j = nlohmann::json::parse(base);
  j.merge_patch(nlohmann::json::parse(patch));
  return j.dump();
}

}  // namespace

TEST_SUITE("cli_runner") {

TEST_CASE("config defaults and canonical echo") {
  const auto cfg = ExperimentConfig::from_json("{}");
  CHECK(cfg.seed == 1);
  REQUIRE(cfg.dataset.synth.has_value());
  CHECK(cfg.dataset.synth->n_train == 4000);
  CHECK(cfg.dataset.synth->n_test == 1000);
  CHECK(cfg.dataset.synth->vocab_size == 200);
  CHECK_FALSE(cfg.attack.type.has_value());
  CHECK(cfg.defense.name == DefenseName::kNone);
  CHECK(cfg.defense.effective_k() == 32);
  const auto again = ExperimentConfig::from_json(cfg.to_json());
  CHECK(again.to_json() == cfg.to_json());
  const auto small = ExperimentConfig::from_json(kSmallConfig);
  CHECK(ExperimentConfig::from_json(small.to_json(2)).to_json() == small.to_json());
  CHECK(small.attack.type == AttackType::kLabelFlip);
  CHECK(small.defense.effective_k() == 4);
  CHECK(ExperimentConfig::from_json(R"({"defense":{"name":"knn"}})").defense.effective_k() == 10);
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"sed": 1})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"train": {"epoch": 3}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"seed": "one"})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json("not json"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"attack": {"type": "XX"}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"defense": {"name": "magic"}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"train": {"bucket_bits": 40}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"sweep": {"budgets": [30, 10]}})").validate(), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"attack": {"target_class": 5}})").validate(), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"defense": {"p": 2}})").validate(), ConfigError);
  CHECK_THROWS_AS(
      ExperimentConfig::from_json(R"({"dataset": {"synth": {}, "jsonl": {"train": "a", "test": "b"}}})"),
      ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/plab.json"), ConfigError);
}

TEST_CASE("jsonl paths resolve against the config directory") {
  TempDir dir("cli");
  write_file(dir / "train.jsonl", "{\"text\":\"good film\",\"label\":\"pos\"}\n{\"text\":\"bad film\",\"label\":\"neg\"}\n");
  write_file(dir / "test.jsonl", "{\"text\":\"good\",\"label\":\"pos\"}\n");
  const std::string text = R"({"dataset": {"jsonl": {"train": "train.jsonl", "test": "test.jsonl",
                               "class_names": ["neg", "pos"]}}})";
  write_file(dir / "c.json", text);
  const auto cfg = ExperimentConfig::load(dir / "c.json");
  CHECK_NOTHROW(cfg.validate());
  CHECK(fs::path(cfg.dataset.train_path).is_absolute());
  CHECK(fs::equivalent(cfg.dataset.train_path, dir / "train.jsonl"));
  CHECK_THROWS_AS(ExperimentConfig::from_json(text, dir / "elsewhere").validate(), ConfigError);
}

TEST_CASE("exit code taxonomy") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(BadK("x")) == 2);
  CHECK(exit_code_for(InsufficientSource("x")) == 3);
  CHECK(exit_code_for(CorruptModel("x")) == 3);
  CHECK(exit_code_for(ExternalFailure(1, "x")) == 4);
}

TEST_CASE("every command reruns byte-identically, also with parallel jobs") {
  TempDir dir("cli");
  write_file(dir / "c.json", kSmallConfig);
  const std::string cfg = (dir / "c.json").string();
  for (const auto& cmd : command_names()) {
    CHECK(run_cli(cmd + " --config " + cfg + " --out " + (dir / "a").string()) == 0);
    CHECK(run_cli(cmd + " --config " + cfg + " --out " + (dir / "b").string()) == 0);
    CHECK(run_cli("--jobs 3 " + cmd + " --config " + cfg + " --out " + (dir / "c").string()) == 0);
  }
  const auto a = snapshot(dir / "a");
  CHECK(a.size() >= 16);
  CHECK(a == snapshot(dir / "b"));
  CHECK(a == snapshot(dir / "c"));
  CHECK(read_file(dir / "c.json") == kSmallConfig);

  // Every artifact carries the seed and the configuration echo; JSONL
  // outputs carry them through their manifest.
  for (const auto& [name, content] : a) {
    if (name.ends_with(".csv")) {
      CHECK(content.rfind("# plab ", 0) == 0);
      CHECK(content.find("# seed: 3\n") != std::string::npos);
      CHECK(content.find("# config: {\"seed\":3,") != std::string::npos);
    } else if (name.ends_with(".json")) {
      const auto j = nlohmann::json::parse(content);
      CHECK(j.at("seed").get<int>() == 3);
      CHECK(j.contains("config"));
    } else if (name.ends_with(".plab")) {
      CHECK(deserialize_model(content).metadata().find("\"seed\":3") != std::string::npos);
    }
  }
  CHECK(a.count("poison_manifest.json"));
  CHECK(a.count("advgen_manifest.json"));

  const auto manifest = nlohmann::json::parse(a.at("poison_manifest.json"));
  CHECK(manifest.at("counts").at("poison_lf").get<int>() == 30);
  CHECK(manifest.at("total").get<int>() == 430);
  CHECK(manifest.at("poisons").size() == 30);

  const auto& curve = a.at("sweep_LF.csv");
  const auto body = curve.substr(curve.find("budget,mean_asr"));
  CHECK(std::count(body.begin(), body.end(), '\n') == 4);
}

TEST_CASE("upstream artifacts reproduce in-memory results and stay untouched") {
  TempDir dir("cli");
  write_file(dir / "c.json", kSmallConfig);
  const std::string cfg = " --config " + (dir / "c.json").string();
  REQUIRE(run_cli("poison" + cfg + " --out " + (dir / "p").string()) == 0);
  REQUIRE(run_cli("train" + cfg + " --out " + (dir / "mem").string()) == 0);
  const auto poisoned = dir / "p" / "poisoned_train.jsonl";
  const auto before = read_file(poisoned);
  REQUIRE(run_cli("train" + cfg + " --train " + poisoned.string() + " --out " + (dir / "file").string()) == 0);
  CHECK(read_file(dir / "mem" / "model.plab") == read_file(dir / "file" / "model.plab"));
  CHECK(read_file(poisoned) == before);

  const auto model = dir / "mem" / "model.plab";
  const auto model_bytes = read_file(model);
  REQUIRE(run_cli("eval" + cfg + " --out " + (dir / "e1").string()) == 0);
  REQUIRE(run_cli("eval" + cfg + " --model " + model.string() + " --out " + (dir / "e2").string()) == 0);
  CHECK(read_file(dir / "e1" / "eval_report.json") == read_file(dir / "e2" / "eval_report.json"));
  CHECK(read_file(model) == model_bytes);
}

TEST_CASE("clean model evaluation is accurate with baseline ASR") {
  TempDir dir("cli");
  write_file(dir / "c.json", with(kSmallConfig, R"({"attack": {"type": "none"}})"));
  REQUIRE(run_cli("eval --config " + (dir / "c.json").string() + " --out " + (dir / "o").string()) == 0);
  const auto r = report_from_json(read_file(dir / "o" / "eval_report.json"));
  CHECK(r.attack == "none");
  CHECK(r.defense_tag == "none");
  CHECK(r.acc > 0.75);
  CHECK(r.asr < 0.5);
  CHECK(r.wall_ms == 0);
}

TEST_CASE("--seed overrides the configured seed") {
  TempDir dir("cli");
  write_file(dir / "c.json", kSmallConfig);
  const std::string cfg = " --config " + (dir / "c.json").string();
  REQUIRE(run_cli("--seed 9 poison" + cfg + " --out " + (dir / "s9").string()) == 0);
  REQUIRE(run_cli("poison" + cfg + " --out " + (dir / "s3").string()) == 0);
  const auto m9 = nlohmann::json::parse(read_file(dir / "s9" / "poison_manifest.json"));
  CHECK(m9.at("seed").get<int>() == 9);
  CHECK(read_file(dir / "s9" / "poisoned_train.jsonl") != read_file(dir / "s3" / "poisoned_train.jsonl"));
}

TEST_CASE("exit codes") {
  TempDir dir("cli");
  const auto out = " --out " + (dir / "o").string();
  auto cfg_with = [&](const std::string& name, const std::string& patch) {
    write_file(dir / name, with(kSmallConfig, patch));
    return " --config " + (dir / name).string();
  };

  CHECK(run_cli("eval --config " + (dir / "missing.json").string() + out) == 2);
  CHECK(run_cli("eval" + cfg_with("unk.json", R"({"bogus": 1})") + out) == 2);
  CHECK(run_cli("defend" + cfg_with("bigk.json", R"({"defense": {"name": "dpa", "k": 100000}})") + out) == 2);
  CHECK(run_cli("defend" + cfg_with("trainknn.json", R"({"defense": {"name": "knn", "mode": "train"}})") + out) == 2);
  CHECK(run_cli("poison" + cfg_with("noattack.json", R"({"attack": {"type": "none"}})") + out) == 2);
  CHECK(run_cli("frobnicate" + cfg_with("ok.json", "{}") + out) == 2);
  CHECK(run_cli("eval --no-such-flag") == 2);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("--jobs 0 eval" + cfg_with("ok.json", "{}") + out) == 2);

  CHECK(run_cli("defend" +
                cfg_with("ext.json", R"({"defense": {"name": "paraphrase", "command": "false"}})") + out) == 4);

  write_file(dir / "one.jsonl", "{\"text\":\"good film\",\"label\":\"pos\"}\n{\"text\":\"great film\",\"label\":\"pos\"}\n");
  const std::string single = R"({"dataset": {"jsonl": {"train": "one.jsonl", "test": "one.jsonl",
                                 "class_names": ["neg", "pos"]}}, "attack": {"type": "LF", "budget": 1}})";
  write_file(dir / "single.json", single);
  CHECK(run_cli("poison --config " + (dir / "single.json").string() + out) == 3);

  write_file(dir / "broken.plab", "PLAB\x01");
  CHECK(run_cli("eval" + cfg_with("ok2.json", "{}") + " --model " + (dir / "broken.plab").string() + out) == 3);
  write_file(dir / "bad.jsonl", "{\"text\":\"x\"}\n");
  write_file(dir / "bad.json", R"({"dataset": {"jsonl": {"train": "bad.jsonl", "test": "bad.jsonl",
                                   "class_names": ["neg", "pos"]}}})");
  CHECK(run_cli("train --config " + (dir / "bad.json").string() + out) == 3);

  CHECK(run_cli("eval" + cfg_with("ok3.json", "{}") + out) == 0);
}

TEST_CASE("defend modes write their reports") {
  TempDir dir("cli");
  const std::vector<std::string> patches = {
      R"({"defense": {"name": "onion"}})",
      R"({"defense": {"name": "random"}})",
      R"({"defense": {"name": "paraphrase"}})",
      R"({"defense": {"name": "paraphrase", "mode": "train"}})",
      R"({"defense": {"name": "onion", "mode": "train"}})",
      R"({"defense": {"name": "paraphrase", "command": "cat"}})",
      R"({"defense": {"name": "knn"}})",
      R"({"defense": {"name": "dpa", "k": 4}})",
      R"({"defense": {"name": "sdpa", "k": 4}})",
  };
  const std::vector<std::string> tags = {"onion-test", "random-test", "paraphrase-test", "paraphrase-train",
                                         "onion-train", "paraphrase-external-test", "knn", "dpa", "sdpa"};
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto name = "d" + std::to_string(i);
    write_file(dir / (name + ".json"), with(kSmallConfig, patches[i]));
    REQUIRE(run_cli("defend --config " + (dir / (name + ".json")).string() + " --out " + (dir / name).string()) == 0);
    const auto r = report_from_json(read_file(dir / name / "defend_report.json"));
    CHECK(r.defense_tag == tags[i]);
    CHECK(r.acc > 0.5);
  }
  CHECK(fs::exists(dir / "d7" / "dpa_certificates.csv"));
}

}  // TEST_SUITE
