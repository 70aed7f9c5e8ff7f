#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csdn/checkpoint.hpp"
#include "csdn/cli.hpp"
#include "csdn/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace csdn;

namespace {

const char* kTiny = R"(dataset:
  synthetic:
    num_identities: 4
    images_per_id_per_modality: 3
    height: 8
    width: 6
model:
  stem_channels: 3
  trunk_channels: 4
  feature_dim: 6
train:
  iterations_per_epoch: 3
  batch:
    identities: 2
    visible_per_identity: 2
    infrared_per_identity: 2
  mspl: {epochs: 2}
  sii: {epochs: 2}
  hse: {epochs: 3, decay_epochs: [2]}
eval:
  trials: 2
  protocols: [all-single]
)";

struct Sandbox {
  fs::path dir;
  explicit Sandbox(const std::string& name) : dir(fs::temp_directory_path() / ("csdn_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "tiny.yaml") << kTiny;
  }
  fs::path out(const std::string& name = "out") const { return dir / name; }
};

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(const Sandbox& box, std::vector<std::string> args, const std::string& out_name = "out") {
  args.insert(args.begin() + 1, {"--config", (box.dir / "tiny.yaml").string(), "--output", box.out(out_name).string()});
  args.insert(args.begin(), "csdn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("generate-data writes two manifests deterministically") {
  Sandbox box("generate");
  auto r = invoke(box, {"generate-data"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("train 24 records, test 24 records") != std::string::npos);
  CHECK(fs::exists(box.out() / "data/train.manifest"));
  CHECK(fs::exists(box.out() / "data/test.manifest"));
  CHECK(invoke(box, {"generate-data"}, "again").code == 0);
  for (const char* f : {"data/train.manifest", "data/train.images.bin", "data/test.manifest", "data/test.images.bin"})
    CHECK(slurp(box.out() / f) == slurp(box.out("again") / f));

  r = invoke(box, {"generate-data"});
  CHECK(r.code == 2);
  CHECK(r.err.find("--force") != std::string::npos);
  CHECK(invoke(box, {"generate-data", "--force"}).code == 0);
}

TEST_CASE("train writes stage checkpoints, metrics and the freezing ledger") {
  Sandbox box("train");
  REQUIRE(invoke(box, {"generate-data"}).code == 0);
  const auto r = invoke(box, {"train"});
  REQUIRE(r.code == 0);
  std::vector<std::string> ckpts;
  for (const auto& e : fs::directory_iterator(box.out() / "checkpoints")) ckpts.push_back(e.path().filename());
  std::sort(ckpts.begin(), ckpts.end());
  CHECK(ckpts == std::vector<std::string>{"hse.ckpt", "mspl.ckpt", "sii.ckpt"});
  CHECK(jsonl(box.out() / "metrics.jsonl").size() == 7);

  const auto ledger = json::parse(slurp(box.out() / "freeze_ledger.json"));
  CHECK(ledger.at("matches") == true);
  REQUIRE(ledger.at("stages").size() == 3);
  CHECK(ledger["stages"][0]["changed"] == json{"prompt_infrared", "prompt_visible"});
  CHECK(ledger["stages"][1]["changed"] == json{"fusion"});
  CHECK(ledger["stages"][2]["changed"] == json{"head", "stems", "trunk"});
  for (const auto& s : ledger["stages"]) CHECK(s["frozen_intact"] == true);

  const auto again = invoke(box, {"train"});
  CHECK(again.code == 2);
  CHECK(invoke(box, {"train", "--force"}).code == 0);
}

TEST_CASE("baseline mode trains stage 3 only and has no text-side parameters") {
  Sandbox box("baseline");
  REQUIRE(invoke(box, {"generate-data"}).code == 0);
  REQUIRE(invoke(box, {"train", "--mode", "baseline"}).code == 0);
  CHECK(fs::exists(box.out() / "checkpoints/hse.ckpt"));
  CHECK_FALSE(fs::exists(box.out() / "checkpoints/mspl.ckpt"));
  auto ck = load_checkpoint(box.out() / "checkpoints/hse.ckpt");
  CHECK_FALSE(ck.model.has_group("prompt_visible"));
  CHECK_FALSE(ck.model.has_group("fusion"));
  const auto ledger = json::parse(slurp(box.out() / "freeze_ledger.json"));
  CHECK(ledger["stages"].size() == 1);
  CHECK(ledger["matches"] == true);
}

TEST_CASE("interrupted training resumes to the uninterrupted result") {
  Sandbox box("resume");
  REQUIRE(invoke(box, {"generate-data"}).code == 0);
  REQUIRE(invoke(box, {"generate-data"}, "ref").code == 0);
  REQUIRE(invoke(box, {"train"}, "ref").code == 0);

  for (int halt : {1, 3, 5}) {
    INFO("halt after " << halt);
    auto r = invoke(box, {"train", "--force", "--halt-after", std::to_string(halt)});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("--resume") != std::string::npos);
    CHECK_FALSE(fs::exists(box.out() / "checkpoints/hse.ckpt"));
    CHECK(jsonl(box.out() / "metrics.jsonl").size() == static_cast<std::size_t>(halt));
    r = invoke(box, {"train", "--resume"});
    REQUIRE(r.code == 0);
    const auto a = jsonl(box.out() / "metrics.jsonl");
    const auto b = jsonl(box.out("ref") / "metrics.jsonl");
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]["stage"] == b[i]["stage"]);
      CHECK(a[i]["epoch"] == b[i]["epoch"]);
      CHECK(std::abs(a[i]["loss"].get<double>() - b[i]["loss"].get<double>()) <= 1e-6);
    }
    CHECK(json::parse(slurp(box.out() / "freeze_ledger.json"))["matches"] == true);
    REQUIRE(invoke(box, {"evaluate"}).code == 0);
    REQUIRE(invoke(box, {"evaluate"}, "ref").code == 0);
    const auto ra = json::parse(slurp(box.out() / "reports/evaluation.json"));
    const auto rb = json::parse(slurp(box.out("ref") / "reports/evaluation.json"));
    CHECK(std::abs(ra[0]["report"]["map"].get<double>() - rb[0]["report"]["map"].get<double>()) <= 1e-6);
    CHECK(ra[0]["report"]["cmc"] == rb[0]["report"]["cmc"]);
  }

  // Resuming under a different config is refused.
  REQUIRE(invoke(box, {"train", "--force", "--halt-after", "2"}).code == 0);
  auto r = invoke(box, {"train", "--resume", "--seed", "99"});
  CHECK(r.code == 4);
  CHECK(invoke(box, {"train", "--resume"}, "fresh").code == 3);
}

TEST_CASE("evaluate is repeatable and reports one row per protocol") {
  Sandbox box("evaluate");
  REQUIRE(invoke(box, {"generate-data"}).code == 0);
  REQUIRE(invoke(box, {"train"}).code == 0);
  auto r = invoke(box, {"evaluate", "--protocol", "single-shot", "--protocol", "multi-shot", "--plots"});
  REQUIRE(r.code == 0);
  const auto first = slurp(box.out() / "reports/evaluation.json");
  const auto tsv = slurp(box.out() / "reports/evaluation.tsv");
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 3);
  CHECK(tsv.find("all-single-ir2vis") != std::string::npos);
  CHECK(tsv.find("all-multi-ir2vis") != std::string::npos);
  CHECK(slurp(box.out() / "plots/cmc.svg").rfind("<svg", 0) == 0);
  REQUIRE(invoke(box, {"evaluate", "--protocol", "single-shot", "--protocol", "multi-shot"}).code == 0);
  CHECK(slurp(box.out() / "reports/evaluation.json") == first);
}

TEST_CASE("sweep grammar") {
  const auto s = cli::parse_sweep("lambda1=0,0.05,...,0.3");
  CHECK(s.parameter == "lambda1");
  CHECK(s.values == std::vector<double>{0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3});
  CHECK(cli::parse_sweep("lambda3=0.2").values == std::vector<double>{0.2});
  CHECK(cli::parse_sweep("lambda2=0,0.04,...,0.1").values == std::vector<double>{0, 0.04, 0.08, 0.1});
  CHECK_THROWS_AS(cli::parse_sweep("gamma=1"), ConfigError);
  CHECK_THROWS_AS(cli::parse_sweep("lambda1"), ConfigError);
  CHECK_THROWS_AS(cli::parse_sweep("lambda1=0,...,1"), ConfigError);
  CHECK_THROWS_AS(cli::parse_sweep("lambda1=0,x"), ConfigError);
  CHECK_THROWS_AS(cli::parse_sweep("lambda1=-1"), ConfigError);
}

TEST_CASE("sweep writes a per-value table and bar charts") {
  Sandbox box("sweep");
  REQUIRE(invoke(box, {"generate-data"}).code == 0);
  auto r = invoke(box, {"sweep", "--sweep", "lambda1=0,0.15", "--plots"});
  REQUIRE(r.code == 0);
  const auto tsv = slurp(box.out() / "sweep/lambda1.tsv");
  CHECK(tsv.find("lambda1=0\t") != std::string::npos);
  CHECK(tsv.find("lambda1=0.15\t") != std::string::npos);
  CHECK(fs::exists(box.out() / "plots/sweep_lambda1_all-single-ir2vis.svg"));
  CHECK(invoke(box, {"sweep", "--sweep", "lambda1=0"}).code == 2);

  // The default weight reproduces a plain training run.
  REQUIRE(invoke(box, {"train"}).code == 0);
  REQUIRE(invoke(box, {"evaluate"}).code == 0);
  const auto sweep = json::parse(slurp(box.out() / "sweep/lambda1.json"));
  const auto eval = json::parse(slurp(box.out() / "reports/evaluation.json"));
  CHECK(sweep["rows"][1]["reports"][0]["map"] == eval[0]["report"]["map"]);
}

TEST_CASE("validation failures map to exit codes and name the key") {
  Sandbox box("errors");
  std::ofstream(box.dir / "bad.yaml") << "train:\n  seed: 1\n  lamda1: 0.2\n";
  const char* argv[] = {"csdn", "train", "--config", nullptr};
  const auto bad = (box.dir / "bad.yaml").string();
  argv[3] = bad.c_str();
  std::ostringstream out, err;
  CHECK(cli::run(4, argv, out, err) == 2);
  CHECK(err.str().find("train.lamda1 (line 3)") != std::string::npos);

  auto r = invoke(box, {"train", "--set", "eval.trials=0"});
  CHECK(r.code == 2);
  CHECK(r.err.find("eval.trials") != std::string::npos);
  CHECK(invoke(box, {"train", "--mode", "resnet"}).code == 2);
  CHECK(invoke(box, {"frobnicate"}).code == 2);

  r = invoke(box, {"train"});
  CHECK(r.code == 3);
  CHECK(r.err.find("generate-data") != std::string::npos);

  REQUIRE(invoke(box, {"generate-data"}).code == 0);
  CHECK(invoke(box, {"evaluate"}).code == 4);
  REQUIRE(invoke(box, {"train", "--mode", "baseline"}).code == 0);
  std::ofstream(box.out() / "checkpoints/hse.ckpt", std::ios::binary | std::ios::trunc) << "garbage";
  CHECK(invoke(box, {"evaluate"}).code == 4);

  // A checkpoint trained on other image sizes cannot score this test set.
  REQUIRE(invoke(box, {"train", "--force", "--mode", "baseline"}).code == 0);
  REQUIRE(invoke(box, {"generate-data", "--force", "--set", "dataset.synthetic.height=10"}).code == 0);
  r = invoke(box, {"evaluate"});
  CHECK(r.code == 3);
  CHECK(r.err.find("shape") != std::string::npos);
}

TEST_CASE("outputs stay inside the output directory") {
  Sandbox box("confined");
  const auto cwd = fs::current_path();
  fs::create_directories(box.dir / "work");
  fs::current_path(box.dir / "work");
  REQUIRE(invoke(box, {"generate-data"}).code == 0);
  REQUIRE(invoke(box, {"train"}).code == 0);
  REQUIRE(invoke(box, {"evaluate", "--plots"}).code == 0);
  REQUIRE(invoke(box, {"sweep", "--sweep", "lambda2=0.05"}).code == 0);
  fs::current_path(cwd);
  CHECK(fs::is_empty(box.dir / "work"));
  std::vector<std::string> top;
  for (const auto& e : fs::directory_iterator(box.dir)) top.push_back(e.path().filename());
  std::sort(top.begin(), top.end());
  CHECK(top == std::vector<std::string>{"out", "tiny.yaml", "work"});
}
