#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cmllm/cli/commands.hpp"
#include "cmllm/cli/experiment.hpp"
#include "cmllm/csv.hpp"
#include "cmllm/graph_json.hpp"
#include "cmllm/model/cm_model.hpp"
#include "cmllm/nn/checkpoint.hpp"
#include "cmllm/plant.hpp"

namespace fs = std::filesystem;
using namespace cmllm;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "cmllm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cmllm_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

json small_experiment(std::uint64_t seed = 3) {
  return {
      {"seed", seed},
      {"data", {{"generator", {{"resolution_minutes", 60}}}, {"n_days", 5}, {"holdout_days", 1}}},
      {"task_params", {{"mu", 4}, {"sigma", 1}, {"segments_per_variable", 1}, {"horizon", 6}, {"factor", 3}}},
      {"model",
       {{"d_hidden", 8},
        {"layers", 1},
        {"heads", 2},
        {"ff_dim", 16},
        {"lora_rank", 2},
        {"dgp", {{"d_g", 4}, {"d_causal", 4}}}}},
      {"training", {{"epochs", 2}, {"lr", 1e-3}, {"batch_size", 4}, {"l_fix", 24}}},
  };
}

fs::path write_config(const fs::path& dir, const json& cfg, const std::string& name = "experiment.json") {
  const fs::path p = dir / name;
  write(p, cfg.dump(2));
  return p;
}

std::set<std::pair<int, int>> undirected(const causal::CausalGraph& g) {
  std::set<std::pair<int, int>> s;
  for (const auto& e : g.edges) s.insert({std::min(e.from, e.to), std::max(e.from, e.to)});
  return s;
}

}  // namespace

TEST_CASE("gen is byte-identical for a fixed seed") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  REQUIRE(run({"gen", "--seed", "7", "--days", "2", "--out", a.string()}).code == 0);
  REQUIRE(run({"gen", "--seed", "7", "--days", "2", "--out", b.string()}).code == 0);
  for (const char* f : {"day_000.csv", "day_001.csv", "manifest.json", "prior_graph.json", "truth_graph.json"}) {
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
  }
  const auto day = csv::read_series_file(a / "day_000.csv").series;
  CHECK(day.num_variables() == 6);
  CHECK(day.length() == 1440);
  CHECK(day.variable_names == plant::variable_names());

  const auto c = scratch("gen_c");
  REQUIRE(run({"gen", "--seed", "8", "--days", "1", "--out", c.string()}).code == 0);
  CHECK(slurp(a / "day_000.csv") != slurp(c / "day_000.csv"));
  CHECK(run({"gen", "--days", "1", "--out", c.string()}).code == 3);
  CHECK(run({"gen", "--seed", "1", "--resolution", "7", "--out", c.string()}).code == 3);
}

TEST_CASE("discover keeps the prior and shrinks with alpha") {
  const auto dir = scratch("discover");
  REQUIRE(run({"gen", "--seed", "11", "--days", "20", "--resolution", "15", "--out", dir.string()}).code == 0);
  const auto r = run({"discover", (dir / "manifest.json").string(), "--out", (dir / "g05.json").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("pv_output") != std::string::npos);
  const auto g05 = causal::causal_graph_from_json(causal::load_graph_json(dir / "g05.json"));
  const auto prior = plant::physical_prior();
  for (const auto& [u, v] : prior.edges) {
    const auto* e = g05.find(u, v);
    REQUIRE(e != nullptr);
    CHECK(e->prior);
  }
  REQUIRE(run({"discover", (dir / "manifest.json").string(), "--alpha", "0.01", "--out", (dir / "g01.json").string()})
              .code == 0);
  const auto g01 = causal::causal_graph_from_json(causal::load_graph_json(dir / "g01.json"));
  const auto s05 = undirected(g05), s01 = undirected(g01);
  for (const auto& p : s01) CHECK(s05.count(p) == 1);

  std::vector<std::string> csvs;
  for (int d = 0; d < 5; ++d) csvs.push_back((dir / ("day_00" + std::to_string(d) + ".csv")).string());
  auto args = csvs;
  args.insert(args.begin(), "discover");
  args.push_back("--prior");
  args.push_back((dir / "prior_graph.json").string());
  CHECK(run(args).code == 0);
}

TEST_CASE("malformed inputs and unwritable outputs map to their exit codes") {
  const auto dir = scratch("errors");
  write(dir / "empty.csv", "");
  CHECK(run({"discover", (dir / "empty.csv").string()}).code == 3);
  REQUIRE(run({"gen", "--seed", "1", "--days", "2", "--resolution", "60", "--out", dir.string()}).code == 0);
  write(dir / "bad_prior.json", "{\"nodes\": [\"a\"], \"edges\": [[0, 5]]}");
  CHECK(run({"discover", (dir / "day_000.csv").string(), (dir / "day_001.csv").string(), "--prior",
             (dir / "bad_prior.json").string()})
            .code == 3);
  write(dir / "broken.json", "{not json");
  CHECK(run({"discover", (dir / "day_000.csv").string(), "--prior", (dir / "broken.json").string()}).code == 3);
  CHECK(run({"gen", "--seed", "1", "--days", "1", "--out", "/proc/cmllm_cannot_write_here"}).code == 2);
  CHECK(run({"nonsense"}).code == 3);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("config hash follows the config bytes") {
  const std::string a = small_experiment().dump(2);
  CHECK(cli::config_hash(a) == cli::config_hash(a));
  CHECK(cli::config_hash(a) != cli::config_hash(a + " "));
  CHECK(cli::config_hash(a).size() == 16);
}

TEST_CASE("train, eval and infer round trip") {
  const auto dir = scratch("train");
  const auto cfg_path = write_config(dir, small_experiment());
  const auto out1 = dir / "run1", out2 = dir / "run2";
  const auto r1 = run({"train", "--config", cfg_path.string(), "--out", out1.string()});
  REQUIRE_MESSAGE(r1.code == 0, r1.err);
  REQUIRE(run({"train", "--config", cfg_path.string(), "--out", out2.string()}).code == 0);
  for (const char* f : {"checkpoint.bin", "loss.csv", "graph.json", "run_report.json"}) CHECK(fs::exists(out1 / f));
  CHECK(slurp(out1 / "loss.csv") == slurp(out2 / "loss.csv"));
  CHECK(slurp(out1 / "checkpoint.bin") == slurp(out2 / "checkpoint.bin"));

  const json report = json::parse(slurp(out1 / "run_report.json"));
  CHECK(report["config_hash"] == cli::config_hash(slurp(cfg_path)));
  CHECK(report["seed"] == 3);
  CHECK(report.contains("metrics"));

  // Same config content with different bytes gets a different hash.
  const auto cfg2 = write_config(dir, small_experiment(), "compact.json");
  write(cfg2, small_experiment().dump());
  REQUIRE(run({"train", "--config", cfg2.string(), "--epochs", "1", "--out", (dir / "run3").string()}).code == 0);
  const json report3 = json::parse(slurp(dir / "run3" / "run_report.json"));
  CHECK(report3["config_hash"] != report["config_hash"]);

  // Fresh days from another seed for evaluation and inference.
  const auto data = dir / "data";
  REQUIRE(run({"gen", "--seed", "99", "--days", "2", "--resolution", "60", "--out", data.string()}).code == 0);
  const auto ev = run({"eval", "--checkpoint", (out1 / "checkpoint.bin").string(), (data / "day_000.csv").string(),
                       (data / "day_001.csv").string(), "--out", (dir / "eval").string()});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  const json metrics = json::parse(slurp(dir / "eval" / "metrics.json"));
  for (const char* t : {"imputation", "forecast", "superres"}) {
    REQUIRE(metrics.contains(t));
    CHECK(metrics[t]["masked"]["scope"] == "masked");
    CHECK(metrics[t]["all_points"]["cells"].get<int>() > metrics[t]["masked"]["cells"].get<int>());
  }
  CHECK(slurp(dir / "eval" / "metrics.csv").find("forecast/masked") != std::string::npos);

  const auto rec = dir / "rec.csv";
  const auto inf = run({"infer", "--checkpoint", (out1 / "checkpoint.bin").string(), (data / "day_000.csv").string(),
                        "--task", "forecast", "--out", rec.string(), "--mask-out", (dir / "mask.csv").string()});
  REQUIRE_MESSAGE(inf.code == 0, inf.err);
  const auto truth = csv::read_series_file(data / "day_000.csv").series;
  const auto pred = csv::read_series_file(rec).series;
  const auto mask = csv::read_mask_file(dir / "mask.csv").mask;
  REQUIRE(pred.values.rows() == 6);
  REQUIRE(pred.values.cols() == 24);
  std::size_t masked = 0;
  for (Eigen::Index e = 0; e < 6; ++e) {
    for (Eigen::Index t = 0; t < 24; ++t) {
      if (mask.at(e, t)) {
        ++masked;
      } else {
        CHECK(pred.values(e, t) == truth.values(e, t));
      }
    }
  }
  CHECK(masked == 6u * 6u);

  // A 1-minute day is longer than the checkpoint's l_fix.
  REQUIRE(run({"gen", "--seed", "5", "--days", "1", "--out", (dir / "long").string()}).code == 0);
  CHECK(run({"infer", "--checkpoint", (out1 / "checkpoint.bin").string(), (dir / "long" / "day_000.csv").string(),
             "--out", (dir / "x.csv").string()})
            .code == 5);
  write(dir / "garbage.bin", "not a checkpoint");
  CHECK(run({"infer", "--checkpoint", (dir / "garbage.bin").string(), (data / "day_000.csv").string(), "--out",
             (dir / "x.csv").string()})
            .code == 5);
}

TEST_CASE("zero learning rate leaves the checkpoint at its initialization") {
  const auto dir = scratch("lr0");
  json cfg = small_experiment();
  cfg["training"]["lr"] = 0.0;
  const auto path = write_config(dir, cfg);
  REQUIRE(run({"train", "--config", path.string(), "--out", (dir / "run").string()}).code == 0);
  const auto ckpt = nn::load_checkpoint(dir / "run" / "checkpoint.bin");
  const auto init = model::CmModel<float>::create(ckpt.config.at("model").get<model::CmModelConfig>());
  const auto arrays = nn::export_parameters(init.params());
  REQUIRE(arrays.size() == ckpt.arrays.size());
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    CHECK(arrays[i].name == ckpt.arrays[i].name);
    CHECK(arrays[i].bytes == ckpt.arrays[i].bytes);
  }
}

TEST_CASE("every ablation trains") {
  const auto dir = scratch("ablation");
  json cfg = small_experiment();
  cfg["training"]["epochs"] = 1;
  cfg["data"]["holdout_days"] = 0;
  const auto path = write_config(dir, cfg);
  for (const char* a : {"none", "prompt", "causal", "full"}) {
    const auto r = run({"train", "--config", path.string(), "--ablation", a, "--out", (dir / a).string()});
    CHECK_MESSAGE(r.code == 0, a, r.err);
    const json report = json::parse(slurp(dir / a / "run_report.json"));
    CHECK(report["ablation"] == a);
  }
  CHECK(run({"train", "--config", path.string(), "--ablation", "sideways", "--out", (dir / "x").string()}).code == 3);
}

TEST_CASE("eval of a prediction against itself") {
  const auto dir = scratch("eval_identity");
  REQUIRE(run({"gen", "--seed", "4", "--days", "1", "--resolution", "15", "--out", dir.string()}).code == 0);
  const auto day = (dir / "day_000.csv").string();
  auto m = MaskMatrix::zeros(6, 96);
  for (int t = 40; t < 50; ++t) m.values(2, t) = 1;
  csv::write_mask_file(dir / "mask.csv", m, plant::variable_names());
  const auto r = run({"eval", "--pred", day, "--truth", day, "--mask", (dir / "mask.csv").string(), "--out",
                      (dir / "m").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json j = json::parse(slurp(dir / "m" / "metrics.json"));
  CHECK(j["given"]["all_points"]["mae"] == 0.0);
  CHECK(j["given"]["masked"]["mae"] == 0.0);
  CHECK(j["given"]["masked"]["cells"] == 10);
  CHECK(run({"eval", "--pred", day}).code == 3);
}
