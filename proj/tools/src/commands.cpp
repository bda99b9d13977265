#include "cmllm/cli/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "cmllm/cli/experiment.hpp"
#include "cmllm/csv.hpp"
#include "cmllm/error.hpp"
#include "cmllm/graph_json.hpp"
#include "cmllm/metrics/metrics.hpp"
#include "cmllm/train/manifest.hpp"
#include "cmllm/train/reconstruct.hpp"
#include "cmllm/train/trainer.hpp"

namespace cmllm::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// 2024-01-01T00:00 in epoch minutes.
constexpr csv::EpochMinutes kGenStart = 28401120;

struct DayFile {
  fs::path path;
  csv::LoadedSeries data;
};

struct InputSet {
  std::vector<DayFile> days;
  /// Prior graph named by the first manifest that has one.
  fs::path manifest_prior;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
  const fs::path probe = dir / ".cmllm_write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw IoError("output directory '" + dir.string() + "' is not writable");
  }
  fs::remove(probe, ec);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

bool is_manifest(const fs::path& p) { return p.extension() == ".json"; }

InputSet load_inputs(const std::vector<fs::path>& inputs) {
  InputSet set;
  for (const fs::path& p : inputs) {
    if (is_manifest(p)) {
      const train::DatasetManifest m = train::read_manifest(p);
      const fs::path base = p.parent_path();
      for (const std::string& f : train::manifest_files(m)) {
        const fs::path fp = fs::path(f).is_absolute() ? fs::path(f) : base / f;
        set.days.push_back({fp, csv::read_series_file(fp)});
      }
      if (set.manifest_prior.empty() && !m.prior_graph.empty()) {
        set.manifest_prior = fs::path(m.prior_graph).is_absolute() ? fs::path(m.prior_graph) : base / m.prior_graph;
      }
    } else {
      set.days.push_back({p, csv::read_series_file(p)});
    }
  }
  if (set.days.empty()) throw InputError("no input data");
  const auto& first = set.days.front().data.series;
  for (const DayFile& d : set.days) {
    if (d.data.series.variable_names != first.variable_names) {
      throw InputError("'" + d.path.string() + "' has different columns than '" + set.days.front().path.string() + "'");
    }
    if (d.data.series.resolution_minutes != first.resolution_minutes && d.data.series.length() > 1) {
      throw InputError("'" + d.path.string() + "' has a different time resolution");
    }
  }
  return set;
}

std::vector<TimeSeriesMatrix> series_of(const std::vector<DayFile>& days) {
  std::vector<TimeSeriesMatrix> out;
  out.reserve(days.size());
  for (const DayFile& d : days) out.push_back(d.data.series);
  return out;
}

/// Re-indexes a prior graph onto the data's column order.
causal::PriorGraph align_prior(const causal::PriorGraph& prior, const std::vector<std::string>& names) {
  causal::PriorGraph out;
  out.nodes = names;
  for (const auto& [u, v] : prior.edges) {
    const auto find = [&](int i) {
      const auto it = std::find(names.begin(), names.end(), prior.nodes[static_cast<std::size_t>(i)]);
      if (it == names.end()) {
        throw InputError("prior graph node '" + prior.nodes[static_cast<std::size_t>(i)] + "' is not a data column");
      }
      return static_cast<int>(it - names.begin());
    };
    out.edges.emplace_back(find(u), find(v));
  }
  out.validate();
  return out;
}

causal::PriorGraph load_prior(const fs::path& path, const std::vector<std::string>& names) {
  if (path.empty()) return causal::PriorGraph{names, {}};
  return align_prior(causal::prior_graph_from_json(causal::load_graph_json(path)), names);
}

void print_edges(std::ostream& out, const causal::CausalGraph& g) {
  fmt::print(out, "{:<18} {:<18} {:>8}  {}\n", "from", "to", "weight", "prior");
  for (const auto& e : g.edges) {
    fmt::print(out, "{:<18} {:<18} {:>8.4f}  {}\n", g.nodes[static_cast<std::size_t>(e.from)],
               g.nodes[static_cast<std::size_t>(e.to)], e.weight, e.prior ? "yes" : "no");
  }
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<TaskKind> parse_task_list(const std::vector<std::string>& names) {
  std::vector<TaskKind> out;
  for (const auto& n : names) out.push_back(parse_task(n));
  return out;
}

json task_list_json(const std::vector<TaskKind>& tasks) {
  json j = json::array();
  for (TaskKind t : tasks) j.push_back(std::string(task_name(t)));
  return j;
}

struct ScopedReports {
  metrics::MetricReport all;
  std::optional<metrics::MetricReport> masked;
};

json reports_json(const std::map<std::string, ScopedReports>& reports) {
  json j = json::object();
  for (const auto& [task, r] : reports) {
    j[task] = {{"all_points", metrics::to_json(r.all)}};
    j[task]["masked"] = r.masked ? metrics::to_json(*r.masked) : json(nullptr);
  }
  return j;
}

std::string reports_csv(const std::map<std::string, ScopedReports>& reports) {
  std::string s = metrics::csv_header() + "\n";
  for (const auto& [task, r] : reports) {
    s += metrics::csv_row(r.all, task + "/all") + "\n";
    if (r.masked) s += metrics::csv_row(*r.masked, task + "/masked") + "\n";
  }
  return s;
}

std::string opt(const std::optional<double>& v) { return v ? fmt::format("{:.6g}", *v) : "-"; }

void print_reports(std::ostream& out, const std::map<std::string, ScopedReports>& reports) {
  fmt::print(out, "{:<12} {:<7} {:>12} {:>12} {:>12} {:>12} {:>10} {:>12}\n", "task", "scope", "MAE", "RMSE", "FID",
             "DTW", "D", "P_MAE");
  for (const auto& [task, r] : reports) {
    for (const auto* rep : {&r.all, r.masked ? &*r.masked : nullptr}) {
      if (!rep) continue;
      fmt::print(out, "{:<12} {:<7} {:>12.6g} {:>12.6g} {:>12} {:>12.6g} {:>10.4g} {:>12}\n", task,
                 rep == &r.all ? "all" : "masked", rep->mae, rep->rmse, opt(rep->fid), rep->dtw, rep->corr_discrepancy,
                 opt(rep->power_balance_mae));
    }
  }
}

/// Reconstructs every (day, task) pair and accumulates both metric scopes.
std::map<std::string, ScopedReports> evaluate_model(const model::CmModel<float>& m, const std::vector<TimeSeriesMatrix>& raw_days,
                                                    const std::vector<TaskKind>& tasks, const TaskParams& params,
                                                    const causal::CausalGraph& graph, const train::SampleOptions& opts,
                                                    std::uint64_t seed) {
  const auto samples = train::build_dataset(raw_days, tasks, params, graph, opts, seed);
  const auto adjacency = train::build_adjacency(samples, m.config().dgp);
  std::map<std::string, std::pair<metrics::MetricAccumulator, metrics::MetricAccumulator>> acc;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const train::SftSample& s = samples[i];
    const Matrix pred = train::predict_sample(m, s, *adjacency.at(i));
    TimeSeriesMatrix raw = raw_days[s.day_index];
    raw.values = raw.values.leftCols(s.valid_length).eval();
    const TimeSeriesMatrix merged = train::merge_reconstruction(raw, s.mask, pred, s.normalization);
    auto [it, inserted] = acc.try_emplace(std::string(task_name(s.task)), metrics::MetricAccumulator({metrics::Scope::AllPoints}),
                                          metrics::MetricAccumulator({metrics::Scope::Masked}));
    it->second.first.add(merged, raw, &s.mask);
    if (s.mask.count() > 0) it->second.second.add(merged, raw, &s.mask);
  }
  std::map<std::string, ScopedReports> out;
  for (auto& [task, a] : acc) {
    ScopedReports r;
    r.all = a.first.report();
    bool any_masked = false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      any_masked = any_masked || (task_name(samples[i].task) == task && samples[i].mask.count() > 0);
    }
    if (any_masked) r.masked = a.second.report();
    out.emplace(task, std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> days;
  std::optional<int> resolution;
  std::optional<double> meter_noise;
  std::string out;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : load_experiment(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!cfg.seed) throw InputError("gen needs a seed (--seed or \"seed\" in the config)");
  if (!cfg.data.plant_seed_set || a.seed) cfg.data.plant.seed = *cfg.seed;
  if (a.days) cfg.data.n_days = *a.days;
  if (a.resolution) cfg.data.plant.resolution_minutes = *a.resolution;
  if (a.meter_noise) cfg.data.plant.meter_noise_std_kw = *a.meter_noise;
  cfg.data.plant.validate();
  if (cfg.data.n_days < 1) throw InputError("number of days must be positive");
  for (TaskKind t : cfg.tasks) cfg.task_params.validate(t);

  const fs::path dir = a.out;
  ensure_dir(dir);
  const plant::PlantDataset ds = plant::generate_dataset(cfg.data.plant, static_cast<std::size_t>(cfg.data.n_days));
  train::DatasetManifest manifest;
  manifest.prior_graph = "prior_graph.json";
  manifest.truth_graph = "truth_graph.json";
  for (std::size_t d = 0; d < ds.days.size(); ++d) {
    const std::string name = fmt::format("day_{:03d}.csv", d);
    csv::write_series_file(dir / name, ds.days[d], kGenStart + static_cast<csv::EpochMinutes>(d) * 1440);
    for (TaskKind t : cfg.tasks) manifest.entries.push_back({name, t, cfg.task_params, std::string(task_name(t))});
  }
  causal::save_graph(dir / manifest.prior_graph, causal::to_json(ds.prior));
  causal::save_graph(dir / manifest.truth_graph, causal::to_json(ds.truth));
  train::write_manifest(dir / "manifest.json", manifest);
  fmt::print(out, "wrote {} days ({} steps each, {} min resolution) to {}\n", ds.days.size(),
             cfg.data.plant.steps_per_day(), cfg.data.plant.resolution_minutes, dir.string());
  return 0;
}

// ---------------------------------------------------------------- discover

struct DiscoverArgs {
  std::vector<std::string> inputs;
  std::string prior;
  std::optional<double> alpha;
  std::optional<int> max_cond;
  std::string config;
  std::string out;
};

int cmd_discover(const DiscoverArgs& a, std::ostream& out) {
  causal::CiTestConfig ci;
  if (!a.config.empty()) ci = load_experiment(a.config).discovery;
  if (a.alpha) ci.alpha = *a.alpha;
  if (a.max_cond) ci.max_cond_set = *a.max_cond;
  ci.validate();
  std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
  const InputSet in = load_inputs(paths);
  const auto& names = in.days.front().data.series.variable_names;
  const fs::path prior_path = a.prior.empty() ? in.manifest_prior : fs::path(a.prior);
  const causal::PriorGraph prior = load_prior(prior_path, names);
  const causal::SampleMatrix data = plant::pool_days(series_of(in.days));
  const causal::CausalGraph g = causal::discover(data, prior, ci);
  print_edges(out, g);
  if (!a.out.empty()) {
    const fs::path p = a.out;
    if (p.has_parent_path()) ensure_dir(p.parent_path());
    causal::save_graph(p, causal::to_json(g));
    fmt::print(out, "graph written to {}\n", p.string());
  }
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> ablation;
  std::optional<int> epochs;
  std::string out;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = load_experiment(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.threads) cfg.threads = *a.threads;
  if (a.ablation) cfg.ablation = parse_ablation(*a.ablation);
  if (a.epochs) cfg.training.epochs = *a.epochs;
  if (!a.out.empty()) cfg.output_dir = a.out;
  cfg.validate();
  const std::uint64_t seed = *cfg.seed;

  // Data.
  std::vector<TimeSeriesMatrix> days;
  fs::path prior_path = cfg.prior.empty() ? fs::path() : cfg.resolve(cfg.prior);
  bool physical = false;
  if (cfg.data.inputs.empty()) {
    if (!cfg.data.plant_seed_set) cfg.data.plant.seed = seed;
    days = plant::generate_dataset(cfg.data.plant, static_cast<std::size_t>(cfg.data.n_days)).days;
    physical = prior_path.empty();
  } else {
    std::vector<fs::path> paths;
    for (const auto& p : cfg.data.inputs) paths.push_back(cfg.resolve(p));
    InputSet in = load_inputs(paths);
    if (prior_path.empty()) prior_path = in.manifest_prior;
    days = series_of(in.days);
  }
  if (static_cast<std::size_t>(cfg.data.holdout_days) >= days.size()) {
    throw InputError("holdout_days leaves no training days");
  }
  const std::vector<TimeSeriesMatrix> holdout(days.end() - cfg.data.holdout_days, days.end());
  days.resize(days.size() - static_cast<std::size_t>(cfg.data.holdout_days));
  const auto& names = days.front().variable_names;

  // Graph.
  causal::CausalGraph graph;
  if (!cfg.graph.empty()) {
    graph = causal::causal_graph_from_json(causal::load_graph_json(cfg.resolve(cfg.graph)));
    if (graph.nodes != names) throw InputError("graph nodes do not match the data columns");
  } else {
    const causal::PriorGraph prior = physical ? align_prior(plant::physical_prior(), names) : load_prior(prior_path, names);
    graph = causal::discover(plant::pool_days(days), prior, cfg.discovery);
  }

  train::SampleOptions so{cfg.training.l_fix, cfg.training.truncate};
  const auto samples = train::build_dataset(days, cfg.tasks, cfg.task_params, graph, so, seed);
  int max_prompt = 0;
  for (const auto& s : samples) max_prompt = std::max(max_prompt, static_cast<int>(s.tokens.size()));
  if (!holdout.empty()) {
    for (const auto& s : train::build_dataset(holdout, cfg.tasks, cfg.task_params, graph, so, seed + 1)) {
      max_prompt = std::max(max_prompt, static_cast<int>(s.tokens.size()));
    }
  }

  auto m = model::CmModel<float>::create(model_config(cfg, static_cast<int>(names.size()), max_prompt));
  train::TrainConfig tc;
  tc.epochs = cfg.training.epochs;
  tc.batch_size = cfg.training.batch_size;
  tc.adam.lr = cfg.training.lr;
  tc.loss.lambda1 = cfg.training.lambda1;
  tc.seed = seed;
  tc.dropout = cfg.model.dropout;
  tc.threads = resolve_threads(cfg.threads);
  fmt::print(out, "training on {} samples ({} days x {} tasks), ablation {}\n", samples.size(), days.size(),
             cfg.tasks.size(), ablation_name(cfg.ablation));
  const train::TrainResult result = train::train(m, samples, tc, [&](const train::EpochStats& e) {
    fmt::print(out, "epoch {:>4}  L_acc {:.6f}  L_mask {:.6f}  total {:.6f}\n", e.epoch, e.acc, e.mask, e.total);
    out.flush();
  });

  // Artifacts.
  const fs::path dir = cfg.output_dir.empty() ? fs::path(".") : fs::path(cfg.output_dir);
  ensure_dir(dir);
  const fs::path ckpt_path = dir / "checkpoint.bin";
  const fs::path loss_path = dir / "loss.csv";
  const fs::path graph_path = dir / "graph.json";
  const fs::path report_path = dir / "run_report.json";
  json extra = {{"graph", causal::to_json(graph)},
                {"variables", names},
                {"l_fix", cfg.training.l_fix},
                {"truncate", cfg.training.truncate},
                {"resolution_minutes", days.front().resolution_minutes},
                {"tasks", task_list_json(cfg.tasks)},
                {"task_params", cfg.task_params},
                {"seed", seed},
                {"ablation", ablation_name(cfg.ablation)}};
  nn::save_checkpoint(ckpt_path, m.to_checkpoint(extra));
  train::write_loss_history(loss_path, result.history);
  causal::save_graph(graph_path, causal::to_json(graph));

  json report;
  report["config_hash"] = config_hash(cfg.source_bytes);
  report["config"] = experiment_to_json(cfg);
  report["ablation"] = ablation_name(cfg.ablation);
  report["seed"] = seed;
  report["loss_history"] = loss_path.string();
  report["checkpoint"] = ckpt_path.string();
  report["graph"] = graph_path.string();
  report["train_samples"] = samples.size();
  if (!result.history.empty()) {
    report["first_loss"] = result.history.front().total;
    report["final_loss"] = result.history.back().total;
  }
  if (!holdout.empty()) {
    const auto reports = evaluate_model(m, holdout, cfg.tasks, cfg.task_params, graph, so, seed + 1);
    report["holdout_days"] = holdout.size();
    report["metrics"] = reports_json(reports);
    print_reports(out, reports);
  }
  report["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(report_path, report.dump(2) + "\n");
  fmt::print(out, "run report written to {}\n", report_path.string());
  return 0;
}

// ---------------------------------------------------------------- checkpoints

struct LoadedModel {
  model::CmModel<float> model;
  causal::CausalGraph graph;
  std::vector<std::string> variables;
  train::SampleOptions options;
  std::vector<TaskKind> tasks;
  TaskParams params;
  std::uint64_t seed = 0;
};

LoadedModel load_model(const fs::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  LoadedModel lm;
  lm.model = model::CmModel<float>::from_checkpoint(ckpt);
  try {
    const json& c = ckpt.config;
    lm.graph = causal::causal_graph_from_json(c.at("graph"));
    lm.variables = c.at("variables").get<std::vector<std::string>>();
    lm.options.l_fix = c.at("l_fix").get<int>();
    lm.options.truncate = c.value("truncate", false);
    lm.tasks = parse_task_list(c.at("tasks").get<std::vector<std::string>>());
    lm.params = c.at("task_params").get<TaskParams>();
    lm.seed = c.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw CompatibilityError("checkpoint '" + path.string() + "' lacks run metadata: " + e.what());
  } catch (const InputError& e) {
    throw CompatibilityError("checkpoint '" + path.string() + "' has invalid run metadata: " + e.what());
  }
  return lm;
}

void check_compatible(const LoadedModel& lm, const DayFile& day) {
  const auto& s = day.data.series;
  if (s.variable_names != lm.variables) {
    throw CompatibilityError("'" + day.path.string() + "' columns do not match the checkpoint's variables");
  }
  if (s.length() > lm.options.l_fix && !lm.options.truncate) {
    throw CompatibilityError(fmt::format("'{}' has {} steps but the checkpoint was trained with l_fix = {}",
                                         day.path.string(), s.length(), lm.options.l_fix));
  }
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::vector<std::string> tasks;
  std::optional<std::uint64_t> seed;
  std::string pred, truth, mask;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::map<std::string, ScopedReports> reports;
  if (!a.pred.empty() || !a.truth.empty()) {
    if (a.pred.empty() || a.truth.empty()) throw InputError("--pred and --truth go together");
    if (!a.checkpoint.empty() || !a.inputs.empty()) throw InputError("--pred/--truth cannot be combined with a checkpoint");
    const auto pred = csv::read_series_file(a.pred).series;
    const auto truth = csv::read_series_file(a.truth).series;
    if (pred.variable_names != truth.variable_names || pred.length() != truth.length()) {
      throw InputError("prediction and truth differ in columns or length");
    }
    ScopedReports r;
    if (a.mask.empty()) {
      r.all = metrics::evaluate(pred, truth, nullptr, {metrics::Scope::AllPoints});
    } else {
      const csv::LoadedMask m = csv::read_mask_file(a.mask);
      if (m.variable_names != truth.variable_names || m.mask.cols() != truth.length()) {
        throw InputError("mask does not match the truth series");
      }
      r.all = metrics::evaluate(pred, truth, &m.mask, {metrics::Scope::AllPoints});
      if (m.mask.count() > 0) r.masked = metrics::evaluate(pred, truth, &m.mask, {metrics::Scope::Masked});
    }
    reports.emplace("given", std::move(r));
  } else {
    if (a.checkpoint.empty()) throw InputError("eval needs --checkpoint with data files, or --pred and --truth");
    LoadedModel lm = load_model(a.checkpoint);
    std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
    const InputSet in = load_inputs(paths);
    for (const DayFile& d : in.days) check_compatible(lm, d);
    const auto tasks = a.tasks.empty() ? lm.tasks : parse_task_list(a.tasks);
    reports = evaluate_model(lm.model, series_of(in.days), tasks, lm.params, lm.graph, lm.options, a.seed.value_or(lm.seed));
  }
  print_reports(out, reports);
  if (!a.out.empty()) {
    const fs::path dir = a.out;
    ensure_dir(dir);
    write_text(dir / "metrics.json", reports_json(reports).dump(2) + "\n");
    write_text(dir / "metrics.csv", reports_csv(reports));
    fmt::print(out, "metrics written to {}\n", dir.string());
  }
  return 0;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string checkpoint;
  std::string input;
  std::string task = "imputation";
  std::string mask;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mask_out;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  LoadedModel lm = load_model(a.checkpoint);
  const DayFile day{a.input, csv::read_series_file(a.input)};
  check_compatible(lm, day);
  const TaskKind task = parse_task(a.task);

  TimeSeriesMatrix raw = day.data.series;
  const Eigen::Index L = std::min<Eigen::Index>(raw.length(), lm.options.l_fix);
  raw.values = raw.values.leftCols(L).eval();
  std::optional<MaskMatrix> given;
  TimeSeriesMatrix observed = raw;
  if (!a.mask.empty()) {
    csv::LoadedMask m = csv::read_mask_file(a.mask);
    if (m.variable_names != raw.variable_names || m.mask.cols() < L) throw InputError("mask does not match the input");
    given = MaskMatrix{m.mask.values.leftCols(L)};
    // Missing cells may hold placeholders; keep them out of the scaling range.
    for (Eigen::Index e = 0; e < raw.values.rows(); ++e) {
      Eigen::Index ref = 0;
      while (ref < L && given->at(e, ref)) ++ref;
      const double fill = ref < L ? raw.values(e, ref) : 0.0;
      for (Eigen::Index t = 0; t < L; ++t) {
        if (given->at(e, t)) observed.values(e, t) = fill;
      }
    }
  }
  const NormalizedSeries norm = instance_normalize(observed);
  std::mt19937_64 rng(a.seed.value_or(lm.seed));
  train::SftSample s = train::build_sample(norm.series, task, lm.params, lm.graph, rng, lm.options, norm.params);
  if (given) train::replace_mask(s, *given);
  const model::DgpAdjacency adj = model::dgp_adjacency(lm.graph, lm.variables, lm.model.config().dgp);
  const Matrix pred = train::predict_sample(lm.model, s, adj);
  const TimeSeriesMatrix merged = train::merge_reconstruction(raw, s.mask, pred, s.normalization);

  const fs::path op = a.out;
  if (op.has_parent_path()) ensure_dir(op.parent_path());
  csv::write_series_file(op, merged, day.data.start);
  if (!a.mask_out.empty()) csv::write_mask_file(a.mask_out, s.mask, merged.variable_names);
  fmt::print(out, "reconstructed {} of {} cells ({}), written to {}\n", s.mask.count(),
             static_cast<std::size_t>(merged.values.size()), task_name(task), op.string());
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"cmllm: causal-guided multimodal reconstruction of power-system time series"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate synthetic plant days, graphs and a dataset manifest");
  g->add_option("--config", gen.config, "Experiment config (data.generator, tasks)")->check(CLI::ExistingFile);
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--days", gen.days, "Number of days");
  g->add_option("--resolution", gen.resolution, "Minutes per step");
  g->add_option("--meter-noise", gen.meter_noise, "Meter noise std (kW) on storage output");
  g->add_option("--out", gen.out, "Output directory")->required();

  DiscoverArgs disc;
  auto* d = app.add_subcommand("discover", "Prior-constrained causal discovery over CSV days");
  d->add_option("inputs", disc.inputs, "CSV files or dataset manifests")->required();
  d->add_option("--prior", disc.prior, "Prior graph JSON (defaults to the manifest's prior)");
  d->add_option("--alpha", disc.alpha, "Fisher-Z significance level");
  d->add_option("--max-cond", disc.max_cond, "Largest conditioning set");
  d->add_option("--config", disc.config, "Experiment config (discovery section)");
  d->add_option("--out", disc.out, "Where to write the graph JSON");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Fine-tune the LoRA adapters on the pooled three-task dataset");
  t->add_option("--config", tr.config, "Experiment config JSON")->required();
  t->add_option("--seed", tr.seed, "Seed (overrides the config)");
  t->add_option("--threads", tr.threads, "Worker threads (0 = all cores)");
  t->add_option("--ablation", tr.ablation, "none | prompt | causal | full");
  t->add_option("--epochs", tr.epochs, "Epochs (overrides the config)");
  t->add_option("--out", tr.out, "Output directory (overrides the config)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on CSV days, or score a prediction CSV");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint written by train");
  e->add_option("inputs", ev.inputs, "CSV files or dataset manifests");
  e->add_option("--task", ev.tasks, "imputation | forecast | superres (repeatable; default: the trained tasks)");
  e->add_option("--seed", ev.seed, "Mask seed (default: the training seed)");
  e->add_option("--pred", ev.pred, "Prediction CSV");
  e->add_option("--truth", ev.truth, "Ground-truth CSV");
  e->add_option("--mask", ev.mask, "Mask CSV selecting the masked scope");
  e->add_option("--out", ev.out, "Directory for metrics.json and metrics.csv");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Reconstruct one CSV day with a checkpoint");
  i->add_option("--checkpoint", inf.checkpoint, "Checkpoint written by train")->required();
  i->add_option("input", inf.input, "CSV day")->required();
  i->add_option("--task", inf.task, "imputation | forecast | superres");
  i->add_option("--mask", inf.mask, "Mask CSV marking the cells to reconstruct (default: drawn for the task)");
  i->add_option("--seed", inf.seed, "Mask seed (default: the training seed)");
  i->add_option("--out", inf.out, "Reconstructed CSV")->required();
  i->add_option("--mask-out", inf.mask_out, "Also write the mask that was used");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return static_cast<int>(ErrorKind::InvalidInput);
  }

  try {
    if (*g) return cmd_gen(gen, out);
    if (*d) return cmd_discover(disc, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_eval(ev, out);
    if (*i) return cmd_infer(inf, out);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return ex.exit_code();
  } catch (const json::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return static_cast<int>(ErrorKind::InvalidInput);
  } catch (const fs::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return static_cast<int>(ErrorKind::Io);
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cmllm::cli
