#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dedmpc/artifacts.hpp"
#include "dedmpc/config.hpp"
#include "dedmpc/errors.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dedmpc;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr const char* kManifest = "manifest.json";

// Relative paths resolve against $DEDMPC_WORKSPACE when it is set.
fs::path resolve(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* ws = std::getenv("DEDMPC_WORKSPACE"); ws && *ws) return fs::path(ws) / path;
  return path;
}

AppConfig read_config(const std::string& file, const std::optional<std::uint64_t>& seed) {
  const fs::path path = resolve(file);
  if (!fs::exists(path)) throw ConfigError("--config", "no such file: " + path.string());
  AppConfig c = load_config(path);
  if (seed) c.apply_seed(*seed);
  c.validate();
  return c;
}

json artifact(const fs::path& file) {
  return {{"path", file.filename().string()}, {"sha256", sha256_file(file)}};
}

void write_json(const fs::path& file, const json& j) { write_new_file(file, j.dump(2) + "\n"); }

// Reads dir/manifest.json, checks its kind and every listed artifact hash.
json read_manifest(const fs::path& dir, const std::string& kind) {
  const fs::path file = dir / kManifest;
  std::ifstream in(file);
  if (!in) throw ArtifactError("missing " + file.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw ArtifactError(file.string() + ": " + e.what());
  }
  if (m.value("kind", "") != kind) throw ArtifactError(file.string() + " is not a " + kind + " manifest");
  for (const auto& [name, a] : m.at("artifacts").items()) {
    const fs::path f = dir / a.at("path").get<std::string>();
    if (!fs::exists(f)) throw ArtifactError("missing artifact " + f.string());
    if (sha256_file(f) != a.at("sha256").get<std::string>()) throw ArtifactError("hash mismatch for " + f.string());
  }
  return m;
}

json stats_json(const ChannelStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

json metrics_json(const RunMetrics& m) {
  return {{"r2", m.r2 ? json(*m.r2) : json(nullptr)},
          {"mape", m.mape},
          {"rrmse", m.rrmse},
          {"total_variation_u", m.total_variation_u},
          {"depth_violation_fraction", m.depth_violation_fraction},
          {"samples", m.samples},
          {"constrained_samples", m.constrained_samples},
          {"solves", m.solves},
          {"solve_time_mean", m.solve_time_mean},
          {"solve_time_median", m.solve_time_median},
          {"solve_time_p95", m.solve_time_p95},
          {"solve_time_max", m.solve_time_max},
          {"mean_inner_iterations", m.mean_inner_iterations},
          {"mean_cold_inner_iterations", std::isfinite(m.mean_cold_inner_iterations)
                                             ? json(m.mean_cold_inner_iterations)
                                             : json(nullptr)},
          {"fallbacks", m.fallbacks},
          {"failures", m.failures}};
}

json gains_json(const PidGains& g) { return {{"Kp", g.Kp}, {"Ki", g.Ki}, {"Kd", g.Kd}}; }

struct LoadedDataset {
  fs::path dir;
  json manifest;
  Dataset data;
};

LoadedDataset load_dataset(const fs::path& dir) {
  LoadedDataset out;
  out.dir = dir;
  out.manifest = read_manifest(dir, "dataset");
  int w = 0;
  int p = 0;
  int w2 = 0;
  int p2 = 0;
  out.data.train = read_segments(dir / out.manifest["artifacts"]["train"]["path"].get<std::string>(), w, p);
  out.data.validation = read_segments(dir / out.manifest["artifacts"]["validation"]["path"].get<std::string>(), w2, p2);
  if (w != w2 || p != p2) throw ArtifactError("train and validation segments disagree on (w, p)");
  out.data.w = w;
  out.data.p = p;
  out.data.target_stats = target_statistics(out.data.train);
  out.data.covariate_stats = covariate_statistics(out.data.train);
  out.data.num_profiles = out.manifest.value("profiles", 0u);
  out.data.seed = out.manifest.value("seed", 0ull);
  return out;
}

struct LoadedModel {
  json manifest;
  TideModel model;
  std::string hash;
};

LoadedModel load_model(const fs::path& dir) {
  json m = read_manifest(dir, "model");
  const fs::path weights = dir / m["artifacts"]["weights"]["path"].get<std::string>();
  const fs::path sidecar = dir / m["artifacts"]["sidecar"]["path"].get<std::string>();
  std::string hash = m["artifacts"]["weights"]["sha256"].get<std::string>();
  return {std::move(m), TideModel::load(weights, sidecar), std::move(hash)};
}

// ---------------------------------------------------------------------------

int cmd_datagen(const std::string& config, const std::string& out, const std::optional<std::uint64_t>& seed) {
  const AppConfig c = read_config(config, seed);
  const fs::path dir = resolve(out);
  prepare_output_dir(dir);

  const auto profiles = lhs_sample(static_cast<std::size_t>(c.profiles.count), c.profiles.ranges, c.seed,
                                   static_cast<std::size_t>(c.profiles.lhs_candidates));
  const Dataset d = build_dataset(profiles, c.setup, c.bounds, c.dataset);

  write_segments(dir / "train.seg", d.train, d.w, d.p);
  write_segments(dir / "validation.seg", d.validation, d.w, d.p);
  std::ostringstream csv;
  csv.precision(17);
  csv << "profile,amplitude,num_terms,frequency,phase,amp_rate,freq_rate,phase_rate,trend_slope,seasonal_fluct,"
         "seasonal_amp\n";
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const auto& q = profiles[i];
    csv << i << ',' << q.amplitude << ',' << q.num_terms << ',' << q.frequency << ',' << q.phase << ',' << q.amp_rate
        << ',' << q.freq_rate << ',' << q.phase_rate << ',' << q.trend_slope << ',' << q.seasonal_fluct << ','
        << q.seasonal_amp << '\n';
  }
  write_new_file(dir / "profiles.csv", csv.str());

  json m = {{"kind", "dataset"},
            {"tool_version", kToolVersion},
            {"seed", c.seed},
            {"config", to_json(c)},
            {"w", d.w},
            {"p", d.p},
            {"profiles", d.num_profiles},
            {"train_segments", d.train.size()},
            {"validation_segments", d.validation.size()},
            {"target_stats", stats_json(d.target_stats)},
            {"covariate_stats", stats_json(d.covariate_stats)},
            {"artifacts",
             {{"train", artifact(dir / "train.seg")},
              {"validation", artifact(dir / "validation.seg")},
              {"profiles", artifact(dir / "profiles.csv")}}}};
  write_json(dir / kManifest, m);

  std::printf("segments: train %zu, validation %zu (w=%d, p=%d, %zu profiles)\n", d.train.size(),
              d.validation.size(), d.w, d.p, d.num_profiles);
  std::printf("target mean  T %.3f K, depth %.5f mm\n", d.target_stats.mean[0], d.target_stats.mean[1]);
  std::printf("target std   T %.3f K, depth %.5f mm\n", d.target_stats.std[0], d.target_stats.std[1]);
  std::printf("covariate mean d_x %.4f d_y %.4f z %.4f u %.3f\n", d.covariate_stats.mean[0], d.covariate_stats.mean[1],
              d.covariate_stats.mean[2], d.covariate_stats.mean[3]);
  return 0;
}

int cmd_train(const std::string& dataset_dir, const std::string& out, const std::optional<std::string>& config,
              const std::optional<std::uint64_t>& seed, bool univariate, const std::optional<int>& epochs) {
  LoadedDataset ds = load_dataset(resolve(dataset_dir));
  AppConfig c = config ? read_config(*config, seed) : config_from_json(ds.manifest.at("config"));
  if (!config && seed) c.apply_seed(*seed);
  if (c.dataset.w != ds.data.w) throw ConfigError("dataset.w", "model window does not match the dataset");
  if (c.dataset.p != ds.data.p) throw ConfigError("dataset.p", "model horizon does not match the dataset");
  if (univariate) c.model.target_channels = 1;
  if (epochs) c.training.epochs = *epochs;
  c.validate();

  const fs::path dir = resolve(out);
  prepare_output_dir(dir);

  TideModel model(c.model, c.training.seed);
  const TrainResult r = train(model, ds.data, c.training, [](const EpochRecord& e) {
    std::printf("epoch %3d  lr %.3g  train %.5f  validation %.5f\n", e.epoch, e.learning_rate, e.train_loss,
                e.validation_loss);
    std::fflush(stdout);
  });

  std::ostringstream hist;
  hist.precision(17);
  hist << "epoch,learning_rate,train_loss,validation_loss\n";
  for (const auto& e : r.history) {
    hist << e.epoch << ',' << e.learning_rate << ',' << e.train_loss << ',' << e.validation_loss << '\n';
  }
  write_new_file(dir / "loss_history.csv", hist.str());
  const json training = {{"best_epoch", r.best_epoch}, {"best_validation_loss", r.best_validation_loss},
                         {"epochs", c.training.epochs}};
  model.save(dir / "model.bin", dir / "model.json", training.dump());

  json m = {{"kind", "model"},
            {"tool_version", kToolVersion},
            {"seed", c.seed},
            {"config", to_json(c)},
            {"univariate", univariate},
            {"dataset", {{"path", fs::absolute(ds.dir).string()}, {"manifest_sha256", sha256_file(ds.dir / kManifest)}}},
            {"training", training},
            {"artifacts",
             {{"weights", artifact(dir / "model.bin")},
              {"sidecar", artifact(dir / "model.json")},
              {"history", artifact(dir / "loss_history.csv")}}}};
  write_json(dir / kManifest, m);
  std::printf("best epoch %d, validation loss %.5f\n", r.best_epoch, r.best_validation_loss);
  return 0;
}

int cmd_eval(const std::string& model_dir, const std::string& dataset_dir, const std::optional<std::string>& out) {
  LoadedModel lm = load_model(resolve(model_dir));
  LoadedDataset ds = load_dataset(resolve(dataset_dir));
  const TideConfig& mc = lm.model.config();
  if (mc.w != ds.data.w || mc.p != ds.data.p) throw ConfigError("dataset", "model (w, p) does not match the dataset");
  const auto& segs = ds.data.validation.empty() ? ds.data.train : ds.data.validation;
  const ForecastAccuracy a = evaluate_accuracy(lm.model, segs);
  const double loss = evaluate_loss(lm.model, segs);
  json j = {{"kind", "evaluation"},
            {"tool_version", kToolVersion},
            {"model_sha256", lm.hash},
            {"dataset_manifest_sha256", sha256_file(ds.dir / kManifest)},
            {"segments", segs.size()},
            {"loss", loss},
            {"temperature_mape", a.temperature_mape},
            {"depth_mape", mc.target_channels > 1 ? json(a.depth_mape) : json(nullptr)},
            {"depth_points", a.depth_points},
            {"quantile_crossing_rate", a.quantile_crossing_rate}};
  std::printf("segments %zu  loss %.5f  temperature MAPE %.4f", segs.size(), loss, a.temperature_mape);
  if (mc.target_channels > 1) std::printf("  depth MAPE %.4f (%zu points)", a.depth_mape, a.depth_points);
  std::printf("  quantile crossing %.4f\n", a.quantile_crossing_rate);
  if (out) {
    const fs::path dir = resolve(*out);
    prepare_output_dir(dir);
    write_json(dir / "evaluation.json", j);
    json m = {{"kind", "evaluation"}, {"tool_version", kToolVersion}, {"artifacts", {{"evaluation", artifact(dir / "evaluation.json")}}}};
    write_json(dir / kManifest, m);
  }
  return 0;
}

int cmd_run(const std::string& config, const std::optional<std::string>& model_dir, const std::string& out,
            const std::optional<std::string>& controller, const std::optional<std::uint64_t>& seed, bool tune_pid,
            bool cold) {
  const AppConfig c = read_config(config, seed);
  RunConfig rc = c.run_config();
  if (controller) {
    try {
      rc.kind = controller_from_string(*controller);
    } catch (const std::exception& e) {
      throw ConfigError("--controller", e.what());
    }
  }
  if (cold) rc.compare_cold_start = true;
  const bool needs_model = rc.kind == ControllerKind::mpc || rc.kind == ControllerKind::mpc_unconstrained;
  std::optional<LoadedModel> lm;
  if (needs_model) {
    if (!model_dir) throw ConfigError("--model", "required for MPC controllers");
    lm = load_model(resolve(*model_dir));
    const TideConfig& mc = lm->model.config();
    if (mc.p != rc.mpc.horizon) throw ConfigError("dataset.p", "controller horizon does not match the model");
    if (rc.warmup_samples < mc.w) throw ConfigError("run.warmup_samples", "must cover the model window");
  }

  const fs::path dir = resolve(out);
  prepare_output_dir(dir);

  json tuning = nullptr;
  if (rc.kind == ControllerKind::pid && tune_pid) {
    const TuneResult t = tune(pid_episode_evaluator(rc, c.pid_tune.episode_layers), c.pid_tune.range,
                              c.pid_tune.budget, c.seed);
    rc.pid = t.gains;
    std::ostringstream csv;
    csv.precision(17);
    csv << "candidate,Kp,Ki,Kd,mse\n";
    for (std::size_t i = 0; i < t.candidates.size(); ++i) {
      csv << i << ',' << t.candidates[i].Kp << ',' << t.candidates[i].Ki << ',' << t.candidates[i].Kd << ','
          << t.scores[i] << '\n';
    }
    write_new_file(dir / "pid_tuning.csv", csv.str());
    tuning = {{"budget", c.pid_tune.budget}, {"episode_layers", c.pid_tune.episode_layers}, {"mse", t.mse}};
    std::printf("tuned PID gains Kp %.4g Ki %.4g Kd %.4g (mse %.2f K^2)\n", t.gains.Kp, t.gains.Ki, t.gains.Kd, t.mse);
  }

  const RunLog log = run(rc, lm ? &lm->model : nullptr);
  write_run_csv(dir / "run.csv", log);
  json artifacts = {{"log", artifact(dir / "run.csv")}};
  if (needs_model) {
    write_solve_time_histogram(dir / "solve_time_histogram.csv", log);
    artifacts["solve_time_histogram"] = artifact(dir / "solve_time_histogram.csv");
  }
  if (!tuning.is_null()) artifacts["pid_tuning"] = artifact(dir / "pid_tuning.csv");

  json m = {{"kind", "run"},
            {"tool_version", kToolVersion},
            {"seed", c.seed},
            {"config", to_json(c)},
            {"controller", to_string(rc.kind)},
            {"model_sha256", lm ? json(lm->hash) : json(nullptr)},
            {"pid", rc.kind == ControllerKind::pid ? gains_json(rc.pid) : json(nullptr)},
            {"pid_tuning", tuning},
            {"aborted", log.aborted},
            {"abort_reason", log.abort_reason},
            {"metrics", metrics_json(log.metrics)},
            {"artifacts", artifacts}};
  write_json(dir / kManifest, m);

  const RunMetrics& r = log.metrics;
  std::printf("%s: %zu samples", to_string(rc.kind), r.samples);
  if (r.r2) std::printf("  R2 %.4f", *r.r2);
  std::printf("  MAPE %.4f  RRMSE %.4f  TV(u) %.1f W  depth violations %.3f of %zu\n", r.mape, r.rrmse,
              r.total_variation_u, r.depth_violation_fraction, r.constrained_samples);
  if (r.solves) {
    std::printf("solves %zu  mean %.4f s  median %.4f s  p95 %.4f s  max %.4f s  inner iterations %.1f", r.solves,
                r.solve_time_mean, r.solve_time_median, r.solve_time_p95, r.solve_time_max, r.mean_inner_iterations);
    if (std::isfinite(r.mean_cold_inner_iterations)) std::printf(" (cold %.1f)", r.mean_cold_inner_iterations);
    std::printf("  fallbacks %zu  failures %zu\n", r.fallbacks, r.failures);
  }
  if (log.aborted) {
    std::fprintf(stderr, "run aborted: %s\n", log.abort_reason.c_str());
    return 1;
  }
  return 0;
}

int cmd_compare(const std::vector<std::string>& runs, const std::string& out) {
  struct Row {
    std::string name;
    json manifest;
  };
  std::vector<Row> rows;
  for (const auto& r : runs) {
    const fs::path dir = resolve(r);
    rows.push_back({dir.filename().string(), read_manifest(dir, "run")});
  }
  static const std::vector<std::string> kCols = {"r2",
                                                 "mape",
                                                 "rrmse",
                                                 "total_variation_u",
                                                 "depth_violation_fraction",
                                                 "constrained_samples",
                                                 "solve_time_mean",
                                                 "solve_time_median",
                                                 "solve_time_p95",
                                                 "solve_time_max",
                                                 "mean_inner_iterations",
                                                 "mean_cold_inner_iterations"};
  const fs::path dir = resolve(out);
  prepare_output_dir(dir);

  std::ostringstream csv;
  csv.precision(17);
  csv << "run,controller";
  for (const auto& k : kCols) csv << ',' << k;
  csv << '\n';
  json report = json::array();
  std::printf("%-24s %-18s %8s %8s %10s %9s %10s\n", "run", "controller", "R2", "MAPE", "TV(u)", "viol", "solve_s");
  for (const auto& row : rows) {
    const json& mt = row.manifest.at("metrics");
    csv << row.name << ',' << row.manifest.at("controller").get<std::string>();
    for (const auto& k : kCols) {
      csv << ',';
      if (!mt.at(k).is_null()) csv << mt.at(k).get<double>();
    }
    csv << '\n';
    report.push_back({{"run", row.name}, {"controller", row.manifest.at("controller")}, {"metrics", mt}});
    auto num = [&](const char* k) { return mt.at(k).is_null() ? std::nan("") : mt.at(k).get<double>(); };
    std::printf("%-24s %-18s %8.4f %8.4f %10.1f %9.3f %10.4f\n", row.name.c_str(),
                row.manifest.at("controller").get<std::string>().c_str(), num("r2"), num("mape"),
                num("total_variation_u"), num("depth_violation_fraction"), num("solve_time_mean"));
  }
  write_new_file(dir / "comparison.csv", csv.str());
  write_json(dir / "comparison.json", report);
  json m = {{"kind", "comparison"},
            {"tool_version", kToolVersion},
            {"runs", runs},
            {"artifacts", {{"csv", artifact(dir / "comparison.csv")}, {"json", artifact(dir / "comparison.json")}}}};
  write_json(dir / kManifest, m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DED melt-pool MPC pipeline: data generation, surrogate training, closed-loop runs"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> opt_config;
  std::string dataset;
  std::string model;
  std::optional<std::string> opt_model;
  std::optional<std::string> opt_out;
  std::optional<std::string> controller;
  std::optional<int> epochs;
  bool univariate = false;
  bool tune_pid = false;
  bool cold = false;
  std::vector<std::string> runs;

  auto* datagen = app.add_subcommand("datagen", "simulate LHS power profiles and write the segment dataset");
  datagen->add_option("--config", config, "JSON config")->required();
  datagen->add_option("--out", out, "output directory")->required();
  datagen->add_option("--seed", seed, "override the global seed");

  auto* trn = app.add_subcommand("train", "train the TiDE surrogate on a dataset");
  trn->add_option("--dataset", dataset, "dataset directory")->required();
  trn->add_option("--out", out, "output directory")->required();
  trn->add_option("--config", opt_config, "config overriding the dataset's snapshot");
  trn->add_option("--seed", seed, "override the global seed");
  trn->add_option("--epochs", epochs, "override training.epochs")->check(CLI::PositiveNumber);
  trn->add_flag("--univariate", univariate, "temperature-only model");

  auto* ev = app.add_subcommand("eval-model", "forecast accuracy on the validation split");
  ev->add_option("--model", model, "model directory")->required();
  ev->add_option("--dataset", dataset, "dataset directory")->required();
  ev->add_option("--out", opt_out, "write evaluation.json here");

  auto* rn = app.add_subcommand("run", "closed-loop run on the plant");
  rn->add_option("--config", config, "JSON config")->required();
  rn->add_option("--out", out, "output directory")->required();
  rn->add_option("--model", opt_model, "model directory (MPC controllers)");
  rn->add_option("--controller", controller, "mpc | mpc-unconstrained | pid | open-loop");
  rn->add_option("--seed", seed, "override the global seed");
  rn->add_flag("--tune-pid", tune_pid, "tune PID gains before the run");
  rn->add_flag("--cold-start-stats", cold, "also count cold-start iterations for every solve");

  auto* cmp = app.add_subcommand("compare", "metric table across run directories");
  cmp->add_option("runs", runs, "run directories")->required()->expected(1, -1);
  cmp->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*datagen) return cmd_datagen(config, out, seed);
    if (*trn) return cmd_train(dataset, out, opt_config, seed, univariate, epochs);
    if (*ev) return cmd_eval(model, dataset, opt_out);
    if (*rn) return cmd_run(config, opt_model, out, controller, seed, tune_pid, cold);
    if (*cmp) return cmd_compare(runs, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ArtifactError& e) {
    std::fprintf(stderr, "artifact error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
