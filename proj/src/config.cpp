#include "dedmpc/config.hpp"

#include <fstream>
#include <set>

#include "dedmpc/errors.hpp"

namespace dedmpc {

using nlohmann::json;

namespace {

const char* const kProfileKeys[kProfileDims] = {"amplitude",  "num_terms",   "frequency",      "phase",
                                                "amp_rate",   "freq_rate",   "phase_rate",     "trend_slope",
                                                "seasonal_fluct", "seasonal_amp"};

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(field(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(field(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(field(key), "expected a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, field(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

PiecewiseLinear read_table(Section& s, const std::string& key, const PiecewiseLinear& fallback) {
  if (!s.has(key)) return fallback;
  const json& v = s.raw(key);
  if (v.is_number()) return PiecewiseLinear::constant(v.get<double>());
  Section t(v, s.field(key));
  std::vector<double> x;
  std::vector<double> y;
  t.get("breakpoints", x);
  t.get("values", y);
  t.finish();
  if (x.empty() || x.size() != y.size()) throw ConfigError(s.field(key), "breakpoints and values must match in length");
  try {
    return PiecewiseLinear(x, y);
  } catch (const std::exception& e) {
    throw ConfigError(s.field(key), e.what());
  }
}

json table_json(const PiecewiseLinear& p) {
  if (p.values().size() == 1) return p.values().front();
  return json{{"breakpoints", p.breakpoints()}, {"values", p.values()}};
}

void read_range(Section& s, const std::string& key, std::array<double, 2>& out) {
  std::vector<double> v(out.begin(), out.end());
  s.get(key, v);
  if (v.size() != 2) throw ConfigError(s.field(key), "expected [lo, hi]");
  out = {v[0], v[1]};
}

}  // namespace

void AppConfig::validate() const {
  if (!(bounds.lower < bounds.upper)) throw ConfigError("bounds", "lower must be below upper");
  setup.validate();
  model.validate();
  mpc.validate();
  pid.validate();
  run_config().validate();
  if (profiles.count < 1) throw ConfigError("profiles.count", "must be at least 1");
  if (profiles.lhs_candidates < 1) throw ConfigError("profiles.lhs_candidates", "must be at least 1");
  for (std::size_t d = 0; d < kProfileDims; ++d) {
    if (!(profiles.ranges[d][0] <= profiles.ranges[d][1])) {
      throw ConfigError(std::string("profiles.ranges.") + kProfileKeys[d], "lo must not exceed hi");
    }
  }
  if (dataset.w != model.w || dataset.p != model.p) throw ConfigError("dataset", "w and p must match model.w and model.p");
  if (model.p != mpc.horizon) throw ConfigError("mpc.horizon", "must equal model.p");
  if (!(dataset.validation_fraction >= 0.0 && dataset.validation_fraction < 1.0)) {
    throw ConfigError("dataset.validation_fraction", "must be in [0, 1)");
  }
  if (dataset.smoothing_window < 1) throw ConfigError("dataset.smoothing_window", "must be at least 1");
  if (training.epochs < 0) throw ConfigError("training.epochs", "must be non-negative");
  if (training.batch_size < 1) throw ConfigError("training.batch_size", "must be at least 1");
  if (!(training.learning_rate >= 0.0)) throw ConfigError("training.learning_rate", "must be non-negative");
  if (pid_tune.budget < 1) throw ConfigError("pid.tune.budget", "must be at least 1");
  if (pid_tune.episode_layers < 1) throw ConfigError("pid.tune.episode_layers", "must be at least 1");
  if (run.warmup_samples < model.w) throw ConfigError("run.warmup_samples", "must be at least model.w");
}

void AppConfig::apply_seed(std::uint64_t s) {
  seed = s;
  dataset.seed = s;
  training.seed = s;
}

RunConfig AppConfig::run_config() const {
  RunConfig r;
  r.setup = setup;
  r.kind = run.controller;
  r.reference = run.reference;
  r.bounds = bounds;
  r.warmup_u = run.warmup_u;
  r.warmup_samples = run.warmup_samples;
  r.smoothing_span = run.smoothing_span;
  r.mpc = mpc;
  r.mpc.bounds = bounds;
  r.pid = pid;
  r.seed = seed;
  r.max_consecutive_failures = run.max_consecutive_failures;
  r.compare_cold_start = run.compare_cold_start;
  r.transition_window = run.transition_window;
  return r;
}

AppConfig config_from_json(const json& j) {
  AppConfig c;
  Section root(j, "");
  root.get("seed", c.seed);

  {
    Section s = root.child("path");
    auto& p = c.setup.path;
    s.get("side_length", p.side_length);
    s.get("track_width", p.track_width);
    s.get("layer_height", p.layer_height);
    s.get("num_layers", p.num_layers);
    s.get("scan_speed", p.scan_speed);
    s.get("interlayer_dwell", p.interlayer_dwell);
    s.finish();
  }
  {
    Section s = root.child("grid");
    auto& g = c.setup.geometry;
    s.get("spacing", g.spacing);
    s.get("margin", g.margin);
    s.get("substrate_layers", g.substrate_layers);
    s.finish();
  }
  {
    Section s = root.child("material");
    auto& m = c.setup.material;
    s.get("density", m.density);
    m.cp = read_table(s, "cp", m.cp);
    m.k = read_table(s, "k", m.k);
    s.get("emissivity", m.emissivity);
    s.get("absorption", m.absorption);
    s.get("solidus", m.solidus_T);
    s.get("liquidus", m.liquidus_T);
    s.finish();
  }
  {
    Section s = root.child("plant");
    auto& p = c.setup.plant;
    s.get("dt", p.dt);
    s.get("ambient", p.ambient_T0);
    s.get("h_conv", p.h_conv);
    s.get("beam_radius", p.beam_radius);
    s.get("fixed_bottom", p.fixed_bottom);
    s.get("plant_steps_per_sample", c.setup.plant_steps_per_sample);
    s.finish();
  }
  {
    Section s = root.child("features");
    auto& f = c.setup.features;
    s.get("window_half_width", f.window_half_width);
    s.get("fine_spacing", f.fine_spacing);
    s.get("sensing_radius", f.sensing_radius);
    s.get("depth_half_width", f.depth_half_width);
    s.get("depth_box_height", f.depth_box_height);
    s.get("calibration_scale", f.calibration_scale);
    s.finish();
  }
  {
    Section s = root.child("bounds");
    s.get("lower", c.bounds.lower);
    s.get("upper", c.bounds.upper);
    s.finish();
  }
  {
    Section s = root.child("profiles");
    s.get("count", c.profiles.count);
    s.get("lhs_candidates", c.profiles.lhs_candidates);
    Section r = s.child("ranges");
    for (std::size_t d = 0; d < kProfileDims; ++d) read_range(r, kProfileKeys[d], c.profiles.ranges[d]);
    r.finish();
    s.finish();
  }
  {
    Section s = root.child("dataset");
    s.get("w", c.dataset.w);
    s.get("p", c.dataset.p);
    s.get("validation_fraction", c.dataset.validation_fraction);
    s.get("smoothing_window", c.dataset.smoothing_window);
    s.finish();
  }
  {
    Section s = root.child("model");
    auto& m = c.model;
    m.w = c.dataset.w;
    m.p = c.dataset.p;
    s.get("num_encoder_layers", m.num_encoder_layers);
    s.get("num_decoder_layers", m.num_decoder_layers);
    s.get("decoder_output_dim", m.decoder_output_dim);
    s.get("hidden_size", m.hidden_size);
    s.get("decoder_hidden_size", m.decoder_hidden_size);
    s.get("dropout", m.dropout);
    s.get("layer_norm", m.layer_norm);
    s.get("feature_projection_dim", m.feature_projection_dim);
    s.get("quantiles", m.quantiles);
    s.finish();
  }
  {
    Section s = root.child("training");
    auto& t = c.training;
    s.get("epochs", t.epochs);
    s.get("batch_size", t.batch_size);
    s.get("learning_rate", t.learning_rate);
    s.get("decay", t.decay);
    s.get("decay_every", t.decay_every);
    s.get("l2", t.l2);
    s.finish();
  }
  {
    Section s = root.child("mpc");
    auto& m = c.mpc;
    m.horizon = c.model.p;
    s.get("Q", m.Q);
    s.get("R", m.R);
    s.get("depth_lb", m.depth_lb);
    s.get("depth_ub", m.depth_ub);
    s.get("activation_layer", m.activation_layer);
    s.get("corner_threshold", m.corner_threshold);
    s.get("mu0", m.mu0);
    s.get("mu_growth", m.mu_growth);
    s.get("max_outer", m.max_outer);
    s.get("violation_tol", m.violation_tol);
    s.get("lbfgs_memory", m.lbfgs.memory);
    s.get("max_inner", m.lbfgs.max_iterations);
    s.get("gtol", m.lbfgs.gtol);
    s.get("ftol", m.lbfgs.ftol);
    s.finish();
  }
  {
    Section s = root.child("pid");
    s.get("Kp", c.pid.Kp);
    s.get("Ki", c.pid.Ki);
    s.get("Kd", c.pid.Kd);
    Section t = s.child("tune");
    t.get("budget", c.pid_tune.budget);
    t.get("episode_layers", c.pid_tune.episode_layers);
    read_range(t, "Kp", c.pid_tune.range.Kp);
    read_range(t, "Ki", c.pid_tune.range.Ki);
    read_range(t, "Kd", c.pid_tune.range.Kd);
    t.finish();
    s.finish();
  }
  {
    Section s = root.child("run");
    std::string controller = to_string(c.run.controller);
    s.get("controller", controller);
    c.run.controller = controller_from_string(controller);
    Section r = s.child("reference");
    std::string mode = "step";
    r.get("mode", mode);
    if (mode != "step" && mode != "linear") throw ConfigError("run.reference.mode", "must be 'step' or 'linear'");
    c.run.reference.mode = mode == "step" ? ReferenceSpec::Mode::step : ReferenceSpec::Mode::linear;
    r.get("times", c.run.reference.times);
    r.get("values", c.run.reference.values);
    r.finish();
    s.get("warmup_u", c.run.warmup_u);
    s.get("warmup_samples", c.run.warmup_samples);
    s.get("smoothing_span", c.run.smoothing_span);
    s.get("max_consecutive_failures", c.run.max_consecutive_failures);
    s.get("transition_window", c.run.transition_window);
    s.get("compare_cold_start", c.run.compare_cold_start);
    s.finish();
  }
  root.finish();
  c.apply_seed(c.seed);
  c.validate();
  return c;
}

AppConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("--config", "cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

json to_json(const AppConfig& c) {
  const auto& path = c.setup.path;
  const auto& g = c.setup.geometry;
  const auto& m = c.setup.material;
  const auto& pl = c.setup.plant;
  const auto& f = c.setup.features;
  json ranges = json::object();
  for (std::size_t d = 0; d < kProfileDims; ++d) ranges[kProfileKeys[d]] = c.profiles.ranges[d];
  return json{
      {"seed", c.seed},
      {"path",
       {{"side_length", path.side_length},
        {"track_width", path.track_width},
        {"layer_height", path.layer_height},
        {"num_layers", path.num_layers},
        {"scan_speed", path.scan_speed},
        {"interlayer_dwell", path.interlayer_dwell}}},
      {"grid", {{"spacing", g.spacing}, {"margin", g.margin}, {"substrate_layers", g.substrate_layers}}},
      {"material",
       {{"density", m.density},
        {"cp", table_json(m.cp)},
        {"k", table_json(m.k)},
        {"emissivity", m.emissivity},
        {"absorption", m.absorption},
        {"solidus", m.solidus_T},
        {"liquidus", m.liquidus_T}}},
      {"plant",
       {{"dt", pl.dt},
        {"ambient", pl.ambient_T0},
        {"h_conv", pl.h_conv},
        {"beam_radius", pl.beam_radius},
        {"fixed_bottom", pl.fixed_bottom},
        {"plant_steps_per_sample", c.setup.plant_steps_per_sample}}},
      {"features",
       {{"window_half_width", f.window_half_width},
        {"fine_spacing", f.fine_spacing},
        {"sensing_radius", f.sensing_radius},
        {"depth_half_width", f.depth_half_width},
        {"depth_box_height", f.depth_box_height},
        {"calibration_scale", f.calibration_scale}}},
      {"bounds", {{"lower", c.bounds.lower}, {"upper", c.bounds.upper}}},
      {"profiles", {{"count", c.profiles.count}, {"lhs_candidates", c.profiles.lhs_candidates}, {"ranges", ranges}}},
      {"dataset",
       {{"w", c.dataset.w},
        {"p", c.dataset.p},
        {"validation_fraction", c.dataset.validation_fraction},
        {"smoothing_window", c.dataset.smoothing_window}}},
      {"model",
       {{"num_encoder_layers", c.model.num_encoder_layers},
        {"num_decoder_layers", c.model.num_decoder_layers},
        {"decoder_output_dim", c.model.decoder_output_dim},
        {"hidden_size", c.model.hidden_size},
        {"decoder_hidden_size", c.model.decoder_hidden_size},
        {"dropout", c.model.dropout},
        {"layer_norm", c.model.layer_norm},
        {"feature_projection_dim", c.model.feature_projection_dim},
        {"quantiles", c.model.quantiles}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"learning_rate", c.training.learning_rate},
        {"decay", c.training.decay},
        {"decay_every", c.training.decay_every},
        {"l2", c.training.l2}}},
      {"mpc",
       {{"Q", c.mpc.Q},
        {"R", c.mpc.R},
        {"depth_lb", c.mpc.depth_lb},
        {"depth_ub", c.mpc.depth_ub},
        {"activation_layer", c.mpc.activation_layer},
        {"corner_threshold", c.mpc.corner_threshold},
        {"mu0", c.mpc.mu0},
        {"mu_growth", c.mpc.mu_growth},
        {"max_outer", c.mpc.max_outer},
        {"violation_tol", c.mpc.violation_tol},
        {"lbfgs_memory", c.mpc.lbfgs.memory},
        {"max_inner", c.mpc.lbfgs.max_iterations},
        {"gtol", c.mpc.lbfgs.gtol},
        {"ftol", c.mpc.lbfgs.ftol}}},
      {"pid",
       {{"Kp", c.pid.Kp},
        {"Ki", c.pid.Ki},
        {"Kd", c.pid.Kd},
        {"tune",
         {{"budget", c.pid_tune.budget},
          {"episode_layers", c.pid_tune.episode_layers},
          {"Kp", c.pid_tune.range.Kp},
          {"Ki", c.pid_tune.range.Ki},
          {"Kd", c.pid_tune.range.Kd}}}}},
      {"run",
       {{"controller", to_string(c.run.controller)},
        {"reference",
         {{"mode", c.run.reference.mode == ReferenceSpec::Mode::step ? "step" : "linear"},
          {"times", c.run.reference.times},
          {"values", c.run.reference.values}}},
        {"warmup_u", c.run.warmup_u},
        {"warmup_samples", c.run.warmup_samples},
        {"smoothing_span", c.run.smoothing_span},
        {"max_consecutive_failures", c.run.max_consecutive_failures},
        {"transition_window", c.run.transition_window},
        {"compare_cold_start", c.run.compare_cold_start}}},
  };
}

}  // namespace dedmpc
