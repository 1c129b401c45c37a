#include "fsfd_cli/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fsfd/errors.hpp"

namespace fsfd::cli {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw ParameterError("config field '" + path + "': " + why);
}

const json& member(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.is_object()) fail(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) fail(path + "." + key, "missing");
  return *it;
}

double number_at(const json& value, const std::string& path) {
  if (!value.is_number()) fail(path, "expected a number");
  return value.get<double>();
}

long integer_at(const json& value, const std::string& path) {
  if (!value.is_number_integer()) fail(path, "expected an integer");
  return value.get<long>();
}

Eigen::MatrixXd matrix_at(const json& value, const std::string& path) {
  if (!value.is_array() || value.empty()) fail(path, "expected a non-empty array of rows");
  const std::size_t rows = value.size();
  std::size_t cols = 0;
  Eigen::MatrixXd out;
  for (std::size_t i = 0; i < rows; ++i) {
    const json& row = value[i];
    const std::string row_path = path + "[" + std::to_string(i) + "]";
    if (!row.is_array() || row.empty()) fail(row_path, "expected a non-empty row array");
    if (i == 0) {
      cols = row.size();
      out.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      fail(row_path, "row width " + std::to_string(row.size()) + " differs from " +
                         std::to_string(cols));
    }
    for (std::size_t j = 0; j < cols; ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          number_at(row[j], row_path + "[" + std::to_string(j) + "]");
    }
  }
  return out;
}

Eigen::VectorXd vector_at(const json& value, const std::string& path) {
  if (!value.is_array() || value.empty()) fail(path, "expected a non-empty array of numbers");
  Eigen::VectorXd out(static_cast<Eigen::Index>(value.size()));
  for (std::size_t i = 0; i < value.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = number_at(value[i], path + "[" + std::to_string(i) + "]");
  }
  return out;
}

// Covariance shorthand: a number is a standard deviation, expanded to sd^2 I.
Eigen::MatrixXd covariance_at(const json& value, const std::string& path, Eigen::Index dim) {
  if (value.is_number()) {
    const double sd = value.get<double>();
    if (sd < 0.0) fail(path, "standard deviation must be nonnegative");
    return sd * sd * Eigen::MatrixXd::Identity(dim, dim);
  }
  const Eigen::MatrixXd cov = matrix_at(value, path);
  if (cov.rows() != dim || cov.cols() != dim) {
    fail(path, "expected a " + std::to_string(dim) + "x" + std::to_string(dim) + " matrix");
  }
  return cov;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw DataError("cannot parse '" + path + "': " + e.what());
  }
  return doc;
}

void parse_model(ExperimentConfig& cfg, const json& spec, const std::string& base_dir) {
  json resolved = spec;
  if (spec.is_object() && spec.contains("file")) {
    const std::string ref = member(spec, "model", "file").get<std::string>();
    const std::filesystem::path target = std::filesystem::path(base_dir) / ref;
    resolved = load_json_file(target.string());
  }
  cfg.A = matrix_at(member(resolved, "model", "A"), "model.A");
  cfg.B = matrix_at(member(resolved, "model", "B"), "model.B");
  cfg.C = matrix_at(member(resolved, "model", "C"), "model.C");
  cfg.D = matrix_at(member(resolved, "model", "D"), "model.D");
  if (cfg.A.rows() != cfg.A.cols()) fail("model.A", "must be square");
  if (cfg.B.rows() != cfg.A.rows()) fail("model.B", "row count must match model.A");
  if (cfg.C.cols() != cfg.A.rows()) fail("model.C", "column count must match model.A");
  if (cfg.D.rows() != cfg.C.rows() || cfg.D.cols() != cfg.B.cols()) {
    fail("model.D", "must be (outputs x inputs)");
  }
}

void parse_noise(ExperimentConfig& cfg, const json& spec) {
  const Eigen::Index n = cfg.A.rows();
  const Eigen::Index m = cfg.C.rows();
  if (spec.is_number()) {
    const double sd = spec.get<double>();
    if (sd < 0.0) fail("noise", "standard deviation must be nonnegative");
    if (sd == 0.0) return;  // noise-free shorthand
    cfg.sigma_w = sd * sd * Eigen::MatrixXd::Identity(n, n);
    cfg.s_wv = Eigen::MatrixXd::Zero(n, m);
    cfg.sigma_v = sd * sd * Eigen::MatrixXd::Identity(m, m);
    return;
  }
  if (!spec.is_object()) fail("noise", "expected a number or an object");
  cfg.sigma_w = covariance_at(member(spec, "noise", "sigma_w"), "noise.sigma_w", n);
  cfg.sigma_v = covariance_at(member(spec, "noise", "sigma_v"), "noise.sigma_v", m);
  if (spec.contains("s_wv")) {
    const Eigen::MatrixXd cross = matrix_at(spec["s_wv"], "noise.s_wv");
    if (cross.rows() != n || cross.cols() != m) {
      fail("noise.s_wv", "expected a " + std::to_string(n) + "x" + std::to_string(m) + " matrix");
    }
    cfg.s_wv = cross;
  } else {
    cfg.s_wv = Eigen::MatrixXd::Zero(n, m);
  }
}

void parse_fault(ExperimentConfig& cfg, const json& spec) {
  if (!spec.is_object()) fail("fault", "expected an object");
  FaultConfig fc;
  fc.kind = member(spec, "fault", "kind").get<std::string>();
  fc.onset = integer_at(member(spec, "fault", "onset"), "fault.onset");
  const Eigen::Index p = cfg.B.cols();
  const Eigen::Index m = cfg.C.rows();
  if (fc.kind == "step_sensor" || fc.kind == "gain_sensor") {
    const char* key = fc.kind == "step_sensor" ? "amplitude" : "factors";
    fc.values = vector_at(member(spec, "fault", key), std::string("fault.") + key);
    if (fc.values.size() != m) {
      fail(std::string("fault.") + key, "expected " + std::to_string(m) + " output channels");
    }
  } else if (fc.kind == "step_actuator") {
    fc.values = vector_at(member(spec, "fault", "amplitude"), "fault.amplitude");
    if (fc.values.size() != p) {
      fail("fault.amplitude", "expected " + std::to_string(p) + " input channels");
    }
  } else {
    fail("fault.kind", "must be step_sensor, step_actuator, or gain_sensor");
  }
  cfg.fault = std::move(fc);
}

}  // namespace

StateSpaceModel ExperimentConfig::model() const { return StateSpaceModel(A, B, C, D); }

std::optional<NoiseModel> ExperimentConfig::noise() const {
  if (!sigma_w) return std::nullopt;
  return NoiseModel(*sigma_w, *s_wv, *sigma_v);
}

std::optional<FaultProfile> ExperimentConfig::fault_profile(double amplitude_scale) const {
  if (!fault || amplitude_scale == 0.0) return std::nullopt;
  if (fault->kind == "step_sensor") {
    return FaultProfile::step_sensor(fault->onset, amplitude_scale * fault->values);
  }
  if (fault->kind == "step_actuator") {
    return FaultProfile::step_actuator(fault->onset, amplitude_scale * fault->values);
  }
  // Gain factors scale through their deviation from the identity gain.
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(fault->values.size());
  return FaultProfile::gain_sensor(fault->onset,
                                   ones + amplitude_scale * (fault->values - ones));
}

ExperimentConfig parse_config(const nlohmann::json& doc, const std::string& base_dir) {
  if (!doc.is_object()) throw ParameterError("config: expected a JSON object");
  ExperimentConfig cfg;
  parse_model(cfg, member(doc, "config", "model"), base_dir);
  if (doc.contains("noise")) parse_noise(cfg, doc["noise"]);
  if (doc.contains("fault")) parse_fault(cfg, doc["fault"]);

  cfg.horizon = integer_at(member(doc, "config", "horizon"), "horizon");
  if (cfg.horizon < 1) fail("horizon", "must be at least 1");
  cfg.window = static_cast<int>(integer_at(member(doc, "config", "window"), "window"));
  if (cfg.window < 1) fail("window", "must be at least 1");
  if (cfg.horizon < cfg.window) {
    fail("horizon", "N = " + std::to_string(cfg.horizon) +
                        " is shorter than the window depth s = " + std::to_string(cfg.window));
  }

  if (doc.contains("order") && !(doc["order"].is_string() && doc["order"] == "auto")) {
    const long order = integer_at(doc["order"], "order");
    if (order < 0) fail("order", "must be nonnegative");
    cfg.order = static_cast<Eigen::Index>(order);
  }

  if (doc.contains("mode")) {
    if (!doc["mode"].is_string()) fail("mode", "expected a string");
    cfg.mode = doc["mode"].get<std::string>();
    if (cfg.mode != "chi2" && cfg.mode != "svdd") fail("mode", "must be chi2 or svdd");
  }
  if (doc.contains("alpha")) {
    cfg.alpha = number_at(doc["alpha"], "alpha");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) fail("alpha", "must lie strictly inside (0, 1)");
  }
  if (doc.contains("c")) {
    cfg.c_box = number_at(doc["c"], "c");
    if (!(cfg.c_box > 0.0)) fail("c", "must be positive");
  }
  if (doc.contains("ridge")) {
    cfg.ridge = number_at(doc["ridge"], "ridge");
    if (cfg.ridge < 0.0) fail("ridge", "must be nonnegative");
  }
  if (doc.contains("seed")) {
    const long seed = integer_at(doc["seed"], "seed");
    if (seed < 0) fail("seed", "must be nonnegative");
    cfg.seed = static_cast<std::uint64_t>(seed);
  }
  if (doc.contains("input_scale")) {
    cfg.input_scale = number_at(doc["input_scale"], "input_scale");
    if (!(cfg.input_scale > 0.0)) fail("input_scale", "must be positive");
  }
  if (doc.contains("x0")) {
    const Eigen::VectorXd x0 = vector_at(doc["x0"], "x0");
    if (x0.size() != cfg.A.rows()) {
      fail("x0", "expected " + std::to_string(cfg.A.rows()) + " entries");
    }
    cfg.x0 = x0;
  }
  if (doc.contains("verify_rounds")) {
    cfg.verify_rounds = static_cast<int>(integer_at(doc["verify_rounds"], "verify_rounds"));
    if (cfg.verify_rounds < 0) fail("verify_rounds", "must be nonnegative");
  }
  if (doc.contains("amplitudes")) {
    const Eigen::VectorXd amps = vector_at(doc["amplitudes"], "amplitudes");
    cfg.amplitudes.assign(amps.data(), amps.data() + amps.size());
    for (double a : cfg.amplitudes) {
      if (a < 0.0) fail("amplitudes", "must be nonnegative");
    }
  }
  if (doc.contains("trials")) {
    cfg.trials = static_cast<int>(integer_at(doc["trials"], "trials"));
    if (cfg.trials < 1) fail("trials", "must be at least 1");
  }
  if (doc.contains("ls_past")) {
    const long past = integer_at(doc["ls_past"], "ls_past");
    if (past < 1) fail("ls_past", "must be at least 1");
    cfg.ls_past = static_cast<int>(past);
  }

  // Fault onset must leave at least one pre-onset sample inside the horizon.
  if (cfg.fault && (cfg.fault->onset < 2 || cfg.fault->onset > cfg.horizon)) {
    fail("fault.onset", "must lie inside the horizon (2.." + std::to_string(cfg.horizon) + ")");
  }

  cfg.echo = doc;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  const nlohmann::json doc = load_json_file(path);
  const std::string base = std::filesystem::path(path).parent_path().string();
  return parse_config(doc, base.empty() ? "." : base);
}

}  // namespace fsfd::cli
