#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsfd/ltisim.hpp"

namespace fsfd::cli {

// Scheduled additive or multiplicative fault, as declared in the config file.
struct FaultConfig {
  std::string kind;  // step_sensor | step_actuator | gain_sensor
  long onset = 0;
  Eigen::VectorXd values;  // step amplitudes, or gain factors
};

// Parsed and validated experiment description. Every consumer of a config
// goes through this struct, so validation happens exactly once.
struct ExperimentConfig {
  Eigen::MatrixXd A, B, C, D;

  std::optional<Eigen::MatrixXd> sigma_w;
  std::optional<Eigen::MatrixXd> s_wv;
  std::optional<Eigen::MatrixXd> sigma_v;

  std::optional<FaultConfig> fault;

  long horizon = 0;                   // samples to simulate (N)
  int window = 0;                     // stacking depth (s)
  std::optional<Eigen::Index> order;  // latent margin (n); empty selects it from the spectrum
  std::string mode = "chi2";          // chi2 | svdd
  double alpha = 0.05;
  double c_box = 1.0;
  double ridge = 1e-8;
  std::uint64_t seed = 1;
  double input_scale = 1.0;
  std::optional<Eigen::VectorXd> x0;

  int verify_rounds = 8;
  std::vector<double> amplitudes = {0.0, 1.0, 2.0, 4.0};
  int trials = 5;
  std::optional<int> ls_past;  // past horizon of the least-squares baseline

  nlohmann::json echo;  // normalized document, embedded in manifests

  StateSpaceModel model() const;
  std::optional<NoiseModel> noise() const;
  std::optional<FaultProfile> fault_profile(double amplitude_scale = 1.0) const;
};

// Parse a config document; `base_dir` anchors relative model-file references.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::string& base_dir = ".");

// Read and parse a config file. Parse and validation failures carry the
// offending field path.
ExperimentConfig load_config(const std::string& path);

}  // namespace fsfd::cli
