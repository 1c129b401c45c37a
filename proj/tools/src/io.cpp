#include "fsfd_cli/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fsfd/errors.hpp"

namespace fsfd::cli {

namespace {

using nlohmann::json;

std::string iso_utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  while (true) {
    const std::size_t end = line.find(sep, begin);
    if (end == std::string::npos) {
      out.push_back(line.substr(begin));
      return out;
    }
    out.push_back(line.substr(begin, end - begin));
    begin = end + 1;
  }
}

double parse_double(const std::string& token, const std::string& where) {
  char* end = nullptr;
  const double value = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') {
    throw DataError(where + ": cannot parse number '" + token + "'");
  }
  return value;
}

json matrix_payload(const Eigen::MatrixXd& a) {
  json data = json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) data.push_back(a(i, j));
  }
  return json{{"rows", a.rows()}, {"cols", a.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_payload(const json& doc, const std::string& field) {
  if (!doc.is_object() || !doc.contains("rows") || !doc.contains("cols") ||
      !doc.contains("data")) {
    throw DataError("detector field '" + field + "': expected {rows, cols, data}");
  }
  const Eigen::Index rows = doc["rows"].get<Eigen::Index>();
  const Eigen::Index cols = doc["cols"].get<Eigen::Index>();
  const json& data = doc["data"];
  if (rows < 0 || cols < 0 || !data.is_array() ||
      data.size() != static_cast<std::size_t>(rows * cols)) {
    throw DataError("detector field '" + field + "': payload size does not match its shape");
  }
  Eigen::MatrixXd out(rows, cols);
  std::size_t idx = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = data[idx++].get<double>();
  }
  return out;
}

}  // namespace

std::string fnv1a64_hex(const std::string& bytes) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (const char c : bytes) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream body;
  body << in.rdbuf();
  return body.str();
}

void atomic_write(const std::string& path, const std::string& contents) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) {
    std::filesystem::create_directories(target.parent_path());
  }
  const std::string temp = path + ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + temp + "'");
    out << contents;
    out.flush();
    if (!out) throw DataError("short write to '" + temp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(temp, target, ec);
  if (ec) throw DataError("cannot rename '" + temp + "' to '" + path + "': " + ec.message());
}

std::string signals_to_text(const Trajectory& traj) {
  const Eigen::Index p = traj.u.dim();
  const Eigen::Index m = traj.y.dim();
  const Eigen::Index length = traj.length();
  std::ostringstream out;
  for (Eigen::Index i = 0; i < p; ++i) out << "u" << (i + 1) << ",";
  for (Eigen::Index i = 0; i < m; ++i) out << "y" << (i + 1) << ",";
  out << "label\n";
  for (Eigen::Index k = 0; k < length; ++k) {
    for (Eigen::Index i = 0; i < p; ++i) out << format_double(traj.u.samples()(i, k)) << ",";
    for (Eigen::Index i = 0; i < m; ++i) out << format_double(traj.y.samples()(i, k)) << ",";
    const int label =
        traj.labels.empty() ? 0 : static_cast<int>(traj.labels[static_cast<std::size_t>(k)]);
    out << label << "\n";
  }
  return out.str();
}

Trajectory signals_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("signals file: empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split(line, ',');
  Eigen::Index p = 0, m = 0;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string& name = header[i];
    if (i + 1 == header.size()) {
      if (name != "label") throw DataError("signals file header: last column must be 'label'");
    } else if (name == "u" + std::to_string(p + 1) && m == 0) {
      ++p;
    } else if (name == "y" + std::to_string(m + 1)) {
      ++m;
    } else {
      throw DataError("signals file header: unexpected column '" + name + "'");
    }
  }
  if (p < 1 || m < 1) throw DataError("signals file header: need u and y columns");

  std::vector<double> u_vals, y_vals;
  std::vector<std::uint8_t> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const std::vector<std::string> fields = split(line, ',');
    const std::string where = "signals file row " + std::to_string(row);
    if (fields.size() != static_cast<std::size_t>(p + m + 1)) {
      throw DataError(where + ": expected " + std::to_string(p + m + 1) + " fields, got " +
                      std::to_string(fields.size()));
    }
    for (Eigen::Index i = 0; i < p; ++i) {
      u_vals.push_back(parse_double(fields[static_cast<std::size_t>(i)], where));
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      y_vals.push_back(parse_double(fields[static_cast<std::size_t>(p + i)], where));
    }
    const std::string& lab = fields.back();
    if (lab != "0" && lab != "1") {
      throw DataError(where + ": label must be 0 or 1, got '" + lab + "'");
    }
    labels.push_back(lab == "1" ? 1 : 0);
  }
  if (row == 0) throw DataError("signals file: no data rows");

  const Eigen::Index length = static_cast<Eigen::Index>(row);
  Eigen::MatrixXd u(p, length), y(m, length);
  for (Eigen::Index k = 0; k < length; ++k) {
    for (Eigen::Index i = 0; i < p; ++i) u(i, k) = u_vals[static_cast<std::size_t>(k * p + i)];
    for (Eigen::Index i = 0; i < m; ++i) y(i, k) = y_vals[static_cast<std::size_t>(k * m + i)];
  }
  return Trajectory{SignalSequence(u, 0), SignalSequence(y, 0), std::nullopt, std::move(labels)};
}

void write_signals(const std::string& path, const Trajectory& traj) {
  atomic_write(path, signals_to_text(traj));
}

Trajectory load_signals(const std::string& path) { return signals_from_text(read_file(path)); }

nlohmann::json detector_to_json(const Detector& det) {
  json doc;
  doc["kind"] = "fsfd-detector";
  doc["format_version"] = 1;
  doc["mode"] = det.mode == DetectorMode::chi2 ? "chi2" : "svdd";
  doc["s"] = det.s;
  doc["gamma"] = det.gamma;
  doc["p"] = det.p;
  doc["m"] = det.m;
  doc["alpha_or_c"] = det.alpha_or_c;
  doc["ridge"] = det.ridge;
  doc["threshold"] = det.threshold;
  doc["u2"] = matrix_payload(det.U2);
  doc["delta_hat"] = matrix_payload(det.delta_hat);
  doc["cov_inv_factor"] = matrix_payload(det.cov_inv_factor);
  return doc;
}

Detector detector_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("kind", "") != "fsfd-detector") {
    throw DataError("detector file: missing kind marker 'fsfd-detector'");
  }
  Detector det;
  const std::string mode = doc.value("mode", "");
  if (mode == "chi2") {
    det.mode = DetectorMode::chi2;
  } else if (mode == "svdd") {
    det.mode = DetectorMode::svdd;
  } else {
    throw DataError("detector file: mode must be chi2 or svdd");
  }
  det.s = doc.value("s", 0);
  det.gamma = doc.value("gamma", Eigen::Index{0});
  det.p = doc.value("p", Eigen::Index{0});
  det.m = doc.value("m", Eigen::Index{0});
  det.alpha_or_c = doc.value("alpha_or_c", 0.0);
  det.ridge = doc.value("ridge", 0.0);
  det.threshold = doc.value("threshold", 0.0);
  det.U2 = matrix_from_payload(doc.at("u2"), "u2");
  const Eigen::MatrixXd delta = matrix_from_payload(doc.at("delta_hat"), "delta_hat");
  det.cov_inv_factor = matrix_from_payload(doc.at("cov_inv_factor"), "cov_inv_factor");

  if (det.s < 1) throw DataError("detector file: window depth must be at least 1");
  const Eigen::Index stacked = static_cast<Eigen::Index>(det.s) * (det.p + det.m);
  if (det.U2.cols() != stacked) {
    throw DataError("detector file: u2 has " + std::to_string(det.U2.cols()) +
                    " columns but s(p+m) = " + std::to_string(stacked));
  }
  const Eigen::Index theta = det.U2.rows();
  if (delta.rows() != theta || delta.cols() != 1) {
    throw DataError("detector file: delta_hat shape does not match u2");
  }
  det.delta_hat = delta.col(0);
  if (det.cov_inv_factor.rows() != theta || det.cov_inv_factor.cols() != theta) {
    throw DataError("detector file: cov_inv_factor shape does not match u2");
  }
  return det;
}

void write_detector(const std::string& path, const Detector& det) {
  atomic_write(path, detector_to_json(det).dump(2) + "\n");
}

Detector load_detector(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError("cannot parse '" + path + "': " + e.what());
  }
  return detector_from_json(doc);
}

std::string report_to_csv(const DetectionReport& report) {
  std::ostringstream out;
  out << "k,J,alarm\n";
  for (const auto& ev : report.windows) {
    out << ev.k << "," << format_double(ev.J) << "," << (ev.alarm ? 1 : 0) << "\n";
  }
  return out.str();
}

nlohmann::json report_summary(const DetectionReport& report, const Detector& det) {
  json doc;
  doc["kind"] = "fsfd-report";
  doc["far"] = report.far;
  doc["mdr"] = report.mdr;
  doc["windows"] = report.windows.size();
  doc["fault_free_windows"] = report.fault_free_windows;
  doc["faulty_windows"] = report.faulty_windows;
  doc["threshold"] = det.threshold;
  doc["mode"] = det.mode == DetectorMode::chi2 ? "chi2" : "svdd";
  doc["s"] = det.s;
  doc["gamma"] = det.gamma;
  doc["first_alarm"] = report.first_alarm ? json(*report.first_alarm) : json(nullptr);
  doc["first_faulty"] = report.first_faulty ? json(*report.first_faulty) : json(nullptr);
  // Delay counts windows from the first fault-covering window to the first
  // alarm at or after it.
  json delay(nullptr);
  if (report.first_faulty) {
    for (const auto& ev : report.windows) {
      if (ev.alarm && ev.k >= *report.first_faulty) {
        delay = ev.k - *report.first_faulty;
        break;
      }
    }
  }
  doc["delay"] = delay;
  return doc;
}

nlohmann::json make_manifest(const std::string& command, std::uint64_t seed,
                             const nlohmann::json& config_echo,
                             const std::vector<std::pair<std::string, std::string>>& files) {
  json checksums = json::object();
  for (const auto& [name, hex] : files) checksums[name] = hex;
  json doc;
  doc["kind"] = "fsfd-manifest";
  doc["tool"] = "fsfd";
  doc["tool_version"] = kToolVersion;
  doc["command"] = command;
  doc["seed"] = seed;
  doc["config"] = config_echo;
  doc["checksums"] = std::move(checksums);
  doc["timestamp"] = iso_utc_now();
  return doc;
}

void write_manifest(const std::string& path, const nlohmann::json& manifest) {
  atomic_write(path, manifest.dump(2) + "\n");
}

}  // namespace fsfd::cli
