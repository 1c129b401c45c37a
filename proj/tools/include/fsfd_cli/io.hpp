#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fsfd/detect.hpp"
#include "fsfd/ltisim.hpp"

namespace fsfd::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// 64-bit FNV-1a of a byte string, as 16 lowercase hex digits.
std::string fnv1a64_hex(const std::string& bytes);

// Shortest exact decimal form that round-trips a double ("%.17g").
std::string format_double(double value);

std::string read_file(const std::string& path);

// Write-temp-then-rename, creating parent directories as needed, so readers
// never observe a half-written file.
void atomic_write(const std::string& path, const std::string& contents);

// Signals table: one comma-separated row per time step under the header
// u1..up,y1..ym,label.
std::string signals_to_text(const Trajectory& traj);
Trajectory signals_from_text(const std::string& text);
void write_signals(const std::string& path, const Trajectory& traj);
Trajectory load_signals(const std::string& path);

// Detector document: mode, depth, split, threshold, and row-major payloads
// with explicit shapes.
nlohmann::json detector_to_json(const Detector& det);
Detector detector_from_json(const nlohmann::json& doc);
void write_detector(const std::string& path, const Detector& det);
Detector load_detector(const std::string& path);

// Per-window table "k,J,alarm" plus a summary document with the aggregate
// rates and the first-alarm bookkeeping.
std::string report_to_csv(const DetectionReport& report);
nlohmann::json report_summary(const DetectionReport& report, const Detector& det);

// Manifest: tool version, command, seed, config echo, and an FNV-1a checksum
// per emitted file. Rerunning a command with the same config and seed must
// reproduce the checksums; the timestamp is informational.
nlohmann::json make_manifest(const std::string& command, std::uint64_t seed,
                             const nlohmann::json& config_echo,
                             const std::vector<std::pair<std::string, std::string>>& files);
void write_manifest(const std::string& path, const nlohmann::json& manifest);

}  // namespace fsfd::cli
