#pragma once

#include "defmark/geometry.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace defmark {

struct Landmark {
  std::string name;
  Point3 position;
};

/// Ordered, uniquely named landmarks. Index i is landmark i for evaluation;
/// names are metadata checked for consistency.
class LandmarkSet {
 public:
  LandmarkSet() = default;

  /// Throws InputError on an empty or duplicate name or a non-finite position.
  void add(std::string name, const Point3& position);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Landmark& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  PointCloud positions() const;
  /// Same names, new positions (sizes must match).
  LandmarkSet with_positions(const PointCloud& positions) const;

 private:
  std::vector<Landmark> entries_;
};

/// One row of an optimizer energy trace.
struct EnergyRecord {
  int iteration = 0;
  double total = 0.0;
  double align = 0.0;
  double smooth = 0.0;
};

/// Machine-readable run report. Serialized with a fixed key order:
/// per_landmark_errors, err_avg, params, energy_trace, timings_ms, diagnostics.
struct ReportDocument {
  std::vector<std::pair<std::string, double>> per_landmark_errors;
  std::optional<double> err_avg;  // present iff per_landmark_errors is non-empty
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  std::vector<EnergyRecord> energy_trace;
  std::vector<std::pair<std::string, double>> timings_ms;
  nlohmann::ordered_json diagnostics = nlohmann::ordered_json::object();
};

/// OBJ (`v`/`f` lines, polygons fan-triangulated) or ASCII PLY 1.0, by extension.
TriMesh read_mesh(const std::filesystem::path& path);
void write_mesh(const TriMesh& mesh, const std::filesystem::path& path);

TriMesh parse_obj(std::istream& in, const std::string& source_name);
TriMesh parse_ply(std::istream& in, const std::string& source_name);

/// CSV with header `name,x,y,z`; RFC 4180 quoting for names.
LandmarkSet read_landmarks(const std::filesystem::path& path);
void write_landmarks(const LandmarkSet& set, const std::filesystem::path& path);

nlohmann::ordered_json report_to_json(const ReportDocument& report);
/// Throws InputError if err_avg disagrees with the per-landmark mean by more than 1e-9.
void write_report(const ReportDocument& report, const std::filesystem::path& path);

/// Splits one CSV record; handles quoted fields with embedded commas and "" escapes.
std::vector<std::string> split_csv_record(const std::string& line);
std::string quote_csv_field(const std::string& field);

/// Shortest decimal that parses back to the same double.
std::string format_double(double value);

}  // namespace defmark
