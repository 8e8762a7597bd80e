#include "defmark/model_io.hpp"

#include "defmark/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace defmark {

namespace fs = std::filesystem;

namespace {

std::string lowercase_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) tokens.push_back(tok);
  return tokens;
}

std::optional<double> parse_double(std::string_view text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  const char* begin = t.data();
  if (*begin == '+') ++begin;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::optional<long long> parse_integer(std::string_view text) {
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

[[noreturn]] void parse_failure(const std::string& source, std::size_t line, const std::string& what) {
  throw InputError(source + ":" + std::to_string(line) + ": " + what);
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish_output(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw InputError("write failed for '" + path.string() + "'");
}

void check_faces(const TriMesh& mesh, const std::string& source) {
  const auto n = static_cast<long long>(mesh.vertices.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (int idx : mesh.faces[f]) {
      if (idx < 0 || idx >= n) {
        throw InputError(source + ": face " + std::to_string(f) + " references vertex " +
                         std::to_string(idx) + " but only " + std::to_string(n) + " vertices exist");
      }
    }
  }
}

void strip_bom(std::string& line) {
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
    line.erase(0, 3);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// LandmarkSet

void LandmarkSet::add(std::string name, const Point3& position) {
  if (name.empty()) throw InputError("landmark names must be non-empty");
  if (!position.allFinite()) throw InputError("landmark '" + name + "' has a non-finite position");
  for (const auto& e : entries_) {
    if (e.name == name) throw InputError("duplicate landmark name '" + name + "'");
  }
  entries_.push_back({std::move(name), position});
}

PointCloud LandmarkSet::positions() const {
  PointCloud out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.position);
  return out;
}

LandmarkSet LandmarkSet::with_positions(const PointCloud& positions) const {
  if (positions.size() != entries_.size()) {
    throw InputError("landmark position count " + std::to_string(positions.size()) +
                     " does not match set size " + std::to_string(entries_.size()));
  }
  LandmarkSet out;
  out.entries_ = entries_;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!positions[i].allFinite()) {
      throw NumericalError("landmark '" + entries_[i].name + "' moved to a non-finite position");
    }
    out.entries_[i].position = positions[i];
  }
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// Meshes

TriMesh parse_obj(std::istream& in, const std::string& source) {
  TriMesh mesh;
  std::vector<std::vector<long long>> raw_faces;
  std::vector<std::size_t> face_lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto tokens = tokenize(line);
    if (tokens.empty()) continue;
    const std::string& tag = tokens[0];
    if (tag == "v") {
      if (tokens.size() != 4 && tokens.size() != 5) parse_failure(source, line_no, "vertex needs 3 coordinates");
      Point3 p;
      for (int i = 0; i < 3; ++i) {
        const auto v = parse_double(tokens[i + 1]);
        if (!v) parse_failure(source, line_no, "invalid vertex coordinate '" + tokens[i + 1] + "'");
        p[i] = *v;
      }
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      if (tokens.size() < 4) parse_failure(source, line_no, "face needs at least 3 vertices");
      std::vector<long long> poly;
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        const std::string head = tokens[i].substr(0, tokens[i].find('/'));
        const auto idx = parse_integer(head);
        if (!idx || *idx == 0) parse_failure(source, line_no, "invalid face index '" + tokens[i] + "'");
        // Negative indices are relative to the vertices read so far.
        const long long zero_based =
            *idx > 0 ? *idx - 1 : static_cast<long long>(mesh.vertices.size()) + *idx;
        poly.push_back(zero_based);
      }
      raw_faces.push_back(std::move(poly));
      face_lines.push_back(line_no);
    }
    // vt, vn, usemtl, mtllib, g, o, s and other directives carry nothing we use.
  }
  const auto n = static_cast<long long>(mesh.vertices.size());
  for (std::size_t f = 0; f < raw_faces.size(); ++f) {
    const auto& poly = raw_faces[f];
    for (long long idx : poly) {
      if (idx < 0 || idx >= n) {
        parse_failure(source, face_lines[f], "face index out of range (" + std::to_string(n) + " vertices)");
      }
    }
    for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
      mesh.faces.push_back({static_cast<int>(poly[0]), static_cast<int>(poly[i]), static_cast<int>(poly[i + 1])});
    }
  }
  return mesh;
}

TriMesh parse_ply(std::istream& in, const std::string& source) {
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties;
    bool list_face = false;
  };
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    return true;
  };

  if (!next_line() || trim(line) != "ply") parse_failure(source, 1, "missing 'ply' magic");
  std::vector<Element> elements;
  bool saw_format = false;
  while (true) {
    if (!next_line()) parse_failure(source, line_no, "unexpected end of header");
    const auto tokens = tokenize(line);
    if (tokens.empty()) continue;
    if (tokens[0] == "end_header") break;
    if (tokens[0] == "comment" || tokens[0] == "obj_info") continue;
    if (tokens[0] == "format") {
      if (tokens.size() < 3) parse_failure(source, line_no, "malformed format line");
      if (tokens[1] != "ascii") parse_failure(source, line_no, "unsupported encoding '" + tokens[1] + "' (only ascii PLY is read)");
      if (tokens[2] != "1.0") parse_failure(source, line_no, "unsupported PLY version '" + tokens[2] + "'");
      saw_format = true;
    } else if (tokens[0] == "element") {
      if (tokens.size() != 3) parse_failure(source, line_no, "malformed element line");
      const auto count = parse_integer(tokens[2]);
      if (!count || *count < 0) parse_failure(source, line_no, "invalid element count '" + tokens[2] + "'");
      elements.push_back({tokens[1], static_cast<std::size_t>(*count), {}, false});
    } else if (tokens[0] == "property") {
      if (elements.empty()) parse_failure(source, line_no, "property before any element");
      if (tokens.size() == 5 && tokens[1] == "list") {
        elements.back().properties.push_back(tokens[4]);
        if (tokens[4] == "vertex_indices" || tokens[4] == "vertex_index") elements.back().list_face = true;
      } else if (tokens.size() == 3) {
        elements.back().properties.push_back(tokens[2]);
      } else {
        parse_failure(source, line_no, "malformed property line");
      }
    } else {
      parse_failure(source, line_no, "unknown header keyword '" + tokens[0] + "'");
    }
  }
  if (!saw_format) parse_failure(source, line_no, "missing format line");

  TriMesh mesh;
  bool have_vertices = false;
  for (const auto& element : elements) {
    if (element.name == "vertex") {
      const auto find = [&](const char* name) -> long {
        const auto it = std::find(element.properties.begin(), element.properties.end(), name);
        return it == element.properties.end() ? -1 : static_cast<long>(it - element.properties.begin());
      };
      const long ix = find("x"), iy = find("y"), iz = find("z");
      if (ix < 0 || iy < 0 || iz < 0) parse_failure(source, line_no, "vertex element lacks x/y/z properties");
      mesh.vertices.reserve(element.count);
      for (std::size_t i = 0; i < element.count; ++i) {
        if (!next_line()) parse_failure(source, line_no, "unexpected end of vertex data");
        const auto tokens = tokenize(line);
        if (tokens.size() != element.properties.size()) parse_failure(source, line_no, "vertex row has wrong field count");
        Point3 p;
        const long cols[3] = {ix, iy, iz};
        for (int c = 0; c < 3; ++c) {
          const auto v = parse_double(tokens[static_cast<std::size_t>(cols[c])]);
          if (!v) parse_failure(source, line_no, "invalid vertex coordinate");
          p[c] = *v;
        }
        mesh.vertices.push_back(p);
      }
      have_vertices = true;
    } else if (element.name == "face" && element.list_face) {
      for (std::size_t i = 0; i < element.count; ++i) {
        if (!next_line()) parse_failure(source, line_no, "unexpected end of face data");
        const auto tokens = tokenize(line);
        if (tokens.empty()) parse_failure(source, line_no, "empty face row");
        const auto n = parse_integer(tokens[0]);
        if (!n || *n < 3 || tokens.size() < static_cast<std::size_t>(*n) + 1) {
          parse_failure(source, line_no, "malformed face row");
        }
        std::vector<int> poly;
        for (long long k = 1; k <= *n; ++k) {
          const auto idx = parse_integer(tokens[static_cast<std::size_t>(k)]);
          if (!idx || *idx < 0 || *idx >= static_cast<long long>(mesh.vertices.size())) {
            parse_failure(source, line_no, "face index out of range");
          }
          poly.push_back(static_cast<int>(*idx));
        }
        for (std::size_t k = 1; k + 1 < poly.size(); ++k) mesh.faces.push_back({poly[0], poly[k], poly[k + 1]});
      }
    } else {
      for (std::size_t i = 0; i < element.count; ++i) {
        if (!next_line()) parse_failure(source, line_no, "unexpected end of '" + element.name + "' data");
      }
    }
  }
  if (!have_vertices) parse_failure(source, line_no, "no vertex element");
  return mesh;
}

TriMesh read_mesh(const fs::path& path) {
  const std::string ext = lowercase_extension(path);
  if (ext != ".obj" && ext != ".ply") throw InputError("unsupported mesh extension '" + ext + "' for " + path.string());
  auto in = open_input(path);
  TriMesh mesh = ext == ".obj" ? parse_obj(in, path.string()) : parse_ply(in, path.string());
  check_faces(mesh, path.string());
  return mesh;
}

void write_mesh(const TriMesh& mesh, const fs::path& path) {
  const std::string ext = lowercase_extension(path);
  if (ext != ".obj" && ext != ".ply") throw InputError("unsupported mesh extension '" + ext + "' for " + path.string());
  check_faces(mesh, path.string());
  auto out = open_output(path);
  if (ext == ".obj") {
    for (const auto& v : mesh.vertices) {
      out << "v " << format_double(v.x()) << ' ' << format_double(v.y()) << ' ' << format_double(v.z()) << '\n';
    }
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  } else {
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertices.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    if (!mesh.faces.empty()) {
      out << "element face " << mesh.faces.size() << "\nproperty list uchar int vertex_indices\n";
    }
    out << "end_header\n";
    for (const auto& v : mesh.vertices) {
      out << format_double(v.x()) << ' ' << format_double(v.y()) << ' ' << format_double(v.z()) << '\n';
    }
    for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  }
  finish_output(out, path);
}

// ---------------------------------------------------------------------------
// Landmarks

std::vector<std::string> split_csv_record(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  if (quoted) throw InputError("unterminated quoted CSV field");
  return fields;
}

std::string quote_csv_field(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos && trim(field) == field) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

LandmarkSet read_landmarks(const fs::path& path) {
  auto in = open_input(path);
  const std::string source = path.string();
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  LandmarkSet set;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) strip_bom(line);
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    try {
      fields = split_csv_record(line);
    } catch (const InputError& e) {
      parse_failure(source, line_no, e.what());
    }
    if (!header_seen) {
      if (fields.size() != 4 || trim(fields[0]) != "name" || trim(fields[1]) != "x" || trim(fields[2]) != "y" ||
          trim(fields[3]) != "z") {
        parse_failure(source, line_no, "expected header 'name,x,y,z'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 4) parse_failure(source, line_no, "expected 4 fields, found " + std::to_string(fields.size()));
    Point3 p;
    for (int c = 0; c < 3; ++c) {
      const auto v = parse_double(fields[c + 1]);
      if (!v) parse_failure(source, line_no, "non-numeric coordinate '" + fields[c + 1] + "'");
      p[c] = *v;
    }
    try {
      set.add(fields[0], p);
    } catch (const InputError& e) {
      parse_failure(source, line_no, e.what());
    }
  }
  if (!header_seen) parse_failure(source, line_no, "missing header 'name,x,y,z'");
  return set;
}

void write_landmarks(const LandmarkSet& set, const fs::path& path) {
  auto out = open_output(path);
  out << "name,x,y,z\n";
  for (const auto& lm : set) {
    out << quote_csv_field(lm.name) << ',' << format_double(lm.position.x()) << ','
        << format_double(lm.position.y()) << ',' << format_double(lm.position.z()) << '\n';
  }
  finish_output(out, path);
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::ordered_json report_to_json(const ReportDocument& report) {
  if (report.per_landmark_errors.empty() != !report.err_avg.has_value()) {
    throw InputError("report: err_avg must be present exactly when per-landmark errors are");
  }
  if (report.err_avg) {
    double sum = 0.0;
    for (const auto& [name, err] : report.per_landmark_errors) sum += err;
    const double mean = sum / static_cast<double>(report.per_landmark_errors.size());
    if (std::abs(mean - *report.err_avg) > 1e-9) {
      throw InputError("report: err_avg " + format_double(*report.err_avg) +
                       " disagrees with per-landmark mean " + format_double(mean));
    }
  }
  nlohmann::ordered_json doc;
  doc["per_landmark_errors"] = nlohmann::ordered_json::object();
  for (const auto& [name, err] : report.per_landmark_errors) doc["per_landmark_errors"][name] = err;
  doc["err_avg"] = report.err_avg ? nlohmann::ordered_json(*report.err_avg) : nlohmann::ordered_json(nullptr);
  doc["params"] = report.params;
  doc["energy_trace"] = nlohmann::ordered_json::array();
  for (const auto& rec : report.energy_trace) {
    doc["energy_trace"].push_back(
        {{"iteration", rec.iteration}, {"e_total", rec.total}, {"e_align", rec.align}, {"e_smooth", rec.smooth}});
  }
  doc["timings_ms"] = nlohmann::ordered_json::object();
  for (const auto& [name, ms] : report.timings_ms) doc["timings_ms"][name] = ms;
  doc["diagnostics"] = report.diagnostics;
  return doc;
}

void write_report(const ReportDocument& report, const fs::path& path) {
  const auto doc = report_to_json(report);
  auto out = open_output(path);
  out << doc.dump(2) << '\n';
  finish_output(out, path);
}

}  // namespace defmark
