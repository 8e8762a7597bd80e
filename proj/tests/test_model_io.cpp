#include "defmark/error.hpp"
#include "defmark/model_io.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <functional>

using namespace defmark;
using namespace testsupport;
namespace fs = std::filesystem;

namespace {

TriMesh obj_from(const std::string& text) {
  std::istringstream in(text);
  return parse_obj(in, "inline.obj");
}

TriMesh ply_from(const std::string& text) {
  std::istringstream in(text);
  return parse_ply(in, "inline.ply");
}

// Expects an InputError whose message carries "<source>:<line>:".
void expect_line_error(const std::function<void()>& fn, const std::string& source, int line) {
  try {
    fn();
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    INFO(msg);
    CHECK(msg.find(source + ":" + std::to_string(line) + ":") != std::string::npos);
  }
}

TriMesh random_mesh(Rng& rng, std::size_t n_vertices, std::size_t n_faces) {
  TriMesh m;
  m.vertices = random_cloud(rng, n_vertices, -300.0, 300.0);
  for (std::size_t f = 0; f < n_faces; ++f) {
    m.faces.push_back({static_cast<int>(uniform_index(rng, n_vertices)), static_cast<int>(uniform_index(rng, n_vertices)),
                       static_cast<int>(uniform_index(rng, n_vertices))});
  }
  return m;
}

void check_same_mesh(const TriMesh& a, const TriMesh& b, double tol) {
  REQUIRE(a.vertices.size() == b.vertices.size());
  for (std::size_t i = 0; i < a.vertices.size(); ++i) CHECK((a.vertices[i] - b.vertices[i]).cwiseAbs().maxCoeff() <= tol);
  CHECK(a.faces == b.faces);
}

}  // namespace

TEST_CASE("OBJ with 4 vertices and 2 faces") {
  const TriMesh m = obj_from("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n");
  CHECK(m.vertices.size() == 4);
  CHECK(m.faces.size() == 2);
}

TEST_CASE("OBJ quad is fan-triangulated") {
  const TriMesh m = obj_from("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  REQUIRE(m.faces.size() == 2);
  CHECK(m.faces[0] == std::array<int, 3>{0, 1, 2});
  CHECK(m.faces[1] == std::array<int, 3>{0, 2, 3});
}

TEST_CASE("OBJ ignores texture, normal and material directives") {
  const TriMesh m = obj_from(
      "mtllib foot.mtl\no foot\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nusemtl skin\ns off\n"
      "f 1/1/1 2/2/1 3//1 # comment\nf -3 -2 -1\n");
  CHECK(m.vertices.size() == 3);
  REQUIRE(m.faces.size() == 2);
  CHECK(m.faces[1] == std::array<int, 3>{0, 1, 2});
}

TEST_CASE("PLY cube without faces is a point cloud") {
  std::string text = "ply\nformat ascii 1.0\ncomment cube\nelement vertex 8\nproperty float x\nproperty float y\n"
                     "property float z\nend_header\n";
  for (int i = 0; i < 8; ++i) {
    text += std::to_string(i & 1) + " " + std::to_string((i >> 1) & 1) + " " + std::to_string((i >> 2) & 1) + "\n";
  }
  const TriMesh m = ply_from(text);
  CHECK(m.vertices.size() == 8);
  CHECK(m.faces.empty());
  CHECK(m.vertices[7] == Point3(1, 1, 1));
}

TEST_CASE("PLY with faces, extra properties and unknown elements") {
  const TriMesh m = ply_from(
      "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n"
      "property uchar red\nelement face 1\nproperty list uchar int vertex_indices\nelement edge 1\n"
      "property int vertex1\nproperty int vertex2\nend_header\n0 0 0 255\n1 0 0 255\n1 1 0 255\n0 1 0 255\n"
      "4 0 1 2 3\n0 1\n");
  CHECK(m.vertices.size() == 4);
  REQUIRE(m.faces.size() == 2);
  CHECK(m.faces[1] == std::array<int, 3>{0, 2, 3});
}

TEST_CASE("binary PLY is refused with an encoding error") {
  try {
    (void)ply_from("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("unsupported encoding") != std::string::npos);
  }
}

TEST_CASE("malformed mesh corpus is rejected with line numbers") {
  expect_line_error([] { (void)obj_from("v 0 0 0\nv 1 zero 0\n"); }, "inline.obj", 2);
  expect_line_error([] { (void)obj_from("v 0 0\n"); }, "inline.obj", 1);
  expect_line_error([] { (void)obj_from("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 7\n"); }, "inline.obj", 5);
  expect_line_error([] { (void)obj_from("v 0 0 0\nf 1 1\n"); }, "inline.obj", 2);
  expect_line_error([] { (void)obj_from("v 0 0 0\nv 0 0 0\nv 0 0 0\nf 1 x 3\n"); }, "inline.obj", 4);
  expect_line_error([] { (void)obj_from("v 0 0 0\nv 0 0 0\nv 0 0 0\nf 0 1 2\n"); }, "inline.obj", 4);
  expect_line_error([] { (void)ply_from("plx\n"); }, "inline.ply", 1);
  expect_line_error([] { (void)ply_from("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                                        "property float z\nend_header\n0 0 0\n1 1\n"); },
                    "inline.ply", 9);
  expect_line_error([] { (void)ply_from("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                                        "property float z\nelement face 1\nproperty list uchar int vertex_indices\n"
                                        "end_header\n0 0 0\n3 0 1 2\n"); },
                    "inline.ply", 11);
  expect_line_error([] { (void)ply_from("ply\nformat ascii 1.0\nbogus line\nend_header\n"); }, "inline.ply", 3);
  expect_line_error([] { (void)ply_from("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n"); },
                    "inline.ply", 4);
}

TEST_CASE("mesh write/read round trips for OBJ and PLY") {
  const auto dir = fresh_dir("mesh_roundtrip");
  Rng rng(12);
  for (const char* ext : {".obj", ".ply"}) {
    for (int trial = 0; trial < 5; ++trial) {
      const TriMesh m = random_mesh(rng, 5000, trial == 0 ? 0 : 9000);
      const fs::path p = dir / (std::string("m") + std::to_string(trial) + ext);
      write_mesh(m, p);
      check_same_mesh(read_mesh(p), m, 1e-6);
    }
  }
}

TEST_CASE("empty-face mesh writes only vertex lines") {
  const auto dir = fresh_dir("mesh_vonly");
  TriMesh m;
  m.vertices = {Point3(1, 2, 3), Point3(4, 5, 6)};
  write_mesh(m, dir / "pc.obj");
  std::istringstream in(slurp(dir / "pc.obj"));
  std::string line;
  int v_lines = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    CHECK(line.rfind("v ", 0) == 0);
    ++v_lines;
  }
  CHECK(v_lines == 2);
}

TEST_CASE("unsupported mesh extension and missing file") {
  CHECK_THROWS_AS(read_mesh("nowhere/none.stl"), InputError);
  try {
    (void)read_mesh("definitely/missing.obj");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("definitely/missing.obj") != std::string::npos);
  }
}

TEST_CASE("landmark CSV parsing examples") {
  const auto dir = fresh_dir("lm_parse");
  spit(dir / "one.csv", "name,x,y,z\nheel,-1.5,0,12.25\n");
  const LandmarkSet one = read_landmarks(dir / "one.csv");
  REQUIRE(one.size() == 1);
  CHECK(one[0].name == "heel");
  CHECK(one[0].position == Point3(-1.5, 0, 12.25));

  spit(dir / "header.csv", "name,x,y,z\n");
  CHECK(read_landmarks(dir / "header.csv").empty());

  std::string text = "\xEF\xBB\xBFname,x,y,z\r\n";
  for (int i = 0; i < 21; ++i) text += "L" + std::to_string(20 - i) + "," + std::to_string(i) + ",0,0\r\n";
  spit(dir / "many.csv", text);
  const LandmarkSet many = read_landmarks(dir / "many.csv");
  REQUIRE(many.size() == 21);
  for (int i = 0; i < 21; ++i) {
    CHECK(many[static_cast<std::size_t>(i)].name == "L" + std::to_string(20 - i));
    CHECK(many[static_cast<std::size_t>(i)].position.x() == i);
  }
}

TEST_CASE("malformed landmark files are rejected with row numbers") {
  const auto dir = fresh_dir("lm_bad");
  const std::vector<std::pair<std::string, int>> corpus = {
      {"name,x,y,z\na,1,2,3\na,4,5,6\n", 3},
      {"name,x,y,z\na,1,two,3\n", 2},
      {"name,x,y,z\na,1,2\n", 2},
      {"id,x,y,z\na,1,2,3\n", 1},
      {"name,x,y,z\n\"open,1,2,3\n", 2},
      {"name,x,y,z\n,1,2,3\n", 2},
      {"name,x,y,z\na,1,2,nan\n", 2},
  };
  int i = 0;
  for (const auto& [text, line] : corpus) {
    const fs::path p = dir / ("bad" + std::to_string(i++) + ".csv");
    spit(p, text);
    expect_line_error([&] { (void)read_landmarks(p); }, p.string(), line);
  }
  spit(dir / "dup.csv", "name,x,y,z\ntoe,1,2,3\ntoe,4,5,6\n");
  try {
    (void)read_landmarks(dir / "dup.csv");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("toe") != std::string::npos);
  }
}

TEST_CASE("landmark round trips, including awkward names") {
  const auto dir = fresh_dir("lm_roundtrip");
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    LandmarkSet set;
    for (int i = 0; i < 21; ++i) set.add("lm_" + std::to_string(i), random_vector(rng, -500.0, 500.0));
    write_landmarks(set, dir / "lm.csv");
    const LandmarkSet back = read_landmarks(dir / "lm.csv");
    REQUIRE(back.size() == set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
      CHECK(back[i].name == set[i].name);
      CHECK((back[i].position - set[i].position).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
  LandmarkSet odd;
  odd.add("ball, medial", Point3(1, 2, 3));
  odd.add("say \"hi\"", Point3(4, 5, 6));
  odd.add(" padded ", Point3(7, 8, 9));
  write_landmarks(odd, dir / "odd.csv");
  const LandmarkSet back = read_landmarks(dir / "odd.csv");
  REQUIRE(back.size() == 3);
  CHECK(back[0].name == "ball, medial");
  CHECK(back[1].name == "say \"hi\"");
  CHECK(back[2].name == " padded ");

  write_landmarks(LandmarkSet{}, dir / "empty.csv");
  CHECK(slurp(dir / "empty.csv") == "name,x,y,z\n");
}

TEST_CASE("CSV record splitting") {
  CHECK(split_csv_record("a,b,c") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_csv_record("\"a,b\",\"c\"\"d\",") == std::vector<std::string>{"a,b", "c\"d", ""});
  CHECK(quote_csv_field("plain") == "plain");
  CHECK(quote_csv_field("a,b") == "\"a,b\"");
  CHECK_THROWS_AS(split_csv_record("\"unterminated"), InputError);
}

TEST_CASE("landmark set rejects invalid entries") {
  LandmarkSet s;
  CHECK_THROWS_AS(s.add("", Point3::Zero()), InputError);
  s.add("a", Point3::Zero());
  CHECK_THROWS_AS(s.add("a", Point3::Ones()), InputError);
  CHECK_THROWS_AS(s.add("b", Point3(std::numeric_limits<double>::infinity(), 0, 0)), InputError);
  CHECK_THROWS_AS(s.with_positions({}), InputError);
}

TEST_CASE("report JSON has a fixed key order and parses back exactly") {
  const auto dir = fresh_dir("report");
  ReportDocument r;
  r.per_landmark_errors = {{"a", 1.0}, {"b", 3.0}};
  r.err_avg = 2.0;
  r.params["alpha"] = 2000.0;
  r.energy_trace = {{1, 6002.0, 3.0, 2.0}, {2, 0.1 + 0.2, 1e-300, 1.0 / 3.0}};
  r.timings_ms = {{"total", 12.345678901234567}};
  write_report(r, dir / "report.json");
  const std::string text = slurp(dir / "report.json");

  const std::vector<std::string> keys = {"per_landmark_errors", "err_avg", "params", "energy_trace", "timings_ms"};
  std::size_t last = 0;
  for (const auto& k : keys) {
    const auto pos = text.find("\"" + k + "\"");
    REQUIRE(pos != std::string::npos);
    CHECK(pos >= last);
    last = pos;
  }
  const auto j = nlohmann::json::parse(text);
  CHECK(j["err_avg"].get<double>() == 2.0);
  CHECK(j["energy_trace"][1]["e_total"].get<double>() == 0.1 + 0.2);
  CHECK(j["energy_trace"][1]["e_align"].get<double>() == 1e-300);
  CHECK(j["energy_trace"][1]["e_smooth"].get<double>() == 1.0 / 3.0);
  CHECK(j["timings_ms"]["total"].get<double>() == 12.345678901234567);

  ReportDocument empty;
  write_report(empty, dir / "empty.json");
  const auto e = nlohmann::json::parse(slurp(dir / "empty.json"));
  CHECK(e["energy_trace"].is_array());
  CHECK(e["energy_trace"].empty());

  ReportDocument wrong = r;
  wrong.err_avg = 2.5;
  CHECK_THROWS_AS(write_report(wrong, dir / "wrong.json"), InputError);
}

TEST_CASE("format_double is shortest round-trip") {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double v = std::ldexp(uniform_real(rng, -1.0, 1.0), static_cast<int>(uniform_index(rng, 200)) - 100);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
}
