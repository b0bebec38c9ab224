#pragma once

// File formats: ASCII PLY and whitespace XYZ for point sets (selected by
// extension), plus a triangle-mesh reader covering ASCII OFF (including the
// ModelNet dialect where "OFF" is glued to the counts) and ASCII PLY with
// faces. All floating-point output goes through fmt_double so that repeated
// runs produce byte-identical files.

#include <latentalign/geometry.hpp>

#include <array>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lalign {

// Shortest decimal form that round-trips a double exactly.
inline std::string fmt_double(double v) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = std::strtod(buf, nullptr);
    if (back == v) return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string lowercase_extension(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(c));
  return ext;
}

inline void write_ply(const std::string& path, const PointSet& ps) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_ply: cannot open " + path);
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << ps.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "end_header\n";
  for (const Vec3& p : ps.points)
    out << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' '
        << fmt_double(p.z()) << '\n';
  if (!out) throw std::runtime_error("write_ply: write failed for " + path);
}

inline void write_xyz(const std::string& path, const PointSet& ps) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_xyz: cannot open " + path);
  for (const Vec3& p : ps.points)
    out << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' '
        << fmt_double(p.z()) << '\n';
  if (!out) throw std::runtime_error("write_xyz: write failed for " + path);
}

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
};

namespace detail {

struct PlyProperty {
  std::string name;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

// ASCII PLY parser, tolerant of extra vertex properties (they are skipped).
inline void read_ply_ascii(const std::string& path, std::vector<Vec3>& verts,
                           std::vector<std::array<int, 3>>* faces) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_ply: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0)
    throw std::runtime_error("read_ply: missing ply magic in " + path);

  std::vector<PlyElement> elements;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "comment" || word == "obj_info" || word.empty()) continue;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = (fmt == "ascii");
    } else if (word == "element") {
      PlyElement el;
      ls >> el.name >> el.count;
      elements.push_back(el);
    } else if (word == "property") {
      if (elements.empty())
        throw std::runtime_error("read_ply: property before element");
      std::string type;
      ls >> type;
      PlyProperty prop;
      if (type == "list") {
        std::string t1, t2;
        ls >> t1 >> t2 >> prop.name;
        prop.is_list = true;
      } else {
        ls >> prop.name;
      }
      elements.back().props.push_back(prop);
    } else if (word == "end_header") {
      break;
    }
  }
  if (!ascii) throw std::runtime_error("read_ply: only ASCII PLY supported");

  for (const PlyElement& el : elements) {
    if (el.name == "vertex") {
      int ix = -1, iy = -1, iz = -1;
      for (std::size_t i = 0; i < el.props.size(); ++i) {
        if (el.props[i].name == "x") ix = static_cast<int>(i);
        if (el.props[i].name == "y") iy = static_cast<int>(i);
        if (el.props[i].name == "z") iz = static_cast<int>(i);
      }
      if (ix < 0 || iy < 0 || iz < 0)
        throw std::runtime_error("read_ply: vertex element lacks x/y/z");
      verts.reserve(el.count);
      for (std::size_t v = 0; v < el.count; ++v) {
        std::vector<double> vals(el.props.size());
        for (double& d : vals)
          if (!(in >> d)) throw std::runtime_error("read_ply: truncated vertices");
        verts.emplace_back(vals[ix], vals[iy], vals[iz]);
      }
    } else if (el.name == "face" && faces != nullptr) {
      for (std::size_t f = 0; f < el.count; ++f) {
        int n = 0;
        if (!(in >> n)) throw std::runtime_error("read_ply: truncated faces");
        std::vector<int> idx(n);
        for (int& i : idx)
          if (!(in >> i)) throw std::runtime_error("read_ply: truncated faces");
        for (int k = 2; k < n; ++k)  // fan triangulation
          faces->push_back({idx[0], idx[k - 1], idx[k]});
      }
    } else {
      // Skip any other element line by line.
      std::string skip;
      for (std::size_t i = 0; i < el.count; ++i) std::getline(in >> std::ws, skip);
    }
  }
}

}  // namespace detail

inline PointSet read_ply(const std::string& path) {
  PointSet ps;
  detail::read_ply_ascii(path, ps.points, nullptr);
  if (ps.empty()) throw std::runtime_error("read_ply: no vertices in " + path);
  return ps;
}

inline PointSet read_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_xyz: cannot open " + path);
  PointSet ps;
  double x, y, z;
  while (in >> x >> y >> z) ps.points.emplace_back(x, y, z);
  if (ps.empty()) throw std::runtime_error("read_xyz: no points in " + path);
  return ps;
}

inline PointSet read_points(const std::string& path) {
  std::string ext = lowercase_extension(path);
  if (ext == ".ply") return read_ply(path);
  if (ext == ".xyz" || ext == ".txt") return read_xyz(path);
  throw std::invalid_argument("read_points: unsupported extension " + ext);
}

inline void write_points(const std::string& path, const PointSet& ps) {
  std::string ext = lowercase_extension(path);
  if (ext == ".ply") return write_ply(path, ps);
  if (ext == ".xyz" || ext == ".txt") return write_xyz(path, ps);
  throw std::invalid_argument("write_points: unsupported extension " + ext);
}

// ASCII OFF, including the ModelNet header-on-first-line variant ("OFF300 200 0").
inline TriangleMesh read_off(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_off: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("read_off: empty file");
  if (header.rfind("OFF", 0) != 0)
    throw std::runtime_error("read_off: missing OFF magic in " + path);

  std::size_t nv = 0, nf = 0, ne = 0;
  std::string rest = header.substr(3);
  bool counts_on_header = false;
  {
    std::istringstream hs(rest);
    if (hs >> nv >> nf >> ne) counts_on_header = true;
  }
  if (!counts_on_header) {
    std::string line;
    // counts may be preceded by comment lines
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      if (ls >> nv >> nf >> ne) break;
      throw std::runtime_error("read_off: bad count line in " + path);
    }
  }
  if (nv == 0) throw std::runtime_error("read_off: no vertices in " + path);

  TriangleMesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    double x, y, z;
    if (!(in >> x >> y >> z)) throw std::runtime_error("read_off: truncated vertices");
    mesh.vertices.emplace_back(x, y, z);
  }
  for (std::size_t f = 0; f < nf; ++f) {
    int n = 0;
    if (!(in >> n)) throw std::runtime_error("read_off: truncated faces");
    std::vector<int> idx(n);
    for (int& i : idx)
      if (!(in >> i)) throw std::runtime_error("read_off: truncated faces");
    for (int k = 2; k < n; ++k) mesh.triangles.push_back({idx[0], idx[k - 1], idx[k]});
  }
  return mesh;
}

inline TriangleMesh read_mesh(const std::string& path) {
  std::string ext = lowercase_extension(path);
  if (ext == ".off") return read_off(path);
  if (ext == ".ply") {
    TriangleMesh mesh;
    detail::read_ply_ascii(path, mesh.vertices, &mesh.triangles);
    return mesh;
  }
  throw std::invalid_argument("read_mesh: unsupported extension " + ext);
}

}  // namespace lalign
