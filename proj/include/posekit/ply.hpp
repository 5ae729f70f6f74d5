#pragma once

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "posekit/common.hpp"
#include "posekit/errors.hpp"

namespace posekit {

namespace plydetail {

inline int scalar_size(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32" ||
      type == "float" || type == "float32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  throw ParseError("ply: unknown scalar type '" + type + "'");
}

inline double read_scalar_le(std::istream& in, const std::string& type) {
  unsigned char buf[8];
  const int sz = scalar_size(type);
  in.read(reinterpret_cast<char*>(buf), sz);
  if (!in) throw ParseError("ply: truncated binary data");
  auto le = [&](int n) {
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
  };
  if (type == "float" || type == "float32") {
    float f;
    std::memcpy(&f, buf, 4);
    return f;
  }
  if (type == "double" || type == "float64") {
    double d;
    std::memcpy(&d, buf, 8);
    return d;
  }
  const std::uint64_t raw = le(sz);
  if (type[0] == 'u') return static_cast<double>(raw);
  // sign-extend
  const std::uint64_t signbit = 1ull << (8 * sz - 1);
  return raw & signbit ? static_cast<double>(static_cast<std::int64_t>(raw | ~((signbit << 1) - 1)))
                       : static_cast<double>(raw);
}

struct Property {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> props;
};

}  // namespace plydetail

// Reads vertex x/y/z from an ASCII or binary-little-endian PLY. All other
// elements and properties are skipped.
inline std::vector<Vec3> load_ply_vertices(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("ply: cannot open " + path);

  auto next_line = [&]() {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("ply: truncated header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  if (next_line() != "ply") throw ParseError("ply: missing magic line");
  bool binary = false;
  std::vector<plydetail::Element> elements;
  for (;;) {
    const std::string line = next_line();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") {
        binary = false;
      } else if (fmt == "binary_little_endian") {
        binary = true;
      } else {
        throw ParseError("ply: unsupported format '" + fmt + "'");
      }
    } else if (tok == "element") {
      plydetail::Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tok == "property") {
      if (elements.empty()) throw ParseError("ply: property before element");
      plydetail::Property p;
      std::string t;
      ls >> t;
      if (t == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (tok == "end_header") {
      break;
    } else {
      throw ParseError("ply: unexpected header token '" + tok + "'");
    }
  }

  std::vector<Vec3> vertices;
  for (const auto& elem : elements) {
    const bool is_vertex = elem.name == "vertex";
    if (is_vertex) vertices.reserve(elem.count);
    int ix = -1, iy = -1, iz = -1;
    for (std::size_t p = 0; p < elem.props.size(); ++p) {
      if (elem.props[p].name == "x") ix = static_cast<int>(p);
      if (elem.props[p].name == "y") iy = static_cast<int>(p);
      if (elem.props[p].name == "z") iz = static_cast<int>(p);
    }
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) {
      throw ParseError("ply: vertex element lacks x/y/z properties");
    }
    for (std::size_t row = 0; row < elem.count; ++row) {
      Vec3 v = Vec3::Zero();
      if (binary) {
        for (std::size_t p = 0; p < elem.props.size(); ++p) {
          const auto& prop = elem.props[p];
          if (prop.is_list) {
            const double n = plydetail::read_scalar_le(in, prop.count_type);
            for (int k = 0; k < static_cast<int>(n); ++k) {
              plydetail::read_scalar_le(in, prop.type);
            }
          } else {
            const double val = plydetail::read_scalar_le(in, prop.type);
            if (static_cast<int>(p) == ix) v.x() = val;
            if (static_cast<int>(p) == iy) v.y() = val;
            if (static_cast<int>(p) == iz) v.z() = val;
          }
        }
      } else {
        const std::string line = next_line();
        std::istringstream ls(line);
        double val;
        for (std::size_t p = 0; p < elem.props.size(); ++p) {
          const auto& prop = elem.props[p];
          if (prop.is_list) {
            int n;
            if (!(ls >> n)) throw ParseError("ply: bad list row");
            for (int k = 0; k < n; ++k) ls >> val;
          } else {
            if (!(ls >> val)) throw ParseError("ply: bad data row");
            if (static_cast<int>(p) == ix) v.x() = val;
            if (static_cast<int>(p) == iy) v.y() = val;
            if (static_cast<int>(p) == iz) v.z() = val;
          }
        }
      }
      if (is_vertex) vertices.push_back(v);
    }
    if (is_vertex) break;  // later elements are irrelevant
  }
  return vertices;
}

// Writes a minimal PLY (handy for fixtures and round trips).
inline void save_ply_vertices(const std::string& path, const std::vector<Vec3>& pts,
                              bool binary = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("ply: cannot write " + path);
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii")
      << " 1.0\nelement vertex " << pts.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  out << std::setprecision(9);  // round-trips float32 exactly
  for (const auto& p : pts) {
    if (binary) {
      const float xyz[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                            static_cast<float>(p.z())};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    } else {
      out << static_cast<float>(p.x()) << " " << static_cast<float>(p.y()) << " "
          << static_cast<float>(p.z()) << "\n";
    }
  }
}

}  // namespace posekit
