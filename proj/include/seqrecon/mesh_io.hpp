#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqrecon/mesh.hpp"

namespace seqrecon {

struct MeshIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace ply {

enum class Scalar { Char, UChar, Short, UShort, Int, UInt, Float, Double };

inline Scalar scalar_from_name(const std::string& s) {
  if (s == "char" || s == "int8") return Scalar::Char;
  if (s == "uchar" || s == "uint8") return Scalar::UChar;
  if (s == "short" || s == "int16") return Scalar::Short;
  if (s == "ushort" || s == "uint16") return Scalar::UShort;
  if (s == "int" || s == "int32") return Scalar::Int;
  if (s == "uint" || s == "uint32") return Scalar::UInt;
  if (s == "float" || s == "float32") return Scalar::Float;
  if (s == "double" || s == "float64") return Scalar::Double;
  throw MeshIoError("ply: unknown scalar type '" + s + "'");
}

inline std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::Char:
    case Scalar::UChar: return 1;
    case Scalar::Short:
    case Scalar::UShort: return 2;
    case Scalar::Int:
    case Scalar::UInt:
    case Scalar::Float: return 4;
    case Scalar::Double: return 8;
  }
  return 0;
}

inline double read_binary_scalar(std::istream& in, Scalar type) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(scalar_size(type)));
  if (!in) throw MeshIoError("ply: truncated binary payload");
  switch (type) {
    case Scalar::Char: return static_cast<double>(static_cast<int8_t>(buf[0]));
    case Scalar::UChar: return static_cast<double>(buf[0]);
    case Scalar::Short: {
      int16_t v;
      std::memcpy(&v, buf, 2);
      return v;
    }
    case Scalar::UShort: {
      uint16_t v;
      std::memcpy(&v, buf, 2);
      return v;
    }
    case Scalar::Int: {
      int32_t v;
      std::memcpy(&v, buf, 4);
      return v;
    }
    case Scalar::UInt: {
      uint32_t v;
      std::memcpy(&v, buf, 4);
      return v;
    }
    case Scalar::Float: {
      float v;
      std::memcpy(&v, buf, 4);
      return v;
    }
    case Scalar::Double: {
      double v;
      std::memcpy(&v, buf, 8);
      return v;
    }
  }
  return 0;
}

struct Property {
  std::string name;
  bool is_list = false;
  Scalar count_type = Scalar::UChar;
  Scalar value_type = Scalar::Float;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

}  // namespace ply

// Binary little-endian or ASCII PLY. Unknown vertex properties are skipped;
// normals are loaded when nx/ny/nz are present. Polygon faces are fanned into
// triangles.
inline TriMesh read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MeshIoError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw MeshIoError("ply: empty file");
  if (line.size() && line.back() == '\r') line.pop_back();
  if (line != "ply") throw MeshIoError("ply: missing magic in '" + path + "'");

  bool binary = false;
  bool format_seen = false;
  std::vector<ply::Element> elements;
  while (std::getline(in, line)) {
    if (line.size() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
    if (tok == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt == "ascii")
        binary = false;
      else if (fmt == "binary_little_endian")
        binary = true;
      else
        throw MeshIoError("ply: unsupported format '" + fmt + "'");
      format_seen = true;
    } else if (tok == "element") {
      ply::Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tok == "property") {
      if (elements.empty()) throw MeshIoError("ply: property before element");
      std::string type;
      ls >> type;
      ply::Property p;
      if (type == "list") {
        std::string ct, vt;
        ls >> ct >> vt >> p.name;
        p.is_list = true;
        p.count_type = ply::scalar_from_name(ct);
        p.value_type = ply::scalar_from_name(vt);
      } else {
        p.value_type = ply::scalar_from_name(type);
        ls >> p.name;
      }
      elements.back().properties.push_back(p);
    } else if (tok == "end_header") {
      break;
    } else {
      throw MeshIoError("ply: unexpected header token '" + tok + "'");
    }
  }
  if (!format_seen) throw MeshIoError("ply: missing format line");

  TriMesh mesh;
  bool saw_vertex = false, saw_face = false;
  auto read_ascii_scalar = [&](std::istringstream& ls) {
    double v;
    if (!(ls >> v)) throw MeshIoError("ply: truncated ascii payload");
    return v;
  };

  for (const auto& elem : elements) {
    if (elem.name == "vertex") {
      saw_vertex = true;
      int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
      for (int i = 0; i < static_cast<int>(elem.properties.size()); ++i) {
        const auto& p = elem.properties[i];
        if (p.is_list) throw MeshIoError("ply: list property on vertex element");
        if (p.name == "x") ix = i;
        if (p.name == "y") iy = i;
        if (p.name == "z") iz = i;
        if (p.name == "nx") inx = i;
        if (p.name == "ny") iny = i;
        if (p.name == "nz") inz = i;
      }
      if (ix < 0 || iy < 0 || iz < 0) throw MeshIoError("ply: vertex element lacks x/y/z");
      bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;
      mesh.vertices.reserve(elem.count);
      if (with_normals) mesh.normals.reserve(elem.count);
      std::vector<double> row(elem.properties.size());
      for (std::size_t v = 0; v < elem.count; ++v) {
        if (binary) {
          for (std::size_t i = 0; i < elem.properties.size(); ++i)
            row[i] = ply::read_binary_scalar(in, elem.properties[i].value_type);
        } else {
          if (!std::getline(in, line)) throw MeshIoError("ply: truncated ascii payload");
          std::istringstream ls(line);
          for (std::size_t i = 0; i < elem.properties.size(); ++i) row[i] = read_ascii_scalar(ls);
        }
        mesh.vertices.emplace_back(row[ix], row[iy], row[iz]);
        if (with_normals) mesh.normals.emplace_back(row[inx], row[iny], row[inz]);
      }
    } else if (elem.name == "face") {
      saw_face = true;
      if (elem.properties.empty() || !elem.properties.front().is_list)
        throw MeshIoError("ply: face element lacks an index list");
      for (std::size_t f = 0; f < elem.count; ++f) {
        std::vector<long> idx;
        if (binary) {
          const auto& p = elem.properties.front();
          long n = static_cast<long>(ply::read_binary_scalar(in, p.count_type));
          for (long i = 0; i < n; ++i)
            idx.push_back(static_cast<long>(ply::read_binary_scalar(in, p.value_type)));
          for (std::size_t extra = 1; extra < elem.properties.size(); ++extra) {
            const auto& q = elem.properties[extra];
            if (q.is_list) {
              long m = static_cast<long>(ply::read_binary_scalar(in, q.count_type));
              for (long i = 0; i < m; ++i) ply::read_binary_scalar(in, q.value_type);
            } else {
              ply::read_binary_scalar(in, q.value_type);
            }
          }
        } else {
          if (!std::getline(in, line)) throw MeshIoError("ply: truncated ascii payload");
          std::istringstream ls(line);
          long n;
          if (!(ls >> n)) throw MeshIoError("ply: malformed face row");
          for (long i = 0; i < n; ++i) {
            long v;
            if (!(ls >> v)) throw MeshIoError("ply: malformed face row");
            idx.push_back(v);
          }
        }
        if (idx.size() < 3) throw MeshIoError("ply: face with fewer than 3 indices");
        for (std::size_t i = 1; i + 1 < idx.size(); ++i)
          mesh.faces.push_back({static_cast<int>(idx[0]), static_cast<int>(idx[i]),
                                static_cast<int>(idx[i + 1])});
      }
    } else {
      // skip unknown elements
      for (std::size_t r = 0; r < elem.count; ++r) {
        if (binary) {
          for (const auto& p : elem.properties) {
            if (p.is_list) {
              long n = static_cast<long>(ply::read_binary_scalar(in, p.count_type));
              for (long i = 0; i < n; ++i) ply::read_binary_scalar(in, p.value_type);
            } else {
              ply::read_binary_scalar(in, p.value_type);
            }
          }
        } else {
          if (!std::getline(in, line)) throw MeshIoError("ply: truncated ascii payload");
        }
      }
    }
  }
  if (!saw_vertex || !saw_face) throw MeshIoError("ply: missing vertex or face element");
  validate_mesh(mesh);
  if (!mesh.has_normals()) mesh.normals.clear();
  return mesh;
}

// Extra per-vertex integer channel (e.g. patch ids or provenance).
struct VertexIntProperty {
  std::string name;
  std::vector<int> values;
};

inline void write_ply(const TriMesh& mesh, const std::string& path, bool binary = true,
                      const VertexIntProperty* extra = nullptr) {
  if (extra && extra->values.size() != mesh.vertices.size())
    throw MeshIoError("write_ply: extra property size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MeshIoError("cannot write '" + path + "'");
  bool with_normals = mesh.has_normals();
  out << "ply\n";
  out << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n");
  out << "element vertex " << mesh.vertices.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  if (with_normals) out << "property double nx\nproperty double ny\nproperty double nz\n";
  if (extra) out << "property int " << extra->name << "\n";
  out << "element face " << mesh.faces.size() << "\n";
  out << "property list uchar int vertex_indices\n";
  out << "end_header\n";
  if (binary) {
    auto put = [&](const void* p, std::size_t n) {
      out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    };
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
      double xyz[3] = {mesh.vertices[v][0], mesh.vertices[v][1], mesh.vertices[v][2]};
      put(xyz, 24);
      if (with_normals) {
        double n[3] = {mesh.normals[v][0], mesh.normals[v][1], mesh.normals[v][2]};
        put(n, 24);
      }
      if (extra) {
        int32_t val = extra->values[v];
        put(&val, 4);
      }
    }
    for (const auto& f : mesh.faces) {
      uint8_t n = 3;
      put(&n, 1);
      int32_t idx[3] = {f[0], f[1], f[2]};
      put(idx, 12);
    }
  } else {
    out.precision(17);
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
      out << mesh.vertices[v][0] << " " << mesh.vertices[v][1] << " " << mesh.vertices[v][2];
      if (with_normals)
        out << " " << mesh.normals[v][0] << " " << mesh.normals[v][1] << " " << mesh.normals[v][2];
      if (extra) out << " " << extra->values[v];
      out << "\n";
    }
    for (const auto& f : mesh.faces) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
  }
  if (!out) throw MeshIoError("write failure on '" + path + "'");
}

// Positions and faces only; normals are recomputed by the caller.
inline TriMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MeshIoError("cannot open '" + path + "'");
  TriMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw MeshIoError("obj: malformed vertex line");
      mesh.vertices.emplace_back(x, y, z);
    } else if (tok == "f") {
      std::vector<long> idx;
      std::string ref;
      while (ls >> ref) {
        std::size_t slash = ref.find('/');
        long v = std::stol(slash == std::string::npos ? ref : ref.substr(0, slash));
        if (v < 0) v = static_cast<long>(mesh.vertices.size()) + v + 1;
        idx.push_back(v - 1);
      }
      if (idx.size() < 3) throw MeshIoError("obj: face with fewer than 3 indices");
      for (std::size_t i = 1; i + 1 < idx.size(); ++i)
        mesh.faces.push_back({static_cast<int>(idx[0]), static_cast<int>(idx[i]),
                              static_cast<int>(idx[i + 1])});
    }
  }
  if (mesh.vertices.empty() || mesh.faces.empty())
    throw MeshIoError("obj: no geometry in '" + path + "'");
  validate_mesh(mesh);
  return mesh;
}

inline void write_obj(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MeshIoError("cannot write '" + path + "'");
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v[0] << " " << v[1] << " " << v[2] << "\n";
  for (const auto& f : mesh.faces)
    out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
}

inline TriMesh read_mesh(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (auto& c : ext) c = static_cast<char>(std::tolower(c));
  if (ext == "ply") return read_ply(path);
  if (ext == "obj") return read_obj(path);
  throw MeshIoError("unsupported mesh format '" + ext + "'");
}

}  // namespace seqrecon
