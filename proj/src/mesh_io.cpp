#include "prepline/mesh_io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "prepline/error.hpp"

namespace prepline {
namespace {

std::string fmt_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf.data(), ptr);
}

struct Key {
  std::int64_t x, y, z;
  bool operator==(const Key&) const = default;
};

struct KeyHash {
  std::size_t operator()(const Key& k) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::int64_t c : {k.x, k.y, k.z}) {
      h ^= static_cast<std::uint64_t>(c);
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

LoadedMesh assemble(std::span<const Vec3> soup_vertices, const std::vector<Face>& soup_faces,
                    std::optional<std::vector<int>> labels, const LoadOptions& options) {
  auto [unique, remap] = weld_vertices(soup_vertices, options.weld_tolerance);
  std::vector<Face> faces;
  faces.reserve(soup_faces.size());
  std::optional<std::vector<int>> kept_labels;
  if (labels) kept_labels.emplace();
  LoadedMesh out;
  for (std::size_t f = 0; f < soup_faces.size(); ++f) {
    Face t{remap[static_cast<std::size_t>(soup_faces[f][0])],
           remap[static_cast<std::size_t>(soup_faces[f][1])],
           remap[static_cast<std::size_t>(soup_faces[f][2])]};
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
      ++out.dropped_faces;
      continue;
    }
    faces.push_back(t);
    if (labels) kept_labels->push_back((*labels)[f]);
  }
  if (faces.empty()) throw Error(ErrorKind::kEmptyMesh, "mesh has no faces");

  // Drop vertices no face references so the mesh stays compact.
  std::vector<int> used(unique.size(), -1);
  std::vector<Vec3> compact;
  for (Face& t : faces) {
    for (int& v : t) {
      auto& slot = used[static_cast<std::size_t>(v)];
      if (slot < 0) {
        slot = static_cast<int>(compact.size());
        compact.push_back(unique[static_cast<std::size_t>(v)]);
      }
      v = slot;
    }
  }
  out.mesh = TriangleMesh(std::move(compact), std::move(faces));
  out.labels = std::move(kept_labels);
  if (options.require_manifold) FaceAdjacency check(out.mesh);
  return out;
}

template <typename T>
T read_le(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

LoadedMesh parse_stl_binary(std::span<const char> bytes, const LoadOptions& options) {
  if (bytes.size() < 84) {
    std::ostringstream msg;
    msg << "binary STL truncated in header at byte offset " << bytes.size();
    throw Error(ErrorKind::kParse, msg.str());
  }
  const auto count = read_le<std::uint32_t>(bytes.data() + 80);
  if (count == 0) throw Error(ErrorKind::kEmptyMesh, "binary STL declares zero facets");
  std::vector<Vec3> soup;
  std::vector<Face> faces;
  soup.reserve(static_cast<std::size_t>(count) * 3);
  faces.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t offset = 84 + static_cast<std::size_t>(i) * 50;
    if (offset + 50 > bytes.size()) {
      std::ostringstream msg;
      msg << "binary STL record " << i << " truncated at byte offset " << offset;
      throw Error(ErrorKind::kParse, msg.str());
    }
    const char* rec = bytes.data() + offset + 12;  // skip the stored normal
    Face t{};
    for (int k = 0; k < 3; ++k) {
      Vec3 p;
      for (int c = 0; c < 3; ++c) p[c] = read_le<float>(rec + (k * 3 + c) * 4);
      if (!p.allFinite()) {
        std::ostringstream msg;
        msg << "binary STL non-finite coordinate at byte offset " << offset + 12 + k * 12;
        throw Error(ErrorKind::kParse, msg.str());
      }
      t[static_cast<std::size_t>(k)] = static_cast<int>(soup.size());
      soup.push_back(p);
    }
    faces.push_back(t);
  }
  return assemble(soup, faces, std::nullopt, options);
}

// Line-oriented tokenizer that remembers line numbers for error messages.
class LineReader {
 public:
  explicit LineReader(std::span<const char> bytes) : text_(bytes.data(), bytes.size()) {}

  bool next(std::vector<std::string_view>& tokens) {
    while (pos_ < text_.size()) {
      std::size_t end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      std::string_view line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++line_no_;
      tokens.clear();
      std::size_t i = 0;
      while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) tokens.push_back(line.substr(i, j - i));
        i = j;
      }
      if (!tokens.empty()) return true;
    }
    return false;
  }

  int line() const { return line_no_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  int line_no_ = 0;
};

[[noreturn]] void ascii_error(int line, const std::string& what) {
  std::ostringstream msg;
  msg << "parse error at line " << line << ": " << what;
  throw Error(ErrorKind::kParse, msg.str());
}

double parse_number(std::string_view token, int line) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    ascii_error(line, "expected a number, got '" + std::string(token) + "'");
  }
  return value;
}

long parse_integer(std::string_view token, int line) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    // PLY writers occasionally emit integral floats for integer properties.
    const double d = parse_number(token, line);
    if (d != std::floor(d)) ascii_error(line, "expected an integer, got '" + std::string(token) + "'");
    return static_cast<long>(d);
  }
  return value;
}

LoadedMesh parse_stl_ascii(std::span<const char> bytes, const LoadOptions& options) {
  LineReader reader(bytes);
  std::vector<std::string_view> tok;
  if (!reader.next(tok) || tok[0] != "solid") ascii_error(reader.line(), "missing 'solid' header");
  std::vector<Vec3> soup;
  std::vector<Face> faces;
  bool ended = false;
  while (reader.next(tok)) {
    if (tok[0] == "endsolid") {
      ended = true;
      break;
    }
    if (tok[0] != "facet") ascii_error(reader.line(), "expected 'facet'");
    const int facet_line = reader.line();
    if (!reader.next(tok) || tok.size() != 2 || tok[0] != "outer" || tok[1] != "loop") {
      ascii_error(reader.line(), "truncated facet starting at line " + std::to_string(facet_line) +
                                     ": expected 'outer loop'");
    }
    Face t{};
    for (int k = 0; k < 3; ++k) {
      if (!reader.next(tok) || tok.size() != 4 || tok[0] != "vertex") {
        ascii_error(reader.line(), "truncated facet starting at line " +
                                       std::to_string(facet_line) + ": expected 'vertex x y z'");
      }
      Vec3 p(parse_number(tok[1], reader.line()), parse_number(tok[2], reader.line()),
             parse_number(tok[3], reader.line()));
      t[static_cast<std::size_t>(k)] = static_cast<int>(soup.size());
      soup.push_back(p);
    }
    if (!reader.next(tok) || tok[0] != "endloop") {
      ascii_error(reader.line(), "truncated facet starting at line " + std::to_string(facet_line) +
                                     ": expected 'endloop'");
    }
    if (!reader.next(tok) || tok[0] != "endfacet") {
      ascii_error(reader.line(), "truncated facet starting at line " + std::to_string(facet_line) +
                                     ": expected 'endfacet'");
    }
    faces.push_back(t);
  }
  if (!ended) ascii_error(reader.line(), "missing 'endsolid'");
  if (faces.empty()) throw Error(ErrorKind::kEmptyMesh, "ASCII STL contains no facets");
  return assemble(soup, faces, std::nullopt, options);
}

struct PlyElement {
  std::string name;
  long count = 0;
  std::vector<std::string> properties;  // list properties are stored as "list:<name>"
};

LoadedMesh parse_ply_ascii(std::span<const char> bytes, const LoadOptions& options) {
  LineReader reader(bytes);
  std::vector<std::string_view> tok;
  if (!reader.next(tok) || tok[0] != "ply") ascii_error(reader.line(), "missing 'ply' magic");
  std::vector<PlyElement> elements;
  bool header_done = false;
  while (reader.next(tok)) {
    if (tok[0] == "end_header") {
      header_done = true;
      break;
    }
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") ascii_error(reader.line(), "only ascii PLY is supported");
    } else if (tok[0] == "comment" || tok[0] == "obj_info") {
      continue;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) ascii_error(reader.line(), "malformed element line");
      elements.push_back({std::string(tok[1]), parse_integer(tok[2], reader.line()), {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) ascii_error(reader.line(), "property before element");
      if (tok.size() >= 5 && tok[1] == "list") {
        elements.back().properties.push_back("list:" + std::string(tok[4]));
      } else if (tok.size() == 3) {
        elements.back().properties.emplace_back(tok[2]);
      } else {
        ascii_error(reader.line(), "malformed property line");
      }
    } else {
      ascii_error(reader.line(), "unexpected header keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!header_done) ascii_error(reader.line(), "missing end_header");

  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::optional<std::vector<int>> labels;
  for (const PlyElement& el : elements) {
    const bool is_vertex = el.name == "vertex";
    const bool is_face = el.name == "face";
    int ix = -1, iy = -1, iz = -1, ilabel = -1, ilist = -1;
    for (std::size_t p = 0; p < el.properties.size(); ++p) {
      const auto& name = el.properties[p];
      if (name == "x") ix = static_cast<int>(p);
      if (name == "y") iy = static_cast<int>(p);
      if (name == "z") iz = static_cast<int>(p);
      if (name == "label") ilabel = static_cast<int>(p);
      if (name == "list:vertex_indices" || name == "list:vertex_index") ilist = static_cast<int>(p);
    }
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) ascii_error(reader.line(), "vertex element lacks x/y/z");
    if (is_face && ilist < 0) ascii_error(reader.line(), "face element lacks vertex_indices");
    if (is_face && ilabel >= 0) labels.emplace();
    for (long r = 0; r < el.count; ++r) {
      if (!reader.next(tok)) ascii_error(reader.line(), "unexpected end of data in element '" + el.name + "'");
      // Walk properties, expanding list properties.
      std::size_t cursor = 0;
      std::vector<double> scalars(el.properties.size(), 0.0);
      std::vector<long> list;
      for (std::size_t p = 0; p < el.properties.size(); ++p) {
        if (cursor >= tok.size()) ascii_error(reader.line(), "too few values in element '" + el.name + "'");
        if (el.properties[p].rfind("list:", 0) == 0) {
          const long n = parse_integer(tok[cursor++], reader.line());
          if (cursor + static_cast<std::size_t>(n) > tok.size()) ascii_error(reader.line(), "truncated list");
          if (static_cast<int>(p) == ilist) {
            for (long k = 0; k < n; ++k) list.push_back(parse_integer(tok[cursor + static_cast<std::size_t>(k)], reader.line()));
          }
          cursor += static_cast<std::size_t>(n);
        } else {
          scalars[p] = parse_number(tok[cursor++], reader.line());
        }
      }
      if (is_vertex) {
        vertices.emplace_back(scalars[static_cast<std::size_t>(ix)], scalars[static_cast<std::size_t>(iy)],
                              scalars[static_cast<std::size_t>(iz)]);
      } else if (is_face) {
        if (list.size() != 3) ascii_error(reader.line(), "only triangular faces are supported");
        for (long v : list) {
          if (v < 0 || v >= static_cast<long>(vertices.size())) ascii_error(reader.line(), "face index out of range");
        }
        faces.push_back({static_cast<int>(list[0]), static_cast<int>(list[1]), static_cast<int>(list[2])});
        if (labels) labels->push_back(static_cast<int>(scalars[static_cast<std::size_t>(ilabel)]));
      }
    }
  }
  if (faces.empty()) throw Error(ErrorKind::kEmptyMesh, "PLY contains no faces");
  return assemble(vertices, faces, std::move(labels), options);
}

bool looks_like_binary_stl(std::span<const char> bytes) {
  if (bytes.size() < 84) return false;
  const auto count = read_le<std::uint32_t>(bytes.data() + 80);
  return bytes.size() == 84 + static_cast<std::size_t>(count) * 50;
}

}  // namespace

std::pair<std::vector<Vec3>, std::vector<int>> weld_vertices(std::span<const Vec3> points,
                                                             double tolerance) {
  std::vector<Vec3> unique;
  std::vector<int> remap(points.size(), -1);
  if (tolerance <= 0.0) {
    std::map<std::array<double, 3>, int> exact;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const std::array<double, 3> key{points[i].x(), points[i].y(), points[i].z()};
      auto [it, inserted] = exact.try_emplace(key, static_cast<int>(unique.size()));
      if (inserted) unique.push_back(points[i]);
      remap[i] = it->second;
    }
    return {std::move(unique), std::move(remap)};
  }
  std::unordered_map<Key, std::vector<int>, KeyHash> grid;
  const double tol2 = tolerance * tolerance;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points[i];
    const Key base{static_cast<std::int64_t>(std::floor(p.x() / tolerance)),
                   static_cast<std::int64_t>(std::floor(p.y() / tolerance)),
                   static_cast<std::int64_t>(std::floor(p.z() / tolerance))};
    int found = -1;
    for (int dx = -1; dx <= 1 && found < 0; ++dx) {
      for (int dy = -1; dy <= 1 && found < 0; ++dy) {
        for (int dz = -1; dz <= 1 && found < 0; ++dz) {
          auto it = grid.find({base.x + dx, base.y + dy, base.z + dz});
          if (it == grid.end()) continue;
          for (int u : it->second) {
            if ((unique[static_cast<std::size_t>(u)] - p).squaredNorm() <= tol2) {
              found = u;
              break;
            }
          }
        }
      }
    }
    if (found < 0) {
      found = static_cast<int>(unique.size());
      unique.push_back(p);
      grid[base].push_back(found);
    }
    remap[i] = found;
  }
  return {std::move(unique), std::move(remap)};
}

LoadedMesh parse_mesh(std::span<const char> bytes, MeshFormat format, const LoadOptions& options) {
  if (format == MeshFormat::kAuto) {
    const std::string_view head(bytes.data(), std::min<std::size_t>(bytes.size(), 5));
    if (head.substr(0, 3) == "ply") {
      format = MeshFormat::kPly;
    } else if (looks_like_binary_stl(bytes)) {
      format = MeshFormat::kStlBinary;
    } else if (head == "solid") {
      format = MeshFormat::kStlAscii;
    } else {
      format = MeshFormat::kStlBinary;
    }
  }
  switch (format) {
    case MeshFormat::kStlBinary: return parse_stl_binary(bytes, options);
    case MeshFormat::kStlAscii: return parse_stl_ascii(bytes, options);
    case MeshFormat::kPly: return parse_ply_ascii(bytes, options);
    case MeshFormat::kAuto: break;
  }
  throw Error(ErrorKind::kInternal, "unreachable mesh format");
}

LoadedMesh load_mesh(const std::filesystem::path& path, MeshFormat format,
                     const LoadOptions& options) {
  const std::string bytes = read_file(path);
  try {
    return parse_mesh(std::span<const char>(bytes.data(), bytes.size()), format, options);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::string to_stl_binary(const TriangleMesh& mesh) {
  std::string out(84 + mesh.num_faces() * 50, '\0');
  const char header[] = "prepline binary STL";
  std::memcpy(out.data(), header, sizeof(header) - 1);
  const auto count = static_cast<std::uint32_t>(mesh.num_faces());
  std::memcpy(out.data() + 80, &count, 4);
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    char* rec = out.data() + 84 + f * 50;
    const Vec3 n = mesh.face_normal(static_cast<int>(f));
    std::array<float, 12> values{};
    for (int c = 0; c < 3; ++c) values[static_cast<std::size_t>(c)] = static_cast<float>(n[c]);
    const Face& t = mesh.face(static_cast<int>(f));
    for (int k = 0; k < 3; ++k) {
      for (int c = 0; c < 3; ++c) {
        values[static_cast<std::size_t>(3 + k * 3 + c)] = static_cast<float>(mesh.vertex(t[static_cast<std::size_t>(k)])[c]);
      }
    }
    std::memcpy(rec, values.data(), 48);
  }
  return out;
}

std::string to_stl_ascii(const TriangleMesh& mesh, std::string_view solid_name) {
  std::ostringstream out;
  out << "solid " << solid_name << "\n";
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 n = mesh.face_normal(static_cast<int>(f));
    out << "  facet normal " << fmt_double(n.x()) << ' ' << fmt_double(n.y()) << ' ' << fmt_double(n.z())
        << "\n    outer loop\n";
    for (int v : mesh.face(static_cast<int>(f))) {
      const Vec3& p = mesh.vertex(v);
      out << "      vertex " << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' ' << fmt_double(p.z()) << "\n";
    }
    out << "    endloop\n  endfacet\n";
  }
  out << "endsolid " << solid_name << "\n";
  return out.str();
}

std::string to_ply(const TriangleMesh& mesh, std::span<const int> labels) {
  const bool with_labels = !labels.empty();
  if (with_labels && labels.size() != mesh.num_faces()) {
    throw Error(ErrorKind::kShape, "label count does not match face count");
  }
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\ncomment prepline\n";
  out << "element vertex " << mesh.num_vertices() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "element face " << mesh.num_faces() << "\n";
  out << "property list uchar int vertex_indices\n";
  if (with_labels) {
    out << "property int label\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n";
  }
  out << "end_header\n";
  for (const Vec3& p : mesh.vertices()) {
    out << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' ' << fmt_double(p.z()) << "\n";
  }
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    const Face& t = mesh.face(static_cast<int>(f));
    out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2];
    if (with_labels) {
      // Crown-bottom region purple, rest of the die grey.
      const int label = labels[f];
      if (label == 1) {
        out << ' ' << label << " 160 32 240";
      } else {
        out << ' ' << label << " 200 200 200";
      }
    }
    out << "\n";
  }
  return out.str();
}

void save_mesh(const std::filesystem::path& path, const TriangleMesh& mesh, MeshFormat format,
               std::span<const int> labels) {
  if (format == MeshFormat::kAuto) {
    format = path.extension() == ".ply" ? MeshFormat::kPly : MeshFormat::kStlBinary;
  }
  switch (format) {
    case MeshFormat::kStlBinary: write_file(path, to_stl_binary(mesh)); break;
    case MeshFormat::kStlAscii: write_file(path, to_stl_ascii(mesh)); break;
    case MeshFormat::kPly:
    case MeshFormat::kAuto: write_file(path, to_ply(mesh, labels)); break;
  }
}

void write_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace prepline
