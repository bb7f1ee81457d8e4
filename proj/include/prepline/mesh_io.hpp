#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prepline/mesh.hpp"

namespace prepline {

enum class MeshFormat { kStlBinary, kStlAscii, kPly, kAuto };

struct LoadOptions {
  double weld_tolerance = 1e-6;  // mm
  /// Build the face adjacency and reject non-manifold edges.
  bool require_manifold = true;
};

struct LoadedMesh {
  TriangleMesh mesh;
  /// Per-face labels when the source carried them (PLY `label` property).
  std::optional<std::vector<int>> labels;
  /// Faces dropped because welding collapsed them.
  std::size_t dropped_faces = 0;
};

LoadedMesh parse_mesh(std::span<const char> bytes, MeshFormat format,
                     const LoadOptions& options = {});
LoadedMesh load_mesh(const std::filesystem::path& path, MeshFormat format = MeshFormat::kAuto,
                     const LoadOptions& options = {});

/// Merges vertices closer than `tolerance`; returns (unique vertices, remap).
std::pair<std::vector<Vec3>, std::vector<int>> weld_vertices(std::span<const Vec3> points,
                                                             double tolerance);

std::string to_stl_binary(const TriangleMesh& mesh);
std::string to_stl_ascii(const TriangleMesh& mesh, std::string_view solid_name = "prepline");
/// ASCII PLY. When labels are given each face carries `label` and a color.
std::string to_ply(const TriangleMesh& mesh, std::span<const int> labels = {});

void save_mesh(const std::filesystem::path& path, const TriangleMesh& mesh,
               MeshFormat format = MeshFormat::kAuto, std::span<const int> labels = {});

/// Writes `text` to `path` atomically enough for our purposes (write + rename).
void write_file(const std::filesystem::path& path, std::string_view text);
std::string read_file(const std::filesystem::path& path);

}  // namespace prepline
