// mesh_io.hpp - text OBJ and compact binary ("MFRG") mesh serialization.
//
// Compact binary layout, little-endian throughout:
//
//   offset  size        field
//   0       4           magic "MFRG"
//   4       2           version (u16, currently 1)
//   6       4           vertex count V (u32)
//   10      4           face count F (u32)
//   14      12 * V      vertex positions, 3 x f32 each
//   14+12V  12 * F      face indices, 3 x u32 each
//
// Per-vertex colors are not part of the binary layout; the OBJ writer emits
// them as the "v x y z r g b" extension.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "mforge/mesh.hpp"

namespace mforge {

enum class MeshFormat { TextObj, CompactBinary };

inline constexpr char kBinaryMagic[4] = {'M', 'F', 'R', 'G'};
inline constexpr std::uint16_t kBinaryVersion = 1;
inline constexpr std::size_t kBinaryHeaderSize = 4 + 2 + 4 + 4;
inline constexpr const char* kBinaryExtension = ".mforge";

/// Exact size of the compact binary encoding.
constexpr std::size_t compact_binary_size(std::size_t vertex_count, std::size_t face_count) {
  return kBinaryHeaderSize + vertex_count * 12 + face_count * 12;
}

const char* format_name(MeshFormat format);
std::optional<MeshFormat> parse_format(std::string_view name);

/// Guesses from extension: ".mforge" is binary, ".obj" is text.
std::optional<MeshFormat> format_from_path(const std::filesystem::path& path);

class FormatError : public std::runtime_error {
 public:
  enum class Code { Truncated, BadMagic, UnsupportedVersion, IndexOverflow, Syntax };

  FormatError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

Mesh read_mesh(std::string_view bytes, MeshFormat format);
std::string write_mesh(const Mesh& mesh, MeshFormat format);

Mesh load_mesh(const std::filesystem::path& path, std::optional<MeshFormat> format = std::nullopt);
void save_mesh(const std::filesystem::path& path, const Mesh& mesh,
               std::optional<MeshFormat> format = std::nullopt);

}  // namespace mforge
