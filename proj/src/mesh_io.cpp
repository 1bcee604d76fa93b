#include "mforge/mesh_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <vector>

namespace mforge {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

std::string write_binary(const Mesh& mesh) {
  if (mesh.vertices.size() > std::numeric_limits<std::uint32_t>::max() ||
      mesh.faces.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError(FormatError::Code::IndexOverflow, "mesh too large for compact binary format");
  }
  std::string out;
  out.reserve(compact_binary_size(mesh.vertices.size(), mesh.faces.size()));
  out.append(kBinaryMagic, 4);
  put_u16(out, kBinaryVersion);
  put_u32(out, static_cast<std::uint32_t>(mesh.vertices.size()));
  put_u32(out, static_cast<std::uint32_t>(mesh.faces.size()));
  for (const auto& p : mesh.vertices) {
    for (float c : p) put_u32(out, std::bit_cast<std::uint32_t>(c));
  }
  for (const auto& f : mesh.faces) {
    for (auto idx : f) put_u32(out, idx);
  }
  return out;
}

Mesh read_binary(std::string_view bytes) {
  if (bytes.size() < kBinaryHeaderSize) {
    throw FormatError(FormatError::Code::Truncated, "compact binary: header truncated");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (std::memcmp(p, kBinaryMagic, 4) != 0) {
    throw FormatError(FormatError::Code::BadMagic, "compact binary: bad magic");
  }
  const auto version = get_u16(p + 4);
  if (version != kBinaryVersion) {
    throw FormatError(FormatError::Code::UnsupportedVersion,
                      "compact binary: unsupported version " + std::to_string(version));
  }
  const std::uint32_t nv = get_u32(p + 6);
  const std::uint32_t nf = get_u32(p + 10);
  const std::size_t expected = compact_binary_size(nv, nf);
  if (bytes.size() < expected) {
    throw FormatError(FormatError::Code::Truncated,
                      "compact binary: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
  }

  Mesh mesh;
  mesh.vertices.resize(nv);
  mesh.faces.resize(nf);
  const unsigned char* cursor = p + kBinaryHeaderSize;
  for (auto& v : mesh.vertices) {
    for (auto& c : v) {
      c = std::bit_cast<float>(get_u32(cursor));
      cursor += 4;
    }
  }
  for (std::size_t f = 0; f < nf; ++f) {
    for (auto& idx : mesh.faces[f]) {
      idx = get_u32(cursor);
      cursor += 4;
      if (idx >= nv) {
        throw FormatError(FormatError::Code::IndexOverflow,
                          "compact binary: face " + std::to_string(f) + " references vertex " +
                              std::to_string(idx) + " of " + std::to_string(nv));
      }
    }
  }
  return mesh;
}

void append_float(std::string& out, float value) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  out.append(buf, end);
}

std::string write_obj(const Mesh& mesh) {
  const bool with_color = !mesh.colors.empty() && mesh.colors.size() == mesh.vertices.size();
  std::string out;
  out.reserve(mesh.vertices.size() * 32 + mesh.faces.size() * 24);
  out += "# mforge ";
  out += std::to_string(mesh.vertices.size()) + " vertices, " + std::to_string(mesh.faces.size()) +
         " faces\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& p = mesh.vertices[i];
    out += 'v';
    for (float c : p) {
      out += ' ';
      append_float(out, c);
    }
    if (with_color) {
      for (float c : {mesh.colors[i].r, mesh.colors[i].g, mesh.colors[i].b}) {
        out += ' ';
        append_float(out, c);
      }
    }
    out += '\n';
  }
  for (const auto& f : mesh.faces) {
    out += "f " + std::to_string(f[0] + 1) + ' ' + std::to_string(f[1] + 1) + ' ' +
           std::to_string(f[2] + 1) + '\n';
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) tokens.push_back(s.substr(i, j - i));
    i = j;
  }
  return tokens;
}

float parse_float(std::string_view token, std::size_t line) {
  float value = 0.0f;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw FormatError(FormatError::Code::Syntax,
                      "obj line " + std::to_string(line) + ": bad number '" + std::string(token) + "'");
  }
  return value;
}

// Accepts "i", "i/t", "i//n", "i/t/n"; negative indices are relative to the end.
std::uint32_t parse_index(std::string_view token, std::size_t vertex_count, std::size_t line) {
  token = token.substr(0, token.find('/'));
  long long value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size() || value == 0) {
    throw FormatError(FormatError::Code::Syntax,
                      "obj line " + std::to_string(line) + ": bad index '" + std::string(token) + "'");
  }
  long long resolved = value > 0 ? value - 1 : static_cast<long long>(vertex_count) + value;
  if (resolved < 0 || resolved >= static_cast<long long>(vertex_count)) {
    throw FormatError(FormatError::Code::IndexOverflow,
                      "obj line " + std::to_string(line) + ": index " + std::to_string(value) +
                          " out of range");
  }
  return static_cast<std::uint32_t>(resolved);
}

Mesh read_obj(std::string_view text) {
  Mesh mesh;
  std::vector<Color> colors;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  // Faces may reference vertices defined later in the file, so resolve at the end.
  struct PendingFace {
    std::vector<std::string_view> tokens;
    std::size_t line;
  };
  std::vector<PendingFace> pending;

  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view raw =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto tokens = split_ws(line);
    if (tokens[0] == "v") {
      if (tokens.size() != 4 && tokens.size() != 7) {
        throw FormatError(FormatError::Code::Syntax,
                          "obj line " + std::to_string(line_no) + ": vertex needs 3 or 6 numbers");
      }
      mesh.vertices.push_back({parse_float(tokens[1], line_no), parse_float(tokens[2], line_no),
                               parse_float(tokens[3], line_no)});
      if (tokens.size() == 7) {
        colors.push_back({parse_float(tokens[4], line_no), parse_float(tokens[5], line_no),
                          parse_float(tokens[6], line_no)});
      }
    } else if (tokens[0] == "f") {
      if (tokens.size() < 4) {
        throw FormatError(FormatError::Code::Syntax,
                          "obj line " + std::to_string(line_no) + ": face needs at least 3 indices");
      }
      pending.push_back({{tokens.begin() + 1, tokens.end()}, line_no});
    }
    // vt, vn, o, g, s, usemtl, mtllib: ignored.
  }

  const std::size_t nv = mesh.vertices.size();
  for (const auto& face : pending) {
    std::vector<std::uint32_t> idx;
    idx.reserve(face.tokens.size());
    for (auto token : face.tokens) idx.push_back(parse_index(token, nv, face.line));
    // Fan triangulation for polygons.
    for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
  }
  if (colors.size() == nv) mesh.colors = std::move(colors);
  return mesh;
}

}  // namespace

const char* format_name(MeshFormat format) {
  switch (format) {
    case MeshFormat::TextObj: return "text-obj";
    case MeshFormat::CompactBinary: return "compact-binary";
  }
  return "unknown";
}

std::optional<MeshFormat> parse_format(std::string_view name) {
  if (name == "text-obj" || name == "obj" || name == "text") return MeshFormat::TextObj;
  if (name == "compact-binary" || name == "binary" || name == "mforge") return MeshFormat::CompactBinary;
  return std::nullopt;
}

std::optional<MeshFormat> format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == kBinaryExtension) return MeshFormat::CompactBinary;
  if (ext == ".obj" || ext == ".OBJ") return MeshFormat::TextObj;
  return std::nullopt;
}

Mesh read_mesh(std::string_view bytes, MeshFormat format) {
  return format == MeshFormat::CompactBinary ? read_binary(bytes) : read_obj(bytes);
}

std::string write_mesh(const Mesh& mesh, MeshFormat format) {
  return format == MeshFormat::CompactBinary ? write_binary(mesh) : write_obj(mesh);
}

Mesh load_mesh(const std::filesystem::path& path, std::optional<MeshFormat> format) {
  if (!format) format = format_from_path(path);
  if (!format) throw std::runtime_error("cannot infer mesh format from '" + path.string() + "'");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_mesh(bytes, *format);
}

void save_mesh(const std::filesystem::path& path, const Mesh& mesh, std::optional<MeshFormat> format) {
  if (!format) format = format_from_path(path);
  if (!format) throw std::runtime_error("cannot infer mesh format from '" + path.string() + "'");
  const auto bytes = write_mesh(mesh, *format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to '" + path.string() + "'");
}

}  // namespace mforge
