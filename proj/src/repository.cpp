#include "mforge/repository.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <mutex>
#include <numeric>

#include "mforge/encoding.hpp"
#include "mforge/mesh_io.hpp"

namespace mforge {

using nlohmann::json;

namespace {

constexpr int kRepoFormatVersion = 1;

std::int64_t now_millis() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RepositoryError(RepositoryError::Code::Io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." +
         std::to_string(std::hash<std::string>{}(bytes) ^ static_cast<std::size_t>(now_millis()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RepositoryError(RepositoryError::Code::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw RepositoryError(RepositoryError::Code::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw RepositoryError(RepositoryError::Code::Io, "cannot rename into " + path.string() + ": " + ec.message());
}

}  // namespace

// ---------------------------------------------------------------------------
// Embeddings

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
  double sum = 0.0;
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("embedding has a non-finite value");
    sum += v * v;
  }
  norm_ = std::sqrt(sum);
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dimension() != b.dimension()) throw std::invalid_argument("cosine of vectors with different dimensions");
  if (a.norm() == 0.0 || b.norm() == 0.0) return 0.0;
  double dot = 0.0;
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  return std::clamp(dot / (a.norm() * b.norm()), -1.0, 1.0);
}

std::string normalize_label(std::string_view label) {
  std::string out;
  bool space = false;
  for (unsigned char c : label) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

HashingEmbeddingProvider::HashingEmbeddingProvider(std::size_t dimension) : dimension_(dimension) {
  if (dimension == 0) throw std::invalid_argument("embedding dimension must be positive");
}

EmbeddingVector HashingEmbeddingProvider::embed(std::string_view text) {
  const std::string padded = " " + normalize_label(text) + " ";
  std::vector<double> v(dimension_, 0.0);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const std::uint64_t h = fnv1a64(std::string_view(padded).substr(i, 3));
    v[h % dimension_] += (h >> 63) ? -1.0 : 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
  return EmbeddingVector(std::move(v));
}

HttpEmbeddingProvider::HttpEmbeddingProvider(BackendDescriptor descriptor, std::size_t dimension)
    : descriptor_(std::move(descriptor)), dimension_(dimension) {}

EmbeddingVector HttpEmbeddingProvider::embed(std::string_view text) {
  const auto response = call_backend(descriptor_, {{"text", std::string(text)}});
  std::vector<double> values;
  try {
    values = response.at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw BackendError(BackendError::Code::Malformed, std::string("text-embed backend: ") + e.what());
  }
  if (values.size() != dimension_) {
    throw BackendError(BackendError::Code::Malformed,
                       "text-embed backend returned " + std::to_string(values.size()) + " values, expected " +
                           std::to_string(dimension_));
  }
  return EmbeddingVector(std::move(values));
}

EmbeddingVector embed(std::string_view label, EmbeddingProvider& provider) {
  if (normalize_label(label).empty()) throw std::invalid_argument("cannot embed an empty label");
  return provider.embed(label);
}

// ---------------------------------------------------------------------------
// Records

const char* to_string(AssetSource source) {
  switch (source) {
    case AssetSource::Generated: return "generated";
    case AssetSource::Imported: return "imported";
    case AssetSource::ImageDerived: return "image-derived";
  }
  return "unknown";
}

std::optional<AssetSource> parse_asset_source(std::string_view name) {
  if (name == "generated") return AssetSource::Generated;
  if (name == "imported") return AssetSource::Imported;
  if (name == "image-derived") return AssetSource::ImageDerived;
  return std::nullopt;
}

json to_json(const AssetRecord& r) {
  return {{"id", r.id},
          {"label", r.label},
          {"embedding", r.embedding.values()},
          {"mesh_ref", r.mesh_ref},
          {"source", to_string(r.source)},
          {"created_at", r.created_at},
          {"hit_count", r.hit_count}};
}

AssetRecord record_from_json(const json& j) {
  AssetRecord r;
  r.id = j.at("id").get<std::string>();
  r.label = j.at("label").get<std::string>();
  r.embedding = EmbeddingVector(j.at("embedding").get<std::vector<double>>());
  r.mesh_ref = j.at("mesh_ref").get<std::string>();
  const auto source = parse_asset_source(j.at("source").get<std::string>());
  if (!source) throw std::invalid_argument("unknown asset source");
  r.source = *source;
  r.created_at = j.at("created_at").get<std::int64_t>();
  r.hit_count = j.value("hit_count", std::uint64_t{0});
  return r;
}

// ---------------------------------------------------------------------------
// Repository

Repository::Repository(RepositoryConfig config, std::shared_ptr<EmbeddingProvider> provider)
    : config_(config), provider_(std::move(provider)) {
  if (!provider_) throw std::invalid_argument("repository needs an embedding provider");
  if (provider_->dimension() != config_.dimension) {
    throw RepositoryError(RepositoryError::Code::DimensionMismatch, "provider dimension differs from repository");
  }
}

Repository::Repository(std::filesystem::path root, RepositoryConfig config,
                       std::shared_ptr<EmbeddingProvider> provider)
    : root_(std::move(root)), config_(config), provider_(std::move(provider)) {
  if (!provider_) throw std::invalid_argument("repository needs an embedding provider");
  std::error_code ec;
  std::filesystem::create_directories(root_ / "blobs", ec);
  if (ec) throw RepositoryError(RepositoryError::Code::Io, "cannot create " + root_.string() + ": " + ec.message());

  const auto manifest = root_ / "repo.json";
  if (std::filesystem::exists(manifest)) {
    json stored = json::parse(read_file(manifest), nullptr, false);
    if (stored.is_discarded()) throw RepositoryError(RepositoryError::Code::Corrupt, "repo.json is not valid JSON");
    const auto dim = stored.value("dimension", std::size_t{0});
    if (dim != config_.dimension) {
      throw RepositoryError(RepositoryError::Code::DimensionMismatch,
                            "repository dimension is " + std::to_string(dim) + ", requested " +
                                std::to_string(config_.dimension));
    }
    config_.duplicate_threshold = stored.value("duplicate_threshold", config_.duplicate_threshold);
  } else {
    write_file_atomic(manifest, json{{"version", kRepoFormatVersion},
                                     {"dimension", config_.dimension},
                                     {"duplicate_threshold", config_.duplicate_threshold}}
                                        .dump(2) +
                                    "\n");
  }
  if (provider_->dimension() != config_.dimension) {
    throw RepositoryError(RepositoryError::Code::DimensionMismatch, "provider dimension differs from repository");
  }
  replay();
}

std::filesystem::path Repository::blob_path(const std::string& key) const {
  return root_ / "blobs" / (key + kBinaryExtension);
}

void Repository::replay() {
  const auto log = root_ / "meta.jsonl";
  if (!std::filesystem::exists(log)) return;
  const std::string text = read_file(log);
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) break;  // torn final write, never acknowledged
    const std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      const json entry = json::parse(line);
      const auto op = entry.at("op").get<std::string>();
      if (op == "upsert") {
        apply_upsert(record_from_json(entry.at("record")));
      } else if (op == "hit") {
        const auto it = by_id_.find(entry.at("id").get<std::string>());
        if (it == by_id_.end()) throw std::runtime_error("hit for unknown id");
        ++rows_[it->second].record.hit_count;
      } else {
        throw std::runtime_error("unknown op '" + op + "'");
      }
    } catch (const RepositoryError&) {
      throw;
    } catch (const std::exception& e) {
      throw RepositoryError(RepositoryError::Code::Corrupt,
                            "meta.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void Repository::append_log(const json& entry) {
  if (!persistent()) return;
  const std::string line = entry.dump() + "\n";
  const auto path = (root_ / "meta.jsonl").string();
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw RepositoryError(RepositoryError::Code::Io, "cannot open " + path);
  std::size_t written = 0;
  while (written < line.size()) {
    const auto n = ::write(fd, line.data() + written, line.size() - written);
    if (n < 0) {
      ::close(fd);
      throw RepositoryError(RepositoryError::Code::Io, "write to " + path + " failed");
    }
    written += static_cast<std::size_t>(n);
  }
  const int synced = ::fsync(fd);
  ::close(fd);
  if (synced != 0) throw RepositoryError(RepositoryError::Code::Io, "fsync of " + path + " failed");
}

void Repository::apply_upsert(AssetRecord record) {
  if (record.embedding.dimension() != config_.dimension) {
    throw RepositoryError(RepositoryError::Code::DimensionMismatch,
                          "embedding has dimension " + std::to_string(record.embedding.dimension()) + ", repository " +
                              std::to_string(config_.dimension));
  }
  const auto it = by_id_.find(record.id);
  const auto& values = record.embedding.values();
  if (it != by_id_.end()) {
    std::copy(values.begin(), values.end(), matrix_.begin() + static_cast<std::ptrdiff_t>(it->second * config_.dimension));
    rows_[it->second].record = std::move(record);
    return;
  }
  by_id_.emplace(record.id, rows_.size());
  matrix_.insert(matrix_.end(), values.begin(), values.end());
  rows_.push_back({std::move(record), next_sequence_++});
}

std::string Repository::put_mesh(const Mesh& mesh) {
  require_valid(mesh);
  const std::string bytes = write_mesh(mesh, MeshFormat::CompactBinary);
  const std::string key = sha256_hex(bytes);
  if (persistent()) {
    const auto path = blob_path(key);
    if (!std::filesystem::exists(path)) write_file_atomic(path, bytes);
  } else {
    std::unique_lock lock(mu_);
    memory_blobs_.emplace(key, bytes);
  }
  return key;
}

bool Repository::has_blob(const std::string& mesh_ref) const {
  if (persistent()) return std::filesystem::exists(blob_path(mesh_ref));
  std::shared_lock lock(mu_);
  return memory_blobs_.count(mesh_ref) > 0;
}

Mesh Repository::get_mesh(const std::string& mesh_ref) const {
  std::string bytes;
  if (persistent()) {
    const auto path = blob_path(mesh_ref);
    if (!std::filesystem::exists(path)) {
      throw RepositoryError(RepositoryError::Code::MissingBlob, "no blob " + mesh_ref);
    }
    bytes = read_file(path);
  } else {
    std::shared_lock lock(mu_);
    const auto it = memory_blobs_.find(mesh_ref);
    if (it == memory_blobs_.end()) throw RepositoryError(RepositoryError::Code::MissingBlob, "no blob " + mesh_ref);
    bytes = it->second;
  }
  if (sha256_hex(bytes) != mesh_ref) {
    throw RepositoryError(RepositoryError::Code::Corrupt, "blob " + mesh_ref + " does not match its hash");
  }
  return read_mesh(bytes, MeshFormat::CompactBinary);
}

std::string Repository::upsert(AssetRecord record) {
  if (normalize_label(record.label).empty()) {
    throw RepositoryError(RepositoryError::Code::InvalidRecord, "record label is empty");
  }
  if (record.embedding.dimension() != config_.dimension) {
    throw RepositoryError(RepositoryError::Code::DimensionMismatch,
                          "embedding has dimension " + std::to_string(record.embedding.dimension()) + ", repository " +
                              std::to_string(config_.dimension));
  }
  if (!has_blob(record.mesh_ref)) {
    throw RepositoryError(RepositoryError::Code::MissingBlob, "mesh_ref " + record.mesh_ref + " does not resolve");
  }
  if (record.created_at == 0) record.created_at = now_millis();

  std::unique_lock lock(mu_);
  if (record.id.empty()) {
    record.id = "a" + sha256_hex(record.label + "|" + record.mesh_ref + "|" + std::to_string(record.created_at) + "|" +
                                 std::to_string(next_sequence_))
                          .substr(0, 15);
  }
  append_log({{"op", "upsert"}, {"record", to_json(record)}});
  const auto id = record.id;
  apply_upsert(std::move(record));
  return id;
}

AssetRecord Repository::add_asset(const std::string& label, const Mesh& mesh, AssetSource source) {
  AssetRecord record;
  record.label = label;
  record.embedding = embed(label, *provider_);
  record.mesh_ref = put_mesh(mesh);
  record.source = source;
  record.id = upsert(record);
  return *get(record.id);
}

std::optional<AssetRecord> Repository::get(const std::string& id) const {
  std::shared_lock lock(mu_);
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return rows_[it->second].record;
}

std::size_t Repository::size() const {
  std::shared_lock lock(mu_);
  return rows_.size();
}

std::vector<AssetRecord> Repository::records() const {
  std::shared_lock lock(mu_);
  std::vector<AssetRecord> out;
  out.reserve(rows_.size());
  for (const auto& row : rows_) out.push_back(row.record);
  return out;
}

std::vector<SimilarityHit> Repository::query_similar(const EmbeddingVector& query, std::size_t k,
                                                     double min_score) const {
  if (k == 0) throw std::invalid_argument("k must be positive");
  if (query.dimension() != config_.dimension) {
    throw RepositoryError(RepositoryError::Code::DimensionMismatch,
                          "query has dimension " + std::to_string(query.dimension()) + ", repository " +
                              std::to_string(config_.dimension));
  }
  std::shared_lock lock(mu_);
  const std::size_t dim = config_.dimension;
  const auto& q = query.values();

  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const double* row = matrix_.data() + i * dim;
    const double norm = rows_[i].record.embedding.norm();
    double score = 0.0;
    if (norm > 0.0 && query.norm() > 0.0) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += row[d] * q[d];
      score = std::clamp(dot / (norm * query.norm()), -1.0, 1.0);
    }
    if (score >= min_score) scored.emplace_back(score, i);
  }

  auto better = [this](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    const auto& rx = rows_[x.second];
    const auto& ry = rows_[y.second];
    if (rx.record.created_at != ry.record.created_at) return rx.record.created_at < ry.record.created_at;
    return rx.sequence < ry.sequence;
  };
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);

  std::vector<SimilarityHit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) hits.push_back({rows_[scored[i].second].record.id, scored[i].first});
  return hits;
}

std::optional<std::string> Repository::find_duplicate(const std::string& label, std::optional<double> threshold) const {
  const double t = threshold.value_or(config_.duplicate_threshold);
  if (size() == 0 || t > 1.0) return std::nullopt;
  const auto hits = query_similar(embed(label, *provider_), 1, t);
  if (hits.empty()) return std::nullopt;
  return hits.front().id;
}

AssetRecord Repository::record_hit(const std::string& id) {
  std::unique_lock lock(mu_);
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) throw RepositoryError(RepositoryError::Code::NotFound, "no asset " + id);
  append_log({{"op", "hit"}, {"id", id}});
  auto& record = rows_[it->second].record;
  ++record.hit_count;
  return record;
}

RepositoryStats Repository::stats() const {
  RepositoryStats s;
  std::shared_lock lock(mu_);
  s.records = rows_.size();
  s.dimension = config_.dimension;
  for (const auto& row : rows_) {
    s.total_hits += row.record.hit_count;
    ++s.by_source[to_string(row.record.source)];
  }
  if (persistent()) {
    for (const auto& entry : std::filesystem::directory_iterator(root_ / "blobs")) {
      if (entry.path().extension() != kBinaryExtension) continue;
      ++s.blobs;
      s.blob_bytes += entry.file_size();
    }
  } else {
    s.blobs = memory_blobs_.size();
    for (const auto& [key, bytes] : memory_blobs_) s.blob_bytes += bytes.size();
  }
  return s;
}

}  // namespace mforge
