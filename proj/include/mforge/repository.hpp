// repository.hpp - embedding-keyed store of generated assets.
//
// On disk a repository is a directory:
//
//   repo.json          {"version": 1, "dimension": 384, "duplicate_threshold": 0.92}
//   meta.jsonl         append-only log, one JSON object per line:
//                        {"op": "upsert", "record": {...}}
//                        {"op": "hit", "id": "..."}
//   blobs/<sha256>.mforge   meshes in compact binary, keyed by content hash
//
// Opening a repository replays the log. Queries are exact cosine scans over a
// contiguous embedding matrix.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mforge/backends.hpp"
#include "mforge/mesh.hpp"

namespace mforge {

inline constexpr std::size_t kDefaultEmbeddingDimension = 384;
inline constexpr double kDefaultDuplicateThreshold = 0.92;

class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  /// Throws std::invalid_argument on non-finite values.
  explicit EmbeddingVector(std::vector<double> values);

  const std::vector<double>& values() const { return values_; }
  std::size_t dimension() const { return values_.size(); }
  double norm() const { return norm_; }

  bool operator==(const EmbeddingVector& o) const { return values_ == o.values_; }

 private:
  std::vector<double> values_;
  double norm_ = 0.0;
};

/// Cosine similarity; 0 when either vector has zero norm.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dimension() const = 0;
  virtual EmbeddingVector embed(std::string_view text) = 0;
};

/// Deterministic offline provider: signed feature hashing of character
/// trigrams of the normalized text, L2-normalized.
class HashingEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashingEmbeddingProvider(std::size_t dimension = kDefaultEmbeddingDimension);
  std::size_t dimension() const override { return dimension_; }
  EmbeddingVector embed(std::string_view text) override;

 private:
  std::size_t dimension_;
};

/// Remote provider speaking the text-embed backend contract.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(BackendDescriptor descriptor, std::size_t dimension);
  std::size_t dimension() const override { return dimension_; }
  EmbeddingVector embed(std::string_view text) override;

 private:
  BackendDescriptor descriptor_;
  std::size_t dimension_;
};

/// Lowercases, trims and collapses internal whitespace.
std::string normalize_label(std::string_view label);

/// Throws std::invalid_argument for an empty label.
EmbeddingVector embed(std::string_view label, EmbeddingProvider& provider);

enum class AssetSource { Generated, Imported, ImageDerived };

const char* to_string(AssetSource source);
std::optional<AssetSource> parse_asset_source(std::string_view name);

struct AssetRecord {
  std::string id;
  std::string label;
  EmbeddingVector embedding;
  std::string mesh_ref;  // sha256 of the compact-binary blob
  AssetSource source = AssetSource::Generated;
  std::int64_t created_at = 0;  // unix epoch milliseconds
  std::uint64_t hit_count = 0;

  bool operator==(const AssetRecord&) const = default;
};

nlohmann::json to_json(const AssetRecord& record);
AssetRecord record_from_json(const nlohmann::json& j);

struct SimilarityHit {
  std::string id;
  double score = 0.0;
  bool operator==(const SimilarityHit&) const = default;
};

struct RepositoryConfig {
  std::size_t dimension = kDefaultEmbeddingDimension;
  double duplicate_threshold = kDefaultDuplicateThreshold;
};

struct RepositoryStats {
  std::size_t records = 0;
  std::size_t dimension = 0;
  std::size_t blobs = 0;
  std::size_t blob_bytes = 0;
  std::uint64_t total_hits = 0;
  std::map<std::string, std::size_t> by_source;
};

class RepositoryError : public std::runtime_error {
 public:
  enum class Code { DimensionMismatch, InvalidRecord, MissingBlob, NotFound, Io, Corrupt };
  RepositoryError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

class Repository {
 public:
  /// Opens (creating if needed) the repository at `root` and replays its log.
  /// An existing repository keeps its stored dimension; a different
  /// `config.dimension` is a DimensionMismatch.
  Repository(std::filesystem::path root, RepositoryConfig config, std::shared_ptr<EmbeddingProvider> provider);

  /// Purely in-memory repository (nothing persisted).
  Repository(RepositoryConfig config, std::shared_ptr<EmbeddingProvider> provider);

  Repository(const Repository&) = delete;
  Repository& operator=(const Repository&) = delete;

  const RepositoryConfig& config() const { return config_; }
  EmbeddingProvider& provider() const { return *provider_; }
  bool persistent() const { return !root_.empty(); }
  const std::filesystem::path& root() const { return root_; }

  /// Stores the mesh as a content-addressed blob and returns its key.
  std::string put_mesh(const Mesh& mesh);
  Mesh get_mesh(const std::string& mesh_ref) const;
  bool has_blob(const std::string& mesh_ref) const;

  /// Inserts or replaces by id (a fresh id is assigned when empty). The log
  /// line is flushed and synced before this returns.
  std::string upsert(AssetRecord record);

  /// Embeds the label, stores the mesh and upserts a new record.
  AssetRecord add_asset(const std::string& label, const Mesh& mesh, AssetSource source);

  std::optional<AssetRecord> get(const std::string& id) const;
  std::size_t size() const;
  std::vector<AssetRecord> records() const;

  /// Top-k records with score >= min_score, best first; ties go to the older record.
  std::vector<SimilarityHit> query_similar(const EmbeddingVector& query, std::size_t k, double min_score) const;

  /// Best hit for the embedded label at or above `threshold` (config default when absent).
  std::optional<std::string> find_duplicate(const std::string& label, std::optional<double> threshold = {}) const;

  /// Counts one served cache hit and returns the updated record.
  AssetRecord record_hit(const std::string& id);

  RepositoryStats stats() const;

 private:
  struct Row {
    AssetRecord record;
    std::uint64_t sequence;  // insertion order, breaks created_at ties
  };

  void replay();
  void append_log(const nlohmann::json& entry);
  void apply_upsert(AssetRecord record);
  std::filesystem::path blob_path(const std::string& key) const;

  std::filesystem::path root_;
  RepositoryConfig config_;
  std::shared_ptr<EmbeddingProvider> provider_;

  mutable std::shared_mutex mu_;
  std::vector<Row> rows_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<double> matrix_;  // rows_.size() x dimension, row-major
  std::map<std::string, std::string> memory_blobs_;
  std::uint64_t next_sequence_ = 0;
};

}  // namespace mforge
