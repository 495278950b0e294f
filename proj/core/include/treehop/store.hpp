#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace treehop {

// Stored embeddings are 32-bit; model arithmetic runs in 64-bit.
using Embedding = std::vector<float>;
using Vector = std::vector<double>;

struct ChunkRecord {
  std::string id;
  std::optional<std::string> title;
  std::optional<std::string> text;
  Embedding embedding;
};

struct ScoredHit {
  std::string chunk_id;
  double score = 0.0;     // exact cosine similarity
  std::size_t index = 0;  // row in the owning store
};

// Cosine similarity computed in double. Throws DimensionError on length
// mismatch and ZeroNormError if either side is all zeros.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Append-only dense vector store with exact cosine top-K.
//
// Const member functions never mutate shared state, so a populated store can
// be queried from many threads at once.
class Store {
 public:
  explicit Store(std::size_t dim);

  // Rejects duplicate ids, wrong dimension, non-finite or all-zero vectors.
  void insert(ChunkRecord record);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }

  std::optional<std::size_t> find(std::string_view id) const;
  // Like find() but throws UnknownIdError.
  std::size_t index_of(std::string_view id) const;

  const std::string& id(std::size_t i) const { return ids_.at(i); }
  const std::optional<std::string>& title(std::size_t i) const { return titles_.at(i); }
  const std::optional<std::string>& text(std::size_t i) const { return texts_.at(i); }
  std::span<const float> embedding(std::size_t i) const;
  Vector embedding_f64(std::size_t i) const;
  double norm(std::size_t i) const { return norms_.at(i); }

  // Exact cosine between a query and row i (the value top_k reports).
  double score(std::span<const double> query, std::size_t i) const;

  // Hits sorted by score descending, ties by ascending id; length min(k, size).
  std::vector<ScoredHit> top_k(std::span<const double> query, std::size_t k) const;
  std::vector<ScoredHit> top_k(std::span<const float> query, std::size_t k) const;

  // One pass over the store for a whole set of queries. Element j of the
  // result equals top_k(queries[j], k).
  std::vector<std::vector<ScoredHit>> top_k_batch(std::span<const Vector> queries,
                                                  std::size_t k) const;

 private:
  std::vector<ScoredHit> select_exact(std::span<const double> query, double query_norm,
                                      std::span<const float> approx, std::size_t k) const;

  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<std::optional<std::string>> titles_;
  std::vector<std::optional<std::string>> texts_;
  std::vector<float> data_;      // row-major size() x dim_
  std::vector<double> norms_;    // exact L2 norms of the stored f32 rows
  std::vector<float> inv_norms_; // 1/norm for the f32 screening pass
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct IngestOptions {
  bool normalize_on_ingest = true;
};

// One JSON object per line: {"id", "title"?, "text"?, "embedding": [...]}.
// The dimension is taken from the first record. Parse failures raise
// FormatError carrying the 1-based line number.
Store ingest_jsonl(const std::filesystem::path& path, const IngestOptions& options = {});
std::vector<ChunkRecord> read_chunk_jsonl(const std::filesystem::path& path);

// Binary "THS1" layout, little-endian:
//   magic[4] | u32 dim | u64 count | count x (u32 id_len | id bytes | dim x f32)
// Titles and texts go to a sidecar JSONL at sidecar_path(path).
void save_store(const Store& store, const std::filesystem::path& path);
Store load_store(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace treehop
