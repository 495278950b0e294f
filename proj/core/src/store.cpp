#include "treehop/store.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>

#include <Eigen/Core>

#include "binary_io.hpp"
#include "treehop/errors.hpp"
#include "treehop/jsonl.hpp"

namespace treehop {

namespace {

constexpr char kStoreMagic[4] = {'T', 'H', 'S', '1'};

template <typename T>
double sum_squares(std::span<const T> v) {
  double s = 0.0;
  for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return s;
}

template <typename A, typename B>
double dot(std::span<const A> a, std::span<const B> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError(a.size(), b.size());
  double na = std::sqrt(sum_squares(a));
  double nb = std::sqrt(sum_squares(b));
  if (na == 0.0 || nb == 0.0) throw ZeroNormError();
  return dot(a, b) / (na * nb);
}

bool hit_before(const ScoredHit& x, const ScoredHit& y) {
  if (x.score != y.score) return x.score > y.score;
  return x.chunk_id < y.chunk_id;
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  return cosine_impl(a, b);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  return cosine_impl(a, b);
}

Store::Store(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw InvalidDimensionError();
}

void Store::insert(ChunkRecord record) {
  if (record.embedding.size() != dim_) throw DimensionError(dim_, record.embedding.size());
  if (by_id_.contains(record.id)) throw DuplicateIdError(record.id);
  for (float x : record.embedding)
    if (!std::isfinite(x)) throw DataError("non-finite embedding value in chunk " + record.id);
  double n = std::sqrt(sum_squares<float>(record.embedding));
  if (n == 0.0) throw ZeroNormError();

  by_id_.emplace(record.id, ids_.size());
  ids_.push_back(std::move(record.id));
  titles_.push_back(std::move(record.title));
  texts_.push_back(std::move(record.text));
  data_.insert(data_.end(), record.embedding.begin(), record.embedding.end());
  norms_.push_back(n);
  inv_norms_.push_back(static_cast<float>(1.0 / n));
}

std::optional<std::size_t> Store::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::size_t Store::index_of(std::string_view id) const {
  auto i = find(id);
  if (!i) throw UnknownIdError(std::string(id));
  return *i;
}

std::span<const float> Store::embedding(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("store row out of range");
  return {data_.data() + i * dim_, dim_};
}

Vector Store::embedding_f64(std::size_t i) const {
  auto row = embedding(i);
  return Vector(row.begin(), row.end());
}

double Store::score(std::span<const double> query, std::size_t i) const {
  if (query.size() != dim_) throw DimensionError(dim_, query.size());
  double nq = std::sqrt(sum_squares(query));
  if (nq == 0.0) throw ZeroNormError();
  return dot(query, embedding(i)) / (nq * norms_[i]);
}

// Screening uses an f32 GEMM; every candidate within twice the f32 error
// bound of the k-th screened score is rescored exactly in f64, so the final
// ordering is identical to a full exact sort.
std::vector<ScoredHit> Store::select_exact(std::span<const double> query, double query_norm,
                                           std::span<const float> approx, std::size_t k) const {
  const std::size_t n = size();
  std::vector<std::size_t> candidates;
  if (k >= n) {
    candidates.resize(n);
    for (std::size_t i = 0; i < n; ++i) candidates[i] = i;
  } else {
    std::priority_queue<float, std::vector<float>, std::greater<float>> heap;
    for (std::size_t i = 0; i < n; ++i) {
      if (heap.size() < k) {
        heap.push(approx[i]);
      } else if (approx[i] > heap.top()) {
        heap.pop();
        heap.push(approx[i]);
      }
    }
    const double margin = static_cast<double>(dim_ + 4) * std::ldexp(1.0, -23);
    const double threshold = static_cast<double>(heap.top()) - 2.0 * margin;
    for (std::size_t i = 0; i < n; ++i)
      if (static_cast<double>(approx[i]) >= threshold) candidates.push_back(i);
  }

  std::vector<ScoredHit> hits;
  hits.reserve(candidates.size());
  for (std::size_t i : candidates)
    hits.push_back({ids_[i], dot(query, embedding(i)) / (query_norm * norms_[i]), i});
  std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + keep, hits.end(), hit_before);
  hits.resize(keep);
  return hits;
}

std::vector<ScoredHit> Store::top_k(std::span<const double> query, std::size_t k) const {
  Vector q(query.begin(), query.end());
  return std::move(top_k_batch(std::span<const Vector>(&q, 1), k).front());
}

std::vector<ScoredHit> Store::top_k(std::span<const float> query, std::size_t k) const {
  Vector q(query.begin(), query.end());
  return std::move(top_k_batch(std::span<const Vector>(&q, 1), k).front());
}

std::vector<std::vector<ScoredHit>> Store::top_k_batch(std::span<const Vector> queries,
                                                       std::size_t k) const {
  if (empty()) throw EmptyStoreError();
  const std::size_t n = size();
  const std::size_t b = queries.size();

  std::vector<double> query_norms(b);
  Eigen::MatrixXf unit(dim_, b);
  for (std::size_t j = 0; j < b; ++j) {
    const auto& q = queries[j];
    if (q.size() != dim_) throw DimensionError(dim_, q.size());
    for (double x : q)
      if (!std::isfinite(x)) throw NumericError("non-finite query component");
    double nq = std::sqrt(sum_squares<double>(q));
    if (nq == 0.0) throw ZeroNormError();
    query_norms[j] = nq;
    for (std::size_t t = 0; t < dim_; ++t) unit(t, j) = static_cast<float>(q[t] / nq);
  }

  using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMatrix> rows(data_.data(), n, dim_);
  Eigen::Map<const Eigen::VectorXf> inv(inv_norms_.data(), n);
  Eigen::MatrixXf approx = rows * unit;  // n x b, column-major
  approx.array().colwise() *= inv.array();

  std::vector<std::vector<ScoredHit>> out(b);
  for (std::size_t j = 0; j < b; ++j)
    out[j] = select_exact(queries[j], query_norms[j],
                          std::span<const float>(approx.col(j).data(), n), k);
  return out;
}

std::vector<ChunkRecord> read_chunk_jsonl(const std::filesystem::path& path) {
  std::vector<ChunkRecord> records;
  for_each_jsonl(path, [&](const Json& obj, std::size_t line) {
    if (!obj.contains("id") || !obj["id"].is_string())
      throw FormatError(path.string() + ": missing string field 'id'", line);
    if (!obj.contains("embedding"))
      throw FormatError(path.string() + ": missing field 'embedding'", line);
    ChunkRecord rec;
    rec.id = obj["id"].get<std::string>();
    if (obj.contains("title") && !obj["title"].is_null()) rec.title = obj["title"].get<std::string>();
    if (obj.contains("text") && !obj["text"].is_null()) rec.text = obj["text"].get<std::string>();
    try {
      rec.embedding = json_to_embedding(obj["embedding"], "embedding");
    } catch (const DataError& e) {
      throw FormatError(path.string() + ": " + e.what(), line);
    }
    records.push_back(std::move(rec));
  });
  return records;
}

Store ingest_jsonl(const std::filesystem::path& path, const IngestOptions& options) {
  auto records = read_chunk_jsonl(path);
  if (records.empty()) throw DataError(path.string() + ": no records");
  Store store(records.front().embedding.size());
  std::size_t line = 0;
  for (auto& rec : records) {
    ++line;
    if (options.normalize_on_ingest) {
      double n = std::sqrt(sum_squares<float>(rec.embedding));
      if (n == 0.0) throw ZeroNormError();
      for (float& x : rec.embedding) x = static_cast<float>(x / n);
    }
    try {
      store.insert(std::move(rec));
    } catch (const DataError& e) {
      throw DataError(path.string() + " record " + std::to_string(line) + ": " + e.what());
    }
  }
  return store;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".meta.jsonl";
  return p;
}

void save_store(const Store& store, const std::filesystem::path& path) {
  detail::BinaryWriter w(path);
  w.bytes(kStoreMagic, 4);
  w.u32(static_cast<std::uint32_t>(store.dim()));
  w.u64(store.size());
  std::vector<Json> meta;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& id = store.id(i);
    w.u32(static_cast<std::uint32_t>(id.size()));
    w.bytes(id.data(), id.size());
    for (float x : store.embedding(i)) w.f32(x);
    if (store.title(i) || store.text(i)) {
      Json row{{"id", id}};
      if (store.title(i)) row["title"] = *store.title(i);
      if (store.text(i)) row["text"] = *store.text(i);
      meta.push_back(std::move(row));
    }
  }
  w.finish();
  write_jsonl(sidecar_path(path), meta);
}

Store load_store(const std::filesystem::path& path) {
  using Meta = std::pair<std::optional<std::string>, std::optional<std::string>>;
  std::unordered_map<std::string, Meta> meta;
  auto meta_path = sidecar_path(path);
  if (std::filesystem::exists(meta_path)) {
    for_each_jsonl(meta_path, [&](const Json& obj, std::size_t line) {
      if (!obj.contains("id") || !obj["id"].is_string())
        throw FormatError(meta_path.string() + ": missing id", line);
      auto& slot = meta[obj["id"].get<std::string>()];
      if (obj.contains("title")) slot.first = obj["title"].get<std::string>();
      if (obj.contains("text")) slot.second = obj["text"].get<std::string>();
    });
  }

  detail::BinaryReader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kStoreMagic))
    throw FormatError(path.string() + ": bad magic (expected THS1)", 0);
  std::uint64_t dim_offset = r.offset();
  std::uint32_t dim = r.u32("dimension");
  if (dim == 0) throw FormatError(path.string() + ": zero dimension", dim_offset);
  std::uint64_t count = r.u64("record count");

  Store store(dim);
  for (std::uint64_t rec = 0; rec < count; ++rec) {
    std::uint64_t start = r.offset();
    std::uint32_t id_len = r.u32("id length");
    if (id_len > r.remaining())
      throw FormatError(path.string() + ": id length exceeds file size", start);
    ChunkRecord record;
    record.id.assign(id_len, '\0');
    r.bytes(record.id.data(), id_len, "id");
    if (r.remaining() < std::uint64_t{dim} * 4)
      throw FormatError(path.string() + ": truncated embedding payload for declared dimension " +
                            std::to_string(dim),
                        r.offset());
    record.embedding.resize(dim);
    for (auto& x : record.embedding) x = r.f32("embedding");
    if (auto it = meta.find(record.id); it != meta.end()) {
      record.title = it->second.first;
      record.text = it->second.second;
    }
    try {
      store.insert(std::move(record));
    } catch (const DataError& e) {
      throw FormatError(path.string() + ": " + e.what(), start);
    }
  }
  if (r.remaining() != 0)
    throw FormatError(path.string() + ": trailing bytes after declared records", r.offset());
  return store;
}

}  // namespace treehop
