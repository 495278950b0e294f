#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "treehop/eval.hpp"
#include "treehop/jsonl.hpp"
#include "treehop/store.hpp"
#include "treehop/training.hpp"

namespace treehop {

enum class QuestionType { kInference, kCompositional, kBridgeComparison, kComparison, kOther };

std::string to_string(QuestionType type);
QuestionType question_type_from_string(const std::string& s);

struct Hop {
  std::string sub_query;
  std::string gold_chunk_id;
};

// A multi-hop question with its gold decomposition. hop_context_embs[r] is
// the embedding of hop r's sub-query (teacher-forced query for that hop).
struct DecompositionRecord {
  std::string question_id;
  QuestionType question_type = QuestionType::kOther;
  std::vector<Hop> hops;
  Vector query_emb;
  std::vector<Vector> hop_context_embs;
};

Json to_json(const DecompositionRecord& record);
DecompositionRecord record_from_json(const Json& j);
std::vector<DecompositionRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<DecompositionRecord>& records);

struct CurationReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t kept_pairs = 0;  // sum over kept records of (hops - 1)
  std::map<std::string, std::size_t> dropped;  // "type", "integrity", "unresolvable"
};

Json to_json(const CurationReport& report);

struct CurationResult {
  std::vector<DecompositionRecord> kept;
  CurationReport report;
};

// Keeps inference, compositional and bridge-comparison questions whose
// decomposition has at least two hops, aligned sub-query embeddings and (when
// a store is given) resolvable gold chunks. Drops are counted, never fatal.
CurationResult curate(const std::vector<DecompositionRecord>& records, const Store* store = nullptr);

std::size_t minimum_hops(QuestionType type);

// One example per consecutive gold pair (r, r+1). Negatives are sampled per
// example from mix_seed(seed, record index, hop) excluding the positive and
// the context chunk.
std::vector<TrainExample> build_train_examples(const std::vector<DecompositionRecord>& records,
                                               const Store& store, std::size_t num_negatives,
                                               std::uint64_t seed);

struct SynthConfig {
  std::size_t dim = 64;
  std::size_t num_entities = 2000;
  std::size_t num_relations = 16;
  std::size_t num_chains = 500;
  std::size_t num_distractors = 4500;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

Json to_json(const SynthConfig& config);

// Additive knowledge-graph corpus. Entities and relations are random unit
// vectors; chunk (h, r, t) embeds normalize(e_h + r + e_t + noise). Each chain
// a -r1-> b -r2-> c yields a 2-hop question normalize(e_a + r1 + r2 + noise)
// whose gold chunks are (a, r1, b) and (b, r2, c).
struct SyntheticCorpus {
  std::vector<ChunkRecord> chunks;
  std::vector<DecompositionRecord> records;
  std::vector<EvalQuery> queries;
};

SyntheticCorpus generate_synthetic(const SynthConfig& config);

// Ideal hop-2 query normalize(e_b + r2) for every chain, keyed like queries.
// Recomputed from the config, so it doubles as an analytic oracle in tests.
std::vector<Vector> synthetic_oracle_next_queries(const SynthConfig& config);

void write_chunks(const std::filesystem::path& path, const std::vector<ChunkRecord>& chunks);
void write_eval_queries(const std::filesystem::path& path, const std::vector<EvalQuery>& queries);

}  // namespace treehop
