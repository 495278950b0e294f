#include "treehop/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <tuple>
#include <unordered_set>

#include "treehop/errors.hpp"
#include "treehop/parallel.hpp"

namespace treehop {

std::string to_string(QuestionType type) {
  switch (type) {
    case QuestionType::kInference: return "inference";
    case QuestionType::kCompositional: return "compositional";
    case QuestionType::kBridgeComparison: return "bridge_comparison";
    case QuestionType::kComparison: return "comparison";
    case QuestionType::kOther: return "other";
  }
  return "other";
}

QuestionType question_type_from_string(const std::string& s) {
  if (s == "inference") return QuestionType::kInference;
  if (s == "compositional") return QuestionType::kCompositional;
  if (s == "bridge_comparison") return QuestionType::kBridgeComparison;
  if (s == "comparison") return QuestionType::kComparison;
  return QuestionType::kOther;
}

Json to_json(const DecompositionRecord& r) {
  Json hops = Json::array();
  for (const auto& h : r.hops) hops.push_back({{"sub_query", h.sub_query}, {"gold_chunk_id", h.gold_chunk_id}});
  Json ctx = Json::array();
  for (const auto& v : r.hop_context_embs) ctx.push_back(vector_to_json(v));
  return Json{{"question_id", r.question_id},
              {"question_type", to_string(r.question_type)},
              {"hops", std::move(hops)},
              {"query_emb", vector_to_json(r.query_emb)},
              {"hop_context_embs", std::move(ctx)}};
}

DecompositionRecord record_from_json(const Json& j) {
  DecompositionRecord r;
  r.question_id = j.at("question_id").get<std::string>();
  r.question_type = question_type_from_string(j.value("question_type", std::string("other")));
  for (const auto& h : j.at("hops"))
    r.hops.push_back({h.value("sub_query", std::string()), h.at("gold_chunk_id").get<std::string>()});
  r.query_emb = json_to_vector(j.at("query_emb"), "query_emb");
  if (j.contains("hop_context_embs"))
    for (const auto& v : j["hop_context_embs"]) r.hop_context_embs.push_back(json_to_vector(v, "hop_context_embs"));
  return r;
}

std::vector<DecompositionRecord> read_records(const std::filesystem::path& path) {
  std::vector<DecompositionRecord> out;
  for_each_jsonl(path, [&](const Json& obj, std::size_t line) {
    try {
      out.push_back(record_from_json(obj));
    } catch (const Json::exception& e) {
      throw FormatError(path.string() + ": " + e.what(), line);
    } catch (const DataError& e) {
      throw FormatError(path.string() + ": " + e.what(), line);
    }
  });
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<DecompositionRecord>& records) {
  std::vector<Json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  write_jsonl(path, rows);
}

Json to_json(const CurationReport& r) {
  return Json{{"input", r.input}, {"kept", r.kept}, {"kept_pairs", r.kept_pairs}, {"dropped", r.dropped}};
}

std::size_t minimum_hops(QuestionType type) {
  switch (type) {
    case QuestionType::kInference:
    case QuestionType::kCompositional:
    case QuestionType::kBridgeComparison:
      return 2;
    default:
      return 0;
  }
}

CurationResult curate(const std::vector<DecompositionRecord>& records, const Store* store) {
  CurationResult out;
  out.report.input = records.size();
  for (const char* reason : {"type", "integrity", "unresolvable"}) out.report.dropped[reason] = 0;

  for (const auto& r : records) {
    const auto t = r.question_type;
    if (t != QuestionType::kInference && t != QuestionType::kCompositional &&
        t != QuestionType::kBridgeComparison) {
      ++out.report.dropped["type"];
      continue;
    }
    bool intact = r.hops.size() >= minimum_hops(t) && r.hop_context_embs.size() == r.hops.size() &&
                  !r.query_emb.empty();
    if (intact && store) {
      intact = r.query_emb.size() == store->dim();
      for (const auto& v : r.hop_context_embs) intact = intact && v.size() == store->dim();
    }
    if (!intact) {
      ++out.report.dropped["integrity"];
      continue;
    }
    if (store) {
      bool resolvable = std::all_of(r.hops.begin(), r.hops.end(),
                                    [&](const Hop& h) { return store->find(h.gold_chunk_id).has_value(); });
      if (!resolvable) {
        ++out.report.dropped["unresolvable"];
        continue;
      }
    }
    out.kept.push_back(r);
    out.report.kept_pairs += r.hops.size() - 1;
  }
  out.report.kept = out.kept.size();
  return out;
}

std::vector<TrainExample> build_train_examples(const std::vector<DecompositionRecord>& records,
                                               const Store& store, std::size_t num_negatives,
                                               std::uint64_t seed) {
  std::vector<TrainExample> out;
  for (std::size_t ri = 0; ri < records.size(); ++ri) {
    const auto& rec = records[ri];
    for (std::size_t r = 0; r + 1 < rec.hops.size(); ++r) {
      const std::string& context_id = rec.hops[r].gold_chunk_id;
      const std::string& positive_id = rec.hops[r + 1].gold_chunk_id;
      std::size_t context_row = store.index_of(context_id);
      store.index_of(positive_id);

      TrainExample ex;
      if (r == 0) {
        ex.query_emb = rec.query_emb;
      } else {
        if (r >= rec.hop_context_embs.size())
          throw DataError("record " + rec.question_id + " lacks a sub-query embedding for hop " +
                          std::to_string(r + 1));
        ex.query_emb = rec.hop_context_embs[r];
      }
      if (ex.query_emb.size() != store.dim()) throw DimensionError(store.dim(), ex.query_emb.size());
      ex.context_emb = store.embedding_f64(context_row);
      ex.positive_id = positive_id;
      ex.context_id = context_id;
      Rng rng(mix_seed(seed, ri, r));
      ex.negative_ids = sample_negatives(store, {positive_id, context_id}, num_negatives, rng);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

void SynthConfig::validate() const {
  if (dim < 1) throw InvalidDimensionError();
  if (num_entities < 1 || num_relations < 1 || num_chains < 1)
    throw ConfigError("synthetic counts must all be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  if (num_entities < 3 * num_chains) throw ConfigError("num_entities must be >= 3 * num_chains");
  const double triples = static_cast<double>(num_entities) * static_cast<double>(num_entities - 1) *
                         static_cast<double>(num_relations);
  if (static_cast<double>(num_distractors + 2 * num_chains) > 0.5 * triples)
    throw ConfigError("too many distractors for the entity/relation vocabulary");
}

Json to_json(const SynthConfig& c) {
  return Json{{"dim", c.dim},
              {"num_entities", c.num_entities},
              {"num_relations", c.num_relations},
              {"num_chains", c.num_chains},
              {"num_distractors", c.num_distractors},
              {"noise_sigma", c.noise_sigma},
              {"seed", c.seed}};
}

namespace {

double standard_normal(Rng& rng) {
  // Box-Muller on the portable uniform; one variate per call.
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vector random_unit(std::size_t d, Rng& rng) {
  Vector v(d);
  double n = 0.0;
  do {
    n = 0.0;
    for (double& x : v) {
      x = standard_normal(rng);
      n += x * x;
    }
  } while (n == 0.0);
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

Vector normalized(Vector v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw ZeroNormError();
  for (double& x : v) x /= n;
  return v;
}

// Sum of unit vectors plus isotropic noise, normalized, rounded to f32.
Vector compose(std::initializer_list<const Vector*> parts, double sigma, Rng& rng) {
  const std::size_t d = (*parts.begin())->size();
  Vector v(d, 0.0);
  for (const Vector* p : parts)
    for (std::size_t i = 0; i < d; ++i) v[i] += (*p)[i];
  if (sigma > 0.0)
    for (double& x : v) x += sigma * standard_normal(rng);
  v = normalized(std::move(v));
  for (double& x : v) x = static_cast<float>(x);
  return v;
}

std::string chunk_id(std::size_t h, std::size_t r, std::size_t t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "e%05zu-r%03zu-e%05zu", h, r, t);
  return buf;
}

std::string entity_name(std::size_t e) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "e%05zu", e);
  return buf;
}

struct Chain {
  std::size_t a, b, c, r1, r2;
};

struct Vocabulary {
  std::vector<Vector> entities;
  std::vector<Vector> relations;
  std::vector<Chain> chains;
};

// Draw order is part of the determinism contract: entities, relations,
// entity permutation, chain relations. Noise and distractors come after.
Vocabulary draw_vocabulary(const SynthConfig& c, Rng& rng) {
  Vocabulary v;
  for (std::size_t i = 0; i < c.num_entities; ++i) v.entities.push_back(random_unit(c.dim, rng));
  for (std::size_t i = 0; i < c.num_relations; ++i) v.relations.push_back(random_unit(c.dim, rng));
  std::vector<std::size_t> perm(c.num_entities);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
  for (std::size_t k = 0; k < c.num_chains; ++k) {
    Chain ch{perm[3 * k], perm[3 * k + 1], perm[3 * k + 2], 0, 0};
    ch.r1 = rng() % c.num_relations;
    ch.r2 = rng() % c.num_relations;
    while (c.num_relations > 1 && ch.r2 == ch.r1) ch.r2 = rng() % c.num_relations;
    v.chains.push_back(ch);
  }
  return v;
}

std::string question_id(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "q%06zu", k);
  return buf;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SynthConfig& c) {
  c.validate();
  Rng rng(c.seed);
  Vocabulary vocab = draw_vocabulary(c, rng);
  const auto& E = vocab.entities;
  const auto& R = vocab.relations;

  SyntheticCorpus out;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> used;
  auto add_chunk = [&](std::size_t h, std::size_t r, std::size_t t) {
    Vector emb = compose({&E[h], &R[r], &E[t]}, c.noise_sigma, rng);
    ChunkRecord rec;
    rec.id = chunk_id(h, r, t);
    rec.title = entity_name(h);
    rec.text = entity_name(h) + " r" + std::to_string(r) + " " + entity_name(t);
    rec.embedding.assign(emb.begin(), emb.end());
    out.chunks.push_back(std::move(rec));
    return out.chunks.back().id;
  };

  for (std::size_t k = 0; k < vocab.chains.size(); ++k) {
    const Chain& ch = vocab.chains[k];
    used.insert({ch.a, ch.r1, ch.b});
    used.insert({ch.b, ch.r2, ch.c});
    std::string first = add_chunk(ch.a, ch.r1, ch.b);
    std::string second = add_chunk(ch.b, ch.r2, ch.c);
    Vector query = compose({&E[ch.a], &R[ch.r1], &R[ch.r2]}, c.noise_sigma, rng);
    Vector sub2 = compose({&E[ch.b], &R[ch.r2]}, 0.0, rng);

    DecompositionRecord rec;
    rec.question_id = question_id(k);
    rec.question_type = QuestionType::kCompositional;
    rec.hops = {{entity_name(ch.a) + " r" + std::to_string(ch.r1) + " ?", first},
                {entity_name(ch.b) + " r" + std::to_string(ch.r2) + " ?", second}};
    rec.query_emb = query;
    rec.hop_context_embs = {query, sub2};
    out.records.push_back(std::move(rec));
    out.queries.push_back({question_id(k), query, {first, second}});
  }

  // A distractor holding a chain's (entity, relation) pair would tie with the
  // gold chunk under the ideal query, so those pairs are kept out.
  std::set<std::pair<std::size_t, std::size_t>> reserved;
  for (const Chain& ch : vocab.chains) {
    reserved.insert({ch.a, ch.r1});
    reserved.insert({ch.b, ch.r2});
  }
  for (std::size_t k = 0; k < c.num_distractors;) {
    std::size_t h = rng() % c.num_entities;
    std::size_t r = rng() % c.num_relations;
    std::size_t t = rng() % c.num_entities;
    if (h == t || reserved.contains({h, r}) || reserved.contains({t, r})) continue;
    if (!used.insert({h, r, t}).second) continue;
    add_chunk(h, r, t);
    ++k;
  }
  return out;
}

std::vector<Vector> synthetic_oracle_next_queries(const SynthConfig& c) {
  c.validate();
  Rng rng(c.seed);
  Vocabulary vocab = draw_vocabulary(c, rng);
  std::vector<Vector> out;
  for (const auto& ch : vocab.chains) {
    Vector v(c.dim);
    for (std::size_t i = 0; i < c.dim; ++i) v[i] = vocab.entities[ch.b][i] + vocab.relations[ch.r2][i];
    out.push_back(normalized(std::move(v)));
  }
  return out;
}

void write_chunks(const std::filesystem::path& path, const std::vector<ChunkRecord>& chunks) {
  std::vector<Json> rows;
  rows.reserve(chunks.size());
  for (const auto& ch : chunks) {
    Json j{{"id", ch.id}};
    if (ch.title) j["title"] = *ch.title;
    if (ch.text) j["text"] = *ch.text;
    j["embedding"] = embedding_to_json(ch.embedding);
    rows.push_back(std::move(j));
  }
  write_jsonl(path, rows);
}

void write_eval_queries(const std::filesystem::path& path, const std::vector<EvalQuery>& queries) {
  std::vector<Json> rows;
  rows.reserve(queries.size());
  for (const auto& q : queries) rows.push_back(to_json(q));
  write_jsonl(path, rows);
}

}  // namespace treehop
