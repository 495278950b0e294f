#pragma once

// Reference implementations used only by tests. They deliberately avoid the
// library's retrieval and controller code paths.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "treehop/model.hpp"
#include "treehop/store.hpp"

namespace oracle {

struct Hit {
  std::string id;
  long double score;
  std::size_t row;
};

inline long double cosine(const std::vector<long double>& a, const std::vector<long double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

inline std::vector<long double> widen(std::span<const float> v) { return {v.begin(), v.end()}; }
inline std::vector<long double> widen(std::span<const double> v) { return {v.begin(), v.end()}; }

// Score every row, sort everything, take the first k.
inline std::vector<Hit> brute_force_top_k(const treehop::Store& store, std::span<const double> q,
                                          std::size_t k) {
  auto wq = widen(q);
  std::vector<Hit> all;
  for (std::size_t i = 0; i < store.size(); ++i)
    all.push_back({store.id(i), cosine(wq, widen(store.embedding(i))), i});
  std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

inline std::vector<std::string> ids(const std::vector<Hit>& hits) {
  std::vector<std::string> out;
  for (const auto& h : hits) out.push_back(h.id);
  return out;
}

// next = q - c + softmax((Wq q + bq) * (Wk c + bk) / sqrt(d)) * (Wv c + bv),
// spelled out with plain loops.
inline std::vector<double> treehop_step(const treehop::ModelParams& p, const std::vector<double>& q,
                                        const std::vector<double>& c) {
  const std::size_t d = p.dim();
  const auto& t = p.weights;
  std::vector<double> qp(d), kp(d), vp(d), logit(d), out(d);
  for (std::size_t i = 0; i < d; ++i) {
    double a = t.b_query[i], b = t.b_key[i], v = t.b_value[i];
    for (std::size_t j = 0; j < d; ++j) {
      a += t.w_query[i * d + j] * q[j];
      b += t.w_key[i * d + j] * c[j];
      v += t.w_value[i * d + j] * c[j];
    }
    qp[i] = a;
    kp[i] = b;
    vp[i] = v;
    logit[i] = a * b / std::sqrt(static_cast<double>(d));
  }
  double mx = *std::max_element(logit.begin(), logit.end());
  double z = 0;
  for (double l : logit) z += std::exp(l - mx);
  for (std::size_t i = 0; i < d; ++i) out[i] = q[i] - c[i] + std::exp(logit[i] - mx) / z * vp[i];
  return out;
}

// Line-by-line transcription of the multi-hop inference loop with the two
// rule-based stop criteria. Returns the retrieved chunk set C.
inline std::set<std::string> simulate_figure(const treehop::Store& store,
                                             const treehop::ModelParams& params,
                                             const std::vector<double>& q0, std::size_t K,
                                             std::size_t N, bool redundancy, bool layerwise) {
  struct Entry {
    std::vector<double> q;
    std::string c;
    std::vector<double> v;
    long double s;
  };
  std::set<std::string> C;
  std::vector<std::vector<double>> Q{q0};
  for (std::size_t r = 1; r <= N; ++r) {
    std::vector<Entry> S;
    for (const auto& q : Q) {
      for (const auto& hit : brute_force_top_k(store, q, K)) {
        if (!redundancy || !C.contains(hit.id)) {
          auto row = store.embedding(hit.row);
          S.push_back({q, hit.id, std::vector<double>(row.begin(), row.end()), hit.score});
        }
      }
    }
    Q.clear();
    long double t = -std::numeric_limits<long double>::infinity();
    if (layerwise && !S.empty()) {
      std::vector<long double> scores;
      for (const auto& e : S) scores.push_back(e.s);
      std::sort(scores.begin(), scores.end(), std::greater<>());
      t = scores[std::min(K, scores.size()) - 1];
    }
    for (const auto& e : S) {
      if (e.s >= t) {
        C.insert(e.c);
        Q.push_back(treehop_step(params, e.q, e.v));
      }
    }
  }
  return C;
}

}  // namespace oracle
