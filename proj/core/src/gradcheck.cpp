#include "treehop/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "treehop/model.hpp"
#include "treehop/parallel.hpp"

namespace treehop {

Json to_json(const GradCheckReport& r) {
  return Json{{"max_relative_error", r.max_relative_error},
              {"instances", r.instances},
              {"coordinates", r.coordinates},
              {"worst", r.worst},
              {"seconds", r.seconds},
              {"passed", r.passed}};
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

Vector random_vector(std::size_t n, double scale, Rng& rng) {
  Vector v(n);
  for (double& x : v) x = scale * (2.0 * uniform01(rng) - 1.0);
  return v;
}

double linear_loss(const ModelParams& p, const Vector& q, const Vector& c, const Vector& u) {
  ForwardTrace tr = next_query(p, q, c);
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * tr.next_query[i];
  return s;
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  const char* names[] = {"w_query", "b_query", "w_key", "b_key", "w_value", "b_value"};
  const double h = options.step;

  for (std::size_t d : options.dims) {
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
      Rng rng(mix_seed(options.seed, d, trial));
      ModelParams p = init_params(d, rng(), 0.0);
      for (Vector* b : {&p.weights.b_query, &p.weights.b_key, &p.weights.b_value})
        *b = random_vector(d, 0.5, rng);
      Vector q = random_vector(d, 1.0, rng);
      Vector c = random_vector(d, 1.0, rng);
      Vector u = random_vector(d, 1.0, rng);

      Gradients g = backward(p, next_query(p, q, c), u);
      ++report.instances;

      auto check = [&](double analytic, double& slot, auto eval, const std::string& where) {
        const double saved = slot;
        slot = saved + h;
        const double plus = eval();
        slot = saved - h;
        const double minus = eval();
        slot = saved;
        const double numeric = (plus - minus) / (2.0 * h);
        const double err = relative_error(analytic, numeric);
        ++report.coordinates;
        if (report.worst.empty() || err > report.max_relative_error) {
          report.max_relative_error = err;
          report.worst = "d=" + std::to_string(d) + " trial=" + std::to_string(trial) + " " + where;
        }
      };
      auto eval = [&] { return linear_loss(p, q, c, u); };

      auto params = p.weights.tensors();
      auto grads = g.params.tensors();
      for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < params[k]->size(); ++i)
          check((*grads[k])[i], (*params[k])[i], eval, std::string(names[k]) + "[" + std::to_string(i) + "]");
      for (std::size_t i = 0; i < d; ++i) check(g.query[i], q[i], eval, "q[" + std::to_string(i) + "]");
      for (std::size_t i = 0; i < d; ++i) check(g.context[i], c[i], eval, "c[" + std::to_string(i) + "]");
    }
  }
  report.passed = report.max_relative_error < options.tolerance;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace treehop
