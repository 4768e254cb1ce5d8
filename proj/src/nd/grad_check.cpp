#include "icessm/nd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "icessm/error.hpp"

namespace icessm::nd {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape(false);
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  const Var out = f(tape, vars);
  if (out.size() != 1) throw ShapeError("grad_check: function must return a scalar");
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
    const Var out = f(tape, vars);
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  std::mt19937_64 rng(options.seed);
  std::vector<Tensor> probe = inputs;
  std::vector<std::vector<std::size_t>> coords(inputs.size());
  std::vector<std::vector<double>> numeric(inputs.size());
  std::vector<std::vector<double>> one_sided_gap(inputs.size());
  const double base = options.kink_tolerance > 0.0 ? evaluate(f, inputs) : 0.0;
  double g_max = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::size_t n = inputs[k].size();
    coords[k].resize(n);
    std::iota(coords[k].begin(), coords[k].end(), std::size_t{0});
    if (options.max_probes != 0 && options.max_probes < n) {
      std::shuffle(coords[k].begin(), coords[k].end(), rng);
      coords[k].resize(options.max_probes);
    }
    for (const std::size_t i : coords[k]) {
      const float x0 = inputs[k][i];
      const float hi = static_cast<float>(x0 + options.step);
      const float lo = static_cast<float>(x0 - options.step);
      probe[k][i] = hi;
      const double up = evaluate(f, probe);
      probe[k][i] = lo;
      const double down = evaluate(f, probe);
      probe[k][i] = x0;
      numeric[k].push_back((up - down) / (static_cast<double>(hi) - static_cast<double>(lo)));
      if (options.kink_tolerance > 0.0) {
        const double right = (up - base) / (static_cast<double>(hi) - x0);
        const double left = (base - down) / (x0 - static_cast<double>(lo));
        one_sided_gap[k].push_back(std::fabs(right - left));
      }
      g_max = std::max(g_max, std::fabs(numeric[k].back()));
    }
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t j = 0; j < coords[k].size(); ++j) {
      const std::size_t i = coords[k][j];
      const double a = analytic[k][i];
      const double num = numeric[k][j];
      if (std::isnan(a) || std::isnan(num)) {
        throw NumericalError("grad_check: NaN gradient at input " + std::to_string(k) +
                             " index " + std::to_string(i));
      }
      const double denom = std::max({std::fabs(a), std::fabs(num), 0.1 * g_max, 1e-6});
      if (options.kink_tolerance > 0.0) {
        if (one_sided_gap[k][j] > options.kink_tolerance * denom) {
          ++report.skipped;
          continue;
        }
      }
      const double abs_err = std::fabs(a - num);
      const double rel = abs_err / denom;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = k;
        report.worst_index = i;
      }
      ++report.probes;
    }
  }
  return report;
}

}  // namespace icessm::nd
