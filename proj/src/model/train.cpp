#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "icessm/error.hpp"
#include "icessm/model.hpp"

namespace icessm::model {

using nd::Tape;

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + nd::to_string(a.shape()) + " vs " +
                     nd::to_string(b.shape()));
  }
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// handled by exactly one worker; the first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

bool all_finite(const ParamSet& p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!p[i].all_finite()) return false;
  return true;
}

}  // namespace

Var loss_rec(Var pred, Var target) {
  require_same(pred, target, "loss_rec");
  return nd::mean(nd::abs(nd::sub(pred, target)));
}

Var loss_grad(Var pred, Var target) {
  require_same(pred, target, "loss_grad");
  const std::size_t rank = pred.value().rank();
  if (rank < 2) throw ShapeError("loss_grad: need [..., H, W]");
  Var total{};
  for (std::size_t axis : {rank - 2, rank - 1}) {
    Var term = nd::mean(nd::abs(nd::sub(nd::forward_diff(pred, axis), nd::forward_diff(target, axis))));
    total = axis == rank - 2 ? term : nd::add(total, term);
  }
  return nd::scale(total, 0.5f);
}

Var loss_total(Var pred, Var target, float lambda) {
  if (!(lambda >= 0.0f)) throw ShapeError("loss_total: lambda must be >= 0");
  Var rec = loss_rec(pred, target);
  if (lambda == 0.0f) return rec;
  return nd::add(rec, nd::scale(loss_grad(pred, target), lambda));
}

Var loss_nll(Var mu, Var sigma, Var target) {
  require_same(mu, target, "loss_nll");
  require_same(sigma, target, "loss_nll");
  for (float s : sigma.value().values()) {
    if (!(s > 0.0f)) throw ShapeError("loss_nll: sigma must be > 0");
  }
  Var log_sigma = nd::log(sigma);
  Var z = nd::mul(nd::sub(target, mu), nd::exp(nd::scale(log_sigma, -1.0f)));
  Var per_pixel = nd::add(log_sigma, nd::scale(nd::square(z), 0.5f));
  return nd::add_scalar(nd::mean(per_pixel), static_cast<float>(kHalfLog2Pi));
}

Var sample_loss(const Output& out, Var target, const ModelConfig& config) {
  if (config.head == Head::gaussian) {
    if (!out.sigma) throw ShapeError("sample_loss: gaussian head without sigma");
    return loss_nll(out.mean, *out.sigma, target);
  }
  return loss_total(out.mean, target, config.lambda);
}

double train_step(ParamSet& params, nd::AdamW& optimizer, const ModelConfig& config,
                  const std::vector<const Sample*>& batch, std::int64_t step, std::size_t threads) {
  if (batch.empty()) throw ShapeError("train_step: empty batch");
  std::vector<ParamSet> grads(batch.size());
  std::vector<double> losses(batch.size());
  try {
    parallel_for(batch.size(), threads, [&](std::size_t i) {
      Tape tape;
      nd::Binding bound(tape, params);
      const Output out = forward(bound, config, tape.constant(batch[i]->input));
      Var loss = sample_loss(out, tape.constant(batch[i]->target), config);
      losses[i] = loss.value()[0];
      if (!std::isfinite(losses[i])) return;
      tape.backward(loss);
      grads[i] = params.zeros_like();
      bound.accumulate_into(grads[i]);
    });
  } catch (const NumericalError& e) {
    throw NumericalError("training diverged at step " + std::to_string(step) + ": " + e.what());
  }
  // Fixed-order reduction keeps the result independent of the thread count.
  double mean_loss = 0.0;
  for (double l : losses) mean_loss += l;
  mean_loss /= static_cast<double>(batch.size());
  if (!std::isfinite(mean_loss)) {
    throw NumericalError("training diverged: non-finite loss at step " + std::to_string(step));
  }
  ParamSet total = params.zeros_like();
  const float inv = 1.0f / static_cast<float>(batch.size());
  for (const ParamSet& g : grads)
    for (std::size_t k = 0; k < total.size(); ++k)
      for (std::size_t e = 0; e < total[k].size(); ++e) total[k][e] += g[k][e] * inv;
  if (!all_finite(total)) {
    throw NumericalError("training diverged: non-finite gradient at step " + std::to_string(step));
  }
  optimizer.step(params, total);
  return mean_loss;
}

double evaluate_mae(const ParamSet& params, const ModelConfig& config,
                    const std::vector<Sample>& samples, std::size_t threads) {
  if (samples.empty()) throw ShapeError("evaluate_mae: no samples");
  std::vector<double> sums(samples.size());
  std::vector<std::size_t> counts(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const Forecast f = predict(params, config, samples[i].input);
    const Tensor& y = samples[i].target;
    if (f.mean.shape() != y.shape()) throw ShapeError("evaluate_mae: target shape mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) s += std::fabs(f.mean[k] - y[k]);
    sums[i] = s;
    counts[i] = y.size();
  });
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    total += sums[i];
    n += counts[i];
  }
  return total / static_cast<double>(n);
}

TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const ModelConfig& config, const TrainOptions& options,
                  std::optional<ParamSet> initial) {
  config.validate();
  if (train_set.empty()) throw ShapeError("train: empty training split");
  if (val_set.empty()) throw ShapeError("train: empty validation split");
  if (options.batch_size == 0) throw ShapeError("train: batch size must be >= 1");

  ParamSet params = initial ? std::move(*initial) : init_params(config, options.seed);
  check_params(params, config);
  nd::AdamW optimizer(params, options.adamw);
  std::mt19937_64 rng(options.seed ^ 0x5eed5eed5eedULL);

  TrainResult result;
  result.best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + options.batch_size); ++i)
        batch.push_back(&train_set[order[i]]);
      loss_sum += train_step(params, optimizer, config, batch, result.steps, options.threads);
      ++result.steps;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    try {
      rec.val_mae = evaluate_mae(params, config, val_set, options.threads);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged by step " + std::to_string(result.steps - 1) +
                           " (validation): " + e.what());
    }
    rec.lr = optimizer.options().lr;
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    if (rec.val_mae < best_val) {
      best_val = rec.val_mae;
      result.best = params;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= options.patience) {
      break;
    }
  }
  return result;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,train_loss,val_mae,lr\n";
  char line[160];
  for (const EpochRecord& r : history) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.6g\n", r.epoch, r.train_loss, r.val_mae,
                  static_cast<double>(r.lr));
    out << line;
  }
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("ICESSM_THREADS");
  if (!raw) return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || v < 1) return 1;
  return static_cast<std::size_t>(std::min<long>(v, 256));
}

}  // namespace icessm::model
