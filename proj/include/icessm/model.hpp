#pragma once

// FH-Mamba forecaster: encoder, FSSM stack, temporal projection, decoder,
// refinement and head, with losses, training and recursive forecasting.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "icessm/nd/ops.hpp"
#include "icessm/nd/optim.hpp"
#include "icessm/nd/params.hpp"
#include "icessm/sfc.hpp"
#include "icessm/wavelet.hpp"

namespace icessm::model {

using nd::ParamSet;
using nd::Tensor;
using nd::Var;

enum class Head { deterministic, gaussian };
enum class Fusion { hsa, sum, ca_gate };

std::string_view head_name(Head head);
Head parse_head(std::string_view name);  // "det" | "gaussian"
std::string_view fusion_name(Fusion fusion);
Fusion parse_fusion(std::string_view name);  // "hsa" | "sum" | "cagate"

struct ModelConfig {
  std::size_t in_len = 14;
  std::size_t out_len = 14;
  std::size_t width = 32;
  std::size_t n_fssm = 3;
  int n_routes = 2;
  sfc::Kind scan = sfc::Kind::hilbert_temporal_first;
  float lambda = 0.1f;
  Head head = Head::deterministic;
  Fusion fusion = Fusion::hsa;
  wavelet::Basis basis = wavelet::Basis::haar;
  std::size_t state = 8;
  std::size_t expand = 2;

  /// Throws ShapeError on an unusable combination.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

std::string config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown values throw FormatError.
ModelConfig config_from_json(std::string_view text);

/// Spatial size reduction of the encoder.
inline constexpr std::size_t kDownsample = 4;

/// Fresh weights, deterministic in `seed`.
ParamSet init_params(const ModelConfig& config, std::uint64_t seed);
/// Throws ShapeError when names or shapes differ from what `config` needs.
void check_params(const ParamSet& params, const ModelConfig& config);

/// Scan routes over the latent (T, H/4, W/4) volume.
std::vector<sfc::ScanOrder> latent_routes(const ModelConfig& config, std::size_t height,
                                          std::size_t width);

struct Output {
  Var mean;                  // [L_o,1,H,W], unclamped
  std::optional<Var> sigma;  // gaussian head only, > 0
};

/// One FSSM block on a latent z[T,D,h,w]: Mamba routes, frequency branch of
/// z, fusion, depthwise mixing, residual. Weights come from "fssm<index>.".
Var fssm_block(const nd::Binding& bound, const ModelConfig& config, std::size_t index, Var z,
               const std::vector<sfc::ScanOrder>& orders);

/// x: [L_i,1,H,W] on the binding's tape; H and W divisible by kDownsample.
Output forward(const nd::Binding& bound, const ModelConfig& config, Var x);

struct Forecast {
  Tensor mean;                  // [L_o,1,H,W], clamped to [0,1]
  std::optional<Tensor> sigma;  // [L_o,1,H,W], > 0
};

/// Inference-mode forward.
Forecast predict(const ParamSet& params, const ModelConfig& config, const Tensor& x);

/// Feeds each predicted window (clamped) back as the next input; the next
/// input is the last L_i frames of input plus predictions so far.
/// Returns [steps*L_o,1,H,W].
Forecast recursive_forecast(const ParamSet& params, const ModelConfig& config, const Tensor& x,
                            std::size_t steps);

// --- losses (mean reductions) ----------------------------------------------
Var loss_rec(Var pred, Var target);
/// Mean |d pred - d target| over forward differences along H and along W
/// (replicate boundary), averaged over both directions.
Var loss_grad(Var pred, Var target);
Var loss_total(Var pred, Var target, float lambda);
/// Mean of 0.5*log(2*pi*sigma^2) + (y - mu)^2 / (2*sigma^2).
Var loss_nll(Var mu, Var sigma, Var target);

// --- training ----------------------------------------------------------------
struct Sample {
  Tensor input;   // [L_i,1,H,W]
  Tensor target;  // [L_o,1,H,W]
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;  // fraction, clamped mean vs target over all pixels
  float lr = 0.0f;
};

struct TrainOptions {
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 4;
  nd::AdamWOptions adamw{};
  std::uint64_t seed = 0;
  /// Worker threads for per-sample gradients; results do not depend on it.
  std::size_t threads = 1;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ParamSet best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::int64_t steps = 0;
};

/// Loss of one sample under the config's head: loss_total for the
/// deterministic head, loss_nll for the gaussian head.
Var sample_loss(const Output& out, Var target, const ModelConfig& config);

/// One optimizer step on `batch`; returns the mean sample loss before the
/// update. Throws NumericalError naming `step` when the loss is not finite.
double train_step(ParamSet& params, nd::AdamW& optimizer, const ModelConfig& config,
                  const std::vector<const Sample*>& batch, std::int64_t step,
                  std::size_t threads = 1);

/// Mean absolute error of the clamped forecast over all pixels of all samples.
double evaluate_mae(const ParamSet& params, const ModelConfig& config,
                    const std::vector<Sample>& samples, std::size_t threads = 1);

/// AdamW with early stopping on validation MAE; keeps the best epoch's weights.
/// Starts from `initial` when given, else from init_params(config, seed).
TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const ModelConfig& config, const TrainOptions& options,
                  std::optional<ParamSet> initial = std::nullopt);

/// Header "epoch,train_loss,val_mae,lr".
void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

/// ICESSM_THREADS if set to a positive integer, else 1.
std::size_t threads_from_env();

}  // namespace icessm::model
