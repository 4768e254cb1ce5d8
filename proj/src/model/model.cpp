#include "icessm/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "icessm/error.hpp"
#include "icessm/hsa.hpp"
#include "icessm/ssm.hpp"
#include "json.hpp"

namespace icessm::model {

using nd::Shape;
using nd::Tape;
using json = nlohmann::json;

std::string_view head_name(Head head) {
  return head == Head::deterministic ? "det" : "gaussian";
}

Head parse_head(std::string_view name) {
  if (name == "det") return Head::deterministic;
  if (name == "gaussian") return Head::gaussian;
  throw ShapeError("unknown head '" + std::string(name) + "' (expected det or gaussian)");
}

std::string_view fusion_name(Fusion fusion) {
  switch (fusion) {
    case Fusion::hsa: return "hsa";
    case Fusion::sum: return "sum";
    case Fusion::ca_gate: return "cagate";
  }
  return "hsa";
}

Fusion parse_fusion(std::string_view name) {
  if (name == "hsa") return Fusion::hsa;
  if (name == "sum") return Fusion::sum;
  if (name == "cagate") return Fusion::ca_gate;
  throw ShapeError("unknown fusion '" + std::string(name) + "' (expected hsa, sum or cagate)");
}

void ModelConfig::validate() const {
  if (in_len == 0 || out_len == 0) throw ShapeError("config: in_len and out_len must be >= 1");
  if (width < 2 || width % 2) throw ShapeError("config: width must be even and >= 2");
  if (n_fssm == 0) throw ShapeError("config: n_fssm must be >= 1");
  if (n_routes != 1 && n_routes != 2 && n_routes != 4) {
    throw ShapeError("config: n_routes must be 1, 2 or 4");
  }
  if (!(lambda >= 0.0f)) throw ShapeError("config: lambda must be >= 0");
  if (state == 0 || expand == 0) throw ShapeError("config: state and expand must be >= 1");
}

std::string config_to_json(const ModelConfig& c) {
  json j;
  j["in_len"] = c.in_len;
  j["out_len"] = c.out_len;
  j["width"] = c.width;
  j["n_fssm"] = c.n_fssm;
  j["n_routes"] = c.n_routes;
  j["scan"] = std::string(sfc::kind_name(c.scan));
  j["lambda"] = c.lambda;
  j["head"] = std::string(head_name(c.head));
  j["fusion"] = std::string(fusion_name(c.fusion));
  j["wavelet"] = "haar";
  j["state"] = c.state;
  j["expand"] = c.expand;
  return j.dump(2) + "\n";
}

ModelConfig config_from_json(std::string_view text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.in_len = j.value("in_len", c.in_len);
    c.out_len = j.value("out_len", c.out_len);
    c.width = j.value("width", c.width);
    c.n_fssm = j.value("n_fssm", c.n_fssm);
    c.n_routes = j.value("n_routes", c.n_routes);
    c.scan = sfc::parse_kind(j.value("scan", std::string(sfc::kind_name(c.scan))));
    c.lambda = j.value("lambda", c.lambda);
    c.head = parse_head(j.value("head", std::string(head_name(c.head))));
    c.fusion = parse_fusion(j.value("fusion", std::string(fusion_name(c.fusion))));
    if (j.value("wavelet", std::string("haar")) != "haar") {
      throw FormatError("config: only the haar wavelet is available");
    }
    c.state = j.value("state", c.state);
    c.expand = j.value("expand", c.expand);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::size_t norm_groups(std::size_t channels) {
  if (channels % 4 == 0) return 4;
  return channels % 2 == 0 ? 2 : 1;
}

std::string block_prefix(std::size_t i) { return "fssm" + std::to_string(i) + "."; }

Tensor normal(Shape shape, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = dist(rng);
  return t;
}

float he(std::size_t fan_in) { return std::sqrt(2.0f / static_cast<float>(fan_in)); }

// LayerNorm over channels at every pixel of x[N,C,H,W].
Var channel_layernorm(Var x, Var gamma, Var beta) {
  return nd::permute(nd::layernorm(nd::permute(x, {0, 2, 3, 1}), gamma, beta), {0, 3, 1, 2});
}

Var rows_of(Var volume) {
  const Shape& s = volume.shape();
  return nd::reshape(nd::permute(volume, {0, 2, 3, 1}), {s[0] * s[2] * s[3], s[1]});
}

Var volume_of(Var rows, const Shape& s) {
  return nd::permute(nd::reshape(rows, {s[0], s[2], s[3], s[1]}), {0, 3, 1, 2});
}

}  // namespace

Var fssm_block(const nd::Binding& bound, const ModelConfig& config, std::size_t index, Var z,
               const std::vector<sfc::ScanOrder>& orders) {
  const std::string p = block_prefix(index);
  const Shape shape = z.shape();
  const auto routed = ssm::mamba_block(rows_of(z), orders, ssm::bind_mamba(bound, p + "mamba."));
  std::vector<Var> vols;
  for (const Var& r : routed) vols.push_back(volume_of(r, shape));
  Var x1 = vols[0], x2 = vols[0];
  if (vols.size() == 2) {
    x2 = vols[1];
  } else if (vols.size() == 4) {
    // Forward routes and backward routes each averaged.
    x1 = nd::scale(nd::add(vols[0], vols[2]), 0.5f);
    x2 = nd::scale(nd::add(vols[1], vols[3]), 0.5f);
  }
  Var xf = wavelet::freq_branch(z, bound[p + "freq.gains"]);
  Var fused;
  switch (config.fusion) {
    case Fusion::hsa: fused = hsa::hsa_fuse(x1, x2, xf, hsa::bind_hsa(bound, p)); break;
    case Fusion::sum: fused = hsa::sum_fuse(x1, x2, xf); break;
    case Fusion::ca_gate: fused = hsa::ca_gate_fuse(x1, x2, xf, hsa::bind_ca_gate(bound, p)); break;
  }
  Var mixed = nd::leaky_relu(
      nd::depthwise_conv2d(fused, bound[p + "dw.k"], bound[p + "dw.b"], nd::PadMode::zero));
  return nd::add(z, mixed);
}

ParamSet init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ParamSet p;
  const std::size_t d = config.width, half = d / 2;

  p.add("enc0.w", normal({half, 1, 3, 3}, he(9), rng));
  p.add("enc0.b", Tensor({half}, 0.0f));
  p.add("enc0.ln.gamma", Tensor({half}, 1.0f));
  p.add("enc0.ln.beta", Tensor({half}, 0.0f));
  p.add("enc1.w", normal({d, half, 3, 3}, he(half * 9), rng));
  p.add("enc1.b", Tensor({d}, 0.0f));
  p.add("enc1.ln.gamma", Tensor({d}, 1.0f));
  p.add("enc1.ln.beta", Tensor({d}, 0.0f));

  for (std::size_t i = 0; i < config.n_fssm; ++i) {
    const std::string pre = block_prefix(i);
    ssm::init_mamba(p, pre + "mamba.",
                    {.width = d, .expand = config.expand, .state = config.state, .conv_kernel = 3},
                    rng);
    p.add(pre + "freq.gains", Tensor({d, 3}, 1.0f));
    if (config.fusion == Fusion::hsa) hsa::init_hsa(p, pre, d, rng);
    if (config.fusion == Fusion::ca_gate) hsa::init_ca_gate(p, pre, d, rng);
    p.add(pre + "dw.k", normal({d, 1, 3, 3}, 0.1f * he(9), rng));
    p.add(pre + "dw.b", Tensor({d}, 0.0f));
  }

  // Temporal projection starts as nearest-frame selection (identity when
  // in_len == out_len).
  Tensor tw({config.in_len, config.out_len}, 0.0f);
  for (std::size_t j = 0; j < config.out_len; ++j) {
    const std::size_t i = j * config.in_len / config.out_len;
    tw.at({i, j}) = 1.0f;
  }
  p.add("tproj.w", std::move(tw));
  p.add("tproj.b", Tensor({config.out_len}, 0.0f));

  p.add("dec0.w", normal({d, half, 4, 4}, he(d * 4), rng));
  p.add("dec0.b", Tensor({half}, 0.0f));
  p.add("dec0.gn.gamma", Tensor({half}, 1.0f));
  p.add("dec0.gn.beta", Tensor({half}, 0.0f));
  p.add("dec1.w", normal({half, half, 4, 4}, he(half * 4), rng));
  p.add("dec1.b", Tensor({half}, 0.0f));
  p.add("dec1.gn.gamma", Tensor({half}, 1.0f));
  p.add("dec1.gn.beta", Tensor({half}, 0.0f));

  p.add("ref0.k", normal({half, 1, 3, 3}, he(9), rng));
  p.add("ref0.b", Tensor({half}, 0.0f));
  p.add("ref1.k", normal({half, 1, 3, 3}, he(9), rng));
  p.add("ref1.b", Tensor({half}, 0.0f));

  const std::size_t out_ch = config.head == Head::gaussian ? 2 : 1;
  p.add("head.w", normal({out_ch, half, 1, 1}, 1.0f / std::sqrt(static_cast<float>(half)), rng));
  p.add("head.b", Tensor({out_ch}, 0.0f));
  return p;
}

void check_params(const ParamSet& params, const ModelConfig& config) {
  const ParamSet expected = init_params(config, 0);
  if (params.size() != expected.size()) {
    throw ShapeError("parameters: " + std::to_string(params.size()) + " tensors, config needs " +
                     std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params.name(i) != expected.name(i) || params[i].shape() != expected[i].shape()) {
      throw ShapeError("parameters: '" + params.name(i) + "' " + nd::to_string(params[i].shape()) +
                       " does not match config ('" + expected.name(i) + "' " +
                       nd::to_string(expected[i].shape()) + ")");
    }
  }
}

std::vector<sfc::ScanOrder> latent_routes(const ModelConfig& config, std::size_t height,
                                          std::size_t width) {
  const sfc::Dims dims{config.in_len, height / kDownsample, width / kDownsample};
  return sfc::routes(sfc::make_order(config.scan, dims), config.n_routes);
}

Output forward(const nd::Binding& bound, const ModelConfig& config, Var x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[0] != config.in_len || s[1] != 1) {
    throw ShapeError("forward: input " + nd::to_string(s) + ", expected [" +
                     std::to_string(config.in_len) + ",1,H,W]");
  }
  if (s[2] % kDownsample || s[3] % kDownsample || s[2] == 0 || s[3] == 0) {
    throw ShapeError("forward: spatial size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                     " not divisible by " + std::to_string(kDownsample));
  }
  const nd::Conv2dOptions down{.stride = 2, .padding = 1};

  Var z = nd::conv2d(x, bound["enc0.w"], bound["enc0.b"], down);
  z = nd::leaky_relu(channel_layernorm(z, bound["enc0.ln.gamma"], bound["enc0.ln.beta"]));
  z = nd::conv2d(z, bound["enc1.w"], bound["enc1.b"], down);
  z = nd::leaky_relu(channel_layernorm(z, bound["enc1.ln.gamma"], bound["enc1.ln.beta"]));

  const auto orders = latent_routes(config, s[2], s[3]);
  for (std::size_t i = 0; i < config.n_fssm; ++i) z = fssm_block(bound, config, i, z, orders);

  // [T,D,h,w] -> [D,h,w,T] -> mix frames -> [L_o,D,h,w]
  z = nd::linear(nd::permute(z, {1, 2, 3, 0}), bound["tproj.w"], bound["tproj.b"]);
  z = nd::permute(z, {3, 0, 1, 2});

  z = nd::conv_transpose2d(z, bound["dec0.w"], bound["dec0.b"], 2, 1);
  const std::size_t half = config.width / 2;
  z = nd::leaky_relu(
      nd::groupnorm(z, norm_groups(half), bound["dec0.gn.gamma"], bound["dec0.gn.beta"]));
  z = nd::conv_transpose2d(z, bound["dec1.w"], bound["dec1.b"], 2, 1);
  z = nd::leaky_relu(
      nd::groupnorm(z, norm_groups(half), bound["dec1.gn.gamma"], bound["dec1.gn.beta"]));

  z = nd::leaky_relu(
      nd::depthwise_conv2d(z, bound["ref0.k"], bound["ref0.b"], nd::PadMode::replicate));
  z = nd::depthwise_conv2d(z, bound["ref1.k"], bound["ref1.b"], nd::PadMode::replicate);

  Var head = nd::conv2d(z, bound["head.w"], bound["head.b"], {});
  if (config.head == Head::deterministic) return {head, std::nullopt};
  Var mean = nd::slice(head, 1, 0, 1);
  Var sigma = nd::add_scalar(nd::softplus(nd::slice(head, 1, 1, 1)), 1e-4f);
  return {mean, sigma};
}

Forecast predict(const ParamSet& params, const ModelConfig& config, const Tensor& x) {
  Tape tape(false);
  nd::Binding bound(tape, params, false);
  const Output out = forward(bound, config, tape.constant(x));
  Forecast f;
  f.mean = out.mean.value();
  if (!f.mean.all_finite()) throw NumericalError("predict: non-finite forecast");
  for (float& v : f.mean.values()) v = std::clamp(v, 0.0f, 1.0f);
  if (out.sigma) f.sigma = out.sigma->value();
  return f;
}

Forecast recursive_forecast(const ParamSet& params, const ModelConfig& config, const Tensor& x,
                            std::size_t steps) {
  if (steps == 0) throw ShapeError("recursive_forecast: steps must be >= 1");
  const Shape& s = x.shape();
  if (s.size() != 4 || s[0] != config.in_len) {
    throw ShapeError("recursive_forecast: input " + nd::to_string(s));
  }
  const std::size_t frame = s[1] * s[2] * s[3];
  std::vector<float> history(x.values().begin(), x.values().end());
  Forecast all;
  all.mean = Tensor({steps * config.out_len, s[1], s[2], s[3]});
  if (config.head == Head::gaussian) all.sigma = Tensor(all.mean.shape());
  for (std::size_t k = 0; k < steps; ++k) {
    const auto start = history.end() - static_cast<std::ptrdiff_t>(config.in_len * frame);
    Tensor window({config.in_len, s[1], s[2], s[3]}, std::vector<float>(start, history.end()));
    const Forecast f = predict(params, config, window);
    std::copy(f.mean.values().begin(), f.mean.values().end(),
              all.mean.data() + k * config.out_len * frame);
    if (f.sigma) {
      std::copy(f.sigma->values().begin(), f.sigma->values().end(),
                all.sigma->data() + k * config.out_len * frame);
    }
    history.insert(history.end(), f.mean.values().begin(), f.mean.values().end());
  }
  return all;
}

}  // namespace icessm::model
