// icessm: scan orders, synthetic data, preprocessing, training, forecasting
// and evaluation from the command line.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "icessm/data.hpp"
#include "icessm/error.hpp"
#include "icessm/metrics.hpp"
#include "icessm/model.hpp"
#include "icessm/nd/params.hpp"
#include "icessm/sfc.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace icessm;
using nd::Tensor;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

sfc::Dims parse_dims(const std::string& text) {
  std::vector<std::size_t> v;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    std::size_t used = 0;
    long long x = 0;
    try {
      x = std::stoll(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || part.empty() || x <= 0) {
      throw ShapeError("--dims: '" + text + "' is not three positive integers T,H,W");
    }
    v.push_back(static_cast<std::size_t>(x));
  }
  if (v.size() != 3) throw ShapeError("--dims: '" + text + "' is not three positive integers T,H,W");
  return {v[0], v[1], v[2]};
}

std::string dims_tag(const sfc::Dims& d) {
  return std::to_string(d.t) + "x" + std::to_string(d.h) + "x" + std::to_string(d.w);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw FormatError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FormatError("cannot create directory " + dir.string());
}

/// Option values as given (or defaulted), in declaration order.
json option_values(const CLI::App& sub) {
  json args = json::object();
  for (const CLI::Option* o : sub.get_options()) {
    const std::string name = o->get_single_name();
    if (name == "help" || name.empty()) continue;
    if (o->count() > 0) {
      const auto& r = o->results();
      args[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else if (!o->get_default_str().empty()) {
      args[name] = o->get_default_str();
    }
  }
  return args;
}

void write_manifest(const fs::path& dir, const CLI::App& sub, const json& extra,
                    const std::vector<std::string>& outputs) {
  json m;
  m["tool"] = "icessm";
  m["version"] = kVersion;
  m["command"] = sub.get_name();
  m["args"] = option_values(sub);
  for (const auto& [k, v] : extra.items()) m[k] = v;
  m["outputs"] = outputs;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

// --- model flags shared by train ------------------------------------------------

struct ModelFlags {
  std::string kind = "hilbert-t";
  int routes = 2;
  std::size_t fssm = 3;
  float lambda = 0.1f;
  std::string head = "det";
  std::string fusion = "hsa";
  std::size_t width = 32;
  std::size_t state = 8;
  std::size_t in_len = 14;
  std::size_t out_len = 14;

  void add(CLI::App* sub) {
    sub->add_option("--kind", kind, "scan kind: raster, zorder, peano, hilbert-s, hilbert-t")
        ->capture_default_str();
    sub->add_option("--routes", routes, "scan routes: 1, 2 or 4")->capture_default_str();
    sub->add_option("--fssm", fssm, "number of FSSM blocks")->capture_default_str();
    sub->add_option("--lambda", lambda, "gradient-loss weight")->capture_default_str();
    sub->add_option("--head", head, "det or gaussian")->capture_default_str();
    sub->add_option("--fusion", fusion, "hsa, sum or cagate")->capture_default_str();
    sub->add_option("--width", width, "latent channels")->capture_default_str();
    sub->add_option("--state", state, "SSM state size")->capture_default_str();
    sub->add_option("--in-len", in_len, "input frames")->capture_default_str();
    sub->add_option("--out-len", out_len, "forecast frames")->capture_default_str();
  }

  model::ModelConfig config() const {
    model::ModelConfig c;
    c.scan = sfc::parse_kind(kind);
    c.n_routes = routes;
    c.n_fssm = fssm;
    c.lambda = lambda;
    c.head = model::parse_head(head);
    c.fusion = model::parse_fusion(fusion);
    c.width = width;
    c.state = state;
    c.in_len = in_len;
    c.out_len = out_len;
    c.validate();
    return c;
  }
};

struct LoadedModel {
  model::ModelConfig config;
  nd::ParamSet params;
  json split;
};

LoadedModel load_model(const fs::path& dir) {
  LoadedModel m;
  m.config = model::config_from_json(read_text(dir / "model.json"));
  if (!fs::exists(dir / "model.ckpt")) throw FormatError("missing checkpoint " + (dir / "model.ckpt").string());
  m.params = nd::load_checkpoint(dir / "model.ckpt");
  model::check_params(m.params, m.config);
  if (fs::exists(dir / "split.json")) {
    try {
      m.split = json::parse(read_text(dir / "split.json"));
    } catch (const json::exception& e) {
      throw FormatError(std::string("split.json: ") + e.what());
    }
  }
  return m;
}

data::Grid3 load_clean(const fs::path& path) {
  data::Grid3 g = data::read_grid(path);
  for (float v : g.frames.values()) {
    if (std::isnan(v)) throw DataError(path.string() + " has missing values; run preprocess first");
  }
  return g;
}

std::vector<model::Sample> to_samples(const std::vector<data::SampleWindow>& ws) {
  std::vector<model::Sample> out;
  out.reserve(ws.size());
  for (const auto& w : ws) out.push_back({w.input, w.target});
  return out;
}

/// [L,1,H,W] forecast -> grid with consecutive dates from `first_date`; land zeroed.
data::Grid3 forecast_grid(const Tensor& frames, std::int64_t first_date,
                          const std::vector<std::uint8_t>& land) {
  const nd::Shape& s = frames.shape();
  data::Grid3 g = data::make_grid(s[0], s[2], s[3], 0.0f, first_date);
  std::copy(frames.values().begin(), frames.values().end(), g.frames.data());
  g.land = land;
  const std::size_t n = g.pixels();
  for (std::size_t i = 0; i < g.frames.size(); ++i)
    if (land[i % n]) g.frames[i] = 0.0f;
  return g;
}

// --- subcommands ------------------------------------------------------------------

struct ScanArgs {
  std::string kind = "hilbert-t", dims, direction = "forward", out = ".";
};

void cmd_scan(const CLI::App& sub, const ScanArgs& a) {
  const sfc::Dims dims = parse_dims(a.dims);
  if (a.direction != "forward" && a.direction != "backward") {
    throw ShapeError("--direction must be forward or backward");
  }
  const sfc::Kind kind = sfc::parse_kind(a.kind);
  sfc::ScanOrder order = sfc::make_order(kind, dims);
  if (a.direction == "backward") order = order.reversed();
  ensure_dir(a.out);
  const std::string name = "scan_" + a.kind + "_" + dims_tag(dims) + "_" + a.direction + ".txt";
  std::ostringstream text;
  sfc::write_golden(text, order);
  write_text(fs::path(a.out) / name, text.str());
  write_manifest(a.out, sub, json::object(), {name});
}

struct BenchArgs {
  std::string dims = "8,8,8", out = ".";
};

void cmd_bench_locality(const CLI::App& sub, const BenchArgs& a) {
  const sfc::Dims dims = parse_dims(a.dims);
  ensure_dir(a.out);
  std::string csv = "kind,mean_gap,median_gap,geometric_mean_gap,max_gap,pairs\n";
  for (sfc::Kind kind : {sfc::Kind::raster, sfc::Kind::zorder, sfc::Kind::peano,
                         sfc::Kind::hilbert_spatial_first, sfc::Kind::hilbert_temporal_first}) {
    const sfc::LocalityScore s = sfc::locality_score(sfc::make_order(kind, dims));
    char line[256];
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f,%llu,%llu\n",
                  std::string(sfc::kind_name(kind)).c_str(), s.mean_gap, s.median_gap,
                  s.geometric_mean_gap, static_cast<unsigned long long>(s.max_gap),
                  static_cast<unsigned long long>(s.pairs));
    csv += line;
  }
  write_text(fs::path(a.out) / "locality.csv", csv);
  write_manifest(a.out, sub, json::object(), {"locality.csv"});
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string dims = "120,16,16", out = ".";
  std::size_t blobs = 4;
  double drift = 0.25, missing = 0.0, season = 0.3;
  bool no_land = false;
  std::int64_t start = 0;
};

void cmd_synth(const CLI::App& sub, const SynthArgs& a) {
  const sfc::Dims dims = parse_dims(a.dims);
  data::SynthOptions o;
  o.seed = a.seed;
  o.t = dims.t;
  o.h = dims.h;
  o.w = dims.w;
  o.n_blobs = a.blobs;
  o.drift = a.drift;
  o.missing_fraction = a.missing;
  o.season_amplitude = a.season;
  o.land = !a.no_land;
  o.start_date = a.start;
  ensure_dir(a.out);
  data::write_grid(data::synth_generate(o), fs::path(a.out) / "synth.grid");
  write_manifest(a.out, sub, json{{"seed", a.seed}}, {"synth.grid"});
}

struct PreprocessArgs {
  std::string in, out = ".";
  double land_threshold = 0.95;
  bool no_idw = false;
  std::size_t radius = 3, time_radius = 3;
  double sigma = 1.5, time_scale = 1.0;
};

void cmd_preprocess(const CLI::App& sub, const PreprocessArgs& a) {
  data::PreprocessOptions o;
  o.land_threshold = a.land_threshold;
  if (a.no_idw) {
    o.idw.reset();
  } else {
    o.idw = data::IdwOptions{a.radius, a.time_radius, a.sigma, a.time_scale};
  }
  const data::Grid3 clean = data::preprocess(data::read_grid(a.in), o);
  ensure_dir(a.out);
  data::write_grid(clean, fs::path(a.out) / "clean.grid");
  write_manifest(a.out, sub, json::object(), {"clean.grid"});
}

struct TrainArgs {
  ModelFlags model;
  std::string data, out = ".";
  std::uint64_t seed = 0;
  std::size_t epochs = 100, patience = 10, batch = 4, stride = 1;
  float lr = 1e-3f;
  double train_frac = 0.7, val_frac = 0.15;
};

void cmd_train(const CLI::App& sub, const TrainArgs& a) {
  const model::ModelConfig config = a.model.config();
  const data::Grid3 g = load_clean(a.data);
  const data::Split split =
      data::split_chronological(g, a.train_frac, a.val_frac, config.in_len + config.out_len);
  const auto train_set = to_samples(data::windows(split.train, config.in_len, config.out_len, a.stride));
  const auto val_set = to_samples(data::windows(split.val, config.in_len, config.out_len, a.stride));

  model::TrainOptions o;
  o.max_epochs = a.epochs;
  o.patience = a.patience;
  o.batch_size = a.batch;
  o.seed = a.seed;
  o.adamw.lr = a.lr;
  o.threads = model::threads_from_env();
  o.on_epoch = [](const model::EpochRecord& r) {
    std::fprintf(stderr, "epoch %zu  train_loss %.6f  val_mae %.6f\n", r.epoch, r.train_loss,
                 r.val_mae);
  };
  const model::TrainResult r = model::train(train_set, val_set, config, o);

  ensure_dir(a.out);
  const fs::path dir = a.out;
  nd::save_checkpoint(dir / "model.ckpt", r.best);
  write_text(dir / "model.json", model::config_to_json(config));
  std::ostringstream csv;
  model::write_history_csv(csv, r.history);
  write_text(dir / "history.csv", csv.str());
  json split_info;
  split_info["train_fraction"] = a.train_frac;
  split_info["val_fraction"] = a.val_frac;
  split_info["stride"] = a.stride;
  split_info["train_windows"] = train_set.size();
  split_info["val_windows"] = val_set.size();
  write_text(dir / "split.json", split_info.dump(2) + "\n");
  json extra;
  extra["seed"] = a.seed;
  extra["config"] = json::parse(model::config_to_json(config));
  extra["best_epoch"] = r.best_epoch;
  extra["steps"] = r.steps;
  write_manifest(dir, sub, extra, {"model.ckpt", "model.json", "history.csv", "split.json"});
}

struct PredictArgs {
  std::string model, data, split = "test", out = ".";
  std::size_t stride = 1;
};

void cmd_predict(const CLI::App& sub, const PredictArgs& a) {
  const LoadedModel m = load_model(a.model);
  const data::Grid3 g = load_clean(a.data);
  data::Grid3 source = g;
  if (a.split == "test" || a.split == "val") {
    if (m.split.is_null()) throw FormatError("model directory has no split.json; use --split all");
    const data::Split s = data::split_chronological(
        g, m.split.value("train_fraction", 0.7), m.split.value("val_fraction", 0.15),
        m.config.in_len + m.config.out_len);
    source = a.split == "test" ? s.test : s.val;
  } else if (a.split != "all") {
    throw ShapeError("--split must be test, val or all");
  }
  ensure_dir(a.out);
  std::vector<std::string> outputs;
  const auto ws = data::windows(source, m.config.in_len, m.config.out_len, a.stride);
  for (std::size_t k = 0; k < ws.size(); ++k) {
    const model::Forecast f = model::predict(m.params, m.config, ws[k].input);
    char name[64];
    std::snprintf(name, sizeof name, "forecast_%04zu.grid", k);
    data::write_grid(forecast_grid(f.mean, ws[k].anchor, g.land), fs::path(a.out) / name);
    outputs.emplace_back(name);
    if (f.sigma) {
      std::snprintf(name, sizeof name, "sigma_%04zu.grid", k);
      data::write_grid(forecast_grid(*f.sigma, ws[k].anchor, g.land), fs::path(a.out) / name);
      outputs.emplace_back(name);
    }
  }
  write_manifest(a.out, sub, json{{"config", json::parse(model::config_to_json(m.config))}}, outputs);
}

struct EvalArgs {
  std::vector<std::string> pred;
  std::string truth, out = ".";
  double cell_area = 1.0;
};

std::vector<fs::path> forecast_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const std::string& p : inputs) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        const std::string name = e.path().filename().string();
        if (e.path().extension() == ".grid" && name.rfind("sigma_", 0) != 0) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(p);
    }
  }
  if (files.empty()) throw DataError("eval: no forecast grids found");
  return files;
}

void cmd_eval(const CLI::App& sub, const EvalArgs& a) {
  const data::Grid3 truth = load_clean(a.truth);
  const std::size_t n = truth.pixels();
  std::vector<Tensor> preds, truths;
  for (const fs::path& file : forecast_files(a.pred)) {
    const data::Grid3 p = data::read_grid(file);
    if (p.height() != truth.height() || p.width() != truth.width()) {
      throw ShapeError("eval: " + file.string() + " has a different grid size from the truth");
    }
    Tensor t({p.time(), 1, p.height(), p.width()});
    for (std::size_t k = 0; k < p.time(); ++k) {
      const auto it = std::lower_bound(truth.dates.begin(), truth.dates.end(), p.dates[k]);
      if (it == truth.dates.end() || *it != p.dates[k]) {
        throw DataError("eval: truth has no frame for day " + std::to_string(p.dates[k]));
      }
      const auto row = static_cast<std::size_t>(it - truth.dates.begin());
      std::copy_n(truth.frames.data() + row * n, n, t.data() + k * n);
    }
    preds.push_back(p.frames.reshape({p.time(), 1, p.height(), p.width()}));
    truths.push_back(std::move(t));
  }
  const metrics::Report report = metrics::evaluate(preds, truths, truth.land, a.cell_area);
  ensure_dir(a.out);
  const fs::path dir = a.out;
  write_text(dir / "report.json", metrics::report_to_json(report));
  std::vector<std::string> outputs{"report.json"};

  // Mean bias per lead day over all forecasts.
  const std::size_t lead = preds.front().dim(0);
  for (std::size_t d = 0; d < lead; ++d) {
    Tensor bias({truth.height(), truth.width()});
    for (std::size_t k = 0; k < preds.size(); ++k)
      for (std::size_t i = 0; i < n; ++i)
        bias[i] += (preds[k][d * n + i] - truths[k][d * n + i]) / static_cast<float>(preds.size());
    char name[64];
    std::snprintf(name, sizeof name, "bias_lead%02zu.ppm", d + 1);
    metrics::write_bias_ppm(bias, dir / name);
    outputs.emplace_back(name);
  }
  write_manifest(dir, sub, json::object(), outputs);
}

struct RecurseArgs {
  std::string model, data, out = ".";
  std::size_t steps = 2, start = 0;
};

void cmd_recurse(const CLI::App& sub, const RecurseArgs& a) {
  const LoadedModel m = load_model(a.model);
  const data::Grid3 g = load_clean(a.data);
  const std::size_t li = m.config.in_len;
  if (a.start + li > g.time()) throw DataError("recurse: --start leaves fewer than in_len frames");
  const data::Grid3 window = data::slice_frames(g, a.start, a.start + li);
  const Tensor x = window.frames.reshape({li, 1, g.height(), g.width()});
  const model::Forecast f = model::recursive_forecast(m.params, m.config, x, a.steps);
  ensure_dir(a.out);
  data::write_grid(forecast_grid(f.mean, g.dates[a.start + li - 1] + 1, g.land),
                   fs::path(a.out) / "recurse.grid");
  write_manifest(a.out, sub, json::object(), {"recurse.grid"});
}

int run(int argc, char** argv) {
  CLI::App app{"Sea-ice forecasting with Hilbert-scanned state-space models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  ScanArgs scan;
  CLI::App* s = app.add_subcommand("scan", "write a scan-order golden file");
  s->add_option("--kind", scan.kind, "raster, zorder, peano, hilbert-s, hilbert-t")->capture_default_str();
  s->add_option("--dims", scan.dims, "T,H,W")->required();
  s->add_option("--direction", scan.direction, "forward or backward")->capture_default_str();
  s->add_option("--out", scan.out, "output directory")->capture_default_str();

  BenchArgs bench;
  CLI::App* b = app.add_subcommand("bench-locality", "locality scores of every scan kind as CSV");
  b->add_option("--dims", bench.dims, "T,H,W")->capture_default_str();
  b->add_option("--out", bench.out, "output directory")->capture_default_str();

  SynthArgs synth;
  CLI::App* sy = app.add_subcommand("synth", "generate a synthetic grid");
  sy->add_option("--seed", synth.seed)->capture_default_str();
  sy->add_option("--dims", synth.dims, "T,H,W")->capture_default_str();
  sy->add_option("--blobs", synth.blobs)->capture_default_str();
  sy->add_option("--drift", synth.drift, "pixels per day")->capture_default_str();
  sy->add_option("--missing", synth.missing, "fraction of ocean values dropped")->capture_default_str();
  sy->add_option("--season", synth.season, "seasonal amplitude")->capture_default_str();
  sy->add_flag("--no-land", synth.no_land, "omit the land block");
  sy->add_option("--start-date", synth.start, "first day stamp")->capture_default_str();
  sy->add_option("--out", synth.out, "output directory")->capture_default_str();

  PreprocessArgs pre;
  CLI::App* p = app.add_subcommand("preprocess", "gap fill, land mask and interpolation");
  p->add_option("--in", pre.in, "input grid")->required();
  p->add_option("--out", pre.out, "output directory")->capture_default_str();
  p->add_option("--land-threshold", pre.land_threshold)->capture_default_str();
  p->add_flag("--no-idw", pre.no_idw, "skip spatiotemporal interpolation");
  p->add_option("--idw-radius", pre.radius)->capture_default_str();
  p->add_option("--idw-time-radius", pre.time_radius)->capture_default_str();
  p->add_option("--idw-sigma", pre.sigma)->capture_default_str();
  p->add_option("--idw-time-scale", pre.time_scale, "pixels per day")->capture_default_str();

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "train a model on a preprocessed grid");
  t->add_option("--data", train.data, "preprocessed grid")->required();
  t->add_option("--out", train.out, "output directory")->capture_default_str();
  train.model.add(t);
  t->add_option("--seed", train.seed)->capture_default_str();
  t->add_option("--epochs", train.epochs)->capture_default_str();
  t->add_option("--patience", train.patience)->capture_default_str();
  t->add_option("--batch", train.batch)->capture_default_str();
  t->add_option("--lr", train.lr)->capture_default_str();
  t->add_option("--stride", train.stride, "window stride")->capture_default_str();
  t->add_option("--train-frac", train.train_frac)->capture_default_str();
  t->add_option("--val-frac", train.val_frac)->capture_default_str();

  PredictArgs predict;
  CLI::App* pr = app.add_subcommand("predict", "forecast every window of a split");
  pr->add_option("--model", predict.model, "training output directory")->required();
  pr->add_option("--data", predict.data, "preprocessed grid")->required();
  pr->add_option("--split", predict.split, "test, val or all")->capture_default_str();
  pr->add_option("--stride", predict.stride)->capture_default_str();
  pr->add_option("--out", predict.out, "output directory")->capture_default_str();

  EvalArgs eval;
  CLI::App* e = app.add_subcommand("eval", "score forecasts against a truth grid");
  e->add_option("--pred", eval.pred, "forecast grids or directories")->required();
  e->add_option("--truth", eval.truth, "preprocessed truth grid")->required();
  e->add_option("--cell-area", eval.cell_area)->capture_default_str();
  e->add_option("--out", eval.out, "output directory")->capture_default_str();

  RecurseArgs recurse;
  CLI::App* r = app.add_subcommand("recurse", "chain forecasts beyond one window");
  r->add_option("--model", recurse.model, "training output directory")->required();
  r->add_option("--data", recurse.data, "preprocessed grid")->required();
  r->add_option("--steps", recurse.steps)->capture_default_str();
  r->add_option("--start", recurse.start, "first input frame")->capture_default_str();
  r->add_option("--out", recurse.out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) cmd_scan(*s, scan);
    else if (b->parsed()) cmd_bench_locality(*b, bench);
    else if (sy->parsed()) cmd_synth(*sy, synth);
    else if (p->parsed()) cmd_preprocess(*p, pre);
    else if (t->parsed()) cmd_train(*t, train);
    else if (pr->parsed()) cmd_predict(*pr, predict);
    else if (e->parsed()) cmd_eval(*e, eval);
    else if (r->parsed()) cmd_recurse(*r, recurse);
  } catch (const ShapeError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return kNumerical;
  } catch (const FormatError& err) {
    std::cerr << "format error: " << err.what() << "\n";
    return kData;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "i/o error: " << err.what() << "\n";
    return kData;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
