// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

// lce_cli: dataset generation, training, evaluation and sweeps for LISTA-CE.

#include "lce/bench.hpp"
#include "lce/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace lce;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_numbers(const std::string& text, char sep) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("cannot parse '" + text + "'");
    }
  }
  return out;
}

std::pair<double, double> parse_range(const std::string& text) {
  const auto v = parse_numbers(text, ':');
  if (v.size() != 2 || v[0] > v[1]) throw UsageError("expected a range lo:hi, got '" + text + "'");
  return {v[0], v[1]};
}

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  for (double v : parse_numbers(text, ',')) {
    if (v != static_cast<int>(v)) throw UsageError("expected integers in '" + text + "'");
    out.push_back(static_cast<int>(v));
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

// lo:hi:step inclusive, or a single value, or a comma list.
std::vector<double> parse_grid(const std::string& text) {
  if (text.find(':') == std::string::npos) return parse_numbers(text, ',');
  const auto v = parse_numbers(text, ':');
  if (v.size() != 3 || !(v[2] > 0) || v[0] > v[1]) throw UsageError("expected lo:hi:step, got '" + text + "'");
  std::vector<double> out;
  for (int k = 0;; ++k) {
    const double x = v[0] + k * v[2];
    if (x > v[1] + 1e-9 * std::max(1.0, std::abs(v[1]))) break;
    out.push_back(x);
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Reads key=value lines ('#' starts a comment) into "--key value" arguments.
std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  std::vector<std::string> args;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(path + ":" + std::to_string(lineno) + ": empty key");
    if (value == "true") {
      args.push_back("--" + key);
    } else if (value != "false") {
      args.push_back("--" + key);
      args.push_back(value);
    }
  }
  return args;
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-")
    std::cout << text;
  else
    write_text(path, text);
}

Dataset load_dataset(const std::string& path) {
  try {
    return read_dataset(path);
  } catch (const FormatError& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

SystemConfig system_of(const Dataset& ds, double fc, double fb) {
  return SystemConfig(ds.header.N, ds.header.n_rf, ds.header.M, ds.header.Q, fc, fb);
}

void require_compatible(const Dataset& a, const Dataset& b, const std::string& what) {
  if (a.header.N != b.header.N || a.header.M != b.header.M || a.header.Q != b.header.Q ||
      a.header.n_rf != b.header.n_rf)
    throw std::runtime_error(what + " has dimensions different from the training data");
}

std::optional<double> fixed_snr(const Dataset& ds) {
  if (ds.header.snr_per_sample || ds.samples.empty()) return std::nullopt;
  return ds.samples.front().snr_db;
}

// ----------------------------------------------------------------- options

struct SysOpts {
  double fc = 28e9;
  double fb = 4e9;
  void add(CLI::App* app) {
    app->add_option("--fc", fc, "Carrier frequency in Hz")->capture_default_str();
    app->add_option("--fb", fb, "Bandwidth in Hz")->capture_default_str();
  }
};

struct GenOpts {
  std::string out;
  int count = 0;
  int L = 3;
  std::string L_set;
  double snr = 10.0;
  std::string snr_range;
  std::uint64_t seed = 1;
  int N = 32, M = 32, Q = 2, nrf = 8;
  double tau_max = 20e-9;
  std::string dtype = "f64";
  SysOpts sys;
};

struct TrainOpts {
  std::string data, val, out, log;
  int layers = 7, w1 = 128, w2 = 256;
  bool per_layer = false;
  std::string anchor = "as_written";
  int batch = 64;
  double lr = 1e-4;
  int epochs = 200;
  int patience = 20;
  std::uint64_t seed = 1;
  std::string loss = "nmse";
  double grad_clip = 0.0;
  std::string init = "residual";
  SysOpts sys;
};

struct HyperOpts {
  std::string base, data, val, out, log;
  int batch = 64;
  double lr = 1e-5;
  int epochs = 200;
  int patience = 20;
  std::uint64_t seed = 1;
  int d = 128;
  std::string L_set = "2,3,4";
  std::string snr_range = "5:15";
  double grad_clip = 0.0;
  SysOpts sys;
};

struct EstimatorOpts {
  std::string model, hyper_model;
  double ista_rho = 0.1, ista_lambda = 1e-3;
  int ista_iters = 200;
  std::string tune_data;
  int tune_count = 64;
  int omp_k = 0;
  std::string condition = "metadata";

  void add(CLI::App* app) {
    app->add_option("--model", model, "LISTA-CE checkpoint (lista, or lista-hyper when it has a hyper section)");
    app->add_option("--hyper-model", hyper_model, "LISTA-CEHyper checkpoint for sweeps");
    app->add_option("--ista-rho", ista_rho, "ISTA step size")->capture_default_str();
    app->add_option("--ista-lambda", ista_lambda, "ISTA regularization weight")->capture_default_str();
    app->add_option("--ista-iters", ista_iters, "ISTA iterations")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--tune-data", tune_data, "Dataset used to grid-search ISTA's rho and lambda");
    app->add_option("--tune-count", tune_count, "Samples used for ISTA tuning")->capture_default_str();
    app->add_option("--omp-k", omp_k, "OMP atoms per subcarrier (0: four per path)")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    app->add_option("--condition", condition, "Condition source for lista-hyper")
        ->check(CLI::IsMember({"metadata", "omp"}))
        ->capture_default_str();
  }
};

struct EvalOpts {
  std::string data, estimator = "lista", csv;
  bool per_layer = false;
  std::optional<double> snr;
  std::uint64_t seed = 1;
  EstimatorOpts est;
  SysOpts sys;
};

struct SweepOpts {
  std::string estimators = "lista,ista,omp", snr = "0:20:2.5", L = "3", csv;
  int count = 256;
  std::uint64_t seed = 1;
  double tau_max = 20e-9;
  int N = 32, M = 32, Q = 2, nrf = 8;
  EstimatorOpts est;
  SysOpts sys;
};

struct ParamsOpts {
  std::string model;
  int layers = 7, w1 = 128, w2 = 256, N = 32, M = 32;
  bool per_layer = false;
  int hyper_d = 0;
};

void add_train_options(CLI::App* app, TrainOpts& o) {
  app->add_option("--data", o.data, "Training dataset")->required();
  app->add_option("--val", o.val, "Validation dataset")->required();
  app->add_option("--out", o.out, "Output checkpoint")->required();
  app->add_option("--log", o.log, "Training log CSV (default: <out>.log.csv)");
  app->add_option("--layers", o.layers, "Layer count T")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--w1", o.w1, "Transform width w1")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--w2", o.w2, "Transform width w2")->capture_default_str()->check(CLI::PositiveNumber);
  auto* share = app->add_flag("--share", "Share transforms across layers (default)");
  auto* per = app->add_flag("--per-layer", o.per_layer, "Separate transforms per layer");
  share->excludes(per);
  app->add_option("--anchor", o.anchor, "Gradient-step anchor")
      ->check(CLI::IsMember({"as_written", "primed"}))
      ->capture_default_str();
  app->add_option("--batch", o.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--epochs", o.epochs, "Maximum epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
  app->add_option("--patience", o.patience, "Early-stopping patience")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--seed", o.seed, "Run seed")->capture_default_str();
  app->add_option("--loss", o.loss, "Training loss")->check(CLI::IsMember({"nmse", "mse"}))->capture_default_str();
  app->add_option("--grad-clip", o.grad_clip, "Clip the global gradient norm (0 = off)")->capture_default_str();
  app->add_option("--init", o.init, "Initialization: residual (silent denoiser outputs) or plain")
      ->check(CLI::IsMember({"residual", "plain"}))
      ->capture_default_str();
  o.sys.add(app);
}

std::optional<double> clip_of(double v) { return v > 0 ? std::optional<double>(v) : std::nullopt; }

// ----------------------------------------------------------------- commands

int cmd_gen(const GenOpts& o, const CLI::App& app) {
  if (o.count < 1) throw UsageError("--count must be >= 1");
  GenSpec g;
  g.count = o.count;
  g.seed = o.seed;
  g.tau_max = o.tau_max;
  g.dtype = o.dtype == "f32" ? Dtype::f32 : Dtype::f64;
  g.L_set = app.count("--L-set") ? parse_ints(o.L_set) : std::vector<int>{o.L};
  if (app.count("--snr-range")) {
    g.snr_db.reset();
    g.snr_range = parse_range(o.snr_range);
  } else {
    g.snr_db = o.snr;
  }
  const SystemConfig sys(o.N, o.nrf, o.M, o.Q, o.sys.fc, o.sys.fb);
  const Dataset ds = generate_dataset(sys, g);
  write_dataset(o.out, ds);
  std::cerr << "wrote " << ds.size() << " samples to " << o.out << "\n";
  return 0;
}

NetConfig net_of(const TrainOpts& o, const Dataset& ds) {
  NetConfig net;
  net.T = o.layers;
  net.w1 = o.w1;
  net.w2 = o.w2;
  net.share_transforms = !o.per_layer;
  net.anchor = o.anchor == "primed" ? AnchorMode::primed : AnchorMode::as_written;
  net.N = ds.header.N;
  net.M = ds.header.M;
  return net;
}

void print_row(const TrainLogRow& r) {
  std::cerr << "epoch " << r.epoch << "  train_loss " << format_number(r.train_loss, 6) << "  val_nmse_db "
            << format_number(r.val_nmse_db, 3) << "  " << format_number(r.wall_seconds, 1) << "s\n";
}

int cmd_train(const TrainOpts& o) {
  const Dataset train_ds = load_dataset(o.data);
  const Dataset val_ds = load_dataset(o.val);
  require_compatible(train_ds, val_ds, o.val);
  const SystemConfig sys = system_of(train_ds, o.sys.fc, o.sys.fb);
  const NetConfig net = net_of(o, train_ds);
  TrainConfig tc;
  tc.lr = o.lr;
  tc.batch_size = o.batch;
  tc.max_epochs = o.epochs;
  tc.early_stop_patience = o.patience;
  tc.seed = o.seed;
  tc.loss = o.loss == "mse" ? LossKind::mse : LossKind::nmse_mean;
  tc.grad_clip = clip_of(o.grad_clip);
  const InitOptions init = o.init == "plain" ? InitOptions{} : training_init(sys);
  const TrainResult r = train(train_ds, val_ds, sys, net, tc, {}, print_row, init);
  write_checkpoint(o.out, make_checkpoint(r.params, net));
  write_text(o.log.empty() ? o.out + ".log.csv" : o.log, train_log_csv(r.log));
  std::cerr << "best epoch " << r.best_epoch << ", validation NMSE " << format_number(r.best_val_nmse_db, 3)
            << " dB; wrote " << o.out << "\n";
  return 0;
}

int cmd_train_hyper(const HyperOpts& o) {
  const Checkpoint ck = read_checkpoint(o.base);
  const ListaParams aver = lista_params(ck);
  const Dataset train_ds = load_dataset(o.data);
  const Dataset val_ds = load_dataset(o.val);
  require_compatible(train_ds, val_ds, o.val);
  if (train_ds.header.N != ck.net.N || train_ds.header.M != ck.net.M)
    throw std::runtime_error("base model and training data have different dimensions");
  const SystemConfig sys = system_of(train_ds, o.sys.fc, o.sys.fb);
  const auto [lo, hi] = parse_range(o.snr_range);
  HyperConfig hc;
  hc.d = o.d;
  hc.L_set = parse_ints(o.L_set);
  hc.bounds = bounds_of(hc.L_set, lo, hi);
  TrainConfig tc;
  tc.lr = o.lr;
  tc.batch_size = o.batch;
  tc.max_epochs = o.epochs;
  tc.early_stop_patience = o.patience;
  tc.seed = o.seed;
  tc.grad_clip = clip_of(o.grad_clip);
  const HyperTrainResult r = train_hyper(aver, train_ds, val_ds, sys, ck.net, tc, hc, print_row);
  write_checkpoint(o.out, make_checkpoint(r.model, ck.net));
  write_text(o.log.empty() ? o.out + ".log.csv" : o.log, train_log_csv(r.log));
  std::cerr << "best epoch " << r.best_epoch << ", validation NMSE " << format_number(r.best_val_nmse_db, 3)
            << " dB; wrote " << o.out << "\n";
  return 0;
}

// Resolved estimator: a learned model or a per-observation algorithm.
struct Resolved {
  std::string label;
  int layers = 0;
  std::optional<ListaParams> lista;
  std::optional<HyperModel> hyper;
  NetConfig net;
  ConditionSource condition = ConditionSource::metadata;
  Estimator fn;
  std::optional<int> omp_k;  // 0: 4 L, capped at the measurement count

  int omp_atoms(int L, const SystemConfig& sys) const {
    return *omp_k > 0 ? *omp_k : std::min(4 * L, sys.measurements());
  }
};

Resolved resolve(const std::string& name, const EstimatorOpts& o, const SystemConfig& sys, std::uint64_t seed,
                 bool for_sweep) {
  Resolved r;
  r.label = name;
  if (name == "lista" || name == "lista-hyper") {
    std::string path = o.model;
    if (name == "lista-hyper" && !o.hyper_model.empty() && (for_sweep || o.model.empty())) path = o.hyper_model;
    if (path.empty()) throw UsageError("estimator '" + name + "' needs --model" + (for_sweep ? " / --hyper-model" : ""));
    const Checkpoint ck = read_checkpoint(path);
    r.net = ck.net;
    if (ck.net.N != sys.N || ck.net.M != sys.M)
      throw std::runtime_error("model " + path + " does not match the data dimensions");
    r.layers = ck.net.T;
    if (name == "lista") {
      r.lista = lista_params(ck);
    } else {
      if (!ck.has_section("hyper")) throw std::runtime_error("model " + path + " has no hypernetwork section");
      r.hyper = hyper_model(ck);
      r.condition = o.condition == "omp" ? ConditionSource::omp : ConditionSource::metadata;
    }
  } else if (name == "ista") {
    IstaConfig cfg;
    cfg.rho = o.ista_rho;
    cfg.lambda = o.ista_lambda;
    cfg.iters = o.ista_iters;
    if (!o.tune_data.empty()) {
      const Dataset tune = load_dataset(o.tune_data);
      const IstaTuning t = tune_ista_on(tune, sys, validation_seed(seed), static_cast<std::size_t>(o.tune_count), cfg);
      cfg = t.best;
      std::cerr << "ista tuned: rho " << cfg.rho << " lambda " << cfg.lambda << " (tuning NMSE "
                << format_number(to_db(t.nmse), 3) << " dB)\n";
    }
    r.layers = cfg.iters;
    r.fn = ista_estimator(cfg);
  } else if (name == "omp") {
    if (o.omp_k > sys.measurements()) throw UsageError("--omp-k exceeds Q*N_RF");
    r.omp_k = o.omp_k;
  } else if (name == "zero") {
    r.fn = zero_estimator();
  } else {
    throw UsageError("unknown estimator '" + name + "'");
  }
  return r;
}

EvalResult run_estimator(const Resolved& r, const Dataset& ds, const SystemConfig& sys, std::uint64_t seed,
                         std::optional<double> snr, bool per_layer, int L) {
  if (r.omp_k) return evaluate_estimator(omp_estimator(OmpConfig{r.omp_atoms(L, sys), {}}), ds, sys, seed, snr);
  if (r.lista) return evaluate(*r.lista, ds, sys, r.net, seed, per_layer, snr);
  if (r.hyper) {
    if (r.condition == ConditionSource::metadata) return evaluate_hyper(*r.hyper, ds, sys, r.net, seed, per_layer, snr);
    const ScalarProvider provider = [&](const Dataset& d, std::span<const std::size_t> idx) {
      std::vector<ConditionVector> conds;
      for (std::size_t i : idx)
        conds.push_back(estimate_condition(make_eval_observation(d.samples[i], sys, seed, i, snr), r.hyper->hyper.bounds,
                                           ConditionSource::omp));
      return hyper_forward_batch(conds, r.hyper->hyper).scalars;
    };
    return evaluate_with(provider, r.hyper->base.transforms, ds, sys, r.net, seed, per_layer, snr);
  }
  return evaluate_estimator(r.fn, ds, sys, seed, snr);
}

void append_rows(std::vector<ResultRow>& rows, const Resolved& r, const EvalResult& e, double snr, int L,
                 std::uint64_t seed, bool per_layer, const SystemConfig& sys) {
  if (per_layer && !e.per_layer_db.empty()) {
    for (std::size_t t = 0; t < e.per_layer_db.size(); ++t)
      rows.push_back({r.label, snr, L, static_cast<int>(t + 1), e.per_layer_db[t], e.samples, seed});
  } else {
    rows.push_back({r.label, snr, L, r.omp_k ? r.omp_atoms(L, sys) : r.layers, e.nmse_db, e.samples, seed});
  }
}

int cmd_eval(const EvalOpts& o) {
  const Dataset ds = load_dataset(o.data);
  const SystemConfig sys = system_of(ds, o.sys.fc, o.sys.fb);
  const Resolved r = resolve(o.estimator, o.est, sys, o.seed, false);
  if (o.per_layer && !r.lista && !r.hyper) throw UsageError("--per-layer needs a learned estimator");
  const double snr_label = o.snr ? *o.snr : fixed_snr(ds).value_or(std::nan(""));
  std::vector<ResultRow> rows;
  for (const auto& [L, idx] : group_by_L(ds)) {
    const EvalResult e = run_estimator(r, subset(ds, idx), sys, o.seed, o.snr, o.per_layer, L);
    append_rows(rows, r, e, snr_label, L, o.seed, o.per_layer, sys);
  }
  write_output(o.csv, results_csv(rows));
  return 0;
}

int cmd_sweep(const SweepOpts& o) {
  std::vector<std::string> names;
  {
    std::stringstream ss(o.estimators);
    std::string tok;
    while (std::getline(ss, tok, ',')) names.push_back(trim(tok));
  }
  const std::vector<double> snrs = parse_grid(o.snr);
  const std::vector<int> Ls = parse_ints(o.L);
  if (names.empty() || snrs.empty()) throw UsageError("empty sweep grid");
  if (o.count < 1) throw UsageError("--count must be >= 1");

  const SystemConfig sys(o.N, o.nrf, o.M, o.Q, o.sys.fc, o.sys.fb);
  std::vector<Resolved> est;
  for (const auto& n : names) est.push_back(resolve(n, o.est, sys, o.seed, true));

  std::vector<ResultRow> rows;
  for (int L : Ls) {
    GenSpec g;
    g.count = o.count;
    g.L_set = {L};
    g.snr_db = 0.0;
    g.tau_max = o.tau_max;
    g.seed = derive_seed(o.seed, 0xda7a, static_cast<std::uint64_t>(L));
    const Dataset ds = generate_dataset(sys, g);
    for (std::size_t k = 0; k < snrs.size(); ++k) {
      const std::uint64_t point_seed = derive_seed(o.seed, static_cast<std::uint64_t>(L), k);
      for (const auto& r : est) {
        const EvalResult e = run_estimator(r, ds, sys, point_seed, snrs[k], false, L);
        append_rows(rows, r, e, snrs[k], L, o.seed, false, sys);
      }
    }
  }
  write_output(o.csv, results_csv(rows));
  return 0;
}

int cmd_params(const ParamsOpts& o) {
  NetConfig net;
  std::optional<HyperModel> hyper;
  if (!o.model.empty()) {
    const Checkpoint ck = read_checkpoint(o.model);
    net = ck.net;
    if (ck.has_section("hyper")) hyper = hyper_model(ck);
  } else {
    net.T = o.layers;
    net.w1 = o.w1;
    net.w2 = o.w2;
    net.N = o.N;
    net.M = o.M;
    net.share_transforms = !o.per_layer;
  }
  const ListaParams p = ListaParams::zeros(net);
  std::cout << "container,count\n";
  std::int64_t total = 0;
  for_each_tensor(p, [&](const std::string& name, const Mat& m) {
    std::cout << name << ',' << m.size() << '\n';
    total += m.size();
  });
  std::cout << "lista-ce total," << total << '\n';
  const double ref = 1.65e5;
  const double rel = std::abs(static_cast<double>(total) - ref) / ref;
  if (net.share_transforms)
    std::cout << "table-check lista-ce," << total << " vs " << ref << " rel " << format_number(rel, 4) << ','
              << (rel <= 0.02 ? "PASS" : "FAIL") << '\n';
  else
    std::cout << "table-check lista-ce,per-layer transforms: not compared\n";
  const int ista = ista_param_count();
  std::cout << "ista total," << ista << '\n';
  std::cout << "table-check ista," << ista << " vs 2," << (ista == 2 ? "PASS" : "FAIL") << '\n';
  int d = o.hyper_d;
  if (hyper) d = hyper->hyper.hidden();
  if (d > 0) {
    HyperParams hp;
    hp.W1 = Mat::Zero(d, 2);
    hp.b1 = Mat::Zero(d, 1);
    hp.W2 = Mat::Zero(d, d);
    hp.W3 = Mat::Zero(4 * net.T, d);
    for_each_tensor(hp, [&](const std::string& name, const Mat& m) { std::cout << name << ',' << m.size() << '\n'; });
    std::cout << "hypernet total," << hyper_param_count(hp) << '\n';
    std::cout << "lista-ce-hyper total," << total - p.scalars.size() + hyper_param_count(hp) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LISTA-CE channel estimation: datasets, training, evaluation"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;
  app.add_option("--config", config_path, "key=value file; command-line flags take precedence");

  GenOpts gen;
  auto* g = app.add_subcommand("gen", "Generate a dataset");
  g->add_option("--out", gen.out, "Output dataset file")->required();
  g->add_option("--count", gen.count, "Number of samples")->required();
  auto* gL = g->add_option("--L", gen.L, "Fixed path count")->capture_default_str();
  auto* gLs = g->add_option("--L-set", gen.L_set, "Path counts drawn uniformly, e.g. 2,3,4");
  gL->excludes(gLs);
  auto* gs = g->add_option("--snr", gen.snr, "Fixed SNR in dB")->capture_default_str();
  auto* gsr = g->add_option("--snr-range", gen.snr_range, "Uniform SNR range lo:hi in dB");
  gs->excludes(gsr);
  g->add_option("--seed", gen.seed, "Base seed")->capture_default_str();
  g->add_option("--N", gen.N, "Antennas")->capture_default_str();
  g->add_option("--M", gen.M, "Subcarriers")->capture_default_str();
  g->add_option("--Q", gen.Q, "Pilot instants")->capture_default_str();
  g->add_option("--nrf", gen.nrf, "RF chains")->capture_default_str();
  g->add_option("--tau-max", gen.tau_max, "Maximum path delay in seconds")->capture_default_str();
  g->add_option("--dtype", gen.dtype, "Value type")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
  gen.sys.add(g);

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "Train LISTA-CE");
  add_train_options(t, tr);

  TrainOpts av;
  auto* a = app.add_subcommand("train-aver", "Train LISTA-CEAver on a mixed-condition dataset");
  add_train_options(a, av);
  std::string aver_L_set, aver_snr_range;
  a->add_option("--L-set", aver_L_set, "Expected path counts of the data (checked)");
  a->add_option("--snr-range", aver_snr_range, "Expected SNR range of the data (checked)");

  HyperOpts hy;
  auto* h = app.add_subcommand("train-hyper", "Train the hypernetwork on a frozen LISTA-CEAver");
  h->add_option("--base", hy.base, "LISTA-CEAver checkpoint")->required();
  h->add_option("--data", hy.data, "Training dataset")->required();
  h->add_option("--val", hy.val, "Validation dataset")->required();
  h->add_option("--out", hy.out, "Output checkpoint")->required();
  h->add_option("--log", hy.log, "Training log CSV (default: <out>.log.csv)");
  h->add_option("--batch", hy.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  h->add_option("--lr", hy.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  h->add_option("--epochs", hy.epochs, "Maximum epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
  h->add_option("--patience", hy.patience, "Early-stopping patience")->capture_default_str()->check(CLI::PositiveNumber);
  h->add_option("--seed", hy.seed, "Run seed")->capture_default_str();
  h->add_option("--d", hy.d, "Hidden width")->capture_default_str()->check(CLI::PositiveNumber);
  h->add_option("--L-set", hy.L_set, "Training path counts")->capture_default_str();
  h->add_option("--snr-range", hy.snr_range, "Training SNR range lo:hi")->capture_default_str();
  h->add_option("--grad-clip", hy.grad_clip, "Clip the global gradient norm (0 = off)")->capture_default_str();
  hy.sys.add(h);

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "Evaluate an estimator on a dataset");
  e->add_option("--data", ev.data, "Dataset")->required();
  e->add_option("--estimator", ev.estimator, "Estimator")
      ->check(CLI::IsMember({"lista", "lista-hyper", "ista", "omp", "zero"}))
      ->capture_default_str();
  e->add_flag("--per-layer", ev.per_layer, "One row per layer");
  e->add_option("--snr", ev.snr, "Override the SNR of every sample");
  e->add_option("--csv", ev.csv, "Output CSV (default: stdout)");
  e->add_option("--seed", ev.seed, "Evaluation seed")->capture_default_str();
  ev.est.add(e);
  ev.sys.add(e);

  SweepOpts sw;
  auto* s = app.add_subcommand("sweep", "Sweep estimators over SNR and path count");
  s->add_option("--estimators", sw.estimators, "Comma list")->capture_default_str();
  s->add_option("--snr", sw.snr, "SNR grid lo:hi:step or list")->capture_default_str();
  s->add_option("--L", sw.L, "Path counts, comma list")->capture_default_str();
  s->add_option("--count", sw.count, "Samples per point")->capture_default_str();
  s->add_option("--seed", sw.seed, "Sweep seed")->capture_default_str();
  s->add_option("--tau-max", sw.tau_max, "Maximum path delay in seconds")->capture_default_str();
  s->add_option("--N", sw.N, "Antennas")->capture_default_str();
  s->add_option("--M", sw.M, "Subcarriers")->capture_default_str();
  s->add_option("--Q", sw.Q, "Pilot instants")->capture_default_str();
  s->add_option("--nrf", sw.nrf, "RF chains")->capture_default_str();
  s->add_option("--csv", sw.csv, "Output CSV (default: stdout)");
  sw.est.add(s);
  sw.sys.add(s);

  ParamsOpts pa;
  auto* p = app.add_subcommand("params", "Report structural parameter counts");
  p->add_option("--model", pa.model, "Checkpoint to inspect");
  p->add_option("--layers", pa.layers, "Layer count T")->capture_default_str();
  p->add_option("--w1", pa.w1, "Transform width w1")->capture_default_str();
  p->add_option("--w2", pa.w2, "Transform width w2")->capture_default_str();
  p->add_option("--N", pa.N, "Antennas")->capture_default_str();
  p->add_option("--M", pa.M, "Subcarriers")->capture_default_str();
  p->add_flag("--per-layer", pa.per_layer, "Separate transforms per layer");
  p->add_option("--hyper-d", pa.hyper_d, "Also count a hypernetwork of this width");

  try {
    // Config-file values are inserted ahead of the command-line flags of the subcommand.
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string cfg;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) {
        cfg = args[i + 1];
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
        break;
      }
      if (args[i].rfind("--config=", 0) == 0) {
        cfg = args[i].substr(9);
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
        break;
      }
    }
    if (!cfg.empty()) {
      const auto sub = std::find_if(args.begin(), args.end(), [&](const std::string& x) {
        return x == "gen" || x == "train" || x == "train-aver" || x == "train-hyper" || x == "eval" || x == "sweep" ||
               x == "params";
      });
      if (sub == args.end()) throw UsageError("--config needs a subcommand");
      const auto extra = config_arguments(cfg);
      args.insert(sub + 1, extra.begin(), extra.end());
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 2;
  }

  try {
    if (*g) return cmd_gen(gen, *g);
    if (*t) return cmd_train(tr);
    if (*a) {
      const Dataset ds = load_dataset(av.data);
      if (!aver_L_set.empty()) {
        const auto want = parse_ints(aver_L_set);
        for (const auto& smp : ds.samples)
          if (std::find(want.begin(), want.end(), smp.L) == want.end())
            throw std::runtime_error("training data contains L=" + std::to_string(smp.L) + " outside --L-set");
      }
      if (!aver_snr_range.empty()) {
        const auto [lo, hi] = parse_range(aver_snr_range);
        for (const auto& smp : ds.samples)
          if (smp.snr_db < lo || smp.snr_db > hi) throw std::runtime_error("training data SNR outside --snr-range");
      }
      return cmd_train(av);
    }
    if (*h) return cmd_train_hyper(hy);
    if (*e) return cmd_eval(ev);
    if (*s) return cmd_sweep(sw);
    if (*p) return cmd_params(pa);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
