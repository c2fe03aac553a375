// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. One PASS/FAIL line per criterion; exit status 4 when any
// requested criterion fails.
//
//   acceptance                     all criteria
//   acceptance --criterion 4 ...   selected ones (7 and 8 share one run)

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "harness.hpp"
#include "shiftmatch/binio.hpp"

namespace sm = shiftmatch;
namespace hs = shiftmatch::harness;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = SHIFTMATCH_CONFIG_DIR;
const fs::path kMnist = fs::path(SHIFTMATCH_DATA_DIR) / "mnist10k";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

sm::TensorD randn(sm::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  sm::TensorD t(std::move(s));
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

double rel_fro(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

// 1 ------------------------------------------------------------------------
Outcome identity_on_training_data() {
  const auto t0 = std::chrono::steady_clock::now();
  const sm::Dataset d = sm::load_idx(kMnist / "images-idx3-ubyte.gz", kMnist / "labels-idx1-ubyte.gz");
  const sm::LayerGraph g = sm::lenet_s();
  sm::TrainConfig tc;
  tc.epochs = 1;
  tc.seed = 1;
  const sm::WeightSample s = sm::sgd_train(g, d.images, d.labels, tc);
  const sm::Tensor plain = sm::forward(g, s, d.images).logits;
  const double nll_plain = sm::categorical_nll(sm::softmax(plain), d.labels);

  double worst_dev = 0.0, worst_nll = 0.0;
  std::string worst_where;
  for (sm::CovKind k : {sm::CovKind::Full, sm::CovKind::PerChannelSpatial, sm::CovKind::KroneckerHW,
                        sm::CovKind::ChannelJoint, sm::CovKind::MeanVarOnly}) {
    for (const char* place : {"pre", "post", "input-only"}) {
      const auto p = sm::MatchPlacement::parse(g, place);
      const sm::TrainStats st = sm::acquire_train_stats(g, s, d.images, p, k);
      const sm::Tensor out = sm::matched_forward(
          g, s, st, d.images, 1e-12, [&](std::size_t site, const sm::FeatureMatrix& in, const sm::FeatureMatrix& o) {
            for (std::size_t i = 0; i < in.tensor().size(); ++i) {
              const double dev = std::abs(double(in.tensor()[i]) - o.tensor()[i]);
              if (dev > worst_dev) {
                worst_dev = dev;
                worst_where = std::string(sm::to_string(k)) + "/" + place + " site " + std::to_string(site);
              }
            }
          });
      worst_nll = std::max(worst_nll, std::abs(sm::categorical_nll(sm::softmax(out), d.labels) - nll_plain));
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_dev <= 1e-4 && worst_nll <= 1e-6 && secs <= 120.0;
  o.detail = fmt("max |dev| %.3g, |dNLL| %.3g, %.0f s", worst_dev, worst_nll, secs) + " (worst at " + worst_where + ")";
  return o;
}

// 2 ------------------------------------------------------------------------
Outcome covariance_matching() {
  const std::size_t n = 64;
  const sm::Layout l{1, 8, 8};
  auto make = [&](std::size_t p, std::uint64_t seed, double shift) {
    const sm::TensorD a = randn({n, n}, seed + 100);
    sm::TensorD x = sm::matmul(randn({p, n}, seed), a);
    for (auto& v : x.values()) v += shift;
    return sm::FeatureMatrixD(x, l);
  };
  const auto train = make(5000, 1, 0.0), test = make(20 * n, 2, 3.0);
  const sm::CovStats tr = sm::estimate_stats(train, sm::CovKind::Full);
  const auto y = sm::shiftmatch_full(test, sm::square_root_form(tr), 0.0);
  const sm::CovStats after = sm::estimate_stats(y, sm::CovKind::Full);
  const double err = rel_fro(after.pieces[0].values(), tr.pieces[0].values());
  return {err <= 1e-4, fmt("relative Frobenius %.3g (N=64, P_test=1280)", err)};
}

// 3 ------------------------------------------------------------------------
Outcome empcov_equivalence() {
  const sm::FeatureMatrixD xtr(randn({50, 16}, 3)), xte(randn({50, 16}, 4));
  const sm::SymMatrix sigma = sm::prior_cov_empcov(xtr);
  const sm::TensorD lhs = sm::matmul(sm::matmul(xte.tensor(), sigma.to_tensor()), xte.tensor(), false, true);
  const auto shifted = sm::shiftempcov(xte, sm::sym_sqrt(sigma));
  const sm::TensorD rhs = sm::matmul(shifted.tensor(), shifted.tensor(), false, true);
  const double err = rel_fro(rhs.values(), lhs.values());
  return {err <= 1e-5, fmt("relative Frobenius %.3g", err)};
}

// 4 ------------------------------------------------------------------------
Outcome exact_removal() {
  const auto t0 = std::chrono::steady_clock::now();
  hs::ExperimentConfig cfg;
  cfg.out = "acceptance-out/theory";
  std::ostringstream log;
  const auto rows = hs::cmd_theory(cfg, log);
  Outcome o{true, ""};
  for (const auto& r : rows) {
    o.pass = o.pass && r.pass();
    o.detail += r.mode.substr(0, 3) + " s=" + fmt("%g", r.sigma) + ":" +
                (std::isfinite(r.error) ? fmt("%.2g", r.error) : std::string("ill-conditioned")) + " ";
  }
  o.pass = o.pass && seconds_since(t0) <= 300.0;
  o.detail += fmt("(%.0f s)", seconds_since(t0));
  return o;
}

// 5 ------------------------------------------------------------------------
sm::SymMatrix random_spd(std::size_t n, std::mt19937_64& rng, double cond) {
  const sm::Svd q = sm::svd(randn({n, n}, rng()));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  sm::TensorD scaled = q.u;
  for (std::size_t k = 0; k < n; ++k) {
    const double lam = k == 0 ? 1.0 : (k == n - 1 ? 1.0 / cond : std::pow(cond, -u(rng)));
    for (std::size_t r = 0; r < n; ++r) scaled.at(r, k) *= lam;
  }
  sm::TensorD a = sm::matmul(scaled, q.u, false, true);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) a.at(i, j) = a.at(j, i) = 0.5 * (a.at(i, j) + a.at(j, i));
  }
  return sm::SymMatrix::from_tensor(a);
}

Outcome linalg_core() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  double sq = 0.0, sand = 0.0, rec = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = dim(rng);
    const sm::SymMatrix a = random_spd(n, rng, 1e6);
    const sm::SymMatrix r = sm::sym_sqrt(a);
    sq = std::max(sq, rel_fro(sm::product(r, r).values(), a.values()));
    const sm::TensorD w = sm::sym_invsqrt(a, 0.0).to_tensor();
    const sm::TensorD m = sm::product(sm::product(w, a.to_tensor()), w);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) sand = std::max(sand, std::abs(m.at(i, j) - (i == j ? 1.0 : 0.0)));
    }
    const std::size_t rows = dim(rng), cols = dim(rng);
    const sm::TensorD b = randn({rows, cols}, rng());
    const sm::Svd d = sm::svd(b);
    sm::TensorD us = d.u;
    for (std::size_t i = 0; i < us.dim(0); ++i) {
      for (std::size_t k = 0; k < d.s.size(); ++k) us.at(i, k) *= d.s[k];
    }
    rec = std::max(rec, rel_fro(sm::matmul(us, d.v, false, true).values(), b.values()));
  }
  return {sq <= 1e-5 && sand <= 1e-3 && rec <= 1e-4,
          fmt("sqrt %.2g, invsqrt sandwich %.2g, svd %.2g over 100 instances", sq, sand, rec)};
}


// 6 ------------------------------------------------------------------------
Outcome gradient_check() {
  const sm::LayerGraph g = sm::LayerGraph::parse(
      "name = toy\ninput = 1x6x6\nlayer = conv out=2 kernel=3 pad=1\nlayer = frn\nlayer = relu\n"
      "layer = avgpool kernel=2\nlayer = flatten\nlayer = linear out=4\nlayer = relu\nlayer = linear out=3\n");
  auto s = sm::init_sample<double>(g, 11);
  for (auto& b : s.biases) {
    for (auto& v : b.values()) v += 0.1;
  }
  const sm::TensorD x = randn({5, 1, 6, 6}, 12);
  const std::vector<std::uint32_t> y{0, 1, 2, 1, 0};
  const auto lg = sm::loss_and_grad(g, s, x, y);
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      auto& params = which ? s.biases[i] : s.weights[i];
      const auto& grads = which ? lg.grad.biases[i] : lg.grad.weights[i];
      for (std::size_t k = 0; k < params.size(); ++k) {
        const double keep = params[k];
        params[k] = keep + h;
        const double up = sm::loss_and_grad(g, s, x, y).loss;
        params[k] = keep - h;
        const double dn = sm::loss_and_grad(g, s, x, y).loss;
        params[k] = keep;
        const double fd = (up - dn) / (2 * h);
        worst = std::max(worst, std::abs(fd - grads[k]) / std::max({std::abs(fd), std::abs(grads[k]), 1e-7}));
      }
    }
  }
  return {worst <= 1e-3, fmt("max relative error %.3g over %.0f parameters", worst, double(g.param_count()))};
}

// 7 + 8 --------------------------------------------------------------------
hs::Report ood_report() {
  static std::optional<hs::Report> cached;
  if (cached) return *cached;
  hs::ExperimentConfig cfg = hs::ExperimentConfig::load(kConfigs / "mnist-lenet.conf");
  cfg.out = "acceptance-out/mnist-lenet";
  cfg.corruptions = {"blur"};
  cfg.intensities = {4};  // circular blur, sigma 2
  cfg.methods = {"plain", "meanvar", "shiftmatch", "input-only"};
  cfg.spec = sm::CovKind::KroneckerHW;
  cfg.placement = "pre";
  hs::cmd_train(cfg, std::cerr);
  cached = hs::cmd_eval(cfg, std::cerr);
  return *cached;
}

double acc(const hs::Report& r, const char* method, const char* corruption, int intensity) {
  const hs::ReportRow* row = r.find(method, corruption, intensity);
  if (row == nullptr) throw sm::Error(std::string("missing report row ") + method + "/" + corruption);
  return row->accuracy;
}

Outcome ood_direction() {
  const auto t0 = std::chrono::steady_clock::now();
  const hs::Report r = ood_report();
  const double plain = acc(r, "plain", "blur", 4), mv = acc(r, "meanvar", "blur", 4);
  const double smk = acc(r, "shiftmatch", "blur", 4);
  const double clean_gap = acc(r, "shiftmatch", "clean", 0) - acc(r, "plain", "clean", 0);
  Outcome o;
  o.pass = smk - plain >= 0.05 && smk - mv >= 0.01 && std::abs(clean_gap) <= 0.005;
  o.detail = fmt("blur s=2: shiftmatch %.4f, plain %.4f, meanvar %.4f; clean gap %+.4f", smk, plain, mv, clean_gap) +
             fmt(" (%.0f s)", seconds_since(t0));
  return o;
}

Outcome input_only_ablation() {
  const hs::Report r = ood_report();
  const double smk = acc(r, "shiftmatch", "blur", 4), in = acc(r, "input-only", "blur", 4);
  return {smk - in >= 0.02, fmt("blur s=2: all-sites %.4f, input-only %.4f, gap %+.4f", smk, in, smk - in)};
}

// 9 ------------------------------------------------------------------------
Outcome determinism() {
  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  const fs::path dir = "acceptance-out/determinism";
  const std::string conf = "graph = " + (kConfigs / "lenet-s.graph").string() +
                           "\nimages = " + (kMnist / "images-idx3-ubyte.gz").string() +
                           "\nlabels = " + (kMnist / "labels-idx1-ubyte.gz").string() +
                           "\ntrain_count = 9500\ntest_count = 500\ncorruptions = blur, noise, dropout\n"
                           "intensities = 3\nmethods = plain, meanvar, shiftmatch, input-only, post-activation\n"
                           "members = 2\nepochs = 1\ntheory_samples = 2000\n";
  std::ostringstream log;
  std::vector<std::vector<std::uint8_t>> first;
  const std::vector<fs::path> artifacts{"weights/member-0.smwt", "weights/member-1.smwt", "train.csv",
                                        "stats/kron-pre/member-1.smts", "stats/meanvar-pre/member-0.smts",
                                        "report.csv", "report.json", "theory.csv"};
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(dir);
    hs::ExperimentConfig cfg = hs::ExperimentConfig::parse(conf);
    cfg.out = dir;
    hs::cmd_train(cfg, log);
    hs::cmd_stats(cfg, log);
    hs::cmd_eval(cfg, log);
    hs::cmd_theory(cfg, log);
    for (std::size_t i = 0; i < artifacts.size(); ++i) {
      const auto bytes = sm::binio::read_file(dir / artifacts[i]);
      if (run == 0) first.push_back(bytes);
      else check(bytes == first[i], artifacts[i].string() + " differs between runs");
    }
  }

  // Format round-trips.
  const sm::WeightSample w = sm::read_weights(dir / "weights/member-0.smwt");
  check(sm::encode_weights(w) == first[0], "SMWT re-encode");
  const sm::TrainStats ts = sm::read_train_stats(dir / "stats/kron-pre/member-1.smts");
  check(sm::encode_train_stats(ts) == first[3], "SMTS re-encode");
  for (const auto& site : ts.sites) {
    check(sm::decode_stats(sm::encode_stats(site)) == site, "SMST round-trip");
  }
  const sm::Dataset d = sm::load_idx(kMnist / "images-idx3-ubyte.gz", kMnist / "labels-idx1-ubyte.gz");
  sm::write_idx_images(dir / "images.idx", d.images);
  sm::write_idx_labels(dir / "labels.idx.gz", d.labels);
  check(sm::read_idx_images(dir / "images.idx") == d.images, "IDX u8 images");
  check(sm::read_idx_labels(dir / "labels.idx.gz") == d.labels, "IDX labels");
  const sm::Tensor blurred = sm::circulant_blur(sm::split(d, 100).first.images, 1.3);
  sm::write_idx_images(dir / "blurred.idx", blurred, sm::IdxType::F32);
  check(sm::read_idx_images(dir / "blurred.idx") == blurred, "IDX f32 images");

  Outcome o{failures.empty(), ""};
  if (failures.empty()) {
    o.detail = std::to_string(artifacts.size()) + " artifacts identical across runs; SMWT/SMTS/SMST/IDX bit-exact";
  } else {
    for (const auto& f : failures) o.detail += f + "; ";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ShiftMatch acceptance suite"};
  std::vector<int> selected;
  app.add_option("--criterion", selected, "criterion number (repeatable)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const std::set<int> want(selected.begin(), selected.end());

  const std::pair<int, std::pair<const char*, Outcome (*)()>> all[] = {
      {1, {"identity on training data", identity_on_training_data}},
      {2, {"covariance matching", covariance_matching}},
      {3, {"EmpCov / ShiftEmpCov equivalence", empcov_equivalence}},
      {4, {"exact removal of circular blur", exact_removal}},
      {5, {"linear algebra core", linalg_core}},
      {6, {"gradient check", gradient_check}},
      {7, {"directional OOD effect", ood_direction}},
      {8, {"input-only ablation", input_only_ablation}},
      {9, {"determinism and formats", determinism}},
  };
  bool ok = true;
  for (const auto& [n, entry] : all) {
    if (!want.contains(n)) continue;
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    ok = ok && o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "criterion " << n << " " << entry.first << ": " << o.detail
              << std::endl;
  }
  return ok ? 0 : hs::kThresholdFailure;
}
