// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "shiftmatch/matcher.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "shiftmatch/binio.hpp"

namespace shiftmatch {

namespace {

using RowMajorD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapD = Eigen::Map<const RowMajorD>;

ConstMapD view(const SymMatrix& a) {
  return ConstMapD(a.values().data(), static_cast<Eigen::Index>(a.n()), static_cast<Eigen::Index>(a.n()));
}

template <class T>
RowMajorD to_eigen(const BasicFeatureMatrix<T>& x) {
  RowMajorD out(static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(x.cols()));
  const T* src = x.tensor().data();
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<double>(src[i]);
  return out;
}

template <class T>
BasicFeatureMatrix<T> from_eigen(const RowMajorD& m, const std::optional<Layout>& layout) {
  std::vector<T> v(static_cast<std::size_t>(m.size()));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(m.data()[i]);
  return BasicFeatureMatrix<T>(
      BasicTensor<T>({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v)), layout);
}

double ridge(const SymMatrix& test, double eps) {
  if (eps < 0.0) throw SpecError("eps must be non-negative");
  return eps == 0.0 ? 0.0 : default_ridge(test, eps);
}

SymMatrix train_root(const CovStats& train, std::size_t k) {
  return train.form == StatsForm::SquareRoot ? train.pieces.at(k) : sym_sqrt(train.pieces.at(k));
}

// invsqrt(test + ridge) * sqrt(train): right-multiplying centered rows by this
// maps the test covariance onto the training one.
RowMajorD right_map(const SymMatrix& test, const SymMatrix& train_sqrt, double eps) {
  const SymMatrix inv = sym_invsqrt(test, ridge(test, eps));
  return view(inv) * view(train_sqrt);
}

void check_compatible(const CovStats& train, std::size_t features, const std::optional<Layout>& layout) {
  if (train.features != features) {
    throw SpecError("features have " + std::to_string(features) + " columns, statistics describe " +
                    std::to_string(train.features));
  }
  if (needs_layout(train.kind) && layout != train.layout) {
    throw SpecError("feature layout " + (layout ? layout_str(*layout) : std::string("<none>")) +
                    " does not match statistics layout " + (train.layout ? layout_str(*train.layout) : "<none>"));
  }
}

template <class T>
BasicFeatureMatrix<T> apply_match(const BasicFeatureMatrix<T>& h, const CovStats& test, const CovStats& train,
                                  double eps) {
  check_compatible(train, h.cols(), h.layout());
  if (test.kind != train.kind || test.features != train.features || test.form != StatsForm::Covariance) {
    throw SpecError("test statistics do not match the training statistics' structure");
  }
  RowMajorD x = to_eigen(h);
  const auto p = x.rows();
  const auto n = x.cols();

  if (train.kind == CovKind::MeanVarOnly) {
    const Layout l = *train.layout;
    const auto hw = static_cast<Eigen::Index>(l.spatial());
    for (std::size_t c = 0; c < l.channels; ++c) {
      const double sd_te = std::max(std::sqrt(std::max(test.pieces[c](0, 0), 0.0)), 1e-6);
      const double tr = train.pieces[c](0, 0);
      const double sd_tr = std::max(train.form == StatsForm::SquareRoot ? tr : std::sqrt(std::max(tr, 0.0)), 1e-6);
      const double scale = sd_tr / sd_te;
      auto block = x.middleCols(static_cast<Eigen::Index>(c) * hw, hw);
      block = ((block.array() - test.mean[c]) * scale + train.mean[c]).matrix();
    }
    return from_eigen<T>(x, h.layout());
  }

  for (Eigen::Index j = 0; j < n; ++j) x.col(j).array() -= test.mean[static_cast<std::size_t>(j)];
  RowMajorD out(p, n);

  switch (train.kind) {
    case CovKind::Full:
      out.noalias() = x * right_map(test.pieces[0], train_root(train, 0), eps);
      break;
    case CovKind::PerChannelSpatial: {
      const auto hw = static_cast<Eigen::Index>(train.layout->spatial());
      for (std::size_t c = 0; c < train.layout->channels; ++c) {
        const auto off = static_cast<Eigen::Index>(c) * hw;
        out.middleCols(off, hw).noalias() = x.middleCols(off, hw) * right_map(test.pieces[c], train_root(train, c), eps);
      }
      break;
    }
    case CovKind::ChannelJoint: {
      const auto hw = static_cast<Eigen::Index>(train.layout->spatial());
      const RowMajorD a = right_map(test.pieces[0], train_root(train, 0), eps);
      for (std::size_t c = 0; c < train.layout->channels; ++c) {
        const auto off = static_cast<Eigen::Index>(c) * hw;
        out.middleCols(off, hw).noalias() = x.middleCols(off, hw) * a;
      }
      break;
    }
    case CovKind::KroneckerHW: {
      const auto h = static_cast<Eigen::Index>(train.layout->height);
      const auto w = static_cast<Eigen::Index>(train.layout->width);
      for (std::size_t c = 0; c < train.layout->channels; ++c) {
        // Row side: sqrt(C_H,train) invsqrt(C_H,test); column side: invsqrt(C_W,test) sqrt(C_W,train).
        const RowMajorD ah = right_map(test.pieces[2 * c], train_root(train, 2 * c), eps).transpose();
        const RowMajorD aw = right_map(test.pieces[2 * c + 1], train_root(train, 2 * c + 1), eps);
        const auto off = static_cast<Eigen::Index>(c) * h * w;
        for (Eigen::Index q = 0; q < p; ++q) {
          Eigen::Map<const RowMajorD> b(x.data() + q * n + off, h, w);
          Eigen::Map<RowMajorD> o(out.data() + q * n + off, h, w);
          o.noalias() = ah * b * aw;
        }
      }
      break;
    }
    case CovKind::MeanVarOnly:
      break;
  }
  for (Eigen::Index j = 0; j < n; ++j) out.col(j).array() += train.mean[static_cast<std::size_t>(j)];
  return from_eigen<T>(out, h.layout());
}

template <class T>
void require_kind(const CovStats& train, CovKind kind, const char* op) {
  if (train.kind != kind) {
    throw SpecError(std::string(op) + " needs " + std::string(to_string(kind)) + " statistics, got " +
                    std::string(to_string(train.kind)));
  }
}

template <class T>
CovStats test_stats(const BasicFeatureMatrix<T>& h, const CovStats& train) {
  check_compatible(train, h.cols(), h.layout());
  return estimate_stats(h, train.kind);
}

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
BasicFeatureMatrix<T> shiftempcov(const BasicFeatureMatrix<T>& x_test, const SymMatrix& q_train) {
  if (x_test.cols() != q_train.n()) {
    throw SpecError("shiftempcov: " + std::to_string(x_test.cols()) + " features but q_train is " +
                    std::to_string(q_train.n()) + " x " + std::to_string(q_train.n()));
  }
  const RowMajorD out = to_eigen(x_test) * view(q_train);
  return from_eigen<T>(out, x_test.layout());
}

template <class T>
SymMatrix prior_cov_empcov(const BasicFeatureMatrix<T>& x_train) {
  const RowMajorD x = to_eigen(x_train);
  const double scale = 1.0 / (static_cast<double>(x_train.cols()) * static_cast<double>(x_train.rows()));
  RowMajorD g = (x.transpose() * x) * scale;
  return SymMatrix(x_train.cols(), std::vector<double>(g.data(), g.data() + g.size()));
}

template <class T>
SymMatrix prior_cov_zellner(const BasicFeatureMatrix<T>& x_train, double eps) {
  const RowMajorD x = to_eigen(x_train);
  const double n = static_cast<double>(x_train.cols());
  RowMajorD g = (x.transpose() * x) / static_cast<double>(x_train.rows());
  const SymMatrix inv = sym_inverse(SymMatrix(x_train.cols(), std::vector<double>(g.data(), g.data() + g.size())), eps);
  return inv.scaled(1.0 / n);
}

template <class T>
BasicFeatureMatrix<T> shiftmatch_with(const BasicFeatureMatrix<T>& h_test, const CovStats& test, const CovStats& train,
                                      double eps) {
  return apply_match(h_test, test, train, eps);
}

template <class T>
BasicFeatureMatrix<T> shiftmatch(const BasicFeatureMatrix<T>& h_test, const CovStats& train, double eps) {
  return apply_match(h_test, test_stats(h_test, train), train, eps);
}

template <class T>
BasicFeatureMatrix<T> shiftmatch_full(const BasicFeatureMatrix<T>& h_test, const CovStats& train, double eps) {
  require_kind<T>(train, CovKind::Full, "shiftmatch_full");
  return shiftmatch(h_test, train, eps);
}

template <class T>
BasicFeatureMatrix<T> shiftmatch_kron(const BasicFeatureMatrix<T>& h_test, const CovStats& train, double eps) {
  require_kind<T>(train, CovKind::KroneckerHW, "shiftmatch_kron");
  return shiftmatch(h_test, train, eps);
}

template <class T>
BasicFeatureMatrix<T> shiftmatch_meanvar(const BasicFeatureMatrix<T>& h_test, const CovStats& train) {
  require_kind<T>(train, CovKind::MeanVarOnly, "shiftmatch_meanvar");
  return shiftmatch(h_test, train, 0.0);
}

// ---------------------------------------------------------------------------
// Placement

std::string_view to_string(Timing t) noexcept { return t == Timing::Pre ? "pre" : "post"; }
std::string_view to_string(Variant v) noexcept { return v == Variant::InputOnly ? "input-only" : "all-sites"; }

MatchPlacement MatchPlacement::resolve(const LayerGraph& graph, Timing timing, Variant variant) {
  MatchPlacement m{timing, variant, {0}};
  if (variant == Variant::AllSites) {
    for (std::size_t i = 0; i < graph.size(); ++i) {
      if (graph.layers()[i].kind != LayerKind::Relu) continue;
      const std::size_t site = timing == Timing::Pre ? i : i + 1;
      if (site != m.sites.back()) m.sites.push_back(site);
    }
  }
  return m;
}

MatchPlacement MatchPlacement::parse(const LayerGraph& graph, std::string_view text) {
  if (text == "pre") return resolve(graph, Timing::Pre, Variant::AllSites);
  if (text == "post") return resolve(graph, Timing::Post, Variant::AllSites);
  if (text == "input-only") return resolve(graph, Timing::Pre, Variant::InputOnly);
  throw ConfigError("unknown placement '" + std::string(text) + "' (expected pre, post or input-only)");
}

void MatchPlacement::validate(const LayerGraph& graph) const {
  if (sites.empty()) throw SpecError("placement has no sites");
  if (variant == Variant::InputOnly && (sites.size() != 1 || sites[0] != 0)) {
    throw SpecError("input-only placement must consist of site 0 alone");
  }
  for (std::size_t k = 0; k < sites.size(); ++k) {
    if (sites[k] > graph.size()) throw SpecError("placement site " + std::to_string(sites[k]) + " out of range");
    if (k > 0 && sites[k] <= sites[k - 1]) throw SpecError("placement sites must be strictly ascending");
  }
}

std::string MatchPlacement::describe() const {
  std::ostringstream os;
  os << (variant == Variant::InputOnly ? "input-only" : std::string(to_string(timing))) << " [";
  for (std::size_t k = 0; k < sites.size(); ++k) os << (k ? "," : "") << sites[k];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Statistics over a model

namespace {

Tensor slice_rows(const Tensor& x, std::size_t first, std::size_t count) {
  Shape s = x.shape();
  const std::size_t per = x.size() / s[0];
  s[0] = count;
  return Tensor(s, std::vector<float>(x.data() + first * per, x.data() + (first + count) * per));
}

FeatureMatrix site_features(const LayerGraph& graph, std::size_t site, const Tensor& h) {
  const std::size_t p = h.dim(0);
  return FeatureMatrix(h.reshaped({p, h.size() / p}), graph.site_layout(site));
}

}  // namespace

CovKind effective_kind(const LayerGraph& graph, std::size_t site, CovKind kind) {
  if (kind == CovKind::MeanVarOnly || graph.site_is_spatial(site)) return kind;
  return CovKind::Full;
}

TrainStats acquire_train_stats(const LayerGraph& graph, const WeightSample& sample, const Tensor& x_train,
                               const MatchPlacement& placement, CovKind kind, std::size_t batch) {
  check_sample(graph, sample);
  placement.validate(graph);
  if (x_train.rank() < 1 || x_train.empty()) throw SpecError("no training data");
  if (batch == 0) throw ConfigError("statistics batch must be positive");
  std::vector<MomentAccumulator> accs;
  for (auto site : placement.sites) {
    const Layout l = graph.site_layout(site);
    accs.emplace_back(effective_kind(graph, site, kind), l.size(), l);
  }
  const std::size_t p = x_train.dim(0);
  const std::size_t last = placement.sites.back();
  for (std::size_t first = 0; first < p; first += batch) {
    Tensor h = slice_rows(x_train, first, std::min(batch, p - first));
    std::size_t k = 0;
    for (std::size_t i = 0; i <= last; ++i) {
      if (k < placement.sites.size() && placement.sites[k] == i) {
        accs[k].add_chunked(site_features(graph, i, h), 1000);
        ++k;
      }
      if (i < last) h = apply_layer(graph, sample, i, h);
    }
  }
  TrainStats out;
  out.sample_id = sample.sample_id;
  out.graph_hash = graph.hash();
  out.placement = placement;
  out.kind = kind;
  for (const auto& acc : accs) out.sites.push_back(square_root_form(acc.finalize()));
  return out;
}

Tensor matched_forward(const LayerGraph& graph, const WeightSample& sample, const TrainStats& stats,
                       const Tensor& x_test, double eps, const SiteObserver& observer) {
  if (stats.graph_hash != graph.hash()) throw SpecError("statistics were acquired for a different graph");
  if (stats.sample_id != sample.sample_id) {
    throw SpecError("statistics belong to sample " + std::to_string(stats.sample_id) + ", not " +
                    std::to_string(sample.sample_id));
  }
  stats.placement.validate(graph);
  if (stats.sites.size() != stats.placement.sites.size()) throw SpecError("statistics do not cover every site");
  std::size_t k = 0;
  return forward_hooked<float>(graph, sample, x_test, [&](std::size_t site, Tensor& h) {
    if (k >= stats.placement.sites.size() || stats.placement.sites[k] != site) return;
    const Shape shape = h.shape();
    const FeatureMatrix in = site_features(graph, site, h);
    FeatureMatrix out = shiftmatch(in, stats.sites[k], eps);
    if (observer) observer(site, in, out);
    h = std::move(out.tensor()).reshaped(shape);
    ++k;
  });
}

Tensor bma_predict(const LayerGraph& graph, std::span<const WeightSample> samples, std::span<const TrainStats> stats,
                   const Tensor& x_test, double eps) {
  if (samples.empty()) throw SpecError("model averaging needs at least one sample");
  if (!stats.empty() && stats.size() != samples.size()) {
    throw SpecError("got " + std::to_string(stats.size()) + " statistics for " + std::to_string(samples.size()) +
                    " samples");
  }
  std::vector<double> acc;
  Shape shape;
  for (std::size_t m = 0; m < samples.size(); ++m) {
    const Tensor logits = stats.empty() ? forward(graph, samples[m], x_test).logits
                                        : matched_forward(graph, samples[m], stats[m], x_test, eps);
    const Tensor probs = softmax(logits);
    if (acc.empty()) {
      acc.assign(probs.size(), 0.0);
      shape = probs.shape();
    }
    for (std::size_t i = 0; i < probs.size(); ++i) acc[i] += static_cast<double>(probs[i]);
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] * inv);
  return Tensor(shape, std::move(out));
}

namespace {

void check_probs(const Tensor& probs, std::span<const std::uint32_t> labels) {
  if (probs.rank() != 2) throw DimensionError("probabilities must be (P,K)");
  if (labels.size() != probs.dim(0)) throw SpecError("labels and probabilities disagree in length");
  for (auto y : labels) {
    if (y >= probs.dim(1)) throw SpecError("label " + std::to_string(y) + " out of range");
  }
}

}  // namespace

double categorical_nll(const Tensor& probs, std::span<const std::uint32_t> labels) {
  check_probs(probs, labels);
  const std::size_t p = probs.dim(0), k = probs.dim(1);
  double total = 0.0;
  for (std::size_t n = 0; n < p; ++n) {
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) row += static_cast<double>(probs.at(n, j));
    if (std::abs(row - 1.0) > 1e-4) throw SpecError("probability row " + std::to_string(n) + " does not sum to 1");
    total -= std::log(std::max(static_cast<double>(probs.at(n, labels[n])), 1e-12));
  }
  return total / static_cast<double>(p);
}

std::vector<std::uint32_t> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax needs (P,K)");
  std::vector<std::uint32_t> out(scores.dim(0));
  for (std::size_t n = 0; n < out.size(); ++n) {
    std::uint32_t best = 0;
    for (std::size_t j = 1; j < scores.dim(1); ++j) {
      if (scores.at(n, j) > scores.at(n, best)) best = static_cast<std::uint32_t>(j);
    }
    out[n] = best;
  }
  return out;
}

double accuracy(const Tensor& probs, std::span<const std::uint32_t> labels) {
  check_probs(probs, labels);
  const auto pred = argmax_rows(probs);
  std::size_t hit = 0;
  for (std::size_t n = 0; n < pred.size(); ++n) hit += pred[n] == labels[n];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// SMTS

std::vector<std::uint8_t> encode_train_stats(const TrainStats& s) {
  if (s.sites.size() != s.placement.sites.size()) throw SpecError("statistics do not cover every site");
  binio::Writer w;
  w.magic("SMTS");
  w.u32(kTrainStatsVersion);
  w.u64(s.sample_id);
  w.u64(s.graph_hash);
  w.u32(static_cast<std::uint32_t>(s.placement.timing));
  w.u32(static_cast<std::uint32_t>(s.placement.variant));
  w.u32(static_cast<std::uint32_t>(s.placement.sites.size()));
  for (auto site : s.placement.sites) w.u64(site);
  w.u32(static_cast<std::uint32_t>(s.kind));
  for (std::size_t k = 0; k < s.sites.size(); ++k) {
    const auto block = encode_stats(s.sites[k]);
    w.u64(s.placement.sites[k]);
    w.u64(block.size());
    w.bytes(block);
  }
  return std::move(w).take();
}

TrainStats decode_train_stats(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "SMTS");
  r.expect_magic("SMTS");
  const auto version = r.u32();
  if (version != kTrainStatsVersion) throw FormatError("SMTS: unsupported version " + std::to_string(version));
  TrainStats s;
  s.sample_id = r.u64();
  s.graph_hash = r.u64();
  const auto timing = r.u32();
  const auto variant = r.u32();
  if (timing > 1 || variant > 1) throw FormatError("SMTS: bad placement descriptor");
  s.placement.timing = static_cast<Timing>(timing);
  s.placement.variant = static_cast<Variant>(variant);
  const auto n = r.u32();
  if (n > r.remaining() / 8) throw FormatError("SMTS: site count exceeds payload");
  for (std::uint32_t k = 0; k < n; ++k) s.placement.sites.push_back(r.u64());
  const auto kind = r.u32();
  if (kind > static_cast<std::uint32_t>(CovKind::MeanVarOnly)) throw FormatError("SMTS: bad covariance kind");
  s.kind = static_cast<CovKind>(kind);
  for (std::uint32_t k = 0; k < n; ++k) {
    if (r.u64() != s.placement.sites[k]) throw FormatError("SMTS: site block out of order");
    const auto len = r.u64();
    if (len > r.remaining()) throw FormatError("SMTS: site block exceeds payload");
    s.sites.push_back(decode_stats(r.bytes(len)));
    const auto got = s.sites.back().kind;
    if (got != s.kind && !(s.kind != CovKind::MeanVarOnly && got == CovKind::Full))
      throw FormatError("SMTS: site block has the wrong covariance kind");
  }
  if (!r.done()) throw FormatError("SMTS: trailing bytes");
  return s;
}

void write_train_stats(const std::filesystem::path& path, const TrainStats& stats) {
  binio::write_file(path, encode_train_stats(stats));
}

TrainStats read_train_stats(const std::filesystem::path& path) { return decode_train_stats(binio::read_file(path)); }

#define SHIFTMATCH_MATCH_INSTANTIATE(T)                                                                          \
  template BasicFeatureMatrix<T> shiftempcov(const BasicFeatureMatrix<T>&, const SymMatrix&);                   \
  template SymMatrix prior_cov_empcov(const BasicFeatureMatrix<T>&);                                             \
  template SymMatrix prior_cov_zellner(const BasicFeatureMatrix<T>&, double);                                    \
  template BasicFeatureMatrix<T> shiftmatch_full(const BasicFeatureMatrix<T>&, const CovStats&, double);        \
  template BasicFeatureMatrix<T> shiftmatch_kron(const BasicFeatureMatrix<T>&, const CovStats&, double);        \
  template BasicFeatureMatrix<T> shiftmatch_meanvar(const BasicFeatureMatrix<T>&, const CovStats&);             \
  template BasicFeatureMatrix<T> shiftmatch(const BasicFeatureMatrix<T>&, const CovStats&, double);             \
  template BasicFeatureMatrix<T> shiftmatch_with(const BasicFeatureMatrix<T>&, const CovStats&, const CovStats&, \
                                                 double);

SHIFTMATCH_MATCH_INSTANTIATE(float)
SHIFTMATCH_MATCH_INSTANTIATE(double)

}  // namespace shiftmatch
