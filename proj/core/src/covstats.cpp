// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "shiftmatch/covstats.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "shiftmatch/binio.hpp"

namespace shiftmatch {

namespace {

using RowMajorD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapD = Eigen::Map<RowMajorD>;

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

// lower += x^T x for a rows x n block (only the lower triangle is maintained).
void rank_update(std::vector<double>& lower, const RowMajorD& x) {
  const auto n = x.cols();
  MapD s(lower.data(), n, n);
  s.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
}

// Centered covariance from the lower-triangle raw sum: S/P - m m^T, mirrored.
SymMatrix centered(const std::vector<double>& lower, std::span<const double> mean, double count, double divisor) {
  const std::size_t n = mean.size();
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = (lower[i * n + j] / count - mean[i] * mean[j]) / divisor;
      out[i * n + j] = v;
      out[j * n + i] = v;
    }
  }
  return SymMatrix(n, std::move(out));
}

}  // namespace

std::string_view to_string(CovKind kind) noexcept {
  switch (kind) {
    case CovKind::Full: return "full";
    case CovKind::PerChannelSpatial: return "per-channel";
    case CovKind::KroneckerHW: return "kron";
    case CovKind::ChannelJoint: return "channel-joint";
    case CovKind::MeanVarOnly: return "meanvar";
  }
  return "unknown";
}

CovKind parse_cov_kind(std::string_view text) {
  if (text == "full") return CovKind::Full;
  if (text == "per-channel") return CovKind::PerChannelSpatial;
  if (text == "kron") return CovKind::KroneckerHW;
  if (text == "channel-joint") return CovKind::ChannelJoint;
  if (text == "meanvar") return CovKind::MeanVarOnly;
  throw ConfigError("unknown covariance structure '" + std::string(text) + "'");
}

bool needs_layout(CovKind kind) noexcept { return kind != CovKind::Full; }

MomentAccumulator::MomentAccumulator(CovKind kind, std::size_t features, std::optional<Layout> layout)
    : kind_(kind), features_(features), layout_(layout) {
  if (features_ == 0) throw DimensionError("accumulator needs at least one feature");
  if (layout_ && layout_->size() != features_) {
    throw DimensionError("layout " + layout_str(*layout_) + " does not cover " + std::to_string(features_) +
                         " features");
  }
  if (needs_layout(kind_) && !layout_) {
    throw SpecError(std::string(to_string(kind_)) + " statistics require a (C,H,W) layout");
  }
  switch (kind_) {
    case CovKind::Full:
      sum_ = zeros(features_);
      second_.push_back(zeros(features_ * features_));
      break;
    case CovKind::PerChannelSpatial:
      sum_ = zeros(features_);
      for (std::size_t c = 0; c < layout_->channels; ++c) second_.push_back(zeros(layout_->spatial() * layout_->spatial()));
      break;
    case CovKind::KroneckerHW:
      sum_ = zeros(features_);
      for (std::size_t c = 0; c < layout_->channels; ++c) {
        second_.push_back(zeros(layout_->height * layout_->height));
        second_.push_back(zeros(layout_->width * layout_->width));
      }
      break;
    case CovKind::ChannelJoint:
      sum_ = zeros(features_);
      second_.push_back(zeros(layout_->spatial() * layout_->spatial()));
      break;
    case CovKind::MeanVarOnly:
      sum_ = zeros(layout_->channels);
      second_.push_back(zeros(layout_->channels));
      break;
  }
}

namespace {

template <class T>
void check_batch(const MomentAccumulator& acc, const BasicFeatureMatrix<T>& batch) {
  if (batch.cols() != acc.features()) {
    throw SpecError("batch has " + std::to_string(batch.cols()) + " features, accumulator expects " +
                    std::to_string(acc.features()));
  }
  if (needs_layout(acc.kind()) && batch.layout() != acc.layout()) {
    throw SpecError("batch layout " + (batch.layout() ? layout_str(*batch.layout()) : std::string("<none>")) +
                    " does not match accumulator layout " + layout_str(*acc.layout()));
  }
}

}  // namespace

template <class T>
void MomentAccumulator::add(const BasicFeatureMatrix<T>& batch) {
  add_chunked(batch, batch.rows());
}

template <class T>
void MomentAccumulator::add_chunked(const BasicFeatureMatrix<T>& batch, std::size_t chunk) {
  check_batch(*this, batch);
  if (chunk == 0) chunk = batch.rows();
  const std::size_t n = features_;
  for (std::size_t first = 0; first < batch.rows(); first += chunk) {
    const std::size_t rows = std::min(chunk, batch.rows() - first);
    RowMajorD x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
    const T* src = batch.tensor().data() + first * n;
    for (std::size_t i = 0; i < rows * n; ++i) x.data()[i] = static_cast<double>(src[i]);

    if (kind_ == CovKind::MeanVarOnly) {
      const std::size_t hw = layout_->spatial();
      for (std::size_t p = 0; p < rows; ++p) {
        for (std::size_t c = 0; c < layout_->channels; ++c) {
          double s = 0.0, s2 = 0.0;
          for (std::size_t k = 0; k < hw; ++k) {
            const double v = x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c * hw + k));
            s += v;
            s2 += v * v;
          }
          sum_[c] += s;
          second_[0][c] += s2;
        }
      }
      count_ += rows;
      continue;
    }

    const Eigen::VectorXd colsum = x.colwise().sum().transpose();
    for (std::size_t j = 0; j < n; ++j) sum_[j] += colsum[static_cast<Eigen::Index>(j)];

    switch (kind_) {
      case CovKind::Full:
        rank_update(second_[0], x);
        break;
      case CovKind::PerChannelSpatial: {
        const auto hw = static_cast<Eigen::Index>(layout_->spatial());
        for (std::size_t c = 0; c < layout_->channels; ++c) {
          rank_update(second_[c], x.middleCols(static_cast<Eigen::Index>(c) * hw, hw));
        }
        break;
      }
      case CovKind::ChannelJoint: {
        const auto hw = static_cast<Eigen::Index>(layout_->spatial());
        for (std::size_t c = 0; c < layout_->channels; ++c) {
          rank_update(second_[0], x.middleCols(static_cast<Eigen::Index>(c) * hw, hw));
        }
        break;
      }
      case CovKind::KroneckerHW: {
        const auto h = static_cast<Eigen::Index>(layout_->height);
        const auto w = static_cast<Eigen::Index>(layout_->width);
        const auto r = static_cast<Eigen::Index>(rows);
        RowMajorD wide(h, r * w);   // [X_1 X_2 ... X_P]
        RowMajorD tall(r * h, w);   // [X_1; X_2; ...; X_P]
        for (std::size_t c = 0; c < layout_->channels; ++c) {
          for (Eigen::Index p = 0; p < r; ++p) {
            Eigen::Map<const RowMajorD> block(x.data() + p * static_cast<Eigen::Index>(n) +
                                                  static_cast<Eigen::Index>(c) * h * w,
                                              h, w);
            wide.middleCols(p * w, w) = block;
            tall.middleRows(p * h, h) = block;
          }
          rank_update(second_[2 * c], wide.transpose());
          rank_update(second_[2 * c + 1], tall);
        }
        break;
      }
      case CovKind::MeanVarOnly:
        break;
    }
    count_ += rows;
  }
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.kind_ != kind_ || other.features_ != features_ || other.layout_ != layout_) {
    throw SpecError("cannot merge accumulators with different structure");
  }
  count_ += other.count_;
  for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += other.sum_[i];
  for (std::size_t b = 0; b < second_.size(); ++b) {
    for (std::size_t i = 0; i < second_[b].size(); ++i) second_[b][i] += other.second_[b][i];
  }
}

std::vector<KronFactors> kron_factorize(const MomentAccumulator& acc) {
  if (acc.kind() != CovKind::KroneckerHW) throw SpecError("kron_factorize needs a KroneckerHW accumulator");
  if (acc.count() < 2) throw InsufficientDataError("need at least 2 examples, got " + std::to_string(acc.count()));
  const Layout l = *acc.layout();
  const double p = static_cast<double>(acc.count());
  const std::size_t h = l.height, w = l.width;
  std::vector<KronFactors> out;
  out.reserve(l.channels);
  const auto& second = acc.second_moments();
  for (std::size_t c = 0; c < l.channels; ++c) {
    const double* sum = acc.sum().data() + c * h * w;
    // Row-side and column-side centered scatter, divided by P.
    std::vector<double> rows(h * h), cols(w * w);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double mm = 0.0;
        for (std::size_t k = 0; k < w; ++k) mm += (sum[i * w + k] / p) * (sum[j * w + k] / p);
        const double v = second[2 * c][i * h + j] / p - mm;
        rows[i * h + j] = rows[j * h + i] = v;
      }
    }
    for (std::size_t i = 0; i < w; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double mm = 0.0;
        for (std::size_t k = 0; k < h; ++k) mm += (sum[k * w + i] / p) * (sum[k * w + j] / p);
        const double v = second[2 * c + 1][i * w + j] / p - mm;
        cols[i * w + j] = cols[j * w + i] = v;
      }
    }
    double raw_energy = 0.0;
    for (std::size_t i = 0; i < h; ++i) raw_energy += second[2 * c][i * h + i] / p;
    double total = 0.0, cols_trace = 0.0;
    for (std::size_t i = 0; i < h; ++i) total += rows[i * h + i];
    for (std::size_t i = 0; i < w; ++i) cols_trace += cols[i * w + i];

    KronFactors f;
    if (total <= 1e-12 * raw_energy || total <= 0.0 || cols_trace <= 0.0) {
      f.rows = SymMatrix(h);
      f.cols = SymMatrix::identity(w);
    } else {
      // C_W -> trace W; C_H then carries total / W so the product has trace `total`.
      const double cols_scale = static_cast<double>(w) / cols_trace;
      const double rows_scale = (total / static_cast<double>(w)) / total;
      for (double& v : cols) v *= cols_scale;
      for (double& v : rows) v *= rows_scale;
      f.rows = SymMatrix(h, std::move(rows));
      f.cols = SymMatrix(w, std::move(cols));
    }
    out.push_back(std::move(f));
  }
  return out;
}

CovStats MomentAccumulator::finalize() const {
  if (count_ < 2) throw InsufficientDataError("need at least 2 examples, got " + std::to_string(count_));
  CovStats s;
  s.kind = kind_;
  s.form = StatsForm::Covariance;
  s.features = features_;
  s.layout = layout_;
  s.count = count_;
  const double p = static_cast<double>(count_);

  if (kind_ == CovKind::MeanVarOnly) {
    const double denom = p * static_cast<double>(layout_->spatial());
    s.mean.resize(layout_->channels);
    for (std::size_t c = 0; c < layout_->channels; ++c) {
      const double m = sum_[c] / denom;
      const double var = std::max(second_[0][c] / denom - m * m, 0.0);
      s.mean[c] = m;
      s.pieces.push_back(SymMatrix(1, {var}));
    }
    return s;
  }

  s.mean.resize(features_);
  for (std::size_t j = 0; j < features_; ++j) s.mean[j] = sum_[j] / p;

  switch (kind_) {
    case CovKind::Full:
      s.pieces.push_back(centered(second_[0], s.mean, p, 1.0));
      break;
    case CovKind::PerChannelSpatial: {
      const std::size_t hw = layout_->spatial();
      for (std::size_t c = 0; c < layout_->channels; ++c) {
        s.pieces.push_back(centered(second_[c], std::span(s.mean).subspan(c * hw, hw), p, 1.0));
      }
      break;
    }
    case CovKind::ChannelJoint: {
      const std::size_t hw = layout_->spatial();
      const double cs = static_cast<double>(layout_->channels);
      std::vector<double> out(hw * hw);
      for (std::size_t i = 0; i < hw; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          double mm = 0.0;
          for (std::size_t c = 0; c < layout_->channels; ++c) mm += s.mean[c * hw + i] * s.mean[c * hw + j];
          const double v = (second_[0][i * hw + j] / p - mm) / cs;
          out[i * hw + j] = out[j * hw + i] = v;
        }
      }
      s.pieces.push_back(SymMatrix(hw, std::move(out)));
      break;
    }
    case CovKind::KroneckerHW:
      for (auto& f : kron_factorize(*this)) {
        s.pieces.push_back(std::move(f.rows));
        s.pieces.push_back(std::move(f.cols));
      }
      break;
    case CovKind::MeanVarOnly:
      break;
  }
  return s;
}

CovStats square_root_form(const CovStats& stats) {
  if (stats.form == StatsForm::SquareRoot) return stats;
  CovStats out = stats;
  out.form = StatsForm::SquareRoot;
  for (auto& piece : out.pieces) piece = sym_sqrt(piece);
  return out;
}

template <class T>
CovStats estimate_stats(const BasicFeatureMatrix<T>& x, CovKind kind, std::size_t chunk) {
  if (needs_layout(kind) && !x.layout()) {
    throw SpecError(std::string(to_string(kind)) + " statistics require a (C,H,W) layout");
  }
  MomentAccumulator acc(kind, x.cols(), x.layout());
  acc.add_chunked(x, chunk);
  return acc.finalize();
}

template void MomentAccumulator::add(const BasicFeatureMatrix<float>&);
template void MomentAccumulator::add(const BasicFeatureMatrix<double>&);
template void MomentAccumulator::add_chunked(const BasicFeatureMatrix<float>&, std::size_t);
template void MomentAccumulator::add_chunked(const BasicFeatureMatrix<double>&, std::size_t);
template CovStats estimate_stats(const BasicFeatureMatrix<float>&, CovKind, std::size_t);
template CovStats estimate_stats(const BasicFeatureMatrix<double>&, CovKind, std::size_t);

// ---------------------------------------------------------------------------
// SMST serialization

std::vector<std::uint8_t> encode_stats(const CovStats& stats) {
  binio::Writer w;
  w.magic("SMST");
  w.u32(kStatsVersion);
  w.u32(static_cast<std::uint32_t>(stats.kind));
  w.u32(static_cast<std::uint32_t>(stats.form));
  w.u64(stats.features);
  w.u32(stats.layout ? 1u : 0u);
  const Layout l = stats.layout.value_or(Layout{});
  w.u64(l.channels);
  w.u64(l.height);
  w.u64(l.width);
  w.u64(stats.count);
  w.u64(stats.mean.size());
  for (double m : stats.mean) w.f64(m);
  w.u64(stats.pieces.size());
  for (const auto& piece : stats.pieces) {
    w.u64(piece.n());
    for (double v : piece.values()) w.f64(v);
  }
  return std::move(w).take();
}

namespace {

CovStats read_stats_body(binio::Reader& r) {
  r.expect_magic("SMST");
  const std::uint32_t version = r.u32();
  if (version != kStatsVersion) throw FormatError("SMST: unsupported version " + std::to_string(version));
  CovStats s;
  const std::uint32_t kind = r.u32();
  if (kind > static_cast<std::uint32_t>(CovKind::MeanVarOnly)) throw FormatError("SMST: bad covariance kind");
  s.kind = static_cast<CovKind>(kind);
  const std::uint32_t form = r.u32();
  if (form > 1) throw FormatError("SMST: bad statistics form");
  s.form = static_cast<StatsForm>(form);
  s.features = r.u64();
  const bool has_layout = r.u32() != 0;
  Layout l;
  l.channels = r.u64();
  l.height = r.u64();
  l.width = r.u64();
  if (has_layout) s.layout = l;
  s.count = r.u64();
  const std::uint64_t mean_len = r.u64();
  if (mean_len > r.remaining() / 8) throw FormatError("SMST: mean length exceeds payload");
  s.mean.resize(mean_len);
  for (auto& m : s.mean) m = r.f64();
  const std::uint64_t pieces = r.u64();
  for (std::uint64_t k = 0; k < pieces; ++k) {
    const std::uint64_t n = r.u64();
    if (n != 0 && n > r.remaining() / 8 / n) throw FormatError("SMST: piece order exceeds payload");
    std::vector<double> v(n * n);
    for (auto& x : v) x = r.f64();
    SymMatrix m(n);
    std::copy(v.begin(), v.end(), m.values().begin());
    s.pieces.push_back(std::move(m));
  }
  return s;
}

}  // namespace

CovStats decode_stats(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "SMST");
  CovStats s = read_stats_body(r);
  if (!r.done()) throw FormatError("SMST: trailing bytes");
  return s;
}

void write_stats(const std::filesystem::path& path, const CovStats& stats) {
  binio::write_file(path, encode_stats(stats));
}

CovStats read_stats(const std::filesystem::path& path) { return decode_stats(binio::read_file(path)); }

}  // namespace shiftmatch
