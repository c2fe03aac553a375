// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "shiftmatch/datacorrupt.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <random>

#include "shiftmatch/binio.hpp"
#include "shiftmatch/covstats.hpp"
#include "shiftmatch/linalg.hpp"
#include "shiftmatch/matcher.hpp"

namespace shiftmatch {

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(f, buf, sizeof buf);
    if (n < 0) {
      int code = 0;
      const std::string msg = gzerror(f, &code);
      gzclose(f);
      throw FormatError(path.string() + ": " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  gzclose(f);
  return out;
}

void write_maybe_gzip(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
  if (path.extension() != ".gz") {
    binio::write_file(path, data);
    return;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  gzFile f = gzopen(path.c_str(), "wb9");
  if (f == nullptr) throw FormatError("cannot create " + path.string());
  const int n = data.empty() ? 0 : gzwrite(f, data.data(), static_cast<unsigned>(data.size()));
  const int rc = gzclose(f);
  if (n != static_cast<int>(data.size()) || rc != Z_OK) throw FormatError("failed writing " + path.string());
}

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

struct IdxHeader {
  std::uint8_t type;
  std::vector<std::uint32_t> dims;
  std::size_t payload_at;
};

IdxHeader parse_header(std::span<const std::uint8_t> b, std::uint8_t ndim, const std::string& what) {
  if (b.size() < 4) throw FormatError(what + ": file too short for an IDX header");
  if (b[0] != 0 || b[1] != 0) throw FormatError(what + ": bad IDX magic");
  IdxHeader h{b[2], {}, 4};
  if (h.type != 0x08 && h.type != 0x0D) throw FormatError(what + ": unsupported IDX element type");
  if (b[3] != ndim) {
    throw FormatError(what + ": expected " + std::to_string(ndim) + " dimensions, got " + std::to_string(b[3]));
  }
  if (b.size() < 4 + 4 * std::size_t{ndim}) throw FormatError(what + ": truncated IDX header");
  std::size_t total = 1;
  for (std::uint8_t k = 0; k < ndim; ++k) {
    h.dims.push_back(be32(b, 4 + 4 * k));
    if (h.dims.back() == 0) throw FormatError(what + ": zero IDX extent");
    total *= h.dims.back();
  }
  h.payload_at = 4 + 4 * std::size_t{ndim};
  const std::size_t width = h.type == 0x08 ? 1 : 4;
  if (b.size() != h.payload_at + total * width) {
    throw FormatError(what + ": payload has " + std::to_string(b.size() - h.payload_at) + " bytes, header implies " +
                      std::to_string(total * width));
  }
  return h;
}

}  // namespace

Tensor read_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_maybe_gzip(path);
  const IdxHeader h = parse_header(bytes, 3, path.string());
  const std::size_t p = h.dims[0], rows = h.dims[1], cols = h.dims[2];
  std::vector<float> v(p * rows * cols);
  const std::uint8_t* src = bytes.data() + h.payload_at;
  if (h.type == 0x08) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(src[i]) / 255.0f;
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::bit_cast<float>(be32({src, v.size() * 4}, 4 * i));
  }
  return Tensor({p, 1, rows, cols}, std::move(v));
}

std::vector<std::uint32_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_maybe_gzip(path);
  const IdxHeader h = parse_header(bytes, 1, path.string());
  if (h.type != 0x08) throw FormatError(path.string() + ": labels must be u8");
  return std::vector<std::uint32_t>(bytes.begin() + static_cast<std::ptrdiff_t>(h.payload_at), bytes.end());
}

void write_idx_images(const std::filesystem::path& path, const Tensor& images, IdxType type) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw DimensionError("IDX images must be (P,1,H,W), got " + shape_str(images.shape()));
  }
  std::vector<std::uint8_t> out{0, 0, static_cast<std::uint8_t>(type), 3};
  put_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  put_be32(out, static_cast<std::uint32_t>(images.dim(2)));
  put_be32(out, static_cast<std::uint32_t>(images.dim(3)));
  for (float x : images.values()) {
    if (type == IdxType::U8) {
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0f, 1.0f) * 255.0f)));
    } else {
      put_be32(out, std::bit_cast<std::uint32_t>(x));
    }
  }
  write_maybe_gzip(path, out);
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint32_t> labels) {
  std::vector<std::uint8_t> out{0, 0, 0x08, 1};
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (auto y : labels) {
    if (y > 255) throw SpecError("IDX labels must fit in a byte");
    out.push_back(static_cast<std::uint8_t>(y));
  }
  write_maybe_gzip(path, out);
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes) {
  Dataset d{read_idx_images(images), read_idx_labels(labels), classes};
  if (d.images.dim(0) != d.labels.size()) {
    throw FormatError("image file has " + std::to_string(d.images.dim(0)) + " entries, label file " +
                      std::to_string(d.labels.size()));
  }
  for (auto y : d.labels) {
    if (y >= classes) throw FormatError("label " + std::to_string(y) + " out of range");
  }
  for (float x : d.images.values()) {
    if (!std::isfinite(x)) throw FormatError("non-finite pixel value");
  }
  return d;
}

template <class T>
std::pair<BasicDataset<T>, BasicDataset<T>> split(const BasicDataset<T>& data, std::size_t count) {
  const std::size_t p = data.size();
  if (count == 0 || count >= p) throw SpecError("split point must leave both parts non-empty");
  Shape s = data.images.shape();
  const std::size_t per = data.images.size() / p;
  auto part = [&](std::size_t first, std::size_t n) {
    Shape sh = s;
    sh[0] = n;
    BasicDataset<T> d;
    d.images = BasicTensor<T>(sh, std::vector<T>(data.images.data() + first * per, data.images.data() + (first + n) * per));
    d.labels.assign(data.labels.begin() + static_cast<std::ptrdiff_t>(first),
                    data.labels.begin() + static_cast<std::ptrdiff_t>(first + n));
    d.classes = data.classes;
    return d;
  };
  return {part(0, count), part(count, p - count)};
}

// ---------------------------------------------------------------------------
// Fourier basis

TensorD fourier_basis_1d(std::size_t n) {
  if (n == 0) throw DimensionError("basis size must be positive");
  TensorD v({n, n});
  const double inv = 1.0 / std::sqrt(static_cast<double>(n));
  const double amp = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t j = 0; j < n; ++j) v.at(j, 0) = inv;
  std::size_t col = 1;
  for (std::size_t k = 1; 2 * k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k * j) / static_cast<double>(n);
      v.at(j, col) = amp * std::cos(a);
      v.at(j, col + 1) = amp * std::sin(a);
    }
    col += 2;
  }
  if (n % 2 == 0 && n > 1) {
    for (std::size_t j = 0; j < n; ++j) v.at(j, col) = (j % 2 == 0 ? inv : -inv);
  }
  return v;
}

namespace {

std::vector<std::size_t> frequencies_1d(std::size_t n) {
  std::vector<std::size_t> f(n, 0);
  std::size_t col = 1;
  for (std::size_t k = 1; 2 * k < n; ++k, col += 2) f[col] = f[col + 1] = k;
  if (n % 2 == 0 && n > 1) f[col] = n / 2;
  return f;
}

}  // namespace

TensorD fourier_basis(std::size_t h, std::size_t w) {
  const TensorD vh = fourier_basis_1d(h), vw = fourier_basis_1d(w);
  TensorD v({h * w, h * w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t a = 0; a < h; ++a)
        for (std::size_t b = 0; b < w; ++b) v.at(i * w + j, a * w + b) = vh.at(i, a) * vw.at(j, b);
  return v;
}

std::vector<std::pair<std::size_t, std::size_t>> fourier_frequencies(std::size_t h, std::size_t w) {
  const auto fh = frequencies_1d(h), fw = frequencies_1d(w);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t a = 0; a < h; ++a)
    for (std::size_t b = 0; b < w; ++b) out.emplace_back(fh[a], fw[b]);
  return out;
}

std::vector<double> power_law_spectrum(std::size_t h, std::size_t w) {
  std::vector<double> s;
  for (auto [a, b] : fourier_frequencies(h, w)) {
    s.push_back(1.0 / std::sqrt(1.0 + static_cast<double>(a * a + b * b)));
  }
  return s;
}

DatasetD synth_stationary(std::size_t p, std::size_t h, std::size_t w, std::span<const double> spectrum,
                          std::uint64_t seed) {
  const std::size_t n = h * w;
  if (p == 0 || n == 0) throw DimensionError("synthetic dataset needs positive extents");
  if (spectrum.size() != n) {
    throw SpecError("spectrum has " + std::to_string(spectrum.size()) + " entries, need " + std::to_string(n));
  }
  for (double s : spectrum) {
    if (!(s >= 0.0)) throw SpecError("spectrum entries must be non-negative");
  }
  const TensorD v = fourier_basis(h, w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TensorD z({p, n});
  for (std::size_t q = 0; q < p; ++q)
    for (std::size_t k = 0; k < n; ++k) z.at(q, k) = spectrum[k] * normal(rng);
  TensorD x = matmul(z, v, false, true);  // rows: (V (s .* z))^T
  DatasetD d;
  d.images = std::move(x).reshaped({p, 1, h, w});
  d.labels.assign(p, 0);
  d.classes = 1;
  return d;
}

// ---------------------------------------------------------------------------
// Corruptions

std::vector<double> periodic_gaussian(std::size_t n, double sigma) {
  if (!(sigma > 0.0)) throw SpecError("blur sigma must be positive");
  if (n == 0) throw DimensionError("kernel size must be positive");
  const double dn = static_cast<double>(n);
  const auto wraps = static_cast<long>(std::ceil(10.0 * sigma / dn)) + 1;
  std::vector<double> k(n, 0.0);
  for (std::size_t d = 0; d < n; ++d) {
    for (long m = -wraps; m <= wraps; ++m) {
      const double t = static_cast<double>(d) + static_cast<double>(m) * dn;
      k[d] += std::exp(-t * t / (2.0 * sigma * sigma));
    }
  }
  double total = 0.0;
  for (double v : k) total += v;
  for (double& v : k) v /= total;
  return k;
}

TensorD circulant_blur_matrix(std::size_t h, std::size_t w, double sigma) {
  const auto kh = periodic_gaussian(h, sigma), kw = periodic_gaussian(w, sigma);
  TensorD c({h * w, h * w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t a = 0; a < h; ++a)
        for (std::size_t b = 0; b < w; ++b) {
          c.at(i * w + j, a * w + b) = kh[(a + h - i) % h] * kw[(b + w - j) % w];
        }
  return c;
}

namespace {

template <class T>
void check_images(const BasicTensor<T>& x, const char* op) {
  if (x.rank() != 4) throw DimensionError(std::string(op) + " needs (P,C,H,W), got " + shape_str(x.shape()));
}

// Separable zero-padded filter, taps indexed by signed offset.
template <class T, class Taps>
BasicTensor<T> separable(const BasicTensor<T>& x, std::size_t radius_h, std::size_t radius_w, Taps&& tap_h,
                         Taps&& tap_w) {
  const std::size_t p = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> mid(h * w);
  BasicTensor<T> y(x.shape());
  const auto ih = static_cast<long>(h), iw = static_cast<long>(w);
  for (std::size_t n = 0; n < p; ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = x.data() + (n * c + ch) * h * w;
      T* dst = y.data() + (n * c + ch) * h * w;
      for (long i = 0; i < ih; ++i)
        for (long j = 0; j < iw; ++j) {
          double acc = 0.0;
          for (long d = -static_cast<long>(radius_w); d <= static_cast<long>(radius_w); ++d) {
            const long s = j - d;
            if (s < 0 || s >= iw) continue;
            acc += tap_w(d) * static_cast<double>(src[i * iw + s]);
          }
          mid[static_cast<std::size_t>(i * iw + j)] = acc;
        }
      for (long i = 0; i < ih; ++i)
        for (long j = 0; j < iw; ++j) {
          double acc = 0.0;
          for (long d = -static_cast<long>(radius_h); d <= static_cast<long>(radius_h); ++d) {
            const long s = i - d;
            if (s < 0 || s >= ih) continue;
            acc += tap_h(d) * mid[static_cast<std::size_t>(s * iw + j)];
          }
          dst[i * iw + j] = static_cast<T>(acc);
        }
    }
  return y;
}

}  // namespace

template <class T>
BasicTensor<T> circulant_blur(const BasicTensor<T>& x, double sigma) {
  check_images(x, "circulant_blur");
  const std::size_t h = x.dim(2), w = x.dim(3);
  const auto kh = periodic_gaussian(h, sigma), kw = periodic_gaussian(w, sigma);
  // Offsets 0 .. n-1 cover every circular distance exactly once.
  const std::size_t p = x.dim(0), c = x.dim(1);
  std::vector<double> mid(h * w);
  BasicTensor<T> y(x.shape());
  for (std::size_t n = 0; n < p; ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = x.data() + (n * c + ch) * h * w;
      T* dst = y.data() + (n * c + ch) * h * w;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double acc = 0.0;
          for (std::size_t d = 0; d < w; ++d) acc += kw[d] * static_cast<double>(src[i * w + (j + w - d) % w]);
          mid[i * w + j] = acc;
        }
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double acc = 0.0;
          for (std::size_t d = 0; d < h; ++d) acc += kh[d] * mid[((i + h - d) % h) * w + j];
          dst[i * w + j] = static_cast<T>(acc);
        }
    }
  return y;
}

template <class T>
BasicTensor<T> zero_padded_blur(const BasicTensor<T>& x, double sigma) {
  check_images(x, "zero_padded_blur");
  if (!(sigma > 0.0)) throw SpecError("blur sigma must be positive");
  const auto r = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> g(2 * r + 1);
  double total = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double t = static_cast<double>(k) - static_cast<double>(r);
    total += (g[k] = std::exp(-t * t / (2.0 * sigma * sigma)));
  }
  for (double& v : g) v /= total;
  auto tap = [&](long d) { return g[static_cast<std::size_t>(d + static_cast<long>(r))]; };
  return separable(x, r, r, tap, tap);
}

template <class T>
BasicTensor<T> gaussian_noise(const BasicTensor<T>& x, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw SpecError("noise sigma must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma > 0.0 ? sigma : 1.0);
  BasicTensor<T> y = x;
  for (auto& v : y.values()) {
    const double n = sigma > 0.0 ? normal(rng) : 0.0;
    v = static_cast<T>(std::clamp(static_cast<double>(v) + n, 0.0, 1.0));
  }
  return y;
}

template <class T>
BasicTensor<T> contrast(const BasicTensor<T>& x, double alpha) {
  check_images(x, "contrast");
  BasicTensor<T> y = x;
  const std::size_t per = x.size() / x.dim(0);
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    T* d = y.data() + n * per;
    double m = 0.0;
    for (std::size_t k = 0; k < per; ++k) m += static_cast<double>(d[k]);
    m /= static_cast<double>(per);
    for (std::size_t k = 0; k < per; ++k) d[k] = static_cast<T>((static_cast<double>(d[k]) - m) * alpha + m);
  }
  return y;
}

template <class T>
BasicTensor<T> pixel_dropout(const BasicTensor<T>& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p > 1.0) throw SpecError("dropout probability must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution drop(p);
  BasicTensor<T> y = x;
  for (auto& v : y.values()) {
    if (drop(rng)) v = T(0);
  }
  return y;
}

template <class T>
BasicTensor<T> shift(const BasicTensor<T>& x, int dx, int dy) {
  check_images(x, "shift");
  const std::size_t h = x.dim(2), w = x.dim(3);
  const auto ih = static_cast<long>(h), iw = static_cast<long>(w);
  BasicTensor<T> y(x.shape());
  for (std::size_t n = 0; n < x.dim(0) * x.dim(1); ++n) {
    const T* src = x.data() + n * h * w;
    T* dst = y.data() + n * h * w;
    for (long i = 0; i < ih; ++i)
      for (long j = 0; j < iw; ++j) {
        const long si = (((i - dy) % ih) + ih) % ih, sj = (((j - dx) % iw) + iw) % iw;
        dst[i * iw + j] = src[si * iw + sj];
      }
  }
  return y;
}

bool CorruptionOp::linear_stationary() const noexcept {
  return kind == Kind::Identity || kind == Kind::CirculantBlur || kind == Kind::Shift;
}

std::string CorruptionOp::describe() const {
  switch (kind) {
    case Kind::Identity: return "identity";
    case Kind::CirculantBlur: return "blur(sigma=" + std::to_string(param) + ")";
    case Kind::ZeroPadBlur: return "zblur(sigma=" + std::to_string(param) + ")";
    case Kind::GaussianNoise: return "noise(sigma=" + std::to_string(param) + ")";
    case Kind::Contrast: return "contrast(alpha=" + std::to_string(param) + ")";
    case Kind::PixelDropout: return "dropout(p=" + std::to_string(param) + ")";
    case Kind::Shift: return "shift(" + std::to_string(dx) + "," + std::to_string(dy) + ")";
  }
  return "unknown";
}

template <class T>
BasicTensor<T> CorruptionOp::apply(const BasicTensor<T>& x) const {
  switch (kind) {
    case Kind::Identity: return x;
    case Kind::CirculantBlur: return circulant_blur(x, param);
    case Kind::ZeroPadBlur: return zero_padded_blur(x, param);
    case Kind::GaussianNoise: return gaussian_noise(x, param, seed);
    case Kind::Contrast: return contrast(x, param);
    case Kind::PixelDropout: return pixel_dropout(x, param, seed);
    case Kind::Shift: return shift(x, dx, dy);
  }
  throw SpecError("unknown corruption");
}

CorruptionOp corruption_at(std::string_view name, int intensity, std::uint64_t seed) {
  if (intensity < 1 || intensity > 5) {
    throw ConfigError("intensity must be in 1..5, got " + std::to_string(intensity));
  }
  const auto i = static_cast<std::size_t>(intensity - 1);
  using K = CorruptionOp::Kind;
  CorruptionOp op;
  op.seed = seed;
  static constexpr double kBlur[] = {0.5, 1.0, 1.5, 2.0, 2.5};
  static constexpr double kNoise[] = {0.1, 0.2, 0.3, 0.4, 0.5};
  static constexpr double kContrast[] = {0.8, 0.6, 0.4, 0.3, 0.2};
  if (name == "identity") op.kind = K::Identity;
  else if (name == "blur") op = {K::CirculantBlur, kBlur[i], 0, 0, seed};
  else if (name == "zblur") op = {K::ZeroPadBlur, kBlur[i], 0, 0, seed};
  else if (name == "noise") op = {K::GaussianNoise, kNoise[i], 0, 0, seed};
  else if (name == "contrast") op = {K::Contrast, kContrast[i], 0, 0, seed};
  else if (name == "dropout") op = {K::PixelDropout, kNoise[i], 0, 0, seed};
  else if (name == "shift") op = {K::Shift, 0.0, intensity, intensity, seed};
  else throw ConfigError("unknown corruption '" + std::string(name) + "'");
  return op;
}

// ---------------------------------------------------------------------------
// Exact removal

double exact_removal_check(const DatasetD& train, const DatasetD& test_clean, const CorruptionOp& op,
                           RemovalMode mode, std::span<const double> spectrum) {
  using K = CorruptionOp::Kind;
  if (op.kind != K::Identity && op.kind != K::CirculantBlur) {
    throw SpecError("exact removal only holds for symmetric stationary linear operators, not " + op.describe());
  }
  const TensorD& clean = test_clean.images;
  if (clean.rank() != 4 || clean.dim(1) != 1) throw DimensionError("exact removal expects (P,1,H,W) images");
  const std::size_t h = clean.dim(2), w = clean.dim(3), n = h * w;

  FeatureMatrixD corrupted = FeatureMatrixD::from_batch(op.apply(clean));
  FeatureMatrixD recovered = corrupted;
  if (mode == RemovalMode::Population) {
    if (spectrum.size() != n) throw SpecError("population mode needs a spectrum of length H*W");
    const TensorD v = fourier_basis(h, w);
    std::vector<double> dc(n, 1.0);
    if (op.kind == K::CirculantBlur) {
      const TensorD c = circulant_blur_matrix(h, w, op.param);
      const TensorD vcv = matmul(matmul(v, c, true, false), v);
      for (std::size_t k = 0; k < n; ++k) dc[k] = vcv.at(k, k);
    }
    auto covariance = [&](bool corrupted_side) {
      std::vector<double> d2(n);
      for (std::size_t k = 0; k < n; ++k) {
        const double s = spectrum[k] * (corrupted_side ? dc[k] : 1.0);
        d2[k] = s * s;
      }
      TensorD vd = v;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) vd.at(i, k) *= d2[k];
      CovStats st;
      st.kind = CovKind::Full;
      st.features = n;
      st.layout = Layout{1, h, w};
      st.count = 0;
      st.mean.assign(n, 0.0);
      st.pieces.push_back(SymMatrix::from_tensor(matmul(vd, v, false, true)));
      return st;
    };
    recovered = shiftmatch_with(corrupted, covariance(true), covariance(false), 0.0);
  } else {
    if (train.images.rank() != 4 || train.images.dim(2) != h || train.images.dim(3) != w) {
      throw DimensionError("training and test images differ in shape");
    }
    const CovStats stats = estimate_stats(FeatureMatrixD::from_batch(train.images), CovKind::Full);
    recovered = shiftmatch_full(corrupted, stats, 0.0);
  }

  double worst = 0.0;
  for (std::size_t p = 0; p < clean.dim(0); ++p) {
    double num = 0.0, den = 0.0;
    const auto r = recovered.row(p);
    for (std::size_t k = 0; k < n; ++k) {
      const double x = clean[p * n + k];
      num += (r[k] - x) * (r[k] - x);
      den += x * x;
    }
    worst = std::max(worst, den > 0.0 ? std::sqrt(num / den) : std::sqrt(num));
  }
  return worst;
}

#define SHIFTMATCH_CORRUPT_INSTANTIATE(T)                                                              \
  template std::pair<BasicDataset<T>, BasicDataset<T>> split(const BasicDataset<T>&, std::size_t);    \
  template BasicTensor<T> circulant_blur(const BasicTensor<T>&, double);                              \
  template BasicTensor<T> zero_padded_blur(const BasicTensor<T>&, double);                            \
  template BasicTensor<T> gaussian_noise(const BasicTensor<T>&, double, std::uint64_t);               \
  template BasicTensor<T> contrast(const BasicTensor<T>&, double);                                    \
  template BasicTensor<T> pixel_dropout(const BasicTensor<T>&, double, std::uint64_t);                \
  template BasicTensor<T> shift(const BasicTensor<T>&, int, int);                                     \
  template BasicTensor<T> CorruptionOp::apply(const BasicTensor<T>&) const;

SHIFTMATCH_CORRUPT_INSTANTIATE(float)
SHIFTMATCH_CORRUPT_INSTANTIATE(double)

}  // namespace shiftmatch
