// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "shiftmatch/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <sstream>

namespace shiftmatch {

std::size_t shape_size(const Shape& shape) noexcept {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::string layout_str(const Layout& layout) {
  return "(" + std::to_string(layout.channels) + "," + std::to_string(layout.height) + "," +
         std::to_string(layout.width) + ")";
}

namespace {

using RowMajorD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
RowMajorD to_double(const BasicTensor<T>& t) {
  using Src = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Src> m(t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  if constexpr (std::is_same_v<T, double>) {
    return m;
  } else {
    return m.template cast<double>();
  }
}

}  // namespace

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_a, bool transpose_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul needs rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t p = transpose_a ? a.dim(1) : a.dim(0);
  const std::size_t ka = transpose_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + (transpose_a ? "^T" : "") +
                         " x " + shape_str(b.shape()) + (transpose_b ? "^T" : ""));
  }
  const RowMajorD ad = to_double(a);
  const RowMajorD bd = to_double(b);
  RowMajorD cd(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(n));
  if (!transpose_a && !transpose_b) {
    cd.noalias() = ad * bd;
  } else if (transpose_a && !transpose_b) {
    cd.noalias() = ad.transpose() * bd;
  } else if (!transpose_a && transpose_b) {
    cd.noalias() = ad * bd.transpose();
  } else {
    cd.noalias() = ad.transpose() * bd.transpose();
  }
  std::vector<T> out(p * n);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(cd.data()[i]);
  return BasicTensor<T>({p, n}, std::move(out));
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dOptions& opt) {
  if (opt.stride == 0) throw DimensionError("conv2d stride must be positive");
  if (opt.circular && opt.pad > in) throw DimensionError("circular padding larger than the input");
  const std::size_t padded = in + 2 * opt.pad;
  if (kernel == 0 || kernel > padded) {
    throw DimensionError("kernel extent " + std::to_string(kernel) + " exceeds padded input " + std::to_string(padded));
  }
  return (padded - kernel) / opt.stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t p, c, h, w, o, kh, kw, ho, wo;
};

template <class T>
ConvGeometry conv_geometry(const BasicTensor<T>& x, const BasicTensor<T>& w, const Conv2dOptions& opt) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw DimensionError("conv2d needs rank-4 input and kernel, got " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", kernel " + shape_str(w.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0};
  g.ho = conv_output_extent(g.h, g.kh, opt);
  g.wo = conv_output_extent(g.w, g.kw, opt);
  return g;
}

// Source index along one axis for output position `o` and kernel tap `k`;
// returns false when the tap falls in zero padding.
inline bool source_index(std::size_t o, std::size_t k, std::size_t extent, const Conv2dOptions& opt,
                         std::size_t& src) {
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(o * opt.stride + k) - static_cast<std::ptrdiff_t>(opt.pad);
  const auto n = static_cast<std::ptrdiff_t>(extent);
  if (opt.circular) {
    src = static_cast<std::size_t>(((s % n) + n) % n);
    return true;
  }
  if (s < 0 || s >= n) return false;
  src = static_cast<std::size_t>(s);
  return true;
}

}  // namespace

template <class T>
BasicTensor<T> im2col(const BasicTensor<T>& x, std::size_t first, std::size_t count, std::size_t kh, std::size_t kw,
                      const Conv2dOptions& opt) {
  if (x.rank() != 4) throw DimensionError("im2col needs a rank-4 input, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = conv_output_extent(h, kh, opt), wo = conv_output_extent(w, kw, opt);
  if (first + count > x.dim(0)) throw DimensionError("im2col example range out of bounds");
  const std::size_t width = c * kh * kw;
  BasicTensor<T> cols({count * ho * wo, width});
  T* out = cols.data();
  for (std::size_t n = 0; n < count; ++n) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T* row = out + ((n * ho + oy) * wo + ox) * width;
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            std::size_t sy = 0;
            const bool in_y = source_index(oy, ky, h, opt, sy);
            for (std::size_t kx = 0; kx < kw; ++kx) {
              std::size_t sx = 0;
              const bool in = in_y && source_index(ox, kx, w, opt, sx);
              row[(ci * kh + ky) * kw + kx] = in ? x.at(first + n, ci, sy, sx) : T{};
            }
          }
        }
      }
    }
  }
  return cols;
}

template <class T>
void col2im(const BasicTensor<T>& cols, BasicTensor<T>& dx, std::size_t first, std::size_t count, std::size_t kh,
            std::size_t kw, const Conv2dOptions& opt) {
  const std::size_t c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const std::size_t ho = conv_output_extent(h, kh, opt), wo = conv_output_extent(w, kw, opt);
  const std::size_t width = c * kh * kw;
  if (cols.rank() != 2 || cols.dim(0) != count * ho * wo || cols.dim(1) != width) {
    throw DimensionError("col2im patch matrix " + shape_str(cols.shape()) + " does not match the target");
  }
  const T* in = cols.data();
  for (std::size_t n = 0; n < count; ++n) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const T* row = in + ((n * ho + oy) * wo + ox) * width;
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            std::size_t sy = 0;
            if (!source_index(oy, ky, h, opt, sy)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              std::size_t sx = 0;
              if (!source_index(ox, kx, w, opt, sx)) continue;
              dx.at(first + n, ci, sy, sx) += row[(ci * kh + ky) * kw + kx];
            }
          }
        }
      }
    }
  }
}

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry(x, w, opt);
  BasicTensor<T> y({g.p, g.o, g.ho, g.wo});
  const BasicTensor<T> wmat = w.reshaped({g.o, g.c * g.kh * g.kw});
  const std::size_t per_example = g.ho * g.wo * g.c * g.kh * g.kw;
  const std::size_t chunk = std::max<std::size_t>(1, (std::size_t{1} << 22) / std::max<std::size_t>(1, per_example));
  for (std::size_t first = 0; first < g.p; first += chunk) {
    const std::size_t count = std::min(chunk, g.p - first);
    const BasicTensor<T> cols = im2col(x, first, count, g.kh, g.kw, opt);
    const BasicTensor<T> prod = matmul(cols, wmat, false, true);  // (count*Ho*Wo) x O
    for (std::size_t n = 0; n < count; ++n) {
      for (std::size_t s = 0; s < g.ho * g.wo; ++s) {
        for (std::size_t o = 0; o < g.o; ++o) {
          y[((first + n) * g.o + o) * g.ho * g.wo + s] = prod[(n * g.ho * g.wo + s) * g.o + o];
        }
      }
    }
  }
  return y;
}

template <class T>
BasicTensor<T> conv2d_direct(const BasicTensor<T>& x, const BasicTensor<T>& w, const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry(x, w, opt);
  BasicTensor<T> y({g.p, g.o, g.ho, g.wo});
  for (std::size_t n = 0; n < g.p; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < g.c; ++ci) {
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              std::size_t sy = 0;
              if (!source_index(oy, ky, g.h, opt, sy)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                std::size_t sx = 0;
                if (!source_index(ox, kx, g.w, opt, sx)) continue;
                acc += static_cast<double>(x.at(n, ci, sy, sx)) * static_cast<double>(w.at(o, ci, ky, kx));
              }
            }
          }
          y.at(n, o, oy, ox) = static_cast<T>(acc);
        }
      }
    }
  }
  return y;
}

template <class T>
std::vector<double> reduce_mean(const BasicFeatureMatrix<T>& x) {
  std::vector<double> mean(x.cols(), 0.0);
  for (std::size_t p = 0; p < x.rows(); ++p) {
    const auto r = x.row(p);
    for (std::size_t j = 0; j < r.size(); ++j) mean[j] += static_cast<double>(r[j]);
  }
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (auto& m : mean) m *= inv;
  return mean;
}

#define SHIFTMATCH_INSTANTIATE(T)                                                                                  \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&, bool, bool);                       \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const Conv2dOptions&);             \
  template BasicTensor<T> conv2d_direct(const BasicTensor<T>&, const BasicTensor<T>&, const Conv2dOptions&);      \
  template BasicTensor<T> im2col(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t,       \
                                 const Conv2dOptions&);                                                            \
  template void col2im(const BasicTensor<T>&, BasicTensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t, \
                       const Conv2dOptions&);                                                                      \
  template std::vector<double> reduce_mean(const BasicFeatureMatrix<T>&);

SHIFTMATCH_INSTANTIATE(float)
SHIFTMATCH_INSTANTIATE(double)

#undef SHIFTMATCH_INSTANTIATE

}  // namespace shiftmatch
