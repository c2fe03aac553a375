// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major tensors and the numeric kernels the rest of the library
// builds on. Production data is 32-bit (`Tensor`); the 64-bit instantiation
// (`TensorD`) backs the exact-arithmetic verification paths.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shiftmatch/error.hpp"

namespace shiftmatch {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

template <class T>
class BasicTensor {
 public:
  using value_type = T;

  /// Empty placeholder (rank 0, no elements); used for absent parameters.
  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_extents();
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor of shape " + shape_str(shape_) + " given " +
                           std::to_string(data_.size()) + " values");
    }
  }

  bool empty() const noexcept { return data_.empty(); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw DimensionError("axis out of range for " + shape_str(shape_));
    return shape_[axis];
  }
  std::size_t size() const noexcept { return data_.size(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  BasicTensor reshaped(Shape shape) const& { return BasicTensor(std::move(shape), data_); }
  BasicTensor reshaped(Shape shape) && { return BasicTensor(std::move(shape), std::move(data_)); }

  template <class U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  void check_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Channel layout of a flattened feature row: N = channels * height * width.
struct Layout {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const noexcept { return channels * height * width; }
  std::size_t spatial() const noexcept { return height * width; }
  friend bool operator==(const Layout&, const Layout&) = default;
};

std::string layout_str(const Layout& layout);

/// P examples by N features. The optional layout reinterprets each row as a
/// (C, H, W) map without copying.
template <class T>
class BasicFeatureMatrix {
 public:
  explicit BasicFeatureMatrix(BasicTensor<T> rows, std::optional<Layout> layout = std::nullopt)
      : data_(std::move(rows)), layout_(layout) {
    if (data_.rank() != 2) throw DimensionError("feature matrix needs a rank-2 tensor, got " + shape_str(data_.shape()));
    if (layout_ && layout_->size() != data_.dim(1)) {
      throw DimensionError("layout " + layout_str(*layout_) + " does not cover " + std::to_string(data_.dim(1)) +
                           " features");
    }
  }

  /// Rank-4 (P, C, H, W) maps keep their layout; rank-2 (P, N) becomes (N, 1, 1).
  static BasicFeatureMatrix from_batch(BasicTensor<T> batch) {
    const auto& s = batch.shape();
    if (s.size() == 4) {
      Layout l{s[1], s[2], s[3]};
      const std::size_t p = s[0];
      return BasicFeatureMatrix(std::move(batch).reshaped({p, l.size()}), l);
    }
    if (s.size() == 2) {
      Layout l{s[1], 1, 1};
      return BasicFeatureMatrix(std::move(batch), l);
    }
    throw DimensionError("cannot view " + shape_str(s) + " as a feature matrix");
  }

  /// Inverse of from_batch: (P, C, H, W) when the layout is spatial, else (P, N).
  BasicTensor<T> to_batch() && {
    const std::size_t p = rows();
    if (layout_ && layout_->spatial() > 1) {
      return std::move(data_).reshaped({p, layout_->channels, layout_->height, layout_->width});
    }
    return std::move(data_);
  }

  std::size_t rows() const noexcept { return data_.shape()[0]; }
  std::size_t cols() const noexcept { return data_.shape()[1]; }
  const std::optional<Layout>& layout() const noexcept { return layout_; }
  const BasicTensor<T>& tensor() const noexcept { return data_; }
  BasicTensor<T>& tensor() noexcept { return data_; }

  std::span<const T> row(std::size_t p) const noexcept { return data_.values().subspan(p * cols(), cols()); }
  std::span<T> row(std::size_t p) noexcept { return data_.values().subspan(p * cols(), cols()); }
  T& operator()(std::size_t p, std::size_t j) noexcept { return data_.at(p, j); }
  const T& operator()(std::size_t p, std::size_t j) const noexcept { return data_.at(p, j); }

 private:
  BasicTensor<T> data_;
  std::optional<Layout> layout_;
};

using FeatureMatrix = BasicFeatureMatrix<float>;
using FeatureMatrixD = BasicFeatureMatrix<double>;

// ---------------------------------------------------------------------------
// Kernels. Products and reductions accumulate in double regardless of T.

/// a (P x K) times b (K x N); either operand may be used transposed.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_a = false,
                      bool transpose_b = false);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool circular = false;  // wrap indices modulo H, W instead of zero padding
};

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dOptions& opt);

/// Cross-correlation of x (P x C x H x W) with w (O x C x kh x kw) via im2col.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const Conv2dOptions& opt = {});

/// Same contract as conv2d, evaluated with direct loops.
template <class T>
BasicTensor<T> conv2d_direct(const BasicTensor<T>& x, const BasicTensor<T>& w, const Conv2dOptions& opt = {});

/// Patches of examples [first, first+count) as rows: (count*Ho*Wo) x (C*kh*kw).
template <class T>
BasicTensor<T> im2col(const BasicTensor<T>& x, std::size_t first, std::size_t count, std::size_t kh,
                      std::size_t kw, const Conv2dOptions& opt);

/// Adjoint of im2col: scatter-adds patch rows into dx for examples [first, first+count).
template <class T>
void col2im(const BasicTensor<T>& cols, BasicTensor<T>& dx, std::size_t first, std::size_t count, std::size_t kh,
            std::size_t kw, const Conv2dOptions& opt);

/// Per-feature mean over the example axis.
template <class T>
std::vector<double> reduce_mean(const BasicFeatureMatrix<T>& x);

}  // namespace shiftmatch
