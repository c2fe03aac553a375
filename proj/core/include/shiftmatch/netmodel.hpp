// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

// Small feed-forward model graphs, their forward pass with feature taps,
// layer-local backprop, an SGD trainer and weight-sample files.
//
// Matching sites are layer inputs: site i is the tensor entering layer i,
// site 0 is the raw input and site L (L = number of layers) the logits.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shiftmatch/tensor.hpp"

namespace shiftmatch {

enum class LayerKind : std::uint32_t { Conv, Linear, Relu, Frn, AvgPool, Flatten };

std::string_view to_string(LayerKind kind) noexcept;

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t out = 0;     // conv channels / linear units
  std::size_t kernel = 0;  // conv kernel extent, pool window
  std::size_t stride = 1;
  std::size_t pad = 0;
  double eps = 1e-6;  // FRN
};

class LayerGraph {
 public:
  LayerGraph(std::string name, Layout input, std::vector<LayerSpec> layers);

  /// key = value lines; `layer = <kind> key=value ...` repeated in order.
  static LayerGraph parse(std::string_view text);
  static LayerGraph load(const std::filesystem::path& path);

  const std::string& name() const noexcept { return name_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return layers_.size(); }
  Layout input() const noexcept { return input_; }
  std::size_t classes() const noexcept { return site_layouts_.back().size(); }

  /// Layout of the tensor entering layer `site` (site == size() gives logits).
  /// Vector features are reported as (N, 1, 1).
  Layout site_layout(std::size_t site) const;
  /// True when the tensor entering `site` is a (C, H, W) map rather than a vector.
  bool site_is_spatial(std::size_t site) const;

  /// Parameter shapes of layer i: {} or {weight, bias}.
  std::vector<Shape> param_shapes(std::size_t i) const;
  std::size_t param_count() const;

  std::string canonical() const;
  std::uint64_t hash() const;

 private:
  std::string name_;
  Layout input_;
  std::vector<LayerSpec> layers_;
  std::vector<Layout> site_layouts_;
  std::vector<bool> site_spatial_;
};

/// 2 conv + 3 fc LeNet variant on 1x28x28 input.
LayerGraph lenet_s();
/// Two hidden layers of 256 and 128 units on 1x28x28 input.
LayerGraph mlp_s();

enum class Provenance : std::uint32_t { Sgd = 0, EnsembleMember = 1, External = 2 };

std::string_view to_string(Provenance p) noexcept;

template <class T>
struct BasicWeightSample {
  std::uint64_t sample_id = 0;
  Provenance provenance = Provenance::Sgd;
  std::uint64_t graph_hash = 0;
  std::vector<BasicTensor<T>> weights;  // one per layer, empty when parameterless
  std::vector<BasicTensor<T>> biases;

  template <class U>
  BasicWeightSample<U> cast() const {
    BasicWeightSample<U> out{sample_id, provenance, graph_hash, {}, {}};
    for (const auto& w : weights) out.weights.push_back(w.empty() ? BasicTensor<U>() : w.template cast<U>());
    for (const auto& b : biases) out.biases.push_back(b.empty() ? BasicTensor<U>() : b.template cast<U>());
    return out;
  }

  friend bool operator==(const BasicWeightSample&, const BasicWeightSample&) = default;
};

using WeightSample = BasicWeightSample<float>;
using WeightSampleD = BasicWeightSample<double>;
using SampleSet = std::vector<WeightSample>;

/// He-normal weights (std sqrt(2 / fan_in)), zero biases, FRN gamma 1 beta 0.
template <class T>
BasicWeightSample<T> init_sample(const LayerGraph& graph, std::uint64_t seed);

/// Throws SpecError when tensors do not match the graph.
template <class T>
void check_sample(const LayerGraph& graph, const BasicWeightSample<T>& sample);

template <class T>
BasicTensor<T> frn(const BasicTensor<T>& x, std::span<const T> gamma, std::span<const T> beta, double eps);

/// Applies layer i to x. Spatial tensors are (P, C, H, W), vectors (P, N).
template <class T>
BasicTensor<T> apply_layer(const LayerGraph& graph, const BasicWeightSample<T>& sample, std::size_t i,
                           const BasicTensor<T>& x);

template <class T>
struct ForwardResult {
  BasicTensor<T> logits;
  std::vector<BasicFeatureMatrix<T>> taps;  // in the order requested
};

template <class T>
ForwardResult<T> forward(const LayerGraph& graph, const BasicWeightSample<T>& sample, const BasicTensor<T>& x,
                         std::span<const std::size_t> taps = {});

/// Continues a forward pass from the tensor entering layer `first`.
template <class T>
BasicTensor<T> forward_from(const LayerGraph& graph, const BasicWeightSample<T>& sample, std::size_t first,
                            BasicTensor<T> x);

/// Called with (site, tensor entering that layer); may replace the tensor.
template <class T>
using SiteHook = std::function<void(std::size_t, BasicTensor<T>&)>;

template <class T>
BasicTensor<T> forward_hooked(const LayerGraph& graph, const BasicWeightSample<T>& sample, BasicTensor<T> x,
                              const SiteHook<T>& hook);

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

/// Mean softmax cross-entropy and its gradient with respect to every parameter.
template <class T>
struct LossGrad {
  double loss = 0.0;
  BasicWeightSample<T> grad;
};

template <class T>
LossGrad<T> loss_and_grad(const LayerGraph& graph, const BasicWeightSample<T>& sample, const BasicTensor<T>& x,
                          std::span<const std::uint32_t> labels);

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool cosine_schedule = true;
  int epochs = 10;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

WeightSample sgd_train(const LayerGraph& graph, const Tensor& x, std::span<const std::uint32_t> labels,
                       const TrainConfig& config, const EpochCallback& on_epoch = {});

SampleSet build_ensemble(const LayerGraph& graph, const Tensor& x, std::span<const std::uint32_t> labels,
                         const TrainConfig& config, std::span<const std::uint64_t> seeds,
                         const EpochCallback& on_epoch = {});

// SMWT: "SMWT", u32 version, u64 graph hash, u64 sample id, u32 provenance,
// u32 layer count, per layer u32 tensor count (0 or 2), per tensor u32 rank,
// u64 extents, f32 payload. Little-endian.
inline constexpr std::uint32_t kWeightsVersion = 1;

std::vector<std::uint8_t> encode_weights(const WeightSample& sample);
WeightSample decode_weights(std::span<const std::uint8_t> bytes);
void write_weights(const std::filesystem::path& path, const WeightSample& sample);
WeightSample read_weights(const std::filesystem::path& path);

}  // namespace shiftmatch
