// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "shiftmatch/netmodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "shiftmatch/binio.hpp"

namespace shiftmatch {

std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Linear: return "linear";
    case LayerKind::Relu: return "relu";
    case LayerKind::Frn: return "frn";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Flatten: return "flatten";
  }
  return "unknown";
}

std::string_view to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::Sgd: return "sgd";
    case Provenance::EnsembleMember: return "ensemble-member";
    case Provenance::External: return "external";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Graph

LayerGraph::LayerGraph(std::string name, Layout input, std::vector<LayerSpec> layers)
    : name_(std::move(name)), input_(input), layers_(std::move(layers)) {
  if (input_.size() == 0) throw SpecError("graph input has zero size");
  if (layers_.empty()) throw SpecError("graph has no layers");
  Layout cur = input_;
  bool spatial = true;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    site_layouts_.push_back(cur);
    site_spatial_.push_back(spatial);
    const LayerSpec& l = layers_[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
    switch (l.kind) {
      case LayerKind::Conv: {
        if (!spatial) throw SpecError(where + " needs a spatial input");
        if (l.out == 0 || l.kernel == 0) throw SpecError(where + " needs out and kernel");
        const Conv2dOptions opt{l.stride, l.pad, false};
        try {
          cur = Layout{l.out, conv_output_extent(cur.height, l.kernel, opt), conv_output_extent(cur.width, l.kernel, opt)};
        } catch (const DimensionError& e) {
          throw SpecError(where + ": " + e.what());
        }
        break;
      }
      case LayerKind::AvgPool:
        if (!spatial) throw SpecError(where + " needs a spatial input");
        if (l.kernel == 0 || cur.height % l.kernel != 0 || cur.width % l.kernel != 0) {
          throw SpecError(where + ": window " + std::to_string(l.kernel) + " does not tile " + layout_str(cur));
        }
        cur = Layout{cur.channels, cur.height / l.kernel, cur.width / l.kernel};
        break;
      case LayerKind::Frn:
        if (!spatial) throw SpecError(where + " needs a spatial input");
        if (!(l.eps > 0.0)) throw SpecError(where + ": eps must be positive");
        break;
      case LayerKind::Relu:
        break;
      case LayerKind::Flatten:
        cur = Layout{cur.size(), 1, 1};
        spatial = false;
        break;
      case LayerKind::Linear:
        if (spatial) throw SpecError(where + " needs a flattened input");
        if (l.out == 0) throw SpecError(where + " needs out");
        cur = Layout{l.out, 1, 1};
        break;
    }
  }
  if (spatial) throw SpecError("graph output must be a vector of logits");
  site_layouts_.push_back(cur);
  site_spatial_.push_back(spatial);
}

Layout LayerGraph::site_layout(std::size_t site) const {
  if (site >= site_layouts_.size()) throw SpecError("site " + std::to_string(site) + " out of range");
  return site_layouts_[site];
}

bool LayerGraph::site_is_spatial(std::size_t site) const {
  if (site >= site_spatial_.size()) throw SpecError("site " + std::to_string(site) + " out of range");
  return site_spatial_[site];
}

std::vector<Shape> LayerGraph::param_shapes(std::size_t i) const {
  const LayerSpec& l = layers_.at(i);
  const Layout in = site_layouts_[i];
  switch (l.kind) {
    case LayerKind::Conv: return {{l.out, in.channels, l.kernel, l.kernel}, {l.out}};
    case LayerKind::Linear: return {{l.out, in.size()}, {l.out}};
    case LayerKind::Frn: return {{in.channels}, {in.channels}};
    default: return {};
  }
}

std::size_t LayerGraph::param_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (const auto& s : param_shapes(i)) n += shape_size(s);
  }
  return n;
}

std::string LayerGraph::canonical() const {
  std::ostringstream os;
  os << "name = " << name_ << "\n";
  os << "input = " << input_.channels << "x" << input_.height << "x" << input_.width << "\n";
  for (const auto& l : layers_) {
    os << "layer = " << to_string(l.kind);
    switch (l.kind) {
      case LayerKind::Conv:
        os << " out=" << l.out << " kernel=" << l.kernel << " stride=" << l.stride << " pad=" << l.pad;
        break;
      case LayerKind::Linear: os << " out=" << l.out; break;
      case LayerKind::AvgPool: os << " kernel=" << l.kernel; break;
      case LayerKind::Frn: {
        char buf[32];
        auto r = std::to_chars(buf, buf + sizeof buf, l.eps);
        os << " eps=" << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf));
        break;
      }
      default: break;
    }
    os << "\n";
  }
  return os.str();
}

std::uint64_t LayerGraph::hash() const { return binio::fnv1a(canonical()); }

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::size_t parse_size(std::string_view v, const std::string& ctx) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(ctx + ": bad integer '" + std::string(v) + "'");
  return out;
}

double parse_double(std::string_view v, const std::string& ctx) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(ctx + ": bad number '" + std::string(v) + "'");
  return out;
}

LayerSpec parse_layer(std::string_view text, const std::string& ctx) {
  std::istringstream is{std::string(text)};
  std::string kind;
  is >> kind;
  LayerSpec l;
  if (kind == "conv") l.kind = LayerKind::Conv;
  else if (kind == "linear") l.kind = LayerKind::Linear;
  else if (kind == "relu") l.kind = LayerKind::Relu;
  else if (kind == "frn") l.kind = LayerKind::Frn;
  else if (kind == "avgpool") l.kind = LayerKind::AvgPool;
  else if (kind == "flatten") l.kind = LayerKind::Flatten;
  else throw ConfigError(ctx + ": unknown layer kind '" + kind + "'");
  std::string kv;
  while (is >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(ctx + ": expected key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string_view val = std::string_view(kv).substr(eq + 1);
    if (key == "out") l.out = parse_size(val, ctx);
    else if (key == "kernel") l.kernel = parse_size(val, ctx);
    else if (key == "stride") l.stride = parse_size(val, ctx);
    else if (key == "pad") l.pad = parse_size(val, ctx);
    else if (key == "eps") l.eps = parse_double(val, ctx);
    else throw ConfigError(ctx + ": unknown layer option '" + key + "'");
  }
  return l;
}

}  // namespace

LayerGraph LayerGraph::parse(std::string_view text) {
  std::string name = "graph";
  std::optional<Layout> input;
  std::vector<LayerSpec> layers;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string ctx = "graph line " + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(ctx + ": expected key = value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view val = trim(line.substr(eq + 1));
    if (key == "name") {
      name = std::string(val);
    } else if (key == "input") {
      std::size_t dims[3];
      std::string_view rest = val;
      for (int k = 0; k < 3; ++k) {
        const auto x = rest.find('x');
        if ((k < 2) == (x == std::string_view::npos)) throw ConfigError(ctx + ": input must be CxHxW");
        dims[k] = parse_size(trim(rest.substr(0, x)), ctx);
        rest = x == std::string_view::npos ? std::string_view{} : rest.substr(x + 1);
      }
      input = Layout{dims[0], dims[1], dims[2]};
    } else if (key == "layer") {
      layers.push_back(parse_layer(val, ctx));
    } else {
      throw ConfigError(ctx + ": unknown key '" + std::string(key) + "'");
    }
  }
  if (!input) throw ConfigError("graph config has no input line");
  try {
    return LayerGraph(name, *input, std::move(layers));
  } catch (const SpecError& e) {
    throw ConfigError(std::string("graph config: ") + e.what());
  }
}

LayerGraph LayerGraph::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open graph config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

LayerGraph lenet_s() {
  using K = LayerKind;
  return LayerGraph("lenet-s", Layout{1, 28, 28},
                    {
                        {K::Conv, 6, 5, 1, 2},
                        {K::AvgPool, 0, 2},
                        {K::Relu},
                        {K::Conv, 16, 5, 1, 0},
                        {K::AvgPool, 0, 2},
                        {K::Relu},
                        {K::Flatten},
                        {K::Linear, 120},
                        {K::Relu},
                        {K::Linear, 84},
                        {K::Relu},
                        {K::Linear, 10},
                    });
}

LayerGraph mlp_s() {
  using K = LayerKind;
  return LayerGraph("mlp-s", Layout{1, 28, 28},
                    {
                        {K::Flatten},
                        {K::Linear, 256},
                        {K::Relu},
                        {K::Linear, 128},
                        {K::Relu},
                        {K::Linear, 10},
                    });
}

// ---------------------------------------------------------------------------
// Samples

template <class T>
BasicWeightSample<T> init_sample(const LayerGraph& graph, std::uint64_t seed) {
  BasicWeightSample<T> s;
  s.sample_id = seed;
  s.graph_hash = graph.hash();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto shapes = graph.param_shapes(i);
    if (shapes.empty()) {
      s.weights.emplace_back();
      s.biases.emplace_back();
      continue;
    }
    const LayerSpec& l = graph.layers()[i];
    if (l.kind == LayerKind::Frn) {
      s.weights.emplace_back(shapes[0], T(1));
      s.biases.emplace_back(shapes[1], T(0));
      continue;
    }
    const Shape& ws = shapes[0];
    const std::size_t fan_in = shape_size(ws) / ws[0];
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    BasicTensor<T> w(ws);
    for (auto& v : w.values()) v = static_cast<T>(sd * normal(rng));
    s.weights.push_back(std::move(w));
    s.biases.emplace_back(shapes[1], T(0));
  }
  return s;
}

template <class T>
void check_sample(const LayerGraph& graph, const BasicWeightSample<T>& s) {
  if (s.weights.size() != graph.size() || s.biases.size() != graph.size()) {
    throw SpecError("weight sample has " + std::to_string(s.weights.size()) + " layers, graph has " +
                    std::to_string(graph.size()));
  }
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto shapes = graph.param_shapes(i);
    const bool want = !shapes.empty();
    if (want != !s.weights[i].empty() || want != !s.biases[i].empty()) {
      throw SpecError("layer " + std::to_string(i) + ": parameter presence does not match the graph");
    }
    if (want && (s.weights[i].shape() != shapes[0] || s.biases[i].shape() != shapes[1])) {
      throw SpecError("layer " + std::to_string(i) + ": expected weight " + shape_str(shapes[0]) + ", got " +
                      shape_str(s.weights[i].shape()));
    }
  }
}

// ---------------------------------------------------------------------------
// Forward

template <class T>
BasicTensor<T> frn(const BasicTensor<T>& x, std::span<const T> gamma, std::span<const T> beta, double eps) {
  if (x.rank() != 4) throw DimensionError("frn needs (P,C,H,W), got " + shape_str(x.shape()));
  const std::size_t p = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.size() != c || beta.size() != c) throw DimensionError("frn parameters do not match channel count");
  if (!(eps > 0.0)) throw SpecError("frn eps must be positive");
  BasicTensor<T> y(x.shape());
  for (std::size_t n = 0; n < p; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = x.data() + (n * c + ch) * hw;
      T* dst = y.data() + (n * c + ch) * hw;
      double nu2 = 0.0;
      for (std::size_t k = 0; k < hw; ++k) nu2 += static_cast<double>(src[k]) * static_cast<double>(src[k]);
      const double s = 1.0 / std::sqrt(nu2 / static_cast<double>(hw) + eps);
      for (std::size_t k = 0; k < hw; ++k) {
        dst[k] = static_cast<T>(static_cast<double>(src[k]) * s * static_cast<double>(gamma[ch]) +
                                static_cast<double>(beta[ch]));
      }
    }
  }
  return y;
}

namespace {

template <class T>
void check_input(const Layout& expect, bool spatial, const BasicTensor<T>& x, std::size_t site) {
  const bool ok = spatial ? (x.rank() == 4 && x.dim(1) == expect.channels && x.dim(2) == expect.height &&
                             x.dim(3) == expect.width)
                          : (x.rank() == 2 && x.dim(1) == expect.size());
  if (!ok) {
    throw SpecError("tensor " + shape_str(x.shape()) + " does not fit site " + std::to_string(site) + " layout " +
                    layout_str(expect));
  }
}

template <class T>
BasicTensor<T> avgpool(const BasicTensor<T>& x, std::size_t k) {
  const std::size_t p = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / k, wo = w / k;
  BasicTensor<T> y({p, c, ho, wo});
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t n = 0; n < p; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = 0.0;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) acc += static_cast<double>(x.at(n, ch, i * k + a, j * k + b));
          y.at(n, ch, i, j) = static_cast<T>(acc * inv);
        }
  return y;
}

}  // namespace

template <class T>
BasicTensor<T> apply_layer(const LayerGraph& graph, const BasicWeightSample<T>& sample, std::size_t i,
                           const BasicTensor<T>& x) {
  check_input(graph.site_layout(i), graph.site_is_spatial(i), x, i);
  const LayerSpec& l = graph.layers().at(i);
  switch (l.kind) {
    case LayerKind::Conv: {
      BasicTensor<T> y = conv2d(x, sample.weights[i], Conv2dOptions{l.stride, l.pad, false});
      const std::size_t p = y.dim(0), o = y.dim(1), hw = y.dim(2) * y.dim(3);
      for (std::size_t n = 0; n < p; ++n)
        for (std::size_t ch = 0; ch < o; ++ch) {
          const T b = sample.biases[i][ch];
          T* d = y.data() + (n * o + ch) * hw;
          for (std::size_t k = 0; k < hw; ++k) d[k] += b;
        }
      return y;
    }
    case LayerKind::Linear: {
      BasicTensor<T> y = matmul(x, sample.weights[i], false, true);
      const std::size_t p = y.dim(0), o = y.dim(1);
      for (std::size_t n = 0; n < p; ++n)
        for (std::size_t j = 0; j < o; ++j) y.at(n, j) += sample.biases[i][j];
      return y;
    }
    case LayerKind::Relu: {
      BasicTensor<T> y = x;
      for (auto& v : y.values()) v = v > T(0) ? v : T(0);
      return y;
    }
    case LayerKind::Frn:
      return frn(x, sample.weights[i].values(), sample.biases[i].values(), l.eps);
    case LayerKind::AvgPool:
      return avgpool(x, l.kernel);
    case LayerKind::Flatten:
      return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }
  throw SpecError("unknown layer kind");
}

template <class T>
BasicTensor<T> forward_hooked(const LayerGraph& graph, const BasicWeightSample<T>& sample, BasicTensor<T> x,
                              const SiteHook<T>& hook) {
  check_sample(graph, sample);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    if (hook) hook(i, x);
    x = apply_layer(graph, sample, i, x);
  }
  if (hook) hook(graph.size(), x);
  return x;
}

template <class T>
ForwardResult<T> forward(const LayerGraph& graph, const BasicWeightSample<T>& sample, const BasicTensor<T>& x,
                         std::span<const std::size_t> taps) {
  for (auto t : taps) {
    if (t > graph.size()) throw SpecError("tap site " + std::to_string(t) + " out of range");
  }
  std::vector<std::optional<BasicFeatureMatrix<T>>> got(taps.size());
  BasicTensor<T> logits = forward_hooked<T>(graph, sample, x, [&](std::size_t site, BasicTensor<T>& h) {
    for (std::size_t k = 0; k < taps.size(); ++k) {
      if (taps[k] == site) got[k] = BasicFeatureMatrix<T>::from_batch(h);
    }
  });
  ForwardResult<T> r{std::move(logits), {}};
  for (auto& g : got) r.taps.push_back(std::move(*g));
  return r;
}

template <class T>
BasicTensor<T> forward_from(const LayerGraph& graph, const BasicWeightSample<T>& sample, std::size_t first,
                            BasicTensor<T> x) {
  check_sample(graph, sample);
  if (first > graph.size()) throw SpecError("start site out of range");
  for (std::size_t i = first; i < graph.size(); ++i) x = apply_layer(graph, sample, i, x);
  return x;
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax needs (P,K) logits");
  const std::size_t p = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> out(logits.shape());
  std::vector<double> e(k);
  for (std::size_t n = 0; n < p; ++n) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits.at(n, j)));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (e[j] = std::exp(static_cast<double>(logits.at(n, j)) - mx));
    for (std::size_t j = 0; j < k; ++j) out.at(n, j) = static_cast<T>(e[j] / z);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward

template <class T>
LossGrad<T> loss_and_grad(const LayerGraph& graph, const BasicWeightSample<T>& sample, const BasicTensor<T>& x,
                          std::span<const std::uint32_t> labels) {
  check_sample(graph, sample);
  const std::size_t p = x.dim(0);
  if (labels.size() != p) throw SpecError("labels and inputs disagree in length");
  const std::size_t L = graph.size();
  std::vector<BasicTensor<T>> acts;
  acts.reserve(L + 1);
  acts.push_back(x);
  for (std::size_t i = 0; i < L; ++i) acts.push_back(apply_layer(graph, sample, i, acts.back()));

  const BasicTensor<T>& logits = acts.back();
  const std::size_t k = logits.dim(1);
  LossGrad<T> out;
  out.grad.sample_id = sample.sample_id;
  out.grad.provenance = sample.provenance;
  out.grad.graph_hash = sample.graph_hash;
  out.grad.weights.resize(L);
  out.grad.biases.resize(L);

  // d loss / d logits for the mean cross-entropy.
  BasicTensor<T> dy(logits.shape());
  double loss = 0.0;
  for (std::size_t n = 0; n < p; ++n) {
    if (labels[n] >= k) throw SpecError("label " + std::to_string(labels[n]) + " out of range");
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits.at(n, j)));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(logits.at(n, j)) - mx);
    const double lz = mx + std::log(z);
    loss += lz - static_cast<double>(logits.at(n, labels[n]));
    for (std::size_t j = 0; j < k; ++j) {
      const double pj = std::exp(static_cast<double>(logits.at(n, j)) - lz);
      dy.at(n, j) = static_cast<T>((pj - (j == labels[n] ? 1.0 : 0.0)) / static_cast<double>(p));
    }
  }
  out.loss = loss / static_cast<double>(p);

  for (std::size_t i = L; i-- > 0;) {
    const LayerSpec& l = graph.layers()[i];
    const BasicTensor<T>& in = acts[i];
    BasicTensor<T> dx(in.shape());
    switch (l.kind) {
      case LayerKind::Linear: {
        out.grad.weights[i] = matmul(dy, in, true, false);  // out x in
        BasicTensor<T> db({l.out});
        for (std::size_t n = 0; n < p; ++n)
          for (std::size_t j = 0; j < l.out; ++j) db[j] += dy.at(n, j);
        out.grad.biases[i] = std::move(db);
        dx = matmul(dy, sample.weights[i]);
        break;
      }
      case LayerKind::Conv: {
        const Conv2dOptions opt{l.stride, l.pad, false};
        const std::size_t o = dy.dim(1), ohw = dy.dim(2) * dy.dim(3);
        const std::size_t ckk = in.dim(1) * l.kernel * l.kernel;
        const BasicTensor<T> wmat = sample.weights[i].reshaped({o, ckk});
        BasicTensor<T> dw({o, ckk});
        BasicTensor<T> db({o});
        const std::size_t chunk = std::max<std::size_t>(1, (std::size_t{1} << 22) / std::max<std::size_t>(1, ohw * ckk));
        for (std::size_t first = 0; first < p; first += chunk) {
          const std::size_t count = std::min(chunk, p - first);
          BasicTensor<T> dmat({count * ohw, o});
          for (std::size_t n = 0; n < count; ++n)
            for (std::size_t ch = 0; ch < o; ++ch)
              for (std::size_t s = 0; s < ohw; ++s) {
                const T g = dy[((first + n) * o + ch) * ohw + s];
                dmat[(n * ohw + s) * o + ch] = g;
                db[ch] += g;
              }
          const BasicTensor<T> cols = im2col(in, first, count, l.kernel, l.kernel, opt);
          const BasicTensor<T> part = matmul(dmat, cols, true, false);
          for (std::size_t q = 0; q < part.size(); ++q) dw[q] += part[q];
          col2im(matmul(dmat, wmat), dx, first, count, l.kernel, l.kernel, opt);
        }
        out.grad.weights[i] = std::move(dw).reshaped(sample.weights[i].shape());
        out.grad.biases[i] = std::move(db);
        break;
      }
      case LayerKind::Relu:
        for (std::size_t q = 0; q < in.size(); ++q) dx[q] = in[q] > T(0) ? dy[q] : T(0);
        break;
      case LayerKind::AvgPool: {
        const std::size_t kk = l.kernel;
        const T inv = static_cast<T>(1.0 / static_cast<double>(kk * kk));
        for (std::size_t n = 0; n < in.dim(0); ++n)
          for (std::size_t ch = 0; ch < in.dim(1); ++ch)
            for (std::size_t a = 0; a < in.dim(2); ++a)
              for (std::size_t b = 0; b < in.dim(3); ++b) dx.at(n, ch, a, b) = dy.at(n, ch, a / kk, b / kk) * inv;
        break;
      }
      case LayerKind::Flatten:
        dx = dy.reshaped(in.shape());
        break;
      case LayerKind::Frn: {
        const std::size_t c = in.dim(1), hw = in.dim(2) * in.dim(3);
        BasicTensor<T> dg({c}), dbeta({c});
        for (std::size_t n = 0; n < p; ++n)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T* xs = in.data() + (n * c + ch) * hw;
            const T* gs = dy.data() + (n * c + ch) * hw;
            T* ds = dx.data() + (n * c + ch) * hw;
            double nu2 = 0.0;
            for (std::size_t q = 0; q < hw; ++q) nu2 += static_cast<double>(xs[q]) * static_cast<double>(xs[q]);
            const double s = 1.0 / std::sqrt(nu2 / static_cast<double>(hw) + l.eps);
            const double gamma = static_cast<double>(sample.weights[i][ch]);
            double proj = 0.0, sg = 0.0, sb = 0.0;
            for (std::size_t q = 0; q < hw; ++q) {
              const double xh = static_cast<double>(xs[q]) * s;
              const double g = static_cast<double>(gs[q]);
              sg += g * xh;
              sb += g;
              proj += g * gamma * xh;
            }
            proj /= static_cast<double>(hw);
            for (std::size_t q = 0; q < hw; ++q) {
              const double xh = static_cast<double>(xs[q]) * s;
              ds[q] = static_cast<T>(s * (static_cast<double>(gs[q]) * gamma - xh * proj));
            }
            dg[ch] += static_cast<T>(sg);
            dbeta[ch] += static_cast<T>(sb);
          }
        out.grad.weights[i] = std::move(dg);
        out.grad.biases[i] = std::move(dbeta);
        break;
      }
    }
    dy = std::move(dx);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

WeightSample sgd_train(const LayerGraph& graph, const Tensor& x, std::span<const std::uint32_t> labels,
                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (x.rank() != 4 || x.dim(1) != graph.input().channels || x.dim(2) != graph.input().height ||
      x.dim(3) != graph.input().width) {
    throw SpecError("training data " + shape_str(x.shape()) + " does not match graph input " +
                    layout_str(graph.input()));
  }
  const std::size_t p = x.dim(0);
  if (labels.size() != p) throw SpecError("labels and inputs disagree in length");
  if (cfg.batch == 0 || cfg.epochs < 0) throw ConfigError("batch must be positive and epochs non-negative");

  WeightSample w = init_sample<float>(graph, cfg.seed);
  std::vector<std::vector<double>> vel_w(graph.size()), vel_b(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    vel_w[i].assign(w.weights[i].size(), 0.0);
    vel_b[i].assign(w.biases[i].size(), 0.0);
  }
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per = x.size() / p;
  const std::size_t steps_per_epoch = (p + cfg.batch - 1) / cfg.batch;
  const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t first = 0; first < p; first += cfg.batch) {
      const std::size_t count = std::min(cfg.batch, p - first);
      Tensor xb({count, x.dim(1), x.dim(2), x.dim(3)});
      std::vector<std::uint32_t> yb(count);
      for (std::size_t n = 0; n < count; ++n) {
        std::copy_n(x.data() + order[first + n] * per, per, xb.data() + n * per);
        yb[n] = labels[order[first + n]];
      }
      const auto lg = loss_and_grad(graph, w, xb, yb);
      if (!std::isfinite(lg.loss)) {
        throw TrainingError("training diverged (loss " + std::to_string(lg.loss) + ") in epoch " +
                                std::to_string(epoch + 1),
                            epoch + 1);
      }
      epoch_loss += lg.loss * static_cast<double>(count);
      const double lr = cfg.cosine_schedule
                            ? cfg.lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps))
                            : cfg.lr;
      for (std::size_t i = 0; i < graph.size(); ++i) {
        if (w.weights[i].empty()) continue;
        const bool decay = graph.layers()[i].kind != LayerKind::Frn;
        for (std::size_t q = 0; q < w.weights[i].size(); ++q) {
          const double wq = static_cast<double>(w.weights[i][q]);
          double& v = vel_w[i][q];
          v = cfg.momentum * v + static_cast<double>(lg.grad.weights[i][q]) + (decay ? cfg.weight_decay * wq : 0.0);
          w.weights[i][q] = static_cast<float>(wq - lr * v);
        }
        for (std::size_t q = 0; q < w.biases[i].size(); ++q) {
          double& v = vel_b[i][q];
          v = cfg.momentum * v + static_cast<double>(lg.grad.biases[i][q]);
          w.biases[i][q] = static_cast<float>(static_cast<double>(w.biases[i][q]) - lr * v);
        }
      }
      ++step;
    }
    if (on_epoch) on_epoch(epoch + 1, epoch_loss / static_cast<double>(p));
  }
  return w;
}

SampleSet build_ensemble(const LayerGraph& graph, const Tensor& x, std::span<const std::uint32_t> labels,
                         const TrainConfig& config, std::span<const std::uint64_t> seeds,
                         const EpochCallback& on_epoch) {
  if (seeds.empty()) throw SpecError("ensemble needs at least one seed");
  SampleSet out;
  for (auto seed : seeds) {
    TrainConfig c = config;
    c.seed = seed;
    WeightSample s = sgd_train(graph, x, labels, c, on_epoch);
    s.provenance = Provenance::EnsembleMember;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SMWT

std::vector<std::uint8_t> encode_weights(const WeightSample& s) {
  binio::Writer w;
  w.magic("SMWT");
  w.u32(kWeightsVersion);
  w.u64(s.graph_hash);
  w.u64(s.sample_id);
  w.u32(static_cast<std::uint32_t>(s.provenance));
  if (s.weights.size() != s.biases.size()) throw SpecError("weight/bias layer counts differ");
  w.u32(static_cast<std::uint32_t>(s.weights.size()));
  for (std::size_t i = 0; i < s.weights.size(); ++i) {
    if (s.weights[i].empty() != s.biases[i].empty()) throw SpecError("layer with weight but no bias");
    if (s.weights[i].empty()) {
      w.u32(0);
      continue;
    }
    w.u32(2);
    for (const Tensor* t : {&s.weights[i], &s.biases[i]}) {
      w.u32(static_cast<std::uint32_t>(t->rank()));
      for (auto e : t->shape()) w.u64(e);
      for (float v : t->values()) w.f32(v);
    }
  }
  return std::move(w).take();
}

WeightSample decode_weights(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "SMWT");
  r.expect_magic("SMWT");
  const auto version = r.u32();
  if (version != kWeightsVersion) throw FormatError("SMWT: unsupported version " + std::to_string(version));
  WeightSample s;
  s.graph_hash = r.u64();
  s.sample_id = r.u64();
  const auto prov = r.u32();
  if (prov > 2) throw FormatError("SMWT: bad provenance tag");
  s.provenance = static_cast<Provenance>(prov);
  const auto layers = r.u32();
  for (std::uint32_t i = 0; i < layers; ++i) {
    const auto n = r.u32();
    if (n == 0) {
      s.weights.emplace_back();
      s.biases.emplace_back();
      continue;
    }
    if (n != 2) throw FormatError("SMWT: layer " + std::to_string(i) + " has " + std::to_string(n) + " tensors");
    for (auto* dst : {&s.weights, &s.biases}) {
      const auto rank = r.u32();
      if (rank == 0 || rank > 8) throw FormatError("SMWT: bad tensor rank");
      Shape shape(rank);
      std::size_t total = 1;
      for (auto& e : shape) {
        e = r.u64();
        if (e == 0 || e > r.remaining()) throw FormatError("SMWT: bad tensor extent");
        total *= e;
      }
      if (total > r.remaining() / 4) throw FormatError("SMWT: tensor exceeds payload");
      std::vector<float> v(total);
      for (auto& x : v) x = r.f32();
      dst->emplace_back(std::move(shape), std::move(v));
    }
  }
  if (!r.done()) throw FormatError("SMWT: trailing bytes");
  return s;
}

void write_weights(const std::filesystem::path& path, const WeightSample& sample) {
  binio::write_file(path, encode_weights(sample));
}

WeightSample read_weights(const std::filesystem::path& path) { return decode_weights(binio::read_file(path)); }

#define SHIFTMATCH_NET_INSTANTIATE(T)                                                                             \
  template BasicWeightSample<T> init_sample(const LayerGraph&, std::uint64_t);                                    \
  template void check_sample(const LayerGraph&, const BasicWeightSample<T>&);                                     \
  template BasicTensor<T> frn(const BasicTensor<T>&, std::span<const T>, std::span<const T>, double);             \
  template BasicTensor<T> apply_layer(const LayerGraph&, const BasicWeightSample<T>&, std::size_t,                \
                                      const BasicTensor<T>&);                                                     \
  template ForwardResult<T> forward(const LayerGraph&, const BasicWeightSample<T>&, const BasicTensor<T>&,        \
                                    std::span<const std::size_t>);                                                \
  template BasicTensor<T> forward_from(const LayerGraph&, const BasicWeightSample<T>&, std::size_t,               \
                                       BasicTensor<T>);                                                           \
  template BasicTensor<T> forward_hooked(const LayerGraph&, const BasicWeightSample<T>&, BasicTensor<T>,          \
                                         const SiteHook<T>&);                                                     \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                                         \
  template LossGrad<T> loss_and_grad(const LayerGraph&, const BasicWeightSample<T>&, const BasicTensor<T>&,       \
                                     std::span<const std::uint32_t>);

SHIFTMATCH_NET_INSTANTIATE(float)
SHIFTMATCH_NET_INSTANTIATE(double)

}  // namespace shiftmatch
