#pragma once

// Small neural-network engine: 1D convolution, max pooling, dense layers,
// ReLU/sigmoid, BCE and hinge losses, plain SGD. All arithmetic is binary64
// and every sample is processed independently, so per-sample outputs do not
// depend on batch composition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "ssbjam/binary_io.hpp"
#include "ssbjam/datagen.hpp"
#include "ssbjam/error.hpp"
#include "ssbjam/rng.hpp"

namespace ssbjam::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_size(shape) != data.size()) {
      throw ShapeError(fmt::format("tensor shape {} does not match {} values", shape, data.size()));
    }
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class LayerKind { kConv1d, kMaxPool1d, kFlatten, kDense, kRelu, kSigmoid };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t filters = 0;  // conv1d
  std::size_t kernel = 0;   // conv1d kernel, maxpool window
  std::size_t stride = 1;   // conv1d
  std::size_t units = 0;    // dense

  static LayerSpec conv1d(std::size_t filters, std::size_t kernel, std::size_t stride = 1) {
    return {LayerKind::kConv1d, filters, kernel, stride, 0};
  }
  static LayerSpec maxpool1d(std::size_t window) { return {LayerKind::kMaxPool1d, 0, window, window, 0}; }
  static LayerSpec flatten() { return {LayerKind::kFlatten}; }
  static LayerSpec dense(std::size_t units) { return {LayerKind::kDense, 0, 0, 1, units}; }
  static LayerSpec relu() { return {LayerKind::kRelu}; }
  static LayerSpec sigmoid() { return {LayerKind::kSigmoid}; }

  bool parametric() const { return kind == LayerKind::kConv1d || kind == LayerKind::kDense; }

  std::string describe() const {
    switch (kind) {
      case LayerKind::kConv1d: return fmt::format("conv1d({},{},{})", filters, kernel, stride);
      case LayerKind::kMaxPool1d: return fmt::format("maxpool1d({})", kernel);
      case LayerKind::kFlatten: return "flatten";
      case LayerKind::kDense: return fmt::format("dense({})", units);
      case LayerKind::kRelu: return "relu";
      case LayerKind::kSigmoid: return "sigmoid";
    }
    return "?";
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  std::string name;
  Shape input_shape;  // per sample: {channels, length} for conv nets, {n} otherwise
  std::vector<LayerSpec> layers;

  // Output shape of every layer, validating compatibility along the way.
  std::vector<Shape> layer_shapes() const {
    if (input_shape.empty() || shape_size(input_shape) == 0) throw ShapeError("model input shape is empty");
    std::vector<Shape> out;
    Shape cur = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      auto fail = [&](std::string_view why) {
        return ShapeError(fmt::format("layer {} ({}): {} (input shape {})", i, l.describe(), why, cur));
      };
      switch (l.kind) {
        case LayerKind::kConv1d:
          if (cur.size() != 2) throw fail("expects {channels, length}");
          if (l.filters == 0 || l.kernel == 0 || l.stride == 0) throw fail("zero-sized conv");
          if (cur[1] < l.kernel) throw fail("kernel longer than input");
          cur = {l.filters, (cur[1] - l.kernel) / l.stride + 1};
          break;
        case LayerKind::kMaxPool1d:
          if (cur.size() != 2) throw fail("expects {channels, length}");
          if (l.kernel == 0 || cur[1] < l.kernel) throw fail("bad pooling window");
          cur = {cur[0], cur[1] / l.kernel};
          break;
        case LayerKind::kFlatten:
          cur = {shape_size(cur)};
          break;
        case LayerKind::kDense:
          if (cur.size() != 1) throw fail("expects a flat input");
          if (l.units == 0) throw fail("zero units");
          cur = {l.units};
          break;
        case LayerKind::kRelu:
        case LayerKind::kSigmoid:
          break;
      }
      out.push_back(cur);
    }
    return out;
  }

  Shape output_shape() const {
    auto s = layer_shapes();
    return s.empty() ? input_shape : s.back();
  }

  bool sigmoid_output() const { return !layers.empty() && layers.back().kind == LayerKind::kSigmoid; }

  std::string canonical() const {
    std::string s = fmt::format("{}|{}", name, fmt::join(input_shape, "x"));
    for (const auto& l : layers) s += "|" + l.describe();
    return s;
  }

  std::uint64_t digest() const {
    const auto c = canonical();
    return io::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(c.data()), c.size()));
  }

  // Shapes of the parameter tensors in order: weight then bias per layer.
  std::vector<Shape> param_shapes() const {
    const auto shapes = layer_shapes();
    std::vector<Shape> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Shape& in = i == 0 ? input_shape : shapes[i - 1];
      const auto& l = layers[i];
      if (l.kind == LayerKind::kConv1d) {
        out.push_back({l.filters, in[0], l.kernel});
        out.push_back({l.filters});
      } else if (l.kind == LayerKind::kDense) {
        out.push_back({l.units, in[0]});
        out.push_back({l.units});
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& s : param_shapes()) n += shape_size(s);
    return n;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Ordered parameter tensors: weight, bias for each parametric layer.
struct ModelParams {
  std::vector<Tensor> tensors;

  bool same_structure(const ModelParams& o) const {
    if (tensors.size() != o.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].shape != o.tensors[i].shape) return false;
    }
    return true;
  }

  void check_matches(const ModelSpec& spec) const {
    const auto shapes = spec.param_shapes();
    if (shapes.size() != tensors.size()) {
      throw ShapeError(fmt::format("model '{}' expects {} parameter tensors, got {}", spec.name, shapes.size(),
                                   tensors.size()));
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (shapes[i] != tensors[i].shape) {
        throw ShapeError(fmt::format("parameter tensor {} has shape {}, expected {}", i, tensors[i].shape, shapes[i]));
      }
    }
  }

  bool all_finite() const {
    return std::all_of(tensors.begin(), tensors.end(), [](const Tensor& t) { return t.all_finite(); });
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  // FNV-1a over shapes and raw binary64 values.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tensors) {
      for (auto d : t.shape) {
        const std::uint64_t v = d;
        h = io::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(&v), sizeof v), h);
      }
      h = io::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(t.data.data()), t.data.size() * sizeof(double)),
                    h);
    }
    return h;
  }

  ModelParams zeros_like() const {
    ModelParams z;
    for (const auto& t : tensors) z.tensors.emplace_back(t.shape);
    return z;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
inline ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed, Stream::kInit);
  ModelParams p;
  for (const auto& shape : spec.param_shapes()) {
    Tensor t(shape);
    if (shape.size() > 1) {
      // dense {out, in}; conv {filters, channels, kernel}
      const std::size_t receptive = shape.size() == 3 ? shape[2] : 1;
      const double fan_in = static_cast<double>(shape[1] * receptive);
      const double fan_out = static_cast<double>(shape[0] * receptive);
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : t.data) v = rng.uniform(-a, a);
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

// ---- architectures -------------------------------------------------------

enum class ModelKind { kMlp, kCnn1d, kSvm, kLr };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kMlp: return "mlp";
    case ModelKind::kCnn1d: return "cnn1d";
    case ModelKind::kSvm: return "svm";
    case ModelKind::kLr: return "lr";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  for (auto k : {ModelKind::kMlp, ModelKind::kCnn1d, ModelKind::kSvm, ModelKind::kLr}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

inline ModelSpec cnn1d_spec(std::size_t q) {
  return {"cnn1d",
          {1, q},
          {LayerSpec::conv1d(16, 3), LayerSpec::relu(), LayerSpec::maxpool1d(2), LayerSpec::conv1d(32, 3),
           LayerSpec::relu(), LayerSpec::maxpool1d(2), LayerSpec::flatten(), LayerSpec::dense(32), LayerSpec::relu(),
           LayerSpec::dense(1), LayerSpec::sigmoid()}};
}

inline ModelSpec mlp_spec(std::size_t q) {
  return {"mlp",
          {q},
          {LayerSpec::dense(64), LayerSpec::relu(), LayerSpec::dense(32), LayerSpec::relu(), LayerSpec::dense(1),
           LayerSpec::sigmoid()}};
}

inline ModelSpec lr_spec(std::size_t q) { return {"lr", {q}, {LayerSpec::dense(1), LayerSpec::sigmoid()}}; }

inline ModelSpec svm_spec(std::size_t q) { return {"svm", {q}, {LayerSpec::dense(1)}}; }

inline ModelSpec model_spec(ModelKind k, std::size_t q) {
  switch (k) {
    case ModelKind::kMlp: return mlp_spec(q);
    case ModelKind::kCnn1d: return cnn1d_spec(q);
    case ModelKind::kSvm: return svm_spec(q);
    case ModelKind::kLr: return lr_spec(q);
  }
  throw ConfigError("unknown model kind");
}

// ---- losses and training configuration -----------------------------------

enum class LossKind { kBce, kHinge };

inline constexpr double kBceClamp = 1e-7;
inline constexpr double kSvmL2 = 1e-4;

struct LossConfig {
  LossKind kind = LossKind::kBce;
  double l2 = 0.0;  // adds (l2/2) * sum of squared weights (biases excluded)
};

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 0.001;
  LossConfig loss{};
  std::size_t epochs = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (!(loss.l2 >= 0.0)) throw ConfigError("l2 penalty must be >= 0");
  }
};

inline LossConfig default_loss(ModelKind k) {
  return k == ModelKind::kSvm ? LossConfig{LossKind::kHinge, kSvmL2} : LossConfig{LossKind::kBce, 0.0};
}

inline void check_loss_compatible(const ModelSpec& spec, const LossConfig& loss) {
  const auto out = spec.output_shape();
  if (shape_size(out) != 1) throw ShapeError(fmt::format("model '{}' must end in a single output unit", spec.name));
  if (loss.kind == LossKind::kBce && !spec.sigmoid_output()) {
    throw ConfigError(fmt::format("BCE loss needs a sigmoid output layer (model '{}')", spec.name));
  }
  if (loss.kind == LossKind::kHinge && spec.sigmoid_output()) {
    throw ConfigError(fmt::format("hinge loss needs a linear output layer (model '{}')", spec.name));
  }
}

inline double bce(double p, int y) {
  const double pc = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
  return -(y * std::log(pc) + (1 - y) * std::log(1.0 - pc));
}

inline double hinge(double score, int y) { return std::max(0.0, 1.0 - (2.0 * y - 1.0) * score); }

// ---- forward / backward --------------------------------------------------

namespace detail {

inline double sigmoid(double z) {
  double y = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  // Keep the output strictly inside (0, 1).
  return std::clamp(y, std::numeric_limits<double>::min(), 1.0 - std::numeric_limits<double>::epsilon() / 2.0);
}

// Per-sample activations of every layer plus pooling argmax indices.
struct Trace {
  std::vector<std::vector<double>> act;  // act[0] = input, act[i+1] = output of layer i
  std::vector<std::vector<std::size_t>> argmax;
};

class Engine {
 public:
  Engine(const ModelSpec& spec, const ModelParams& params)
      : spec_(spec), params_(params), shapes_(spec.layer_shapes()) {
    params.check_matches(spec);
    std::size_t t = 0;
    for (const auto& l : spec.layers) {
      param_index_.push_back(l.parametric() ? t : SIZE_MAX);
      if (l.parametric()) t += 2;
    }
  }

  const Shape& in_shape(std::size_t i) const { return i == 0 ? spec_.input_shape : shapes_[i - 1]; }

  void forward(std::span<const double> x, Trace& tr) const {
    const std::size_t n = spec_.layers.size();
    tr.act.resize(n + 1);
    tr.argmax.resize(n);
    tr.act[0].assign(x.begin(), x.end());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& l = spec_.layers[i];
      const auto& in = tr.act[i];
      auto& out = tr.act[i + 1];
      const Shape& is = in_shape(i);
      const Shape& os = shapes_[i];
      out.assign(shape_size(os), 0.0);
      switch (l.kind) {
        case LayerKind::kConv1d: {
          const auto& w = params_.tensors[param_index_[i]].data;
          const auto& b = params_.tensors[param_index_[i] + 1].data;
          const std::size_t c_in = is[0], len = is[1], k = l.kernel, lo = os[1];
          for (std::size_t f = 0; f < l.filters; ++f) {
            for (std::size_t t = 0; t < lo; ++t) {
              double acc = b[f];
              for (std::size_t c = 0; c < c_in; ++c) {
                const double* wr = &w[(f * c_in + c) * k];
                const double* xr = &in[c * len + t * l.stride];
                for (std::size_t j = 0; j < k; ++j) acc += wr[j] * xr[j];
              }
              out[f * lo + t] = acc;
            }
          }
          break;
        }
        case LayerKind::kMaxPool1d: {
          const std::size_t ch = is[0], len = is[1], lo = os[1], win = l.kernel;
          auto& am = tr.argmax[i];
          am.assign(out.size(), 0);
          for (std::size_t c = 0; c < ch; ++c) {
            for (std::size_t t = 0; t < lo; ++t) {
              std::size_t best = c * len + t * win;
              for (std::size_t j = 1; j < win; ++j) {
                const std::size_t idx = c * len + t * win + j;
                if (in[idx] > in[best]) best = idx;
              }
              out[c * lo + t] = in[best];
              am[c * lo + t] = best;
            }
          }
          break;
        }
        case LayerKind::kFlatten:
          out = in;
          break;
        case LayerKind::kDense: {
          const auto& w = params_.tensors[param_index_[i]].data;
          const auto& b = params_.tensors[param_index_[i] + 1].data;
          const std::size_t ni = is[0];
          for (std::size_t u = 0; u < l.units; ++u) {
            double acc = b[u];
            const double* wr = &w[u * ni];
            for (std::size_t j = 0; j < ni; ++j) acc += wr[j] * in[j];
            out[u] = acc;
          }
          break;
        }
        case LayerKind::kRelu:
          for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] > 0.0 ? in[j] : 0.0;
          break;
        case LayerKind::kSigmoid:
          for (std::size_t j = 0; j < in.size(); ++j) out[j] = sigmoid(in[j]);
          break;
      }
    }
  }

  // Back-propagates d(loss)/d(output of layer `from - 1`) down to the input,
  // accumulating parameter gradients into `grads`.
  void backward(const Trace& tr, std::vector<double> d_out, std::size_t from, ModelParams& grads) const {
    std::vector<double> d_in;
    for (std::size_t ii = from; ii-- > 0;) {
      const auto& l = spec_.layers[ii];
      const auto& in = tr.act[ii];
      const auto& out = tr.act[ii + 1];
      const Shape& is = in_shape(ii);
      const Shape& os = shapes_[ii];
      d_in.assign(in.size(), 0.0);
      switch (l.kind) {
        case LayerKind::kConv1d: {
          const auto& w = params_.tensors[param_index_[ii]].data;
          auto& gw = grads.tensors[param_index_[ii]].data;
          auto& gb = grads.tensors[param_index_[ii] + 1].data;
          const std::size_t c_in = is[0], len = is[1], k = l.kernel, lo = os[1];
          for (std::size_t f = 0; f < l.filters; ++f) {
            for (std::size_t t = 0; t < lo; ++t) {
              const double g = d_out[f * lo + t];
              if (g == 0.0) continue;
              gb[f] += g;
              for (std::size_t c = 0; c < c_in; ++c) {
                const std::size_t wo = (f * c_in + c) * k;
                const std::size_t xo = c * len + t * l.stride;
                for (std::size_t j = 0; j < k; ++j) {
                  gw[wo + j] += g * in[xo + j];
                  d_in[xo + j] += g * w[wo + j];
                }
              }
            }
          }
          break;
        }
        case LayerKind::kMaxPool1d: {
          const auto& am = tr.argmax[ii];
          for (std::size_t j = 0; j < am.size(); ++j) d_in[am[j]] += d_out[j];
          break;
        }
        case LayerKind::kFlatten:
          d_in = d_out;
          break;
        case LayerKind::kDense: {
          const auto& w = params_.tensors[param_index_[ii]].data;
          auto& gw = grads.tensors[param_index_[ii]].data;
          auto& gb = grads.tensors[param_index_[ii] + 1].data;
          const std::size_t ni = is[0];
          for (std::size_t u = 0; u < l.units; ++u) {
            const double g = d_out[u];
            if (g == 0.0) continue;
            gb[u] += g;
            for (std::size_t j = 0; j < ni; ++j) {
              gw[u * ni + j] += g * in[j];
              d_in[j] += g * w[u * ni + j];
            }
          }
          break;
        }
        case LayerKind::kRelu:
          for (std::size_t j = 0; j < in.size(); ++j) d_in[j] = in[j] > 0.0 ? d_out[j] : 0.0;
          break;
        case LayerKind::kSigmoid:
          for (std::size_t j = 0; j < in.size(); ++j) d_in[j] = d_out[j] * out[j] * (1.0 - out[j]);
          break;
      }
      std::swap(d_out, d_in);
    }
  }

  std::size_t input_size() const { return shape_size(spec_.input_shape); }
  std::size_t layer_count() const { return spec_.layers.size(); }

 private:
  const ModelSpec& spec_;
  const ModelParams& params_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> param_index_;
};

// Number of samples in `batch` given the per-sample input shape.
inline std::size_t batch_rows(const ModelSpec& spec, const Tensor& batch) {
  const std::size_t per = shape_size(spec.input_shape);
  if (batch.rank() == 0 || batch.shape[0] == 0) throw ShapeError("layer 0: empty batch");
  if (batch.size() != batch.shape[0] * per) {
    throw ShapeError(fmt::format("layer 0: batch shape {} incompatible with input shape {}", batch.shape,
                                 spec.input_shape));
  }
  return batch.shape[0];
}

}  // namespace detail

// Per-sample outputs, shape {B, output...}.
inline Tensor forward(const ModelSpec& spec, const ModelParams& params, const Tensor& batch) {
  detail::Engine eng(spec, params);
  const std::size_t b = detail::batch_rows(spec, batch);
  const std::size_t per = eng.input_size();
  Shape os = spec.output_shape();
  Shape shape{b};
  shape.insert(shape.end(), os.begin(), os.end());
  Tensor out(shape);
  const std::size_t osz = shape_size(os);
  detail::Trace tr;
  for (std::size_t i = 0; i < b; ++i) {
    eng.forward(std::span(batch.data).subspan(i * per, per), tr);
    std::copy(tr.act.back().begin(), tr.act.back().end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * osz));
  }
  return out;
}

struct LossAndGrad {
  double loss = 0.0;
  ModelParams grads;
  std::vector<double> outputs;  // per-sample model outputs (before the update)
};

// Batch-mean loss and its gradient. For BCE on a sigmoid output the gradient
// w.r.t. the pre-activation is p - y, which is the exact derivative wherever
// the probability clamp is inactive.
inline LossAndGrad loss_and_grad(const ModelSpec& spec, const ModelParams& params, const Tensor& batch,
                                 std::span<const std::uint8_t> labels, const LossConfig& loss) {
  check_loss_compatible(spec, loss);
  detail::Engine eng(spec, params);
  const std::size_t b = detail::batch_rows(spec, batch);
  if (labels.size() != b) throw ShapeError(fmt::format("{} labels for a batch of {}", labels.size(), b));
  for (auto y : labels) {
    if (y > 1) throw DomainError(fmt::format("label {} is not 0 or 1", y));
  }
  const std::size_t per = eng.input_size();
  const std::size_t n_layers = eng.layer_count();
  const double inv_b = 1.0 / static_cast<double>(b);

  LossAndGrad r;
  r.grads = params.zeros_like();
  r.outputs.resize(b);
  detail::Trace tr;
  for (std::size_t i = 0; i < b; ++i) {
    eng.forward(std::span(batch.data).subspan(i * per, per), tr);
    const double out = tr.act.back()[0];
    const int y = labels[i];
    r.outputs[i] = out;
    if (loss.kind == LossKind::kBce) {
      r.loss += bce(out, y) * inv_b;
      // Skip the sigmoid layer: d/dz BCE(sigmoid(z)) = p - y.
      eng.backward(tr, {(out - y) * inv_b}, n_layers - 1, r.grads);
    } else {
      const double t = 2.0 * y - 1.0;
      r.loss += hinge(out, y) * inv_b;
      const double g = 1.0 - t * out > 0.0 ? -t * inv_b : 0.0;
      eng.backward(tr, {g}, n_layers, r.grads);
    }
  }

  if (loss.l2 > 0.0) {
    std::size_t t = 0;
    for (const auto& l : spec.layers) {
      if (!l.parametric()) continue;
      const auto& w = params.tensors[t].data;
      auto& gw = r.grads.tensors[t].data;
      for (std::size_t j = 0; j < w.size(); ++j) {
        r.loss += 0.5 * loss.l2 * w[j] * w[j];
        gw[j] += loss.l2 * w[j];
      }
      t += 2;
    }
  }
  return r;
}

inline void sgd_update(ModelParams& params, const ModelParams& grads, double lr) {
  if (!params.same_structure(grads)) throw ShapeError("sgd_step: gradient structure does not match parameters");
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& p = params.tensors[t].data;
    const auto& g = grads.tensors[t].data;
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
  }
}

// p <- p - lr * g for every entry.
inline ModelParams sgd_step(ModelParams params, const ModelParams& grads, double lr) {
  sgd_update(params, grads, lr);
  return params;
}

// Tie (output exactly at the threshold) resolves to label 1.
inline std::uint8_t predict_label(double output, bool sigmoid_output) {
  return output >= (sigmoid_output ? 0.5 : 0.0) ? 1 : 0;
}

inline std::uint8_t predict(const ModelSpec& spec, const ModelParams& params, std::span<const double> features) {
  Tensor batch({1, features.size()}, std::vector<double>(features.begin(), features.end()));
  const auto out = forward(spec, params, batch);
  if (out.size() != 1) throw ShapeError("predict: model must have a single output unit");
  return predict_label(out.data[0], spec.sigmoid_output());
}

// Rows [begin, begin + count) of `ds` in the given order, widened to binary64.
inline Tensor gather_batch(const Dataset& ds, std::span<const std::size_t> order) {
  Tensor t({order.size(), ds.q});
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto row = ds.row(order[i]);
    std::copy(row.begin(), row.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * ds.q));
  }
  return t;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<std::uint8_t> predictions;
};

// Mean loss (without any L2 term) and accuracy over a whole dataset.
inline Evaluation evaluate(const ModelSpec& spec, const ModelParams& params, const Dataset& ds, LossKind kind) {
  if (ds.empty()) throw DomainError("evaluate: empty dataset");
  if (ds.q != shape_size(spec.input_shape)) {
    throw ShapeError(fmt::format("dataset has {} features, model '{}' expects {}", ds.q, spec.name,
                                 shape_size(spec.input_shape)));
  }
  detail::Engine eng(spec, params);
  detail::Trace tr;
  Evaluation ev;
  ev.predictions.resize(ds.rows());
  std::vector<double> x(ds.q);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    const auto row = ds.row(i);
    std::copy(row.begin(), row.end(), x.begin());
    eng.forward(x, tr);
    const double out = tr.act.back()[0];
    const int y = ds.labels[i];
    ev.loss += kind == LossKind::kBce ? bce(out, y) : hinge(out, y);
    ev.predictions[i] = predict_label(out, spec.sigmoid_output());
    correct += ev.predictions[i] == ds.labels[i];
  }
  ev.loss /= static_cast<double>(ds.rows());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(ds.rows());
  return ev;
}

struct LocalResult {
  ModelParams params;
  double train_loss = 0.0;  // sample-weighted mean batch loss of the final pass
  double train_acc = 0.0;   // accuracy of pre-update predictions in the final pass
};

// `iterations` passes of mini-batch SGD over `shard`. Pass i visits the rows
// in the order of a Fisher-Yates shuffle seeded by (cfg.seed, i).
inline LocalResult train_local(const ModelSpec& spec, ModelParams params, const Dataset& shard,
                               const TrainConfig& cfg, std::size_t iterations) {
  cfg.validate();
  if (shard.empty()) throw DomainError("train_local: empty shard");
  params.check_matches(spec);
  check_loss_compatible(spec, cfg.loss);
  if (shard.q != shape_size(spec.input_shape)) {
    throw ShapeError(fmt::format("shard has {} features, model '{}' expects {}", shard.q, spec.name,
                                 shape_size(spec.input_shape)));
  }

  LocalResult r;
  std::vector<std::size_t> order(shard.rows());
  std::vector<std::uint8_t> labels;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(cfg.seed, Stream::kShuffle, {it}).shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const auto idx = std::span(order).subspan(start, n);
      const Tensor batch = gather_batch(shard, idx);
      labels.resize(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = shard.labels[idx[i]];
      auto lg = loss_and_grad(spec, params, batch, labels, cfg.loss);
      if (!std::isfinite(lg.loss)) {
        throw NumericError(fmt::format("non-finite training loss in pass {} at row {}", it, start));
      }
      for (std::size_t i = 0; i < n; ++i) correct += predict_label(lg.outputs[i], spec.sigmoid_output()) == labels[i];
      loss_sum += lg.loss * static_cast<double>(n);
      sgd_update(params, lg.grads, cfg.learning_rate);
      if (!params.all_finite()) throw NumericError(fmt::format("non-finite parameters after pass {} row {}", it, start));
    }
    r.train_loss = loss_sum / static_cast<double>(order.size());
    r.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
  }
  r.params = std::move(params);
  return r;
}

// ---- checkpoint ----------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "SSBM";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t spec_digest = 0;
  ModelParams params;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.magic(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(ck.spec_digest);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.params.tensors.size()));
  for (const auto& t : ck.params.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
    w.put_all<double>(t.data);
  }
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what = "checkpoint") {
  io::ByteReader r(bytes, what);
  r.expect_magic(kCheckpointMagic);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionMismatchError(
        fmt::format("{}: unsupported version {} (expected {})", what, version, kCheckpointVersion));
  }
  Checkpoint ck;
  ck.spec_digest = r.get<std::uint64_t>("spec digest");
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rank = r.get<std::uint32_t>("tensor rank");
    if (rank > r.remaining() / sizeof(std::uint64_t)) throw TruncationError(what + ": truncated tensor header");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>("tensor dims");
      if (d != 0 && n > r.remaining() / sizeof(double) / d + 1) throw TruncationError(what + ": truncated tensor data");
      n *= d;
    }
    if (n > r.remaining() / sizeof(double)) throw TruncationError(what + ": truncated tensor data");
    Tensor t(shape);
    r.get_all<double>(t.data, "tensor data");
    ck.params.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes after last tensor");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return decode_checkpoint(bytes, path.string());
}

}  // namespace ssbjam::nn
