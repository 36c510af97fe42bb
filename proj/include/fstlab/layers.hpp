#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "fstlab/errors.hpp"
#include "fstlab/rng.hpp"
#include "fstlab/tensor.hpp"

namespace fstlab {

enum class LayerKind { Dense, Relu, Conv2d, MaxPool2x2, Flatten };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool2x2: return "maxpool2x2";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "dense") return LayerKind::Dense;
  if (s == "relu") return LayerKind::Relu;
  if (s == "conv2d") return LayerKind::Conv2d;
  if (s == "maxpool2x2") return LayerKind::MaxPool2x2;
  if (s == "flatten") return LayerKind::Flatten;
  throw ConfigError("layer.kind", "unknown layer kind '" + s + "'");
}

// Shape metadata for one layer. For dense, `in`/`out` are feature widths;
// for conv2d they are channel counts (kernel fixed at 3x3, stride 1, same
// padding). Other kinds carry no parameters.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;

  static LayerSpec dense(std::size_t in, std::size_t out, bool bias = true) {
    return {LayerKind::Dense, in, out, bias};
  }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0, false}; }
  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels,
                          bool bias = true) {
    return {LayerKind::Conv2d, in_channels, out_channels, bias};
  }
  static LayerSpec maxpool2x2() { return {LayerKind::MaxPool2x2, 0, 0, false}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, false}; }

  bool has_params() const {
    return kind == LayerKind::Dense || kind == LayerKind::Conv2d;
  }

  Shape weight_shape() const {
    if (kind == LayerKind::Dense) return {in, out};
    if (kind == LayerKind::Conv2d) return {3, 3, in, out};
    return {};
  }

  std::size_t fan_in() const {
    return kind == LayerKind::Conv2d ? 9 * in : in;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Layer {
  LayerSpec spec;
  Tensor weight;  // dense: [in, out]; conv2d: [3, 3, inC, outC]
  Tensor bias;    // [out], empty when the layer has no bias

  explicit Layer(LayerSpec s) : spec(s) {
    if (spec.has_params()) {
      weight = Tensor(spec.weight_shape());
      if (spec.bias) bias = Tensor({spec.out});
    }
  }
};

struct LayerGrads {
  Tensor weight;
  Tensor bias;
};

// Per-sample output shape, or ConfigError if `sample` is incompatible.
inline Shape layer_output_shape(const LayerSpec& spec, const Shape& sample) {
  auto fail = [&](const std::string& why) -> Shape {
    throw ConfigError("model.shape", std::string(to_string(spec.kind)) +
                                         " cannot take input " +
                                         shape_string(sample) + ": " + why);
  };
  switch (spec.kind) {
    case LayerKind::Dense:
      if (sample.size() != 1) return fail("dense expects a flat input");
      if (sample[0] != spec.in) return fail("expected width " + std::to_string(spec.in));
      if (spec.in == 0 || spec.out == 0) return fail("zero width");
      return {spec.out};
    case LayerKind::Relu:
      return sample;
    case LayerKind::Conv2d:
      if (sample.size() != 3) return fail("conv2d expects HxWxC");
      if (sample[2] != spec.in) return fail("expected " + std::to_string(spec.in) + " channels");
      if (spec.out == 0) return fail("zero output channels");
      return {sample[0], sample[1], spec.out};
    case LayerKind::MaxPool2x2:
      if (sample.size() != 3) return fail("maxpool2x2 expects HxWxC");
      if (sample[0] % 2 || sample[1] % 2) return fail("spatial dims must be even");
      return {sample[0] / 2, sample[1] / 2, sample[2]};
    case LayerKind::Flatten:
      return {shape_product(sample)};
  }
  return fail("unknown kind");
}

// Kaiming-uniform weights U(-sqrt(6/fanIn), +sqrt(6/fanIn)), zero biases.
inline void init_layer(Layer& layer, Rng& rng) {
  if (!layer.spec.has_params()) return;
  const double bound = std::sqrt(6.0 / static_cast<double>(layer.spec.fan_in()));
  for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
  layer.bias.fill(0.0);
}

namespace detail {

inline Shape with_batch(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

inline Tensor dense_forward(const Layer& l, const Tensor& x) {
  const std::size_t batch = x.dim(0), in = l.spec.in, out = l.spec.out;
  Tensor y({batch, out});
  const double* w = l.weight.data();
  for (std::size_t b = 0; b < batch; ++b) {
    double* yr = y.data() + b * out;
    if (l.spec.bias) std::copy_n(l.bias.data(), out, yr);
    const double* xr = x.data() + b * in;
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      const double* wr = w + k * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
  }
  return y;
}

inline Tensor dense_backward(const Layer& l, const Tensor& x, const Tensor& dy,
                             LayerGrads& g, bool need_dx) {
  const std::size_t batch = x.dim(0), in = l.spec.in, out = l.spec.out;
  g.weight = Tensor({in, out});
  if (l.spec.bias) g.bias = Tensor({out});
  Tensor dx({batch, in});
  const double* w = l.weight.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x.data() + b * in;
    const double* dyr = dy.data() + b * out;
    double* dxr = dx.data() + b * in;
    for (std::size_t k = 0; k < in; ++k) {
      const double* wr = w + k * out;
      double* gr = g.weight.data() + k * out;
      const double xv = xr[k];
      for (std::size_t j = 0; j < out; ++j) gr[j] += xv * dyr[j];
      if (!need_dx) continue;
      double acc = 0.0;
      for (std::size_t j = 0; j < out; ++j) acc += wr[j] * dyr[j];
      dxr[k] = acc;
    }
    if (l.spec.bias) {
      for (std::size_t j = 0; j < out; ++j) g.bias[j] += dyr[j];
    }
  }
  return dx;
}

inline Tensor conv_forward(const Layer& l, const Tensor& x) {
  const std::size_t batch = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t ci = l.spec.in, co = l.spec.out;
  Tensor y({batch, h, wd, co});
  const double* k = l.weight.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < wd; ++c) {
        double* yp = y.data() + ((b * h + r) * wd + c) * co;
        if (l.spec.bias) std::copy_n(l.bias.data(), co, yp);
        for (std::size_t dr = 0; dr < 3; ++dr) {
          const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + dr) - 1;
          if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t dc = 0; dc < 3; ++dc) {
            const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + dc) - 1;
            if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(wd)) continue;
            const double* xp = x.data() + ((b * h + rr) * wd + cc) * ci;
            const double* kp = k + (dr * 3 + dc) * ci * co;
            for (std::size_t i = 0; i < ci; ++i) {
              const double xv = xp[i];
              const double* kr = kp + i * co;
              for (std::size_t o = 0; o < co; ++o) yp[o] += xv * kr[o];
            }
          }
        }
      }
    }
  }
  return y;
}

inline Tensor conv_backward(const Layer& l, const Tensor& x, const Tensor& dy,
                            LayerGrads& g) {
  const std::size_t batch = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t ci = l.spec.in, co = l.spec.out;
  g.weight = Tensor(l.spec.weight_shape());
  if (l.spec.bias) g.bias = Tensor({co});
  Tensor dx(x.shape());
  const double* k = l.weight.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < wd; ++c) {
        const double* dyp = dy.data() + ((b * h + r) * wd + c) * co;
        if (l.spec.bias) {
          for (std::size_t o = 0; o < co; ++o) g.bias[o] += dyp[o];
        }
        for (std::size_t dr = 0; dr < 3; ++dr) {
          const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + dr) - 1;
          if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t dc = 0; dc < 3; ++dc) {
            const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + dc) - 1;
            if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(wd)) continue;
            const std::size_t off = ((b * h + rr) * wd + cc) * ci;
            const double* xp = x.data() + off;
            double* dxp = dx.data() + off;
            const double* kp = k + (dr * 3 + dc) * ci * co;
            double* gp = g.weight.data() + (dr * 3 + dc) * ci * co;
            for (std::size_t i = 0; i < ci; ++i) {
              const double xv = xp[i];
              const double* kr = kp + i * co;
              double* gr = gp + i * co;
              double acc = 0.0;
              for (std::size_t o = 0; o < co; ++o) {
                gr[o] += xv * dyp[o];
                acc += kr[o] * dyp[o];
              }
              dxp[i] += acc;
            }
          }
        }
      }
    }
  }
  return dx;
}

// Index (within the 2x2 window) of the first maximum, row-major.
inline std::size_t pool_argmax(const Tensor& x, std::size_t b, std::size_t r,
                               std::size_t c, std::size_t ch) {
  const std::size_t h = x.dim(1), wd = x.dim(2), chans = x.dim(3);
  std::size_t best = 0;
  double best_v = 0.0;
  for (std::size_t q = 0; q < 4; ++q) {
    const std::size_t rr = 2 * r + q / 2, cc = 2 * c + q % 2;
    const double v = x[((b * h + rr) * wd + cc) * chans + ch];
    if (q == 0 || v > best_v) {
      best = q;
      best_v = v;
    }
  }
  return best;
}

inline Tensor pool_forward(const Tensor& x) {
  const std::size_t batch = x.dim(0), h = x.dim(1), wd = x.dim(2), ch = x.dim(3);
  Tensor y({batch, h / 2, wd / 2, ch});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < h / 2; ++r)
      for (std::size_t c = 0; c < wd / 2; ++c)
        for (std::size_t k = 0; k < ch; ++k) {
          const std::size_t q = pool_argmax(x, b, r, c, k);
          const std::size_t rr = 2 * r + q / 2, cc = 2 * c + q % 2;
          y[((b * (h / 2) + r) * (wd / 2) + c) * ch + k] =
              x[((b * h + rr) * wd + cc) * ch + k];
        }
  return y;
}

inline Tensor pool_backward(const Tensor& x, const Tensor& dy) {
  const std::size_t batch = x.dim(0), h = x.dim(1), wd = x.dim(2), ch = x.dim(3);
  Tensor dx(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < h / 2; ++r)
      for (std::size_t c = 0; c < wd / 2; ++c)
        for (std::size_t k = 0; k < ch; ++k) {
          const std::size_t q = pool_argmax(x, b, r, c, k);
          const std::size_t rr = 2 * r + q / 2, cc = 2 * c + q % 2;
          dx[((b * h + rr) * wd + cc) * ch + k] +=
              dy[((b * (h / 2) + r) * (wd / 2) + c) * ch + k];
        }
  return dx;
}

}  // namespace detail

// `x` is a batch: dim 0 is the batch size, the rest is the per-sample shape
// already validated at model build.
inline Tensor layer_forward(const Layer& l, const Tensor& x) {
  switch (l.spec.kind) {
    case LayerKind::Dense: return detail::dense_forward(l, x);
    case LayerKind::Conv2d: return detail::conv_forward(l, x);
    case LayerKind::MaxPool2x2: return detail::pool_forward(x);
    case LayerKind::Relu: {
      Tensor y = x;
      for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
      return y;
    }
    case LayerKind::Flatten: {
      Tensor y = x;
      y.reshape({x.dim(0), x.size() / x.dim(0)});
      return y;
    }
  }
  return x;
}

// Returns dL/dx and fills `g` for parameterized layers. With `need_dx`
// false a dense layer skips the input gradient and returns zeros.
inline Tensor layer_backward(const Layer& l, const Tensor& x, const Tensor& dy,
                             LayerGrads& g, bool need_dx = true) {
  switch (l.spec.kind) {
    case LayerKind::Dense: return detail::dense_backward(l, x, dy, g, need_dx);
    case LayerKind::Conv2d: return detail::conv_backward(l, x, dy, g);
    case LayerKind::MaxPool2x2: return detail::pool_backward(x, dy);
    case LayerKind::Relu: {
      Tensor dx = dy;
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(x[i] > 0.0)) dx[i] = 0.0;
      }
      return dx;
    }
    case LayerKind::Flatten: {
      Tensor dx = dy;
      dx.reshape(x.shape());
      return dx;
    }
  }
  return dy;
}

}  // namespace fstlab
