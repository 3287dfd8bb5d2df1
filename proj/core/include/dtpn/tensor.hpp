#pragma once

// Rank-2 (time x channel) kernels with hand-written reverse-mode gradients.
// Every forward returns a fresh Grad2 with a zeroed gradient buffer; every
// backward reads out.grad and *accumulates* into the gradients of its inputs
// and parameters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dtpn/error.hpp"
#include "dtpn/rng.hpp"

namespace dtpn {

template <typename Scalar>
struct Grad2 {
  std::size_t steps = 0;     // T
  std::size_t channels = 0;  // C
  std::vector<Scalar> value;
  std::vector<Scalar> grad;

  Grad2() = default;
  Grad2(std::size_t t, std::size_t c, Scalar fill = Scalar(0))
      : steps(t), channels(c), value(t * c, fill), grad(t * c, Scalar(0)) {}

  Scalar& at(std::size_t t, std::size_t c) { return value[t * channels + c]; }
  Scalar at(std::size_t t, std::size_t c) const { return value[t * channels + c]; }
  Scalar& grad_at(std::size_t t, std::size_t c) { return grad[t * channels + c]; }
  Scalar grad_at(std::size_t t, std::size_t c) const { return grad[t * channels + c]; }

  void zero_grad() { std::fill(grad.begin(), grad.end(), Scalar(0)); }
  bool all_finite() const {
    auto finite = [](Scalar v) { return std::isfinite(v); };
    return std::all_of(value.begin(), value.end(), finite) && std::all_of(grad.begin(), grad.end(), finite);
  }
};

enum class Padding { Same, Valid };

inline std::size_t conv_output_length(std::size_t steps, std::size_t kernel, std::size_t stride,
                                      Padding padding) {
  if (padding == Padding::Same) return (steps + stride - 1) / stride;
  if (steps < kernel) return 0;
  return (steps - kernel) / stride + 1;
}

/// Zeros added before the first step; the remainder of an odd total goes to the right.
inline std::size_t conv_left_pad(std::size_t steps, std::size_t kernel, std::size_t stride,
                                 Padding padding) {
  if (padding == Padding::Valid) return 0;
  const std::size_t out = conv_output_length(steps, kernel, stride, padding);
  const std::size_t needed = (out - 1) * stride + kernel;
  return needed > steps ? (needed - steps) / 2 : 0;
}

template <typename Scalar>
struct Conv1D {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Padding padding = Padding::Same;
  std::vector<Scalar> weight;  // [kernel][in][out]
  std::vector<Scalar> bias;    // [out]
  std::vector<Scalar> weight_grad;
  std::vector<Scalar> bias_grad;

  Conv1D() = default;
  Conv1D(std::size_t k, std::size_t s, std::size_t in, std::size_t out, Padding pad = Padding::Same)
      : kernel(k), stride(s), in_channels(in), out_channels(out), padding(pad),
        weight(k * in * out, Scalar(0)), bias(out, Scalar(0)),
        weight_grad(k * in * out, Scalar(0)), bias_grad(out, Scalar(0)) {
    if (k < 1 || s < 1 || in < 1 || out < 1) throw ShapeError("conv1d: kernel, stride and channels must be >= 1");
  }

  Scalar& w(std::size_t k, std::size_t i, std::size_t o) { return weight[(k * in_channels + i) * out_channels + o]; }
  Scalar w(std::size_t k, std::size_t i, std::size_t o) const {
    return weight[(k * in_channels + i) * out_channels + o];
  }

  /// Fan-in uniform init: U(-1/sqrt(k*in), 1/sqrt(k*in)), zero bias.
  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(kernel * in_channels));
    for (auto& v : weight) v = static_cast<Scalar>(rng.uniform(-bound, bound));
    std::fill(bias.begin(), bias.end(), Scalar(0));
  }

  void zero_grad() {
    std::fill(weight_grad.begin(), weight_grad.end(), Scalar(0));
    std::fill(bias_grad.begin(), bias_grad.end(), Scalar(0));
  }
};

template <typename Scalar>
Grad2<Scalar> conv1d_forward(const Grad2<Scalar>& x, const Conv1D<Scalar>& p) {
  if (x.channels != p.in_channels) {
    throw ShapeError("conv1d: input has " + std::to_string(x.channels) + " channels, layer expects " +
                     std::to_string(p.in_channels));
  }
  if (x.steps < 1) throw ShapeError("conv1d: empty input");
  const std::size_t out_len = conv_output_length(x.steps, p.kernel, p.stride, p.padding);
  if (out_len == 0) throw ShapeError("conv1d: input shorter than kernel in valid mode");
  const auto pad = static_cast<long>(conv_left_pad(x.steps, p.kernel, p.stride, p.padding));
  const std::size_t co = p.out_channels;

  Grad2<Scalar> y(out_len, co);
  for (std::size_t t = 0; t < out_len; ++t) {
    Scalar* yrow = y.value.data() + t * co;
    std::copy(p.bias.begin(), p.bias.end(), yrow);
    for (std::size_t k = 0; k < p.kernel; ++k) {
      const long src = static_cast<long>(t * p.stride + k) - pad;
      if (src < 0 || src >= static_cast<long>(x.steps)) continue;
      const Scalar* xrow = x.value.data() + static_cast<std::size_t>(src) * x.channels;
      for (std::size_t c = 0; c < x.channels; ++c) {
        const Scalar xv = xrow[c];
        if (xv == Scalar(0)) continue;
        const Scalar* wrow = p.weight.data() + (k * p.in_channels + c) * co;
        for (std::size_t o = 0; o < co; ++o) yrow[o] += xv * wrow[o];
      }
    }
  }
  return y;
}

template <typename Scalar>
void conv1d_backward(Grad2<Scalar>& x, Conv1D<Scalar>& p, const Grad2<Scalar>& y) {
  const auto pad = static_cast<long>(conv_left_pad(x.steps, p.kernel, p.stride, p.padding));
  const std::size_t co = p.out_channels;
  for (std::size_t t = 0; t < y.steps; ++t) {
    const Scalar* dy = y.grad.data() + t * co;
    for (std::size_t o = 0; o < co; ++o) p.bias_grad[o] += dy[o];
    for (std::size_t k = 0; k < p.kernel; ++k) {
      const long src = static_cast<long>(t * p.stride + k) - pad;
      if (src < 0 || src >= static_cast<long>(x.steps)) continue;
      const Scalar* xrow = x.value.data() + static_cast<std::size_t>(src) * x.channels;
      Scalar* dxrow = x.grad.data() + static_cast<std::size_t>(src) * x.channels;
      for (std::size_t c = 0; c < x.channels; ++c) {
        const Scalar* wrow = p.weight.data() + (k * p.in_channels + c) * co;
        Scalar* dwrow = p.weight_grad.data() + (k * p.in_channels + c) * co;
        const Scalar xv = xrow[c];
        Scalar acc = 0;
        for (std::size_t o = 0; o < co; ++o) {
          acc += dy[o] * wrow[o];
          dwrow[o] += xv * dy[o];
        }
        dxrow[c] += acc;
      }
    }
  }
}

inline std::size_t pool_output_length(std::size_t steps, std::size_t window, std::size_t stride) {
  const std::size_t rest = steps > window ? steps - window : 0;
  return (rest + stride - 1) / stride + 1;
}

/// Temporal max pooling. `argmax` receives, per output entry, the flat index of
/// the winning input entry; ties go to the earliest step.
template <typename Scalar>
Grad2<Scalar> maxpool1d_forward(const Grad2<Scalar>& x, std::size_t window, std::size_t stride,
                                std::vector<std::size_t>& argmax) {
  if (window < 1 || stride < 1) throw ShapeError("maxpool1d: window and stride must be >= 1");
  if (x.steps < 1) throw ShapeError("maxpool1d: empty input");
  const std::size_t out_len = pool_output_length(x.steps, window, stride);
  Grad2<Scalar> y(out_len, x.channels);
  argmax.assign(out_len * x.channels, 0);
  for (std::size_t t = 0; t < out_len; ++t) {
    const std::size_t begin = t * stride;
    const std::size_t end = std::min(begin + window, x.steps);
    for (std::size_t c = 0; c < x.channels; ++c) {
      std::size_t best = begin * x.channels + c;
      for (std::size_t s = begin + 1; s < end; ++s) {
        const std::size_t idx = s * x.channels + c;
        if (x.value[idx] > x.value[best]) best = idx;
      }
      y.value[t * x.channels + c] = x.value[best];
      argmax[t * x.channels + c] = best;
    }
  }
  return y;
}

template <typename Scalar>
void maxpool1d_backward(Grad2<Scalar>& x, const Grad2<Scalar>& y, const std::vector<std::size_t>& argmax) {
  for (std::size_t i = 0; i < argmax.size(); ++i) x.grad[argmax[i]] += y.grad[i];
}

template <typename Scalar>
Grad2<Scalar> concat_channels(std::span<const Grad2<Scalar>* const> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const std::size_t steps = xs.front()->steps;
  std::size_t total = 0;
  for (const auto* x : xs) {
    if (x->steps != steps) throw ShapeError("concat_channels: inputs disagree on temporal length");
    total += x->channels;
  }
  Grad2<Scalar> y(steps, total);
  for (std::size_t t = 0; t < steps; ++t) {
    Scalar* dst = y.value.data() + t * total;
    for (const auto* x : xs) {
      dst = std::copy_n(x->value.data() + t * x->channels, x->channels, dst);
    }
  }
  return y;
}

template <typename Scalar>
void concat_channels_backward(std::span<Grad2<Scalar>* const> xs, const Grad2<Scalar>& y) {
  for (std::size_t t = 0; t < y.steps; ++t) {
    const Scalar* src = y.grad.data() + t * y.channels;
    for (auto* x : xs) {
      Scalar* dst = x->grad.data() + t * x->channels;
      for (std::size_t c = 0; c < x->channels; ++c) dst[c] += src[c];
      src += x->channels;
    }
  }
}

/// Each time step copied `factor` times in place: (T x C) -> (T*factor x C).
template <typename Scalar>
Grad2<Scalar> repeat_steps(const Grad2<Scalar>& x, std::size_t factor) {
  Grad2<Scalar> y(x.steps * factor, x.channels);
  for (std::size_t t = 0; t < y.steps; ++t) {
    std::copy_n(x.value.data() + (t / factor) * x.channels, x.channels, y.value.data() + t * x.channels);
  }
  return y;
}

template <typename Scalar>
void repeat_steps_backward(Grad2<Scalar>& x, const Grad2<Scalar>& y, std::size_t factor) {
  for (std::size_t t = 0; t < y.steps; ++t) {
    const Scalar* src = y.grad.data() + t * y.channels;
    Scalar* dst = x.grad.data() + (t / factor) * x.channels;
    for (std::size_t c = 0; c < x.channels; ++c) dst[c] += src[c];
  }
}

template <typename Scalar>
Grad2<Scalar> relu_forward(const Grad2<Scalar>& x) {
  Grad2<Scalar> y(x.steps, x.channels);
  for (std::size_t i = 0; i < x.value.size(); ++i) y.value[i] = std::max(x.value[i], Scalar(0));
  return y;
}

template <typename Scalar>
void relu_backward(Grad2<Scalar>& x, const Grad2<Scalar>& y) {
  for (std::size_t i = 0; i < x.value.size(); ++i) {
    if (x.value[i] > Scalar(0)) x.grad[i] += y.grad[i];
  }
}

template <typename Scalar>
Scalar sigmoid(Scalar v) {
  if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

/// Max-subtracted softmax of one row of logits.
template <typename Scalar>
std::vector<Scalar> softmax(std::span<const Scalar> logits) {
  std::vector<Scalar> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const Scalar m = *std::max_element(p.begin(), p.end());
  Scalar sum = 0;
  for (auto& v : p) sum += (v = std::exp(v - m));
  for (auto& v : p) v /= sum;
  return p;
}

template <typename Scalar>
Grad2<Scalar> softmax_rows(const Grad2<Scalar>& x) {
  Grad2<Scalar> y(x.steps, x.channels);
  for (std::size_t t = 0; t < x.steps; ++t) {
    const auto p = softmax<Scalar>({x.value.data() + t * x.channels, x.channels});
    std::copy(p.begin(), p.end(), y.value.begin() + static_cast<long>(t * x.channels));
  }
  return y;
}

/// 0.5 u^2 for |u| < 1, |u| - 0.5 otherwise.
template <typename Scalar>
Scalar smooth_l1(Scalar u) {
  const Scalar a = std::abs(u);
  return a < Scalar(1) ? Scalar(0.5) * u * u : a - Scalar(0.5);
}

template <typename Scalar>
Scalar smooth_l1_grad(Scalar u) {
  if (u > Scalar(1)) return Scalar(1);
  if (u < Scalar(-1)) return Scalar(-1);
  return u;
}

/// Sum over coordinates of smooth_l1(pred - target). Adds scale * d/dpred to `dpred` when given.
template <typename Scalar>
Scalar smooth_l1(std::span<const Scalar> pred, std::span<const Scalar> target, std::span<Scalar> dpred = {},
                 Scalar scale = Scalar(1)) {
  Scalar loss = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Scalar u = pred[i] - target[i];
    loss += smooth_l1(u);
    if (!dpred.empty()) dpred[i] += scale * smooth_l1_grad(u);
  }
  return loss;
}

/// -log softmax(logits)[target]. Adds scale * d/dlogits to `dlogits` when given.
template <typename Scalar>
Scalar cross_entropy(std::span<const Scalar> logits, std::size_t target, std::span<Scalar> dlogits = {},
                     Scalar scale = Scalar(1)) {
  const Scalar m = *std::max_element(logits.begin(), logits.end());
  Scalar sum = 0;
  for (Scalar v : logits) sum += std::exp(v - m);
  const Scalar log_z = m + std::log(sum);
  if (!dlogits.empty()) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const Scalar p = std::exp(logits[i] - log_z);
      dlogits[i] += scale * (p - (i == target ? Scalar(1) : Scalar(0)));
    }
  }
  return log_z - logits[target];
}

/// Row-wise cross entropy summed over rows of a (T x C) logit map.
template <typename Scalar>
Scalar cross_entropy_rows(Grad2<Scalar>& logits, std::span<const std::size_t> targets) {
  Scalar total = 0;
  for (std::size_t t = 0; t < logits.steps; ++t) {
    total += cross_entropy<Scalar>({logits.value.data() + t * logits.channels, logits.channels}, targets[t],
                                   {logits.grad.data() + t * logits.channels, logits.channels});
  }
  return total;
}

/// Binary cross entropy on a logit, target in [0,1]; stable for large |logit|.
template <typename Scalar>
Scalar binary_cross_entropy(Scalar logit, Scalar target) {
  return std::max(logit, Scalar(0)) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

template <typename Scalar>
Scalar binary_cross_entropy_grad(Scalar logit, Scalar target) {
  return sigmoid(logit) - target;
}

}  // namespace dtpn
