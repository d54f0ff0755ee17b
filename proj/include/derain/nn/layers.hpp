#pragma once

// Convolution, attention and residual building blocks. Every module exposes
// collect(params, prefix) for the optimizer and checkpoints, and init(rng)
// for centered-uniform weights with scale 1/sqrt(fan_in) and zero biases.

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "derain/nn/ops.hpp"
#include "derain/rng.hpp"

namespace derain::nn {

template <class T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

enum class LayerKind { conv3, conv1, relu, sigmoid, gap, channel_attention, spatial_attention, dab, rrg };

struct LayerSpec {
  LayerKind kind = LayerKind::conv3;
  int in_channels = 1;
  int out_channels = 1;
  int reduction = 1;

  void validate() const {
    if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("channel counts must be >= 1");
    if (reduction < 1 || in_channels % reduction != 0)
      throw std::invalid_argument("reduction must divide in_channels");
    const bool same = kind == LayerKind::dab || kind == LayerKind::rrg ||
                      kind == LayerKind::channel_attention || kind == LayerKind::spatial_attention;
    if (same && in_channels != out_channels)
      throw std::invalid_argument("block requires in_channels == out_channels");
  }
};

template <class T>
struct Conv2d {
  int in = 0, out = 0, kernel = 3;
  Tensor<T> weight, bias;

  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int k) : in(in_channels), out(out_channels), kernel(k) {
    if (k != 1 && k != 3) throw std::invalid_argument("kernel must be 1 or 3");
    LayerSpec{k == 3 ? LayerKind::conv3 : LayerKind::conv1, in, out, 1}.validate();
    weight = Tensor<T>::zeros({out, in, k, k}, true);
    bias = Tensor<T>::zeros({1, out, 1, 1}, true);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias); }

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
    for (T& v : weight.data()) v = static_cast<T>(uniform(rng, -bound, bound));
    for (T& v : bias.data()) v = T(0);
  }

  void collect(ParamList<T>& ps, const std::string& prefix) const {
    ps.emplace_back(prefix + ".weight", weight);
    ps.emplace_back(prefix + ".bias", bias);
  }
};

/// Squeeze (global pooling), reduce, expand, sigmoid gate per channel.
template <class T>
struct ChannelAttention {
  Conv2d<T> reduce, expand;

  ChannelAttention() = default;
  ChannelAttention(int channels, int reduction) {
    LayerSpec{LayerKind::channel_attention, channels, channels, reduction}.validate();
    reduce = Conv2d<T>(channels, channels / reduction, 1);
    expand = Conv2d<T>(channels / reduction, channels, 1);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const auto s = sigmoid(expand(relu(reduce(global_avg_pool(x)))));
    return scale_channels(x, s);
  }

  void init(Rng& rng) {
    reduce.init(rng);
    expand.init(rng);
  }
  void collect(ParamList<T>& ps, const std::string& prefix) const {
    reduce.collect(ps, prefix + ".reduce");
    expand.collect(ps, prefix + ".expand");
  }
};

/// Sigmoid gate per pixel from a 3x3 conv over [channel max; channel mean].
template <class T>
struct SpatialAttention {
  Conv2d<T> conv;

  SpatialAttention() : conv(2, 1, 3) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return scale_pixels(x, sigmoid(conv(channel_pool(x))));
  }

  void init(Rng& rng) { conv.init(rng); }
  void collect(ParamList<T>& ps, const std::string& prefix) const { conv.collect(ps, prefix + ".conv"); }
};

/// Dual attention block: x + CA(SA(conv(relu(conv(x))))).
template <class T>
struct DualAttentionBlock {
  Conv2d<T> conv1, conv2;
  SpatialAttention<T> spatial;
  ChannelAttention<T> channel;

  DualAttentionBlock() = default;
  DualAttentionBlock(int channels, int reduction)
      : conv1(channels, channels, 3), conv2(channels, channels, 3), channel(channels, reduction) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    const auto f = conv2(relu(conv1(x)));
    return add(x, channel(spatial(f)));
  }

  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    spatial.init(rng);
    channel.init(rng);
  }
  void collect(ParamList<T>& ps, const std::string& prefix) const {
    conv1.collect(ps, prefix + ".conv1");
    conv2.collect(ps, prefix + ".conv2");
    spatial.collect(ps, prefix + ".sa");
    channel.collect(ps, prefix + ".ca");
  }
};

/// Recursive residual group: x + conv(dab2(dab1(x))).
template <class T>
struct ResidualGroup {
  DualAttentionBlock<T> dab1, dab2;
  Conv2d<T> conv;

  ResidualGroup() = default;
  ResidualGroup(int channels, int reduction)
      : dab1(channels, reduction), dab2(channels, reduction), conv(channels, channels, 3) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return add(x, conv(dab2(dab1(x)))); }

  void init(Rng& rng) {
    dab1.init(rng);
    dab2.init(rng);
    conv.init(rng);
  }
  void collect(ParamList<T>& ps, const std::string& prefix) const {
    dab1.collect(ps, prefix + ".dab1");
    dab2.collect(ps, prefix + ".dab2");
    conv.collect(ps, prefix + ".conv");
  }
};

template <class T>
void zero_params(const ParamList<T>& ps) {
  for (auto [name, t] : ps)
    for (T& v : t.data()) v = T(0);
}

}  // namespace derain::nn
