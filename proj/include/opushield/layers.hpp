#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "opushield/opu.hpp"
#include "opushield/rng.hpp"
#include "opushield/tensor.hpp"

namespace opushield {

/// y = W x + b with W stored [out, in].
struct Dense {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor weight;
  Tensor bias;

  static Dense make(std::string name, std::size_t in, std::size_t out, Rng& rng);
};

/// 2-D convolution on [C, H, W] samples; weight is [out_ch, in_ch, k, k].
struct Conv2d {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weight;
  Tensor bias;

  static Conv2d make(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                     std::size_t stride, std::size_t padding, Rng& rng);
};

/// Non-overlapping max pooling with a square window.
struct MaxPool2d {
  std::size_t size = 2;
};

struct Relu {};

/// Per-sample standardization without learned parameters:
/// y = (x - mean(x)) / sqrt(var(x) + eps).
struct Standardize {
  double eps = 1e-5;
};

struct Flatten {};

using Layer = std::variant<Conv2d, MaxPool2d, Relu, Standardize, Flatten, Dense, OpuLayer>;

using ParamGrads = std::map<std::string, Tensor>;

/// What a layer's backward pass needs from its forward pass.
struct LayerCache {
  Tensor input;
  std::vector<std::uint32_t> argmax;  // max pooling winners
  std::vector<Tensor> aux;            // surrogate optical layer internals
};

std::string layer_kind(const Layer& layer);

/// Output sample shape for a given input sample shape; throws InputError when incompatible.
Shape layer_output_shape(const Layer& layer, const Shape& input);

Tensor layer_forward(const Layer& layer, const Tensor& input, LayerCache* cache);

/// Accumulates parameter gradients into `grads` (keyed "<layer>.weight" /
/// "<layer>.bias") when non-null, and returns the input gradient when
/// `need_input_grad` is set (an empty tensor otherwise).
Tensor layer_backward(const Layer& layer, const LayerCache& cache, const Tensor& grad_out,
                      ParamGrads* grads, bool need_input_grad);

}  // namespace opushield
