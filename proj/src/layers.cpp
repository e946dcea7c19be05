#include "opushield/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "opushield/errors.hpp"

namespace opushield {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

Tensor& grad_slot(ParamGrads& grads, const std::string& name, const Shape& shape) {
  auto it = grads.find(name);
  if (it == grads.end()) it = grads.emplace(name, Tensor(shape)).first;
  return it->second;
}

// Patch matrix [P, C*k*k] for one [C, H, W] sample; out-of-bounds taps read 0.
void im2col(const Conv2d& c, std::span<const double> x, std::size_t h, std::size_t w,
            std::size_t oh, std::size_t ow, std::vector<double>& patches) {
  const std::size_t k = c.kernel;
  const std::size_t cols = c.in_channels * k * k;
  patches.assign(oh * ow * cols, 0.0);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* row = patches.data() + (oy * ow + ox) * cols;
      for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) -
                          static_cast<std::ptrdiff_t>(c.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) -
                            static_cast<std::ptrdiff_t>(c.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            row[(ch * k + ky) * k + kx] = x[(ch * h + static_cast<std::size_t>(iy)) * w +
                                            static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const Conv2d& c, const std::vector<double>& dpatches, std::size_t h, std::size_t w,
                std::size_t oh, std::size_t ow, std::span<double> dx) {
  const std::size_t k = c.kernel;
  const std::size_t cols = c.in_channels * k * k;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const double* row = dpatches.data() + (oy * ow + ox) * cols;
      for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) -
                          static_cast<std::ptrdiff_t>(c.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) -
                            static_cast<std::ptrdiff_t>(c.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dx[(ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                row[(ch * k + ky) * k + kx];
          }
        }
      }
    }
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* who) {
  if (t.rank() != rank) {
    throw InputError(std::string(who) + " expects a rank-" + std::to_string(rank) +
                     " batch, got " + shape_string(t.shape()));
  }
}

}  // namespace

Dense Dense::make(std::string name, std::size_t in, std::size_t out, Rng& rng) {
  Dense d{std::move(name), in, out, Tensor({out, in}), Tensor({out})};
  // He-uniform initialisation.
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  for (double& v : d.weight.data()) v = rng.uniform(-bound, bound);
  return d;
}

Conv2d Conv2d::make(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                    std::size_t stride, std::size_t padding, Rng& rng) {
  Conv2d c{std::move(name), in_ch, out_ch, kernel, stride, padding,
           Tensor({out_ch, in_ch, kernel, kernel}), Tensor({out_ch})};
  const double bound = std::sqrt(6.0 / static_cast<double>(in_ch * kernel * kernel));
  for (double& v : c.weight.data()) v = rng.uniform(-bound, bound);
  return c;
}

std::string layer_kind(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const Conv2d&) { return std::string("conv2d"); },
                        [](const MaxPool2d&) { return std::string("maxpool2d"); },
                        [](const Relu&) { return std::string("relu"); },
                        [](const Standardize&) { return std::string("standardize"); },
                        [](const Flatten&) { return std::string("flatten"); },
                        [](const Dense&) { return std::string("dense"); },
                        [](const OpuLayer&) { return std::string("opu"); },
                    },
                    layer);
}

Shape layer_output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) -> Shape {
            if (in.size() != 3 || in[0] != c.in_channels) {
              throw InputError("conv2d '" + c.name + "' expects [" + std::to_string(c.in_channels) +
                               ",H,W], got " + shape_string(in));
            }
            const std::size_t oh = conv_out(in[1], c.kernel, c.stride, c.padding);
            const std::size_t ow = conv_out(in[2], c.kernel, c.stride, c.padding);
            if (oh == 0 || ow == 0 || c.stride == 0) throw InputError("conv2d '" + c.name + "' output is empty");
            return {c.out_channels, oh, ow};
          },
          [&](const MaxPool2d& p) -> Shape {
            if (in.size() != 3 || p.size == 0 || in[1] < p.size || in[2] < p.size) {
              throw InputError("maxpool2d expects [C,H,W] at least window-sized, got " + shape_string(in));
            }
            return {in[0], in[1] / p.size, in[2] / p.size};
          },
          [&](const Relu&) -> Shape { return in; },
          [&](const Standardize&) -> Shape {
            if (in.size() != 1 || in[0] < 2) throw InputError("standardize expects a flat sample of length >= 2");
            return in;
          },
          [&](const Flatten&) -> Shape { return {shape_size(in)}; },
          [&](const Dense& d) -> Shape {
            if (in.size() != 1 || in[0] != d.in) {
              throw InputError("dense '" + d.name + "' expects [" + std::to_string(d.in) + "], got " +
                               shape_string(in));
            }
            return {d.out};
          },
          [&](const OpuLayer& o) -> Shape {
            if (in.size() != 1 || in[0] != o.input_dim()) {
              throw InputError("opu expects [" + std::to_string(o.input_dim()) + "], got " +
                               shape_string(in));
            }
            return {o.output_dim()};
          },
      },
      layer);
}

Tensor layer_forward(const Layer& layer, const Tensor& input, LayerCache* cache) {
  if (cache) cache->input = input;
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) -> Tensor {
            require_rank(input, 4, "conv2d");
            const Shape os = layer_output_shape(layer, input.sample_shape());
            const std::size_t h = input.dim(2), w = input.dim(3);
            const std::size_t oh = os[1], ow = os[2], p = oh * ow;
            const std::size_t kcols = c.in_channels * c.kernel * c.kernel;
            Tensor out({input.batch(), os[0], oh, ow});
            std::vector<double> patches;
            std::vector<double> tmp(p * c.out_channels);
            for (std::size_t b = 0; b < input.batch(); ++b) {
              im2col(c, input.sample(b), h, w, oh, ow, patches);
              kernels::affine(c.weight.data(), c.bias.data(), c.out_channels, kcols, patches, p, tmp);
              auto o = out.sample(b);
              for (std::size_t px = 0; px < p; ++px) {
                for (std::size_t co = 0; co < c.out_channels; ++co) o[co * p + px] = tmp[px * c.out_channels + co];
              }
            }
            return out;
          },
          [&](const MaxPool2d& mp) -> Tensor {
            require_rank(input, 4, "maxpool2d");
            const Shape os = layer_output_shape(layer, input.sample_shape());
            const std::size_t ch = os[0], oh = os[1], ow = os[2];
            const std::size_t h = input.dim(2), w = input.dim(3);
            Tensor out({input.batch(), ch, oh, ow});
            if (cache) cache->argmax.assign(out.size(), 0);
            for (std::size_t b = 0; b < input.batch(); ++b) {
              auto x = input.sample(b);
              auto o = out.sample(b);
              for (std::size_t c = 0; c < ch; ++c) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  for (std::size_t ox = 0; ox < ow; ++ox) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t arg = 0;
                    for (std::size_t dy = 0; dy < mp.size; ++dy) {
                      for (std::size_t dx = 0; dx < mp.size; ++dx) {
                        const std::size_t idx = (c * h + oy * mp.size + dy) * w + ox * mp.size + dx;
                        if (x[idx] > best) {
                          best = x[idx];
                          arg = idx;
                        }
                      }
                    }
                    const std::size_t oi = (c * oh + oy) * ow + ox;
                    o[oi] = best;
                    if (cache) cache->argmax[b * o.size() + oi] = static_cast<std::uint32_t>(arg);
                  }
                }
              }
            }
            return out;
          },
          [&](const Relu&) -> Tensor {
            Tensor out = input;
            for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
            return out;
          },
          [&](const Standardize& st) -> Tensor {
            require_rank(input, 2, "standardize");
            Tensor out(input.shape());
            const std::size_t n = input.dim(1);
            for (std::size_t b = 0; b < input.batch(); ++b) {
              auto x = input.sample(b);
              auto y = out.sample(b);
              double mean = 0.0;
              for (double v : x) mean += v;
              mean /= static_cast<double>(n);
              double var = 0.0;
              for (double v : x) var += (v - mean) * (v - mean);
              var /= static_cast<double>(n);
              const double inv = 1.0 / std::sqrt(var + st.eps);
              for (std::size_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * inv;
            }
            return out;
          },
          [&](const Flatten&) -> Tensor {
            return input.reshaped({input.batch(), input.sample_size()});
          },
          [&](const Dense& d) -> Tensor {
            require_rank(input, 2, "dense");
            layer_output_shape(layer, input.sample_shape());
            Tensor out({input.batch(), d.out});
            kernels::affine(d.weight.data(), d.bias.data(), d.out, d.in, input.data(), input.batch(),
                            out.data());
            return out;
          },
          [&](const OpuLayer& o) -> Tensor { return o.forward(input); },
      },
      layer);
}

Tensor layer_backward(const Layer& layer, const LayerCache& cache, const Tensor& grad_out,
                      ParamGrads* grads, bool need_input_grad) {
  const Tensor& input = cache.input;
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) -> Tensor {
            const std::size_t h = input.dim(2), w = input.dim(3);
            const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3), p = oh * ow;
            const std::size_t kcols = c.in_channels * c.kernel * c.kernel;
            Tensor dx;
            if (need_input_grad) dx = Tensor(input.shape());
            Tensor* dw = grads ? &grad_slot(*grads, c.name + ".weight", c.weight.shape()) : nullptr;
            Tensor* db = grads ? &grad_slot(*grads, c.name + ".bias", c.bias.shape()) : nullptr;
            std::vector<double> patches, dpatches;
            for (std::size_t b = 0; b < input.batch(); ++b) {
              auto g = grad_out.sample(b);
              if (dw) {
                im2col(c, input.sample(b), h, w, oh, ow, patches);
                for (std::size_t co = 0; co < c.out_channels; ++co) {
                  double* wrow = dw->data().data() + co * kcols;
                  double bsum = 0.0;
                  for (std::size_t px = 0; px < p; ++px) {
                    const double gv = g[co * p + px];
                    bsum += gv;
                    if (gv != 0.0) kernels::axpy(gv, patches.data() + px * kcols, wrow, kcols);
                  }
                  (*db)[co] += bsum;
                }
              }
              if (need_input_grad) {
                dpatches.assign(p * kcols, 0.0);
                for (std::size_t px = 0; px < p; ++px) {
                  double* drow = dpatches.data() + px * kcols;
                  for (std::size_t co = 0; co < c.out_channels; ++co) {
                    const double gv = g[co * p + px];
                    if (gv != 0.0) kernels::axpy(gv, c.weight.data().data() + co * kcols, drow, kcols);
                  }
                }
                col2im_add(c, dpatches, h, w, oh, ow, dx.sample(b));
              }
            }
            return dx;
          },
          [&](const MaxPool2d&) -> Tensor {
            if (!need_input_grad) return {};
            Tensor dx(input.shape());
            const std::size_t per_out = grad_out.sample_size();
            for (std::size_t b = 0; b < input.batch(); ++b) {
              auto d = dx.sample(b);
              auto g = grad_out.sample(b);
              for (std::size_t i = 0; i < per_out; ++i) d[cache.argmax[b * per_out + i]] += g[i];
            }
            return dx;
          },
          [&](const Relu&) -> Tensor {
            if (!need_input_grad) return {};
            Tensor dx = grad_out.reshaped(input.shape());
            for (std::size_t i = 0; i < dx.size(); ++i) {
              if (!(input[i] > 0.0)) dx[i] = 0.0;
            }
            return dx;
          },
          [&](const Standardize& st) -> Tensor {
            if (!need_input_grad) return {};
            // dx = (g - mean(g) - y * mean(g * y)) / s
            Tensor dx(input.shape());
            const std::size_t n = input.dim(1);
            const auto nd = static_cast<double>(n);
            for (std::size_t b = 0; b < input.batch(); ++b) {
              auto x = input.sample(b);
              auto g = grad_out.sample(b);
              auto d = dx.sample(b);
              double mean = 0.0;
              for (double v : x) mean += v;
              mean /= nd;
              double var = 0.0;
              for (double v : x) var += (v - mean) * (v - mean);
              var /= nd;
              const double inv = 1.0 / std::sqrt(var + st.eps);
              double g_mean = 0.0, gy_mean = 0.0;
              for (std::size_t i = 0; i < n; ++i) {
                g_mean += g[i];
                gy_mean += g[i] * (x[i] - mean) * inv;
              }
              g_mean /= nd;
              gy_mean /= nd;
              for (std::size_t i = 0; i < n; ++i) d[i] = (g[i] - g_mean - (x[i] - mean) * inv * gy_mean) * inv;
            }
            return dx;
          },
          [&](const Flatten&) -> Tensor {
            if (!need_input_grad) return {};
            return grad_out.reshaped(input.shape());
          },
          [&](const Dense& d) -> Tensor {
            const std::size_t batch = input.batch();
            if (grads) {
              Tensor& dw = grad_slot(*grads, d.name + ".weight", d.weight.shape());
              Tensor& db = grad_slot(*grads, d.name + ".bias", d.bias.shape());
              for (std::size_t o = 0; o < d.out; ++o) {
                double* wrow = dw.data().data() + o * d.in;
                double bsum = 0.0;
                for (std::size_t b = 0; b < batch; ++b) {
                  const double gv = grad_out[b * d.out + o];
                  bsum += gv;
                  if (gv != 0.0) kernels::axpy(gv, input.data().data() + b * d.in, wrow, d.in);
                }
                db[o] += bsum;
              }
            }
            if (!need_input_grad) return {};
            Tensor dx({batch, d.in});
            for (std::size_t b = 0; b < batch; ++b) {
              double* drow = dx.data().data() + b * d.in;
              for (std::size_t o = 0; o < d.out; ++o) {
                const double gv = grad_out[b * d.out + o];
                if (gv != 0.0) kernels::axpy(gv, d.weight.data().data() + o * d.in, drow, d.in);
              }
            }
            return dx;
          },
          [&](const OpuLayer& o) -> Tensor {
            if (!o.is_identity()) {
              throw BlockedPathError(
                  "exact gradient requested through the optical layer; use the hybrid "
                  "(feedback) path or a surrogate");
            }
            if (!need_input_grad) return {};
            return grad_out;
          },
      },
      layer);
}

}  // namespace opushield
