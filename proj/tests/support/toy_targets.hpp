#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <span>
#include <vector>

#include "opushield/blackbox.hpp"
#include "opushield/tensor.hpp"

namespace opushield::testing {

// Two-class scorer with logits (0, f(x)); for label 0 the loss softplus(f) is
// increasing in f and the sample is misclassified once f > 0.
class FunctionTarget final : public BlackBoxTarget {
 public:
  FunctionTarget(Shape shape, std::function<double(std::span<const double>)> f)
      : shape_(std::move(shape)), f_(std::move(f)) {}
  const Shape& input_shape() const override { return shape_; }
  std::size_t num_classes() const override { return 2; }
  Tensor scores(const Tensor& x) const override {
    Tensor out({x.batch(), 2});
    for (std::size_t b = 0; b < x.batch(); ++b) out[2 * b + 1] = f_(x.sample(b));
    std::lock_guard lock(mu_);
    for (std::size_t b = 0; b < x.batch(); ++b) {
      seen_.emplace_back(x.sample(b).begin(), x.sample(b).end());
    }
    return out;
  }
  const std::vector<std::vector<double>>& seen() const { return seen_; }

 private:
  Shape shape_;
  std::function<double(std::span<const double>)> f_;
  mutable std::mutex mu_;
  mutable std::vector<std::vector<double>> seen_;
};

inline double softplus(double f) { return f > 0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f)); }

inline BatchLossFn plain_loss(std::function<double(std::span<const double>)> l) {
  return [l](const Tensor& pts) {
    std::vector<double> out(pts.batch());
    for (std::size_t b = 0; b < pts.batch(); ++b) out[b] = l(pts.sample(b));
    return out;
  };
}

inline double cos_sim(std::span<const double> a, std::span<const double> b) {
  return kernels::dot(a.data(), b.data(), a.size()) /
         std::sqrt(kernels::dot(a.data(), a.data(), a.size()) * kernels::dot(b.data(), b.data(), b.size()));
}

inline std::vector<std::int8_t> decode_signs(std::size_t code, std::size_t n) {
  std::vector<std::int8_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = (code >> i) & 1 ? 1 : -1;
  return s;
}

}  // namespace opushield::testing
