#include "opushield/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "opushield/errors.hpp"

namespace opushield {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw InputError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

std::size_t Tensor::sample_size() const {
  if (shape_.empty()) return 0;
  return shape_[0] == 0 ? shape_size(Shape(shape_.begin() + 1, shape_.end())) : data_.size() / shape_[0];
}

Shape Tensor::sample_shape() const {
  if (shape_.empty()) return {};
  return Shape(shape_.begin() + 1, shape_.end());
}

std::span<double> Tensor::sample(std::size_t i) {
  const std::size_t n = sample_size();
  return std::span<double>(data_).subspan(i * n, n);
}

std::span<const double> Tensor::sample(std::size_t i) const {
  const std::size_t n = sample_size();
  return std::span<const double>(data_).subspan(i * n, n);
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_size(shape) != data_.size()) {
    throw InputError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor gather_samples(const Tensor& src, std::span<const std::size_t> indices) {
  Shape shape = src.sample_shape();
  shape.insert(shape.begin(), indices.size());
  Tensor out(shape);
  const std::size_t n = src.sample_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= src.batch()) throw InputError("sample index out of range");
    auto s = src.sample(indices[i]);
    std::copy(s.begin(), s.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

Tensor single_sample(std::span<const double> values, const Shape& sample_shape) {
  Shape shape = sample_shape;
  shape.insert(shape.begin(), 1);
  return Tensor(shape, std::vector<double>(values.begin(), values.end()));
}

namespace kernels {

double dot(const double* a, const double* b, std::size_t n) noexcept {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  for (std::size_t j = 0; i < n; ++i, ++j) acc[j] += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void affine(std::span<const double> w, std::span<const double> bias, std::size_t rows,
            std::size_t cols, std::span<const double> in, std::size_t batch,
            std::span<double> out) {
  // Row-outer order keeps one weight row hot in L1 while sweeping the batch.
  for (std::size_t o = 0; o < rows; ++o) {
    const double* wr = w.data() + o * cols;
    const double b = bias.empty() ? 0.0 : bias[o];
    for (std::size_t s = 0; s < batch; ++s) {
      out[s * rows + o] = dot(wr, in.data() + s * cols, cols) + b;
    }
  }
}

}  // namespace kernels

}  // namespace opushield
