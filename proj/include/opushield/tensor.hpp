#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace opushield {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Batches are tensors whose leading dimension is the sample index; every
/// sample is contiguous in memory, so `sample(i)` is a cheap view.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Leading dimension, i.e. the number of samples in a batch.
  std::size_t batch() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Number of scalars per leading-dimension slice.
  std::size_t sample_size() const;
  /// Shape of a single leading-dimension slice.
  Shape sample_shape() const;
  std::span<double> sample(std::size_t i);
  std::span<const double> sample(std::size_t i) const;

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Builds a batch tensor of shape [n, sample_shape...] from `n` selected samples of `src`.
Tensor gather_samples(const Tensor& src, std::span<const std::size_t> indices);

/// Batch of one from a flat sample.
Tensor single_sample(std::span<const double> values, const Shape& sample_shape);

namespace kernels {

// Fixed-order reductions: the result for a given pair of vectors never depends
// on alignment, batch composition or which caller asked, so batched and
// one-at-a-time evaluation agree bit for bit.
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;

/// out[b, o] = sum_k w[o, k] * in[b, k] (+ bias[o]).  w is [rows, cols] row-major.
void affine(std::span<const double> w, std::span<const double> bias, std::size_t rows,
            std::size_t cols, std::span<const double> in, std::size_t batch,
            std::span<double> out);

}  // namespace kernels

}  // namespace opushield
