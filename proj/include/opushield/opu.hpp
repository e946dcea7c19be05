#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "opushield/tensor.hpp"

namespace opushield {

enum class Binarization { Sign, None };
enum class Projection { Random, None };
enum class Quantization { Off, Bits8 };

std::string to_string(Binarization b);
std::string to_string(Projection p);
std::string to_string(Quantization q);
Binarization parse_binarization(const std::string& s);
Projection parse_projection(const std::string& s);
Quantization parse_quantization(const std::string& s);

/// Everything needed to rebuild an optical layer. The matrix itself is never
/// part of the configuration: it is regenerated from (seed, dims, scale).
struct OpuConfig {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::uint64_t seed = 0;
  /// Std of the real and of the imaginary part of each entry; 0 selects 1/sqrt(2N).
  double entry_scale = 0.0;
  Binarization binarization = Binarization::Sign;
  Projection projection = Projection::Random;
  Quantization quantize = Quantization::Off;

  double resolved_scale() const;
  void validate() const;

  friend bool operator==(const OpuConfig&, const OpuConfig&) = default;
};

/// Dense complex matrix with i.i.d. entries whose real and imaginary parts are
/// independent N(0, scale^2). Stored as two row-major real matrices.
class ComplexGaussianMatrix {
 public:
  ComplexGaussianMatrix(std::size_t rows, std::size_t cols, std::vector<double> re,
                        std::vector<double> im);

  static ComplexGaussianMatrix generate(std::size_t rows, std::size_t cols, double scale,
                                        std::uint64_t seed);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const double> real() const noexcept { return re_; }
  std::span<const double> imag() const noexcept { return im_; }

  /// re_out + i*im_out = U v for a real vector v.
  void apply(std::span<const double> v, std::span<double> re_out, std::span<double> im_out) const;

  friend bool operator==(const ComplexGaussianMatrix&, const ComplexGaussianMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> re_;
  std::vector<double> im_;
};

/// Sign encoding: +1 when x_i >= 0, -1 otherwise.
struct BinaryVector {
  std::vector<std::int8_t> bits;

  std::size_t size() const noexcept { return bits.size(); }
  std::vector<double> as_reals() const;
};

BinaryVector binarize(std::span<const double> x);

/// 8-bit codes plus the scale that maps code 255 back to the vector maximum.
struct Quantized8 {
  std::vector<std::uint8_t> codes;
  double scale = 0.0;  // value represented by one code step
};

/// Per-vector max scaling, round half away from zero. Throws InputError on
/// negative entries.
Quantized8 quantize8(std::span<const double> m);
std::vector<double> dequantize8(const Quantized8& q);

/// Simulated optical co-processor: m = |U b|^2 with b = sign(x).
///
/// U is hidden. The public surface offers forward evaluation and resampling
/// only; nothing here hands out the matrix entries. Ablation variants switch
/// off the binarization and/or the projection through the config.
class OpuLayer {
 public:
  explicit OpuLayer(OpuConfig config);

  const OpuConfig& config() const noexcept { return config_; }
  std::size_t input_dim() const noexcept { return config_.input_dim; }
  std::size_t output_dim() const noexcept { return config_.output_dim; }

  /// True only for the pass-through configuration (no binarization, no projection).
  bool is_identity() const noexcept {
    return config_.binarization == Binarization::None && config_.projection == Projection::None;
  }

  /// [B, N] -> [B, M].
  Tensor forward(const Tensor& x) const;

  /// Same dims and scale, fresh draw of U.
  OpuLayer resample(std::uint64_t new_seed) const;

 private:
  friend struct OpuTestAccess;
  OpuLayer(OpuConfig config, std::shared_ptr<const ComplexGaussianMatrix> matrix);

  void forward_one(std::span<const double> x, std::span<double> out,
                   std::span<double> scratch) const;

  OpuConfig config_;
  std::shared_ptr<const ComplexGaussianMatrix> matrix_;
};

/// Differentiable stand-in for an OpuLayer, built by an attacker: sign is
/// replaced by tanh(beta * x) and the unknown U by a matrix the attacker drew.
class SurrogateOpu {
 public:
  /// Mirrors `target`'s dims, scale and enabled stages with a fresh matrix.
  SurrogateOpu(const OpuConfig& target, double beta, std::uint64_t surrogate_seed);
  SurrogateOpu(const OpuConfig& target, double beta, ComplexGaussianMatrix matrix);

  double beta() const noexcept { return beta_; }
  const ComplexGaussianMatrix* matrix() const noexcept { return matrix_.get(); }

  /// Forward; when `cache` is non-null it receives what backward() needs.
  Tensor forward(const Tensor& x, std::vector<Tensor>* cache) const;
  Tensor backward(const Tensor& x, const std::vector<Tensor>& cache, const Tensor& grad_out) const;

 private:
  OpuConfig config_;
  double beta_;
  std::shared_ptr<const ComplexGaussianMatrix> matrix_;
};

}  // namespace opushield
