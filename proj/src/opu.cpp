#include "opushield/opu.hpp"

#include <algorithm>
#include <cmath>

#include "opushield/errors.hpp"
#include "opushield/rng.hpp"

namespace opushield {

std::string to_string(Binarization b) { return b == Binarization::Sign ? "sign" : "none"; }
std::string to_string(Projection p) { return p == Projection::Random ? "random" : "none"; }
std::string to_string(Quantization q) { return q == Quantization::Bits8 ? "8bit" : "off"; }

Binarization parse_binarization(const std::string& s) {
  if (s == "sign") return Binarization::Sign;
  if (s == "none") return Binarization::None;
  throw InputError("unknown binarization '" + s + "' (expected sign|none)");
}

Projection parse_projection(const std::string& s) {
  if (s == "random") return Projection::Random;
  if (s == "none") return Projection::None;
  throw InputError("unknown projection '" + s + "' (expected random|none)");
}

Quantization parse_quantization(const std::string& s) {
  if (s == "off") return Quantization::Off;
  if (s == "8bit") return Quantization::Bits8;
  throw InputError("unknown quantization '" + s + "' (expected off|8bit)");
}

double OpuConfig::resolved_scale() const {
  if (entry_scale > 0.0) return entry_scale;
  return 1.0 / std::sqrt(2.0 * static_cast<double>(input_dim));
}

void OpuConfig::validate() const {
  if (input_dim == 0 || output_dim == 0) throw InputError("opu dims must be positive");
  if (entry_scale < 0.0 || !std::isfinite(entry_scale)) throw InputError("opu entry_scale must be >= 0");
  if (projection == Projection::None && output_dim != input_dim) {
    throw InputError("opu without projection must have output_dim == input_dim");
  }
}

// ---------------------------------------------------------------------------

ComplexGaussianMatrix::ComplexGaussianMatrix(std::size_t rows, std::size_t cols,
                                             std::vector<double> re, std::vector<double> im)
    : rows_(rows), cols_(cols), re_(std::move(re)), im_(std::move(im)) {
  if (re_.size() != rows_ * cols_ || im_.size() != rows_ * cols_) {
    throw InputError("complex matrix storage does not match its dims");
  }
}

ComplexGaussianMatrix ComplexGaussianMatrix::generate(std::size_t rows, std::size_t cols,
                                                      double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> re(rows * cols), im(rows * cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    re[i] = scale * rng.normal();
    im[i] = scale * rng.normal();
  }
  return ComplexGaussianMatrix(rows, cols, std::move(re), std::move(im));
}

void ComplexGaussianMatrix::apply(std::span<const double> v, std::span<double> re_out,
                                  std::span<double> im_out) const {
  for (std::size_t r = 0; r < rows_; ++r) {
    re_out[r] = kernels::dot(re_.data() + r * cols_, v.data(), cols_);
    im_out[r] = kernels::dot(im_.data() + r * cols_, v.data(), cols_);
  }
}

// ---------------------------------------------------------------------------

std::vector<double> BinaryVector::as_reals() const {
  return std::vector<double>(bits.begin(), bits.end());
}

BinaryVector binarize(std::span<const double> x) {
  BinaryVector b;
  b.bits.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) b.bits[i] = x[i] >= 0.0 ? 1 : -1;
  return b;
}

Quantized8 quantize8(std::span<const double> m) {
  double peak = 0.0;
  for (double v : m) {
    if (!(v >= 0.0)) throw InputError("quantize8 expects nonnegative input");
    peak = std::max(peak, v);
  }
  Quantized8 q;
  q.codes.resize(m.size(), 0);
  if (peak == 0.0) return q;
  q.scale = peak / 255.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double code = std::round(255.0 * (m[i] / peak));
    q.codes[i] = static_cast<std::uint8_t>(std::clamp(code, 0.0, 255.0));
  }
  return q;
}

std::vector<double> dequantize8(const Quantized8& q) {
  std::vector<double> out(q.codes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = q.scale * q.codes[i];
  return out;
}

// ---------------------------------------------------------------------------

OpuLayer::OpuLayer(OpuConfig config) : config_(config) {
  config_.validate();
  if (config_.projection == Projection::Random) {
    matrix_ = std::make_shared<const ComplexGaussianMatrix>(ComplexGaussianMatrix::generate(
        config_.output_dim, config_.input_dim, config_.resolved_scale(), config_.seed));
  }
}

OpuLayer::OpuLayer(OpuConfig config, std::shared_ptr<const ComplexGaussianMatrix> matrix)
    : config_(config), matrix_(std::move(matrix)) {
  config_.validate();
  if (config_.projection == Projection::Random &&
      (!matrix_ || matrix_->rows() != config_.output_dim || matrix_->cols() != config_.input_dim)) {
    throw InputError("injected opu matrix does not match config dims");
  }
}

void OpuLayer::forward_one(std::span<const double> x, std::span<double> out,
                           std::span<double> scratch) const {
  const std::size_t n = config_.input_dim;
  const std::size_t m = config_.output_dim;
  std::span<double> encoded = scratch.subspan(0, n);
  for (std::size_t i = 0; i < n; ++i) {
    encoded[i] = config_.binarization == Binarization::Sign ? (x[i] >= 0.0 ? 1.0 : -1.0) : x[i];
  }
  if (config_.projection == Projection::None) {
    std::copy(encoded.begin(), encoded.end(), out.begin());
  } else {
    std::span<double> re = scratch.subspan(n, m);
    std::span<double> im = scratch.subspan(n + m, m);
    matrix_->apply(encoded, re, im);
    for (std::size_t j = 0; j < m; ++j) out[j] = re[j] * re[j] + im[j] * im[j];
  }
  if (config_.quantize == Quantization::Bits8) {
    const auto deq = dequantize8(quantize8(out));
    std::copy(deq.begin(), deq.end(), out.begin());
  }
}

Tensor OpuLayer::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != config_.input_dim) {
    throw InputError("opu expects [B, " + std::to_string(config_.input_dim) + "], got " +
                     shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  Tensor out({batch, config_.output_dim});
  std::vector<double> scratch(config_.input_dim + 2 * config_.output_dim);
  for (std::size_t b = 0; b < batch; ++b) forward_one(x.sample(b), out.sample(b), scratch);
  return out;
}

OpuLayer OpuLayer::resample(std::uint64_t new_seed) const {
  OpuConfig next = config_;
  next.seed = new_seed;
  return OpuLayer(next);
}

// ---------------------------------------------------------------------------

SurrogateOpu::SurrogateOpu(const OpuConfig& target, double beta, std::uint64_t surrogate_seed)
    : config_(target), beta_(beta) {
  config_.validate();
  if (!(beta > 0.0)) throw InputError("surrogate temperature must be positive");
  config_.seed = surrogate_seed;
  if (config_.projection == Projection::Random) {
    matrix_ = std::make_shared<const ComplexGaussianMatrix>(ComplexGaussianMatrix::generate(
        config_.output_dim, config_.input_dim, config_.resolved_scale(), surrogate_seed));
  }
}

SurrogateOpu::SurrogateOpu(const OpuConfig& target, double beta, ComplexGaussianMatrix matrix)
    : config_(target), beta_(beta),
      matrix_(std::make_shared<const ComplexGaussianMatrix>(std::move(matrix))) {
  config_.validate();
  if (!(beta > 0.0)) throw InputError("surrogate temperature must be positive");
  if (matrix_->rows() != config_.output_dim || matrix_->cols() != config_.input_dim) {
    throw InputError("surrogate matrix does not match layer dims");
  }
}

Tensor SurrogateOpu::forward(const Tensor& x, std::vector<Tensor>* cache) const {
  if (x.rank() != 2 || x.dim(1) != config_.input_dim) {
    throw InputError("surrogate opu expects [B, " + std::to_string(config_.input_dim) + "]");
  }
  const std::size_t batch = x.dim(0);
  const std::size_t n = config_.input_dim;
  const std::size_t m = config_.output_dim;
  Tensor encoded({batch, n});
  for (std::size_t i = 0; i < x.size(); ++i) {
    encoded[i] = config_.binarization == Binarization::Sign ? std::tanh(beta_ * x[i]) : x[i];
  }
  if (config_.projection == Projection::None) {
    if (cache) *cache = {encoded};
    return encoded;
  }
  Tensor re({batch, m}), im({batch, m}), out({batch, m});
  for (std::size_t b = 0; b < batch; ++b) {
    matrix_->apply(encoded.sample(b), re.sample(b), im.sample(b));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = re[i] * re[i] + im[i] * im[i];
  if (cache) *cache = {std::move(encoded), std::move(re), std::move(im)};
  return out;
}

Tensor SurrogateOpu::backward(const Tensor& x, const std::vector<Tensor>& cache,
                              const Tensor& grad_out) const {
  const std::size_t batch = x.dim(0);
  const std::size_t n = config_.input_dim;
  const std::size_t m = config_.output_dim;
  Tensor grad_encoded({batch, n});
  if (config_.projection == Projection::None) {
    grad_encoded = grad_out;
  } else {
    // d|a_j|^2 / dt = 2 (Re(a_j) Re(U_j.) + Im(a_j) Im(U_j.)) for real t.
    const Tensor& re = cache.at(1);
    const Tensor& im = cache.at(2);
    const auto ure = matrix_->real();
    const auto uim = matrix_->imag();
    for (std::size_t b = 0; b < batch; ++b) {
      double* gt = grad_encoded.sample(b).data();
      for (std::size_t j = 0; j < m; ++j) {
        const double g = grad_out[b * m + j];
        if (g == 0.0) continue;
        kernels::axpy(2.0 * g * re[b * m + j], ure.data() + j * n, gt, n);
        kernels::axpy(2.0 * g * im[b * m + j], uim.data() + j * n, gt, n);
      }
    }
  }
  if (config_.binarization == Binarization::None) return grad_encoded;
  const Tensor& t = cache.at(0);
  for (std::size_t i = 0; i < grad_encoded.size(); ++i) {
    grad_encoded[i] *= beta_ * (1.0 - t[i] * t[i]);
  }
  return grad_encoded;
}

}  // namespace opushield
