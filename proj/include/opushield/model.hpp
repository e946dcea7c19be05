#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opushield/layers.hpp"
#include "opushield/opu.hpp"
#include "opushield/tensor.hpp"

namespace opushield {

enum class TrainingMethod { BP, HybridDFA };

std::string to_string(TrainingMethod m);
TrainingMethod parse_training_method(const std::string& s);

/// Fixed random matrix projecting the output error onto the injection layer.
/// Entries are uniform on [-scale, scale]; regenerated from the seed.
class FeedbackMatrix {
 public:
  FeedbackMatrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 0.0);
  FeedbackMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::uint64_t seed() const noexcept { return seed_; }
  double scale() const noexcept { return scale_; }
  /// True when built from explicit values (tests); such matrices do not persist by seed.
  bool explicit_values() const noexcept { return explicit_; }
  std::span<const double> values() const noexcept { return values_; }

  /// B e for a single error vector.
  std::vector<double> project(std::span<const double> error) const;

  friend bool operator==(const FeedbackMatrix&, const FeedbackMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::uint64_t seed_ = 0;
  double scale_ = 0.0;
  bool explicit_ = false;
  std::vector<double> values_;
};

/// Activations recorded by a forward pass, one cache per layer.
struct Trace {
  std::vector<LayerCache> caches;
  Tensor logits;
};

struct ParamRef {
  std::string name;
  Tensor* value;
};

struct ConstParamRef {
  std::string name;
  const Tensor* value;
};

/// Feedforward stack with at most one optical slot.
///
/// When the slot exists, the layer immediately below it must be Dense; that
/// layer's output is where the synthetic gradient is injected during hybrid
/// training.
class Model {
 public:
  Model(Shape input_shape, std::size_t num_classes, std::vector<Layer> layers);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  std::optional<std::size_t> slot_index() const noexcept { return slot_; }
  std::optional<std::size_t> injection_index() const noexcept {
    return slot_ ? std::optional<std::size_t>(*slot_ - 1) : std::nullopt;
  }
  const OpuLayer* opu() const;
  /// Replace the optical layer (same dims); used by resampling.
  void set_opu(OpuLayer layer);

  const std::optional<FeedbackMatrix>& feedback() const noexcept { return feedback_; }
  void set_feedback(FeedbackMatrix feedback);

  TrainingMethod training_method() const noexcept { return method_; }
  void set_training_method(TrainingMethod m) noexcept { method_ = m; }

  /// [B, input...] -> logits [B, classes].
  Tensor forward(const Tensor& x) const;

  /// Forward keeping every layer's cache. `slot_override`, when given, stands
  /// in for the optical layer (attacker-side differentiable surrogate).
  Trace forward_traced(const Tensor& x, const SurrogateOpu* slot_override = nullptr) const;

  /// Runs layers [start, end) on an activation that is the input of layer `start`.
  Tensor forward_from(std::size_t start, const Tensor& activation) const;

  /// Backpropagates `grad` (the gradient w.r.t. the output of layer `top - 1`)
  /// through layers [bottom, top). Returns the gradient w.r.t. the input of
  /// layer `bottom` when `need_input_grad` is set.
  Tensor backward(const Trace& trace, std::size_t top, std::size_t bottom, Tensor grad,
                  ParamGrads* grads, bool need_input_grad,
                  const SurrogateOpu* slot_override = nullptr) const;

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  /// Index of the layer owning a parameter name; nullopt if unknown.
  std::optional<std::size_t> layer_of(const std::string& param_name) const;

 private:
  void validate();
  void check_input(const Tensor& x) const;

  Shape input_shape_;
  std::size_t num_classes_;
  std::vector<Layer> layers_;
  std::optional<std::size_t> slot_;
  std::optional<FeedbackMatrix> feedback_;
  TrainingMethod method_ = TrainingMethod::BP;
};

struct LossValue {
  double value = 0.0;       // mean over the batch
  std::vector<double> per_sample;
  Tensor input_grad;        // gradient of `value` w.r.t. the input of the op
  ParamGrads param_grads;
};

/// Softmax of one logit row, computed stably.
std::vector<double> softmax(std::span<const double> logits);

/// Mean cross-entropy over a batch of logits; input_grad is d value / d logits.
LossValue cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Exact backpropagation of the mean cross-entropy. Throws BlockedPathError
/// when the path crosses a non-identity optical layer.
LossValue backward_bp(const Model& model, const Tensor& x, std::span<const int> labels);

/// theta <- theta - lr * g for every named gradient.
void sgd_step(Model& model, const ParamGrads& grads, double lr);

std::vector<int> predict(const Model& model, const Tensor& x);

int argmax(std::span<const double> v);

}  // namespace opushield
