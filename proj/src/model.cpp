#include "opushield/model.hpp"

#include <algorithm>
#include <cmath>

#include "opushield/errors.hpp"
#include "opushield/rng.hpp"

namespace opushield {

std::string to_string(TrainingMethod m) { return m == TrainingMethod::BP ? "bp" : "hybrid-dfa"; }

TrainingMethod parse_training_method(const std::string& s) {
  if (s == "bp") return TrainingMethod::BP;
  if (s == "hybrid-dfa" || s == "dfa") return TrainingMethod::HybridDFA;
  throw InputError("unknown training method '" + s + "' (expected bp|hybrid-dfa)");
}

// ---------------------------------------------------------------------------

FeedbackMatrix::FeedbackMatrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale)
    : rows_(rows), cols_(cols), seed_(seed), values_(rows * cols) {
  if (rows == 0 || cols == 0) throw InputError("feedback matrix dims must be positive");
  scale_ = scale > 0.0 ? scale : 1.0 / std::sqrt(static_cast<double>(cols));
  Rng rng(seed);
  for (double& v : values_) v = rng.uniform(-scale_, scale_);
}

FeedbackMatrix::FeedbackMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), explicit_(true), values_(std::move(values)) {
  if (values_.size() != rows * cols) throw InputError("feedback values do not match dims");
}

std::vector<double> FeedbackMatrix::project(std::span<const double> error) const {
  if (error.size() != cols_) {
    throw InputError("error vector has length " + std::to_string(error.size()) + ", expected " +
                     std::to_string(cols_));
  }
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = kernels::dot(values_.data() + r * cols_, error.data(), cols_);
  return out;
}

// ---------------------------------------------------------------------------

Model::Model(Shape input_shape, std::size_t num_classes, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), num_classes_(num_classes), layers_(std::move(layers)) {
  validate();
}

void Model::validate() {
  if (layers_.empty()) throw InputError("model has no layers");
  if (num_classes_ == 0) throw InputError("model needs at least one class");
  Shape s = input_shape_;
  slot_.reset();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<OpuLayer>(layers_[i])) {
      if (slot_) throw InputError("model has more than one optical slot");
      if (i == 0 || !std::holds_alternative<Dense>(layers_[i - 1])) {
        throw InputError("the layer directly below the optical slot must be dense");
      }
      slot_ = i;
    }
    s = layer_output_shape(layers_[i], s);
  }
  if (s.size() != 1 || s[0] != num_classes_) {
    throw InputError("model output shape " + shape_string(s) + " does not match " +
                     std::to_string(num_classes_) + " classes");
  }
}

const OpuLayer* Model::opu() const {
  return slot_ ? &std::get<OpuLayer>(layers_[*slot_]) : nullptr;
}

void Model::set_opu(OpuLayer layer) {
  if (!slot_) throw ContractError("model has no optical slot");
  const OpuLayer& cur = std::get<OpuLayer>(layers_[*slot_]);
  if (cur.input_dim() != layer.input_dim() || cur.output_dim() != layer.output_dim()) {
    throw InputError("replacement optical layer has different dims");
  }
  layers_[*slot_] = std::move(layer);
}

void Model::set_feedback(FeedbackMatrix feedback) {
  if (!slot_) throw ContractError("feedback matrix needs an optical slot");
  const Dense& inj = std::get<Dense>(layers_[*slot_ - 1]);
  if (feedback.rows() != inj.out || feedback.cols() != num_classes_) {
    throw InputError("feedback matrix must be [" + std::to_string(inj.out) + ", " +
                     std::to_string(num_classes_) + "]");
  }
  feedback_ = std::move(feedback);
}

void Model::check_input(const Tensor& x) const {
  if (x.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), x.shape().begin() + 1)) {
    throw InputError("input shape " + shape_string(x.shape()) + " does not match model input [B," +
                     shape_string(input_shape_).substr(1));
  }
}

Tensor Model::forward(const Tensor& x) const {
  check_input(x);
  Tensor a = x;
  for (const Layer& layer : layers_) a = layer_forward(layer, a, nullptr);
  return a;
}

Trace Model::forward_traced(const Tensor& x, const SurrogateOpu* slot_override) const {
  check_input(x);
  Trace t;
  t.caches.resize(layers_.size());
  Tensor a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (slot_override && slot_ && i == *slot_) {
      t.caches[i].input = a;
      a = slot_override->forward(a, &t.caches[i].aux);
    } else {
      a = layer_forward(layers_[i], a, &t.caches[i]);
    }
  }
  t.logits = std::move(a);
  return t;
}

Tensor Model::forward_from(std::size_t start, const Tensor& activation) const {
  if (start > layers_.size()) throw InputError("forward start beyond the top layer");
  Tensor a = activation;
  for (std::size_t i = start; i < layers_.size(); ++i) a = layer_forward(layers_[i], a, nullptr);
  return a;
}

Tensor Model::backward(const Trace& trace, std::size_t top, std::size_t bottom, Tensor grad,
                       ParamGrads* grads, bool need_input_grad,
                       const SurrogateOpu* slot_override) const {
  if (top > layers_.size() || bottom > top) throw InputError("invalid backward layer range");
  for (std::size_t i = top; i-- > bottom;) {
    const bool need = need_input_grad || i > bottom;
    if (slot_override && slot_ && i == *slot_) {
      grad = slot_override->backward(trace.caches[i].input, trace.caches[i].aux, grad);
    } else {
      grad = layer_backward(layers_[i], trace.caches[i], grad, grads, need);
    }
  }
  return grad;
}

std::vector<ParamRef> Model::parameters() {
  std::vector<ParamRef> out;
  for (Layer& layer : layers_) {
    if (auto* d = std::get_if<Dense>(&layer)) {
      out.push_back({d->name + ".weight", &d->weight});
      out.push_back({d->name + ".bias", &d->bias});
    } else if (auto* c = std::get_if<Conv2d>(&layer)) {
      out.push_back({c->name + ".weight", &c->weight});
      out.push_back({c->name + ".bias", &c->bias});
    }
  }
  return out;
}

std::vector<ConstParamRef> Model::parameters() const {
  std::vector<ConstParamRef> out;
  for (const auto& p : const_cast<Model*>(this)->parameters()) out.push_back({p.name, p.value});
  return out;
}

std::optional<std::size_t> Model::layer_of(const std::string& param_name) const {
  const auto dot = param_name.rfind('.');
  if (dot == std::string::npos) return std::nullopt;
  const std::string owner = param_name.substr(0, dot);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (const auto* d = std::get_if<Dense>(&layers_[i]); d && d->name == owner) return i;
    if (const auto* c = std::get_if<Conv2d>(&layers_[i]); c && c->name == owner) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - peak));
  for (double& v : p) v /= z;
  return p;
}

LossValue cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw InputError("cross_entropy expects [B, C] logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) throw InputError("label count does not match batch size");
  LossValue out;
  out.per_sample.resize(batch);
  out.input_grad = Tensor(logits.shape());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw InputError("label " + std::to_string(labels[b]) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    auto row = logits.sample(b);
    const double peak = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - peak);
    const double log_z = peak + std::log(z);
    const double loss = log_z - row[static_cast<std::size_t>(labels[b])];
    out.per_sample[b] = loss > 0.0 ? loss : 0.0;
    total += out.per_sample[b];
    auto g = out.input_grad.sample(b);
    for (std::size_t c = 0; c < classes; ++c) g[c] = std::exp(row[c] - log_z) / static_cast<double>(batch);
    g[static_cast<std::size_t>(labels[b])] -= 1.0 / static_cast<double>(batch);
  }
  out.value = batch ? total / static_cast<double>(batch) : 0.0;
  return out;
}

LossValue backward_bp(const Model& model, const Tensor& x, std::span<const int> labels) {
  const Trace trace = model.forward_traced(x);
  LossValue loss = cross_entropy(trace.logits, labels);
  ParamGrads grads;
  loss.input_grad = model.backward(trace, model.layers().size(), 0, loss.input_grad, &grads, true);
  loss.param_grads = std::move(grads);
  return loss;
}

void sgd_step(Model& model, const ParamGrads& grads, double lr) {
  auto params = model.parameters();
  for (const auto& [name, g] : grads) {
    auto it = std::find_if(params.begin(), params.end(), [&](const ParamRef& p) { return p.name == name; });
    if (it == params.end()) throw InputError("gradient '" + name + "' has no matching parameter");
    if (it->value->shape() != g.shape()) throw InputError("gradient '" + name + "' has the wrong shape");
  }
  if (lr == 0.0) return;
  for (const auto& [name, g] : grads) {
    auto it = std::find_if(params.begin(), params.end(), [&](const ParamRef& p) { return p.name == name; });
    kernels::axpy(-lr, g.data().data(), it->value->data().data(), g.size());
  }
}

std::vector<int> predict(const Model& model, const Tensor& x) {
  const Tensor logits = model.forward(x);
  std::vector<int> out(logits.batch());
  for (std::size_t b = 0; b < out.size(); ++b) out[b] = argmax(logits.sample(b));
  return out;
}

}  // namespace opushield
