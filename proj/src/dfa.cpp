#include "opushield/dfa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "opushield/data.hpp"
#include "opushield/errors.hpp"
#include "opushield/rng.hpp"

namespace opushield {

std::vector<double> dfa_error_projection(std::span<const double> error, const FeedbackMatrix& feedback) {
  return feedback.project(error);
}

std::string to_string(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::Sgd;
  if (s == "adam") return Optimizer::Adam;
  throw InputError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

namespace {

const FeedbackMatrix& require_hybrid(const Model& model) {
  if (!model.slot_index()) {
    throw ContractError("hybrid backward needs a model with an optical slot; use backward_bp");
  }
  if (!model.feedback()) throw ContractError("model has no feedback matrix attached");
  return *model.feedback();
}

struct StepOutput {
  double loss = 0.0;
  ParamGrads grads;
  Tensor logits;
};

StepOutput hybrid_step(const Model& model, const Tensor& x, std::span<const int> labels,
                       bool need_input_grad, Tensor* input_grad) {
  const FeedbackMatrix& fb = require_hybrid(model);
  const std::size_t slot = *model.slot_index();
  const Trace trace = model.forward_traced(x);
  LossValue loss = cross_entropy(trace.logits, labels);
  StepOutput out;
  out.loss = loss.value;

  // Upper path: exact gradients for the layers above the optical slot.
  model.backward(trace, model.layers().size(), slot + 1, loss.input_grad, &out.grads, false);

  // Lower path: the error (already scaled by 1/B like the loss) projected by B.
  const std::size_t batch = x.batch();
  Tensor synthetic({batch, fb.rows()});
  for (std::size_t b = 0; b < batch; ++b) {
    const auto proj = fb.project(loss.input_grad.sample(b));
    std::copy(proj.begin(), proj.end(), synthetic.sample(b).begin());
  }
  Tensor g = model.backward(trace, slot, 0, std::move(synthetic), &out.grads, need_input_grad);
  if (input_grad) *input_grad = std::move(g);
  out.logits = trace.logits;
  return out;
}

StepOutput bp_step(const Model& model, const Tensor& x, std::span<const int> labels) {
  const Trace trace = model.forward_traced(x);
  LossValue loss = cross_entropy(trace.logits, labels);
  StepOutput out;
  out.loss = loss.value;
  model.backward(trace, model.layers().size(), 0, loss.input_grad, &out.grads, false);
  out.logits = trace.logits;
  return out;
}

}  // namespace

HybridGradients hybrid_backward(const Model& model, const Tensor& x, std::span<const int> labels,
                                bool need_input_grad) {
  HybridGradients out;
  Tensor input_grad;
  StepOutput step = hybrid_step(model, x, labels, need_input_grad, &input_grad);
  out.loss = step.loss;
  const std::size_t slot = *model.slot_index();
  for (auto& [name, g] : step.grads) {
    const auto owner = model.layer_of(name);
    if (owner && *owner > slot) {
      out.upper.emplace(name, std::move(g));
    } else {
      out.lower.emplace(name, std::move(g));
    }
  }
  out.input_grad = std::move(input_grad);
  return out;
}

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, const ParamFilter& trainable) {
  if (data.size() == 0) throw InputError("training set is empty");
  if (cfg.batch_size == 0) throw InputError("batch size must be positive");
  if (!(cfg.lr >= 0.0)) throw InputError("learning rate must be nonnegative");
  const bool hybrid = model.slot_index().has_value();
  if (hybrid) require_hybrid(model);

  TrainResult result;
  Rng rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  ParamGrads velocity, second;
  std::size_t t = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor x = gather_samples(data.images, idx);
      std::vector<int> y(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) y[k] = data.labels[idx[k]];

      StepOutput step = hybrid ? hybrid_step(model, x, y, false, nullptr) : bp_step(model, x, y);
      // Binarization maps NaN to a finite code, so a blown-up lower stack can
      // leave the loss finite; the gradients still show it.
      const bool finite_grads = std::ranges::all_of(step.grads, [](const auto& kv) {
        return std::ranges::all_of(kv.second.data(), [](double v) { return std::isfinite(v); });
      });
      if (!std::isfinite(step.loss) || !finite_grads) {
        result.status = TrainStatus::Diverged;
        return result;
      }
      loss_sum += step.loss * static_cast<double>(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) correct += argmax(step.logits.sample(k)) == y[k];

      if (trainable) {
        std::erase_if(step.grads, [&](const auto& kv) { return !trainable(kv.first); });
      }
      if (cfg.optimizer == Optimizer::Adam) {
        ++t;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (auto& [name, g] : step.grads) {
          Tensor& m = velocity.try_emplace(name, g.shape()).first->second;
          Tensor& v = second.try_emplace(name, g.shape()).first->second;
          for (std::size_t k = 0; k < g.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            g[k] = (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_eps);
          }
        }
      } else if (cfg.momentum > 0.0) {
        for (auto& [name, g] : step.grads) {
          auto [it, fresh] = velocity.try_emplace(name, g);
          if (!fresh) {
            for (std::size_t k = 0; k < g.size(); ++k) it->second[k] = cfg.momentum * it->second[k] + g[k];
          }
          g = it->second;
        }
      }
      sgd_step(model, step.grads, cfg.lr);
    }
    result.history.push_back({epoch + 1, loss_sum / static_cast<double>(data.size()),
                              static_cast<double>(correct) / static_cast<double>(data.size())});
  }
  return result;
}

TrainResult train_hybrid(Model& model, const Dataset& data, const TrainConfig& cfg) {
  if (!model.slot_index()) throw ContractError("hybrid training needs a model with an optical slot");
  if (!model.feedback()) {
    const auto& inj = std::get<Dense>(model.layers()[*model.injection_index()]);
    model.set_feedback(FeedbackMatrix(inj.out, model.num_classes(), derive_seed(cfg.seed, "feedback")));
  }
  model.set_training_method(TrainingMethod::HybridDFA);
  return train(model, data, cfg);
}

TrainResult train_bp(Model& model, const Dataset& data, const TrainConfig& cfg) {
  if (model.slot_index()) {
    throw BlockedPathError("pure BP training cannot cross the optical slot; use train_hybrid");
  }
  model.set_training_method(TrainingMethod::BP);
  return train(model, data, cfg);
}

double accuracy(const Model& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = predict(model, gather_samples(data.images, idx));
    for (std::size_t k = 0; k < idx.size(); ++k) correct += pred[k] == data.labels[idx[k]];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::optional<double> cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("cosine of vectors with different lengths");
  const double na = std::sqrt(kernels::dot(a.data(), a.data(), a.size()));
  const double nb = std::sqrt(kernels::dot(b.data(), b.data(), b.size()));
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return std::clamp(kernels::dot(a.data(), b.data(), a.size()) / (na * nb), -1.0, 1.0);
}

AlignmentReport alignment_angle(const Model& model, const Tensor& x, std::span<const int> labels,
                                double fd_step) {
  const FeedbackMatrix& fb = require_hybrid(model);
  if (x.batch() == 0) throw InputError("alignment needs a nonempty batch");
  const std::size_t slot = *model.slot_index();
  AlignmentReport report;
  report.samples = x.batch();
  double sum = 0.0;
  for (std::size_t b = 0; b < x.batch(); ++b) {
    const Tensor xb = single_sample(x.sample(b), x.sample_shape());
    const int y = labels[b];
    const Trace trace = model.forward_traced(xb);
    const LossValue loss = cross_entropy(trace.logits, std::span<const int>(&y, 1));
    const auto synthetic = fb.project(loss.input_grad.sample(0));

    Tensor z = trace.caches[slot].input;
    std::vector<double> fd(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double keep = z[k];
      z[k] = keep + fd_step;
      const double up = cross_entropy(model.forward_from(slot, z), std::span<const int>(&y, 1)).value;
      z[k] = keep - fd_step;
      const double down = cross_entropy(model.forward_from(slot, z), std::span<const int>(&y, 1)).value;
      z[k] = keep;
      fd[k] = (up - down) / (2.0 * fd_step);
    }
    if (auto c = cosine(synthetic, fd)) {
      sum += *c;
      ++report.defined;
    }
  }
  if (report.defined > 0) report.mean_cosine = sum / static_cast<double>(report.defined);
  return report;
}

}  // namespace opushield
