#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opushield/model.hpp"

namespace opushield {

struct Dataset;

/// B e, i.e. the synthetic gradient at the injection layer's output.
std::vector<double> dfa_error_projection(std::span<const double> error, const FeedbackMatrix& feedback);

/// Gradients from one hybrid backward pass.
struct HybridGradients {
  double loss = 0.0;
  ParamGrads upper;  // exact BP, layers above the optical slot
  ParamGrads lower;  // driven by the projected error, layers at and below injection
  Tensor input_grad; // filled only when requested
};

/// Exact BP above the optical layer; at the dense layer right below it the
/// incoming gradient is replaced by B e (e = softmax - onehot, averaged over
/// the batch like the loss) and then backpropagated normally down the stack.
HybridGradients hybrid_backward(const Model& model, const Tensor& x, std::span<const int> labels,
                                bool need_input_grad = false);

enum class Optimizer { Sgd, Adam };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 0.01;
  std::size_t batch_size = 64;
  Optimizer optimizer = Optimizer::Sgd;
  double momentum = 0.0;  // sgd only
  double beta1 = 0.9;     // adam only
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

enum class TrainStatus { Ok, Diverged };

struct TrainResult {
  TrainStatus status = TrainStatus::Ok;
  std::vector<EpochStats> history;
};

/// Which parameters a training loop may update.
using ParamFilter = std::function<bool(const std::string& name)>;

/// Minibatch SGD (optionally with heavy-ball momentum) or Adam. Uses exact BP for
/// models without an optical slot and the hybrid rule otherwise. A non-finite loss
/// or gradient stops training and is reported, it does not throw.
TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg,
                  const ParamFilter& trainable = {});

/// Hybrid training; attaches a feedback matrix (seeded from cfg.seed) if the
/// model has none. Throws ContractError for models without an optical slot.
TrainResult train_hybrid(Model& model, const Dataset& data, const TrainConfig& cfg);

/// Pure BP training; throws BlockedPathError if the path crosses the optical layer.
TrainResult train_bp(Model& model, const Dataset& data, const TrainConfig& cfg);

double accuracy(const Model& model, const Dataset& data);

/// Cosine between two vectors; nullopt when either has zero norm.
std::optional<double> cosine(std::span<const double> a, std::span<const double> b);

struct AlignmentReport {
  std::optional<double> mean_cosine;  // nullopt: no sample had a defined angle
  std::size_t defined = 0;
  std::size_t samples = 0;
};

/// Per-sample cosine between the synthetic gradient B e and a central
/// finite-difference estimate of d loss / d (injection output), averaged over
/// the samples where both are nonzero.
AlignmentReport alignment_angle(const Model& model, const Tensor& x, std::span<const int> labels,
                                double fd_step = 1e-4);

}  // namespace opushield
