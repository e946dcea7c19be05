#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opushield/model.hpp"
#include "opushield/opu.hpp"

namespace opushield {

/// l-inf attack budget. Values are in the units of the model's input range.
struct WhiteBoxBudget {
  double epsilon = 0.0;
  double alpha = 0.01;
  std::size_t steps = 50;  // 1 gives FGSM
  double range_lo = -1.0;
  double range_hi = 1.0;

  void validate() const;
};

enum class GradKind { BP, DfaBypass, Bpda };

std::string to_string(GradKind k);
GradKind parse_grad_kind(const std::string& s);

struct GradSource {
  GradKind kind = GradKind::BP;
  double bpda_beta = 10.0;
  std::uint64_t surrogate_seed = 0;
  /// DFA bypass: use the feedback matrix stored with the model, or draw a
  /// fresh one from `feedback_seed`.
  bool reuse_feedback = true;
  std::uint64_t feedback_seed = 0;
};

/// Entrywise clamp to [x0 - eps, x0 + eps], then to the pixel range.
Tensor project_linf(const Tensor& x, const Tensor& x0, const WhiteBoxBudget& budget);

/// Input gradient of the per-sample cross-entropy under a chosen source.
///
/// BP is exact and throws BlockedPathError when the path crosses a
/// non-trivial optical layer. The DFA bypass seeds the chain below the slot
/// with B e (e = softmax - onehot per sample) and backpropagates it to the
/// input. BPDA differentiates a surrogate network where sign becomes
/// tanh(beta x) and the hidden matrix is replaced by one the attacker drew.
/// The model is only ever evaluated forward; the hidden matrix is never read.
class AttackGradient {
 public:
  AttackGradient(const Model& model, GradSource source);
  /// BPDA with a caller-supplied surrogate.
  AttackGradient(const Model& model, GradSource source, SurrogateOpu surrogate);

  const GradSource& source() const noexcept { return source_; }

  /// Returns d l_b / d x_b for every sample b. When `loss` is non-null it
  /// receives the true model's per-sample loss at x.
  Tensor operator()(const Tensor& x, std::span<const int> labels,
                    std::vector<double>* loss = nullptr) const;

 private:
  const Model& model_;
  GradSource source_;
  std::optional<SurrogateOpu> surrogate_;
  std::optional<FeedbackMatrix> feedback_;
};

/// softmax(logits) - onehot(labels), per sample and unscaled.
Tensor output_error(const Tensor& logits, std::span<const int> labels);

struct PgdResult {
  Tensor adversarial;
  /// Mean true-model loss at x^0 .. x^steps.
  std::vector<double> loss_trajectory;
};

/// x^{t+1} = project(x^t + alpha * sign(grad)), with sign(0) = 0.
PgdResult pgd(const Model& model, const AttackGradient& grad, const Tensor& x0,
              std::span<const int> labels, const WhiteBoxBudget& budget);

/// One step of size epsilon.
PgdResult fgsm(const Model& model, const AttackGradient& grad, const Tensor& x0,
               std::span<const int> labels, double epsilon, double range_lo = -1.0,
               double range_hi = 1.0);

}  // namespace opushield
