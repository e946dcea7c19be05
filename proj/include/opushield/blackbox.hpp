#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "opushield/data.hpp"
#include "opushield/model.hpp"
#include "opushield/rng.hpp"
#include "opushield/tensor.hpp"

namespace opushield {

/// Score-only access to a classifier. Inputs are batches in the attacker's
/// pixel range; outputs are logits [B, classes].
class BlackBoxTarget {
 public:
  virtual ~BlackBoxTarget() = default;
  virtual const Shape& input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual Tensor scores(const Tensor& x) const = 0;
};

/// Exposes a Model to black-box attacks, converting from the attacker's pixel
/// range to the one the model was trained on.
class ModelTarget final : public BlackBoxTarget {
 public:
  ModelTarget(const Model& model, PixelRange attack_range, PixelRange model_range);

  const Shape& input_shape() const override { return model_.input_shape(); }
  std::size_t num_classes() const override { return model_.num_classes(); }
  Tensor scores(const Tensor& x) const override;

 private:
  const Model& model_;
  PixelRange attack_range_;
  PixelRange model_range_;
};

/// Counts every sample it forwards to the wrapped target.
class CountingTarget final : public BlackBoxTarget {
 public:
  explicit CountingTarget(const BlackBoxTarget& inner) : inner_(inner) {}

  const Shape& input_shape() const override { return inner_.input_shape(); }
  std::size_t num_classes() const override { return inner_.num_classes(); }
  Tensor scores(const Tensor& x) const override;

  std::size_t evaluations() const noexcept { return evaluations_.load(); }

 private:
  const BlackBoxTarget& inner_;
  mutable std::atomic<std::size_t> evaluations_{0};
};

struct QueryEvent {
  std::size_t index = 0;  // 1-based
  double loss = 0.0;
  bool success = false;
};

/// Query accounting for one attacked sample.
class QueryLedger {
 public:
  explicit QueryLedger(std::size_t max_queries = 15000);

  std::size_t count() const noexcept { return count_; }
  std::size_t max_queries() const noexcept { return max_; }
  std::size_t remaining() const noexcept { return max_ - count_; }
  bool exhausted() const noexcept { return count_ >= max_; }
  const std::vector<QueryEvent>& log() const noexcept { return log_; }
  std::optional<std::size_t> first_success() const noexcept { return first_success_; }

  /// Throws ContractError when the budget is already spent.
  void record(double loss, bool success);

 private:
  std::size_t max_;
  std::size_t count_ = 0;
  std::vector<QueryEvent> log_;
  std::optional<std::size_t> first_success_;
};

/// Independent checks on every queried point.
struct FeasibilityCounters {
  std::size_t checked = 0;
  std::size_t ball = 0;    // outside the l-inf ball around the clean input
  std::size_t range = 0;   // outside the pixel range
  std::size_t budget = 0;  // ledger count above its cap

  std::size_t violations() const noexcept { return ball + range + budget; }
  FeasibilityCounters& operator+=(const FeasibilityCounters& o);
};

/// The only path from an attack to the target: projects nothing, checks
/// everything, and records each evaluation in the ledger.
class QueryClient {
 public:
  /// `x0` has the target's sample shape and lies in [lo, hi].
  QueryClient(const BlackBoxTarget& target, const Tensor& x0, int label, double epsilon, double lo,
              double hi, QueryLedger& ledger, FeasibilityCounters* counters = nullptr);

  const Tensor& clean() const noexcept { return x0_; }
  int label() const noexcept { return label_; }
  double epsilon() const noexcept { return eps_; }
  QueryLedger& ledger() noexcept { return ledger_; }

  /// Clamp into the feasible set (ball around x0 intersected with the range).
  void project(std::span<double> x) const;
  /// Batch form of `project` for [k, sample...] tensors.
  Tensor project(const Tensor& points) const;

  /// Evaluates as many rows of `points` ([k, sample...]) as the budget
  /// allows and returns their cross-entropy losses in order.
  std::vector<double> query(const Tensor& points);

  bool succeeded() const noexcept { return adversarial_.has_value(); }
  /// First queried point that was misclassified.
  const std::optional<Tensor>& adversarial() const noexcept { return adversarial_; }

 private:
  const BlackBoxTarget& target_;
  Tensor x0_;
  std::vector<double> lower_, upper_;
  int label_;
  double eps_;
  double lo_, hi_;
  QueryLedger& ledger_;
  FeasibilityCounters* counters_;
  std::optional<Tensor> adversarial_;
};

enum class StopReason { Success, BudgetExhausted, Converged };

std::string to_string(StopReason r);

struct BlackBoxOutcome {
  bool success = false;
  std::optional<std::size_t> first_success;  // 1-based query index
  std::size_t queries = 0;
  StopReason reason = StopReason::BudgetExhausted;
  Tensor final_point;  // adversarial example on success, last iterate otherwise
};

// --- NES ---------------------------------------------------------------

struct NesConfig {
  double sigma = 0.1;
  std::size_t n_samples = 50;
  bool antithetic = true;
  std::size_t batch = 1024;
  double step_size = 0.01;  // l-inf step per iteration

  void validate() const;
};

/// Evaluates a batch of points [k, ...] and returns their losses. Returning
/// fewer than k values signals that the query budget ran out.
using BatchLossFn = std::function<std::vector<double>(const Tensor& points)>;

struct NesEstimate {
  Tensor gradient;          // shape of x
  std::size_t queries = 0;
  bool complete = true;     // false when the budget ran out mid-estimate
};

/// (1 / (sigma N)) sum_i delta_i l(x + sigma delta_i), delta_i ~ N(0, I);
/// with antithetic pairing each +delta is followed by -delta. `x` is a single
/// point (any shape); the partial sum is returned when the budget runs out.
NesEstimate nes_gradient(const BatchLossFn& loss, const Tensor& x, const NesConfig& cfg, Rng& rng);

BlackBoxOutcome nes_attack(QueryClient& client, const NesConfig& cfg, std::uint64_t seed);

// --- bandits -----------------------------------------------------------

struct BanditsConfig {
  double sigma = 0.1;         // finite-difference step
  double online_lr = 0.1;     // prior update rate
  double exploration = 0.1;
  std::size_t prior_size = 16;
  std::size_t grad_iters = 1; // bandit estimates averaged per image step
  double image_lr = 0.01;     // l-inf step per iteration

  void validate() const;
};

BlackBoxOutcome bandits_attack(QueryClient& client, const BanditsConfig& cfg, std::uint64_t seed);

/// Nearest-neighbour upsampling of a [C, s, s] prior to [C, H, W].
Tensor upsample_nearest(const Tensor& prior, std::size_t height, std::size_t width);

// --- parsimonious ------------------------------------------------------

struct ParsimoniousConfig {
  double epsilon = 8.0 / 256.0;
  std::size_t local_search_iters = 1;
  std::size_t init_block_size = 4;
  std::size_t batch = 64;
  bool hierarchical = false;

  void validate() const;
};

/// Sign-assignment search problem: evaluate() maps a batch of sign vectors
/// to losses (fewer results = out of budget); stop() is polled after every
/// evaluation and ends the search early when true.
struct SignSearchProblem {
  std::size_t size = 0;
  std::function<std::vector<double>(const std::vector<std::vector<std::int8_t>>&)> evaluate;
  std::function<bool()> stop;
};

struct SignSearchResult {
  std::vector<std::int8_t> signs;
  double loss = 0.0;
  bool improved = false;  // any flip accepted
  bool halted = false;    // stop() fired or the budget ran out
};

/// Lazy-greedy local search maximizing the loss: an insertion pass (flip -1
/// to +1) then a deletion pass (+1 to -1), repeated `rounds` times. Gains are
/// evaluated `batch` at a time; only strict improvements are accepted, ties
/// resolve to the lower index. Each element of `groups` is a set of
/// coordinates flipped together.
SignSearchResult sign_local_search(const SignSearchProblem& problem,
                                   const std::vector<std::vector<std::size_t>>& groups,
                                   std::vector<std::int8_t> signs, double loss, std::size_t rounds,
                                   std::size_t batch);

/// Block tiling of a [C, H, W] image: one group per (channel, tile); tiles on
/// the right and bottom edges are cut short when the side is not a multiple.
std::vector<std::vector<std::size_t>> image_blocks(const Shape& sample_shape, std::size_t block);

/// Starts from x0 - eps everywhere, runs the local search at the initial
/// block size, halves the block size between rounds down to 1 and keeps
/// searching at size 1 until no flip helps, the sample is misclassified, or
/// the budget runs out. Uses cfg.epsilon, not the client's.
BlackBoxOutcome parsimonious_attack(QueryClient& client, const ParsimoniousConfig& cfg);

// --- cumulative success rate -------------------------------------------

/// Fraction of samples whose first success happened within q queries.
class CsrCurve {
 public:
  CsrCurve(std::vector<std::optional<std::size_t>> first_successes, std::size_t max_queries);

  std::size_t samples() const noexcept { return n_; }
  std::size_t max_queries() const noexcept { return max_; }
  double at(std::size_t queries) const;
  double final_rate() const { return at(max_); }
  /// (query index, rate) at every jump, ascending.
  const std::vector<std::pair<std::size_t, double>>& steps() const noexcept { return steps_; }

 private:
  std::size_t n_;
  std::size_t max_;
  std::vector<std::pair<std::size_t, double>> steps_;
};

CsrCurve csr_curve(const std::vector<BlackBoxOutcome>& outcomes, std::size_t max_queries);

}  // namespace opushield
