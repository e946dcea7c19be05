#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "opushield/blackbox.hpp"
#include "opushield/data.hpp"
#include "opushield/dfa.hpp"
#include "opushield/model.hpp"
#include "opushield/whitebox.hpp"

namespace opushield {

struct NamedModel {
  std::string name;
  const Model* model = nullptr;
};

// --- common correct set ------------------------------------------------

/// Samples every listed model classifies correctly. `indices` point into the
/// dataset the set was built from.
struct TransferSet {
  std::vector<std::size_t> indices;
  Dataset samples;

  std::size_t size() const noexcept { return indices.size(); }
};

/// Indices of samples classified correctly by every model, in order, at most
/// `limit` of them. `data` may be in another range than the models were
/// trained on; inputs are mapped to `model_range` first.
std::vector<std::size_t> correct_under_all(const std::vector<const Model*>& models, PixelRange model_range,
                                           const Dataset& data,
                                           std::optional<std::size_t> limit = std::nullopt);

/// Throws RunError when no sample survives. `limit` keeps the first ones.
TransferSet build_common_correct_set(const std::vector<const Model*>& models, const Dataset& data,
                                     std::optional<std::size_t> limit = std::nullopt);
TransferSet build_common_correct_set(const Model& source, const Model& target, const Dataset& data);

// --- white-box ---------------------------------------------------------

enum class WhiteAttack { Pgd, Fgsm };

std::string to_string(WhiteAttack a);
WhiteAttack parse_white_attack(const std::string& s);

/// Everything but epsilon. FGSM ignores alpha and steps.
struct WhiteAttackSpec {
  WhiteAttack attack = WhiteAttack::Pgd;
  double alpha = 0.01;
  std::size_t steps = 50;
  PixelRange range = PixelRange::Signed;
  std::size_t chunk = 100;  // samples per attack batch
};

struct WhiteSampleRecord {
  std::size_t index = 0;
  int label = 0;
  int predicted_before = 0;
  int predicted_after = 0;
  double linf = 0.0;
  bool success = false;  // correct before, wrong after
};

/// Adversarial versions of `data` at one epsilon. Every produced point is
/// checked against the ball and the range; misses are added to `counters`.
Tensor craft_adversarial(const Model& model, const AttackGradient& grad, const Dataset& data,
                         const WhiteAttackSpec& spec, double epsilon, FeasibilityCounters* counters);

struct AccuracyCurve {
  std::vector<double> epsilons;
  std::vector<double> accuracy;
  std::size_t samples = 0;
};

struct WhiteBoxRun {
  AccuracyCurve curve;
  std::vector<std::vector<WhiteSampleRecord>> records;  // [epsilon][sample]
  FeasibilityCounters counters;
};

/// Accuracy under attack at each epsilon (in `spec.range` units).
WhiteBoxRun whitebox_curve(const Model& model, const GradSource& source, const Dataset& data,
                           const std::vector<double>& epsilons, const WhiteAttackSpec& spec,
                           const std::vector<std::size_t>& indices = {});

// --- transfer ----------------------------------------------------------

struct TransferTable {
  std::vector<double> epsilons;
  std::vector<std::string> targets;
  std::vector<std::vector<double>> accuracy;  // [target][epsilon]
  std::size_t samples = 0;
  FeasibilityCounters counters;
};

/// Crafts once per epsilon on `source` (exact BP) and evaluates every target.
/// Every sample is re-verified as correct under the source and all targets
/// first; a violation is a ContractError.
TransferTable transfer_eval(const Model& source, const std::vector<NamedModel>& targets,
                            const TransferSet& set, const std::vector<double>& epsilons,
                            const WhiteAttackSpec& spec);

// --- black-box ---------------------------------------------------------

enum class BlackAttack { Nes, Bandits, Parsimonious };

std::string to_string(BlackAttack a);
BlackAttack parse_black_attack(const std::string& s);

struct BlackAttackSpec {
  BlackAttack attack = BlackAttack::Parsimonious;
  double epsilon = 8.0 / 256.0;  // attack-range units
  std::size_t max_queries = 15000;
  PixelRange range = PixelRange::Unit;
  NesConfig nes;
  BanditsConfig bandits;
  ParsimoniousConfig parsimonious;  // its epsilon is overridden by `epsilon`
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

struct BlackSampleRecord {
  std::size_t index = 0;
  int label = 0;
  bool success = false;
  std::optional<std::size_t> first_success;
  std::size_t queries = 0;
  StopReason reason = StopReason::BudgetExhausted;
};

struct BlackBoxRun {
  std::vector<BlackSampleRecord> samples;
  std::size_t max_queries = 0;
  FeasibilityCounters counters;
  std::size_t ledger_queries = 0;     // sum of ledger counts
  std::size_t model_evaluations = 0;  // counted at the model
  std::size_t ledger_mismatches = 0;  // samples where the two disagree

  CsrCurve csr() const;
};

/// Attacks data[i] for each i in `indices`. `data` is in the attack range;
/// the model sees inputs mapped to `model_range`. Sample i uses the seed
/// derive_seed(spec.seed, i), so runs on different models share seeds.
/// A sample the model already misclassifies is a ContractError.
BlackBoxRun run_blackbox(const Model& model, PixelRange model_range, const Dataset& data,
                         const std::vector<std::size_t>& indices, const BlackAttackSpec& spec);

struct SigmaSweep {
  std::vector<double> sigmas;
  std::vector<BlackBoxRun> runs;
  std::size_t best = 0;  // highest final CSR, first on ties
};

SigmaSweep nes_sigma_sweep(const Model& model, PixelRange model_range, const Dataset& data,
                           const std::vector<std::size_t>& indices, BlackAttackSpec spec,
                           const std::vector<double>& sigmas = {0.05, 0.1, 0.5, 1.0});

// --- ablation ----------------------------------------------------------

struct AblationMember {
  std::string name;
  const Model* model = nullptr;
  double natural_accuracy = 0.0;
  GradSource white_source;  // white-box ablations only
};

/// Throws InputError naming the members when max - min accuracy exceeds `band`.
void check_accuracy_band(const std::vector<AblationMember>& members, double band);

struct BlackAblation {
  std::vector<std::string> names;
  std::vector<std::size_t> indices;  // shared by every member
  std::vector<BlackBoxRun> runs;
};

/// Attacks the first `count` samples of `data` (attack range) that every
/// member classifies correctly. Throws RunError if there are fewer.
BlackAblation run_blackbox_ablation(const std::vector<AblationMember>& members, double band,
                                    PixelRange model_range, const Dataset& data, std::size_t count,
                                    const BlackAttackSpec& spec);

struct WhiteAblation {
  std::vector<std::string> names;
  std::vector<std::size_t> indices;
  std::vector<WhiteBoxRun> runs;
};

WhiteAblation run_whitebox_ablation(const std::vector<AblationMember>& members, double band,
                                    const Dataset& data, std::size_t count,
                                    const std::vector<double>& epsilons, const WhiteAttackSpec& spec);

// --- resampling --------------------------------------------------------

struct ResampleReport {
  double before = 0.0;
  double after_resample = 0.0;
  double after_finetune = 0.0;
  std::uint64_t new_seed = 0;
  TrainResult training;
};

/// Draws a fresh optical matrix and retrains only the layers above it. Throws
/// ContractError if the model has no optical layer, and if any parameter at
/// or below the slot changed bit-wise (a broken invariant, not a user error).
ResampleReport resample_and_finetune(Model& model, std::uint64_t new_seed, const Dataset& train_data,
                                     const Dataset& eval_data, const TrainConfig& cfg);

// --- retrieval cost ----------------------------------------------------

struct RetrievalCost {
  double minutes = 0.0;
  double bytes = 0.0;
};

/// Time to recover an N x M matrix to a relative error, scaled from the
/// 72 min anchor at (1e4, 1e5, 0.32) by M N log N and by 1 / error^2.
/// Memory holds the matrix at 8 bytes per complex entry.
RetrievalCost retrieval_cost_estimate(double n, double m, double rel_error);

}  // namespace opushield
