#include "opushield/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "opushield/box.hpp"
#include "opushield/errors.hpp"
#include "opushield/rng.hpp"

namespace opushield {

namespace {

constexpr std::size_t kEvalChunk = 256;

std::vector<int> predict_in_range(const Model& model, PixelRange model_range, const Dataset& data,
                                  std::span<const std::size_t> idx) {
  const ModelTarget target(model, data.range, model_range);
  const Tensor logits = target.scores(gather_samples(data.images, idx));
  std::vector<int> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = argmax(logits.sample(k));
  return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double fraction_correct(const Model& model, const Tensor& x, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const auto pred = predict(model, x);
  std::size_t c = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) c += pred[i] == labels[i];
  return static_cast<double>(c) / static_cast<double>(labels.size());
}

void require_epsilons(const std::vector<double>& eps) {
  if (eps.empty()) throw InputError("epsilon grid is empty");
  for (double e : eps) {
    if (!(e >= 0.0)) throw InputError("epsilon grid entries must be >= 0");
  }
}

}  // namespace

// --- common correct set ------------------------------------------------

std::vector<std::size_t> correct_under_all(const std::vector<const Model*>& models, PixelRange model_range,
                                           const Dataset& data, std::optional<std::size_t> limit) {
  if (models.empty()) throw InputError("need at least one model");
  std::vector<std::size_t> keep;
  const std::size_t want = limit.value_or(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size() && keep.size() < want; start += kEvalChunk) {
    const std::size_t end = std::min(data.size(), start + kEvalChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    std::vector<bool> ok(idx.size(), true);
    for (const Model* m : models) {
      const auto pred = predict_in_range(*m, model_range, data, idx);
      for (std::size_t k = 0; k < idx.size(); ++k) ok[k] = ok[k] && pred[k] == data.labels[idx[k]];
    }
    for (std::size_t k = 0; k < idx.size() && keep.size() < want; ++k) {
      if (ok[k]) keep.push_back(idx[k]);
    }
  }
  return keep;
}

TransferSet build_common_correct_set(const std::vector<const Model*>& models, const Dataset& data,
                                     std::optional<std::size_t> limit) {
  TransferSet set;
  set.indices = correct_under_all(models, data.range, data, limit);
  if (set.indices.empty()) throw RunError("no sample is classified correctly by every model");
  set.samples = subset(data, set.indices);
  return set;
}

TransferSet build_common_correct_set(const Model& source, const Model& target, const Dataset& data) {
  return build_common_correct_set({&source, &target}, data);
}

// --- white-box ---------------------------------------------------------

std::string to_string(WhiteAttack a) { return a == WhiteAttack::Pgd ? "pgd" : "fgsm"; }

WhiteAttack parse_white_attack(const std::string& s) {
  if (s == "pgd") return WhiteAttack::Pgd;
  if (s == "fgsm") return WhiteAttack::Fgsm;
  throw InputError("unknown white-box attack '" + s + "' (expected pgd|fgsm)");
}

Tensor craft_adversarial(const Model& model, const AttackGradient& grad, const Dataset& data,
                         const WhiteAttackSpec& spec, double epsilon, FeasibilityCounters* counters) {
  if (spec.chunk == 0) throw InputError("attack chunk size must be positive");
  const double lo = range_lo(spec.range), hi = range_hi(spec.range);
  Tensor out(data.images.shape());
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  for (std::size_t start = 0; start < data.size(); start += spec.chunk) {
    const std::size_t end = std::min(data.size(), start + spec.chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    labels.assign(data.labels.begin() + static_cast<std::ptrdiff_t>(start),
                  data.labels.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor x0 = gather_samples(data.images, idx);
    const Tensor adv =
        spec.attack == WhiteAttack::Fgsm
            ? fgsm(model, grad, x0, labels, epsilon, lo, hi).adversarial
            : pgd(model, grad, x0, labels, {epsilon, spec.alpha, spec.steps, lo, hi}).adversarial;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto a = adv.sample(k);
      const auto c = x0.sample(k);
      if (counters) {
        bool ball = false, range = false;
        for (std::size_t i = 0; i < a.size(); ++i) {
          ball = ball || !within_ball(a[i], c[i], epsilon);
          range = range || !(a[i] >= lo && a[i] <= hi);
        }
        ++counters->checked;
        counters->ball += ball;
        counters->range += range;
      }
      std::copy(a.begin(), a.end(), out.sample(start + k).begin());
    }
  }
  return out;
}

WhiteBoxRun whitebox_curve(const Model& model, const GradSource& source, const Dataset& data,
                           const std::vector<double>& epsilons, const WhiteAttackSpec& spec,
                           const std::vector<std::size_t>& indices) {
  require_epsilons(epsilons);
  if (data.range != spec.range) throw InputError("dataset range does not match the attack range");
  const auto idx = indices.empty() ? iota_indices(data.size()) : indices;
  const Dataset d = indices.empty() ? data : subset(data, idx);
  if (d.size() == 0) throw InputError("white-box run needs at least one sample");

  const AttackGradient grad(model, source);
  const auto before = predict(model, d.images);
  WhiteBoxRun run;
  run.curve.epsilons = epsilons;
  run.curve.samples = d.size();
  for (double eps : epsilons) {
    const Tensor adv = craft_adversarial(model, grad, d, spec, eps, &run.counters);
    const auto after = predict(model, adv);
    std::vector<WhiteSampleRecord> rec(d.size());
    std::size_t correct = 0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      double linf = 0.0;
      const auto a = adv.sample(k), c = d.images.sample(k);
      for (std::size_t i = 0; i < a.size(); ++i) linf = std::max(linf, std::abs(a[i] - c[i]));
      rec[k] = {idx[k], d.labels[k], before[k], after[k], linf,
                before[k] == d.labels[k] && after[k] != d.labels[k]};
      correct += after[k] == d.labels[k];
    }
    run.curve.accuracy.push_back(static_cast<double>(correct) / static_cast<double>(d.size()));
    run.records.push_back(std::move(rec));
  }
  return run;
}

// --- transfer ----------------------------------------------------------

TransferTable transfer_eval(const Model& source, const std::vector<NamedModel>& targets,
                            const TransferSet& set, const std::vector<double>& epsilons,
                            const WhiteAttackSpec& spec) {
  require_epsilons(epsilons);
  if (targets.empty()) throw InputError("transfer needs at least one target");
  if (set.size() == 0) throw InputError("transfer set is empty");
  const Dataset& d = set.samples;
  if (d.range != spec.range) throw InputError("transfer set range does not match the attack range");

  std::vector<const Model*> all{&source};
  for (const auto& t : targets) all.push_back(t.model);
  for (const Model* m : all) {
    if (fraction_correct(*m, d.images, d.labels) != 1.0) {
      throw ContractError("transfer set holds a sample some model misclassifies");
    }
  }

  TransferTable table;
  table.epsilons = epsilons;
  table.samples = d.size();
  for (const auto& t : targets) table.targets.push_back(t.name);
  table.accuracy.assign(targets.size(), {});
  const AttackGradient grad(source, GradSource{GradKind::BP});
  for (double eps : epsilons) {
    const Tensor adv = craft_adversarial(source, grad, d, spec, eps, &table.counters);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      table.accuracy[t].push_back(fraction_correct(*targets[t].model, adv, d.labels));
    }
  }
  return table;
}

// --- black-box ---------------------------------------------------------

std::string to_string(BlackAttack a) {
  switch (a) {
    case BlackAttack::Nes: return "nes";
    case BlackAttack::Bandits: return "bandits";
    case BlackAttack::Parsimonious: return "parsimonious";
  }
  return "?";
}

BlackAttack parse_black_attack(const std::string& s) {
  if (s == "nes") return BlackAttack::Nes;
  if (s == "bandits") return BlackAttack::Bandits;
  if (s == "parsimonious") return BlackAttack::Parsimonious;
  throw InputError("unknown black-box attack '" + s + "' (expected nes|bandits|parsimonious)");
}

void BlackAttackSpec::validate() const {
  if (!(epsilon >= 0.0)) throw InputError("epsilon must be >= 0");
  if (max_queries == 0) throw InputError("max_queries must be positive");
  if (workers == 0) throw InputError("workers must be positive");
  switch (attack) {
    case BlackAttack::Nes: nes.validate(); break;
    case BlackAttack::Bandits: bandits.validate(); break;
    case BlackAttack::Parsimonious: {
      ParsimoniousConfig p = parsimonious;
      p.epsilon = epsilon;
      p.validate();
      break;
    }
  }
}

CsrCurve BlackBoxRun::csr() const {
  std::vector<std::optional<std::size_t>> firsts;
  firsts.reserve(samples.size());
  for (const auto& s : samples) firsts.push_back(s.first_success);
  return CsrCurve(std::move(firsts), max_queries);
}

namespace {

struct SampleResult {
  BlackSampleRecord record;
  FeasibilityCounters counters;
  std::size_t ledger = 0;
  std::size_t evaluations = 0;
};

SampleResult attack_one(const BlackBoxTarget& target, const Dataset& data, std::size_t i,
                        const BlackAttackSpec& spec) {
  SampleResult r;
  const CountingTarget counted(target);
  QueryLedger ledger(spec.max_queries);
  const Tensor x0(data.images.sample_shape(),
                  std::vector<double>(data.images.sample(i).begin(), data.images.sample(i).end()));
  QueryClient client(counted, x0, data.labels[i], spec.epsilon, range_lo(data.range), range_hi(data.range),
                     ledger, &r.counters);
  const std::uint64_t seed = derive_seed(spec.seed, static_cast<std::uint64_t>(i));
  BlackBoxOutcome o;
  switch (spec.attack) {
    case BlackAttack::Nes: o = nes_attack(client, spec.nes, seed); break;
    case BlackAttack::Bandits: o = bandits_attack(client, spec.bandits, seed); break;
    case BlackAttack::Parsimonious: {
      ParsimoniousConfig p = spec.parsimonious;
      p.epsilon = spec.epsilon;
      o = parsimonious_attack(client, p);
      break;
    }
  }
  r.record = {i, data.labels[i], o.success, o.first_success, o.queries, o.reason};
  r.ledger = ledger.count();
  r.evaluations = counted.evaluations();
  if (ledger.count() > ledger.max_queries()) ++r.counters.budget;
  return r;
}

}  // namespace

BlackBoxRun run_blackbox(const Model& model, PixelRange model_range, const Dataset& data,
                         const std::vector<std::size_t>& indices, const BlackAttackSpec& spec) {
  spec.validate();
  if (data.range != spec.range) throw InputError("dataset range does not match the attack range");
  if (indices.empty()) throw InputError("black-box run needs at least one sample");
  for (std::size_t i : indices) {
    if (i >= data.size()) throw InputError("sample index " + std::to_string(i) + " out of range");
  }
  {
    const auto pred = predict_in_range(model, model_range, data, indices);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (pred[k] != data.labels[indices[k]]) {
        throw ContractError("sample " + std::to_string(indices[k]) + " is misclassified before the attack");
      }
    }
  }

  const ModelTarget target(model, data.range, model_range);
  std::vector<SampleResult> results(indices.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < indices.size(); k = next++) {
      try {
        results[k] = attack_one(target, data, indices[k], spec);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(spec.workers, indices.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  BlackBoxRun run;
  run.max_queries = spec.max_queries;
  for (auto& r : results) {
    run.samples.push_back(r.record);
    run.counters += r.counters;
    run.ledger_queries += r.ledger;
    run.model_evaluations += r.evaluations;
    run.ledger_mismatches += r.ledger != r.evaluations;
  }
  return run;
}

SigmaSweep nes_sigma_sweep(const Model& model, PixelRange model_range, const Dataset& data,
                           const std::vector<std::size_t>& indices, BlackAttackSpec spec,
                           const std::vector<double>& sigmas) {
  if (sigmas.empty()) throw InputError("sigma sweep is empty");
  spec.attack = BlackAttack::Nes;
  SigmaSweep sweep;
  sweep.sigmas = sigmas;
  double best = -1.0;
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    spec.nes.sigma = sigmas[s];
    sweep.runs.push_back(run_blackbox(model, model_range, data, indices, spec));
    const double rate = sweep.runs.back().csr().final_rate();
    if (rate > best) {
      best = rate;
      sweep.best = s;
    }
  }
  return sweep;
}

// --- ablation ----------------------------------------------------------

void check_accuracy_band(const std::vector<AblationMember>& members, double band) {
  if (members.empty()) throw InputError("ablation needs at least one variant");
  if (!(band >= 0.0)) throw InputError("accuracy band must be >= 0");
  const auto [lo, hi] = std::minmax_element(members.begin(), members.end(), [](const auto& a, const auto& b) {
    return a.natural_accuracy < b.natural_accuracy;
  });
  // Compare in points, with slack for accuracies computed as k / n.
  if ((hi->natural_accuracy - lo->natural_accuracy) * 100.0 > band * 100.0 + 1e-9) {
    throw InputError("natural accuracies outside the " + std::to_string(band * 100.0) + " point band: " +
                     lo->name + " " + std::to_string(lo->natural_accuracy) + " vs " + hi->name + " " +
                     std::to_string(hi->natural_accuracy));
  }
}

namespace {

std::vector<const Model*> member_models(const std::vector<AblationMember>& members) {
  std::vector<const Model*> out;
  for (const auto& m : members) {
    if (!m.model) throw InputError("ablation member '" + m.name + "' has no model");
    out.push_back(m.model);
  }
  return out;
}

}  // namespace

BlackAblation run_blackbox_ablation(const std::vector<AblationMember>& members, double band,
                                    PixelRange model_range, const Dataset& data, std::size_t count,
                                    const BlackAttackSpec& spec) {
  check_accuracy_band(members, band);
  spec.validate();
  BlackAblation out;
  out.indices = correct_under_all(member_models(members), model_range, data, count);
  if (out.indices.size() < count) {
    throw RunError("only " + std::to_string(out.indices.size()) + " samples are correct under every variant");
  }
  for (const auto& m : members) {
    out.names.push_back(m.name);
    out.runs.push_back(run_blackbox(*m.model, model_range, data, out.indices, spec));
  }
  return out;
}

WhiteAblation run_whitebox_ablation(const std::vector<AblationMember>& members, double band,
                                    const Dataset& data, std::size_t count,
                                    const std::vector<double>& epsilons, const WhiteAttackSpec& spec) {
  check_accuracy_band(members, band);
  require_epsilons(epsilons);
  WhiteAblation out;
  out.indices = correct_under_all(member_models(members), data.range, data, count);
  if (out.indices.size() < count) {
    throw RunError("only " + std::to_string(out.indices.size()) + " samples are correct under every variant");
  }
  for (const auto& m : members) {
    out.names.push_back(m.name);
    out.runs.push_back(whitebox_curve(*m.model, m.white_source, data, epsilons, spec, out.indices));
  }
  return out;
}

// --- resampling --------------------------------------------------------

ResampleReport resample_and_finetune(Model& model, std::uint64_t new_seed, const Dataset& train_data,
                                     const Dataset& eval_data, const TrainConfig& cfg) {
  const OpuLayer* opu = model.opu();
  if (!opu || opu->config().projection != Projection::Random) {
    throw ContractError("resampling needs a model with a random optical projection");
  }
  const std::size_t slot = *model.slot_index();

  std::vector<std::pair<std::string, Tensor>> frozen;
  for (const auto& p : std::as_const(model).parameters()) {
    const auto owner = model.layer_of(p.name);
    if (!owner || *owner <= slot) frozen.emplace_back(p.name, *p.value);
  }

  ResampleReport report;
  report.new_seed = new_seed;
  report.before = accuracy(model, eval_data);
  model.set_opu(opu->resample(new_seed));
  report.after_resample = accuracy(model, eval_data);
  report.training = train(model, train_data, cfg, [&](const std::string& name) {
    const auto owner = model.layer_of(name);
    return owner && *owner > slot;
  });
  report.after_finetune = accuracy(model, eval_data);

  std::size_t k = 0;
  for (const auto& p : std::as_const(model).parameters()) {
    const auto owner = model.layer_of(p.name);
    if (owner && *owner > slot) continue;
    const Tensor& was = frozen.at(k++).second;
    if (was.shape() != p.value->shape() ||
        std::memcmp(was.data().data(), p.value->data().data(), was.size() * sizeof(double)) != 0) {
      throw ContractError("parameter '" + p.name + "' below the optical layer changed during fine-tuning");
    }
  }
  return report;
}

// --- retrieval cost ----------------------------------------------------

RetrievalCost retrieval_cost_estimate(double n, double m, double rel_error) {
  if (!(n >= 1.0) || !(m >= 1.0)) throw InputError("matrix dims must be >= 1");
  if (!(rel_error > 0.0) || rel_error > 1.0) throw InputError("relative error must lie in (0, 1]");
  constexpr double kMinutes = 72.0, kN = 1e4, kM = 1e5, kError = 0.32;
  // log N vanishes at N = 1; N = 2 stands in for it.
  const double work = m * n * std::log(std::max(n, 2.0)) / (kM * kN * std::log(kN));
  const double precision = (kError / rel_error) * (kError / rel_error);
  return {kMinutes * work * precision, n * m * 8.0};
}

}  // namespace opushield
