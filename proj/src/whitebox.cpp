#include "opushield/whitebox.hpp"

#include <algorithm>
#include <cmath>

#include "opushield/box.hpp"
#include "opushield/errors.hpp"

namespace opushield {

void WhiteBoxBudget::validate() const {
  if (!(epsilon >= 0.0)) throw InputError("epsilon must be >= 0");
  if (steps >= 1 && !(alpha > 0.0)) throw InputError("alpha must be > 0 when steps >= 1");
  if (!(range_lo < range_hi)) throw InputError("pixel range is empty");
}

std::string to_string(GradKind k) {
  switch (k) {
    case GradKind::BP: return "bp";
    case GradKind::DfaBypass: return "dfa";
    case GradKind::Bpda: return "bpda";
  }
  return "?";
}

GradKind parse_grad_kind(const std::string& s) {
  if (s == "bp") return GradKind::BP;
  if (s == "dfa") return GradKind::DfaBypass;
  if (s == "bpda") return GradKind::Bpda;
  throw InputError("unknown gradient source '" + s + "' (expected bp|dfa|bpda)");
}

Tensor project_linf(const Tensor& x, const Tensor& x0, const WhiteBoxBudget& budget) {
  if (x.shape() != x0.shape()) throw InputError("project_linf: x and x0 differ in shape");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto [a, b] = linf_interval(x0[i], budget.epsilon, budget.range_lo, budget.range_hi);
    // x0 itself may lie outside the range, in which case the range wins.
    out[i] = a <= b ? std::clamp(x[i], a, b) : std::clamp(x0[i], budget.range_lo, budget.range_hi);
  }
  return out;
}

Tensor output_error(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.batch() != labels.size()) {
    throw InputError("output_error expects [B, C] logits and B labels");
  }
  Tensor e(logits.shape());
  const std::size_t classes = logits.dim(1);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw InputError("label " + std::to_string(labels[b]) + " out of range");
    }
    const auto p = softmax(logits.sample(b));
    auto row = e.sample(b);
    std::copy(p.begin(), p.end(), row.begin());
    row[static_cast<std::size_t>(labels[b])] -= 1.0;
  }
  return e;
}

namespace {

std::vector<double> per_sample_loss(const Tensor& logits, std::span<const int> labels) {
  std::vector<double> out(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    out[b] = cross_entropy(single_sample(logits.sample(b), {logits.dim(1)}),
                           labels.subspan(b, 1)).value;
  }
  return out;
}

}  // namespace

AttackGradient::AttackGradient(const Model& model, GradSource source) : model_(model), source_(source) {
  switch (source_.kind) {
    case GradKind::BP:
      break;
    case GradKind::DfaBypass: {
      if (!model.slot_index()) throw ContractError("the DFA gradient source needs a model with an optical slot");
      if (source_.reuse_feedback && model.feedback()) {
        feedback_ = *model.feedback();
      } else {
        const auto& inj = std::get<Dense>(model.layers()[*model.injection_index()]);
        feedback_ = FeedbackMatrix(inj.out, model.num_classes(), source_.feedback_seed);
      }
      break;
    }
    case GradKind::Bpda:
      if (!model.opu()) throw ContractError("BPDA needs a model with an optical layer");
      if (!(source_.bpda_beta > 0.0)) throw InputError("BPDA temperature must be positive");
      surrogate_.emplace(model.opu()->config(), source_.bpda_beta, source_.surrogate_seed);
      break;
  }
}

AttackGradient::AttackGradient(const Model& model, GradSource source, SurrogateOpu surrogate)
    : model_(model), source_(source), surrogate_(std::move(surrogate)) {
  if (source_.kind != GradKind::Bpda) throw InputError("an explicit surrogate only applies to BPDA");
  if (!model.opu()) throw ContractError("BPDA needs a model with an optical layer");
}

Tensor AttackGradient::operator()(const Tensor& x, std::span<const int> labels,
                                  std::vector<double>* loss) const {
  const std::size_t top = model_.layers().size();
  switch (source_.kind) {
    case GradKind::BP: {
      const Trace trace = model_.forward_traced(x);
      if (loss) *loss = per_sample_loss(trace.logits, labels);
      return model_.backward(trace, top, 0, output_error(trace.logits, labels), nullptr, true);
    }
    case GradKind::DfaBypass: {
      const Trace trace = model_.forward_traced(x);
      if (loss) *loss = per_sample_loss(trace.logits, labels);
      const Tensor e = output_error(trace.logits, labels);
      Tensor synthetic({x.batch(), feedback_->rows()});
      for (std::size_t b = 0; b < x.batch(); ++b) {
        const auto proj = feedback_->project(e.sample(b));
        std::copy(proj.begin(), proj.end(), synthetic.sample(b).begin());
      }
      return model_.backward(trace, *model_.slot_index(), 0, std::move(synthetic), nullptr, true);
    }
    case GradKind::Bpda: {
      const Trace trace = model_.forward_traced(x, &*surrogate_);
      if (loss) *loss = per_sample_loss(model_.forward(x), labels);
      return model_.backward(trace, top, 0, output_error(trace.logits, labels), nullptr, true,
                             &*surrogate_);
    }
  }
  return {};
}

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

PgdResult run_pgd(const Model& model, const AttackGradient& grad, const Tensor& x0,
                  std::span<const int> labels, const WhiteBoxBudget& budget) {
  for (double v : x0.data()) {
    if (!(v >= budget.range_lo && v <= budget.range_hi)) {
      throw InputError("clean input lies outside the pixel range");
    }
  }
  PgdResult out;
  Tensor x = project_linf(x0, x0, budget);
  std::vector<double> loss;
  for (std::size_t t = 0; t < budget.steps; ++t) {
    const Tensor g = grad(x, labels, &loss);
    out.loss_trajectory.push_back(mean(loss));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      x[i] += budget.alpha * s;
    }
    x = project_linf(x, x0, budget);
  }
  const Tensor logits = model.forward(x);
  double total = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    total += cross_entropy(single_sample(logits.sample(b), {logits.dim(1)}), labels.subspan(b, 1)).value;
  }
  out.loss_trajectory.push_back(labels.empty() ? 0.0 : total / static_cast<double>(labels.size()));
  out.adversarial = std::move(x);
  return out;
}

}  // namespace

PgdResult pgd(const Model& model, const AttackGradient& grad, const Tensor& x0,
              std::span<const int> labels, const WhiteBoxBudget& budget) {
  budget.validate();
  if (x0.batch() != labels.size()) throw InputError("label count does not match batch size");
  return run_pgd(model, grad, x0, labels, budget);
}

PgdResult fgsm(const Model& model, const AttackGradient& grad, const Tensor& x0,
               std::span<const int> labels, double epsilon, double range_lo, double range_hi) {
  WhiteBoxBudget b{epsilon, epsilon, 1, range_lo, range_hi};
  if (!(epsilon >= 0.0)) throw InputError("epsilon must be >= 0");
  if (!(range_lo < range_hi)) throw InputError("pixel range is empty");
  if (x0.batch() != labels.size()) throw InputError("label count does not match batch size");
  return run_pgd(model, grad, x0, labels, b);
}

}  // namespace opushield
