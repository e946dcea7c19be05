#include "opushield/blackbox.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <tuple>

#include "opushield/box.hpp"
#include "opushield/errors.hpp"

namespace opushield {

// --- targets -----------------------------------------------------------

ModelTarget::ModelTarget(const Model& model, PixelRange attack_range, PixelRange model_range)
    : model_(model), attack_range_(attack_range), model_range_(model_range) {}

Tensor ModelTarget::scores(const Tensor& x) const {
  if (attack_range_ == model_range_) return model_.forward(x);
  const double a_lo = range_lo(attack_range_), a_hi = range_hi(attack_range_);
  const double m_lo = range_lo(model_range_), m_hi = range_hi(model_range_);
  const double scale = (m_hi - m_lo) / (a_hi - a_lo);
  Tensor mapped(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mapped[i] = m_lo + (x[i] - a_lo) * scale;
  return model_.forward(mapped);
}

Tensor CountingTarget::scores(const Tensor& x) const {
  evaluations_ += x.batch();
  return inner_.scores(x);
}

// --- ledger and client -------------------------------------------------

QueryLedger::QueryLedger(std::size_t max_queries) : max_(max_queries) {}

void QueryLedger::record(double loss, bool success) {
  if (count_ >= max_) throw ContractError("query budget of " + std::to_string(max_) + " exceeded");
  ++count_;
  log_.push_back({count_, loss, success});
  if (success && !first_success_) first_success_ = count_;
}

FeasibilityCounters& FeasibilityCounters::operator+=(const FeasibilityCounters& o) {
  checked += o.checked;
  ball += o.ball;
  range += o.range;
  budget += o.budget;
  return *this;
}

QueryClient::QueryClient(const BlackBoxTarget& target, const Tensor& x0, int label, double epsilon,
                         double lo, double hi, QueryLedger& ledger, FeasibilityCounters* counters)
    : target_(target), x0_(x0), label_(label), eps_(epsilon), lo_(lo), hi_(hi), ledger_(ledger),
      counters_(counters) {
  if (x0.shape() != target.input_shape()) {
    throw InputError("clean sample shape " + shape_string(x0.shape()) + " does not match the target input " +
                     shape_string(target.input_shape()));
  }
  if (!(epsilon >= 0.0)) throw InputError("epsilon must be >= 0");
  if (!(lo < hi)) throw InputError("pixel range is empty");
  if (label < 0 || static_cast<std::size_t>(label) >= target.num_classes()) throw InputError("label out of range");
  lower_.resize(x0.size());
  upper_.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (!(x0[i] >= lo && x0[i] <= hi)) throw InputError("clean sample lies outside the pixel range");
    std::tie(lower_[i], upper_[i]) = linf_interval(x0[i], epsilon, lo, hi);
  }
}

void QueryClient::project(std::span<double> x) const {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lower_[i], upper_[i]);
}

Tensor QueryClient::project(const Tensor& points) const {
  Tensor out = points;
  for (std::size_t b = 0; b < out.batch(); ++b) project(out.sample(b));
  return out;
}

std::vector<double> QueryClient::query(const Tensor& points) {
  if (points.sample_shape() != x0_.shape()) throw InputError("query points do not match the sample shape");
  const std::size_t n = std::min(points.batch(), ledger_.remaining());
  if (n == 0) return {};
  Tensor batch = points;
  if (n < points.batch()) {
    std::vector<std::size_t> keep(n);
    for (std::size_t i = 0; i < n; ++i) keep[i] = i;
    batch = gather_samples(points, keep);
  }
  if (counters_) {
    for (std::size_t b = 0; b < n; ++b) {
      auto p = batch.sample(b);
      bool out_ball = false, out_range = false;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (!within_ball(p[i], x0_[i], eps_)) out_ball = true;
        if (!(p[i] >= lo_ && p[i] <= hi_)) out_range = true;
      }
      ++counters_->checked;
      counters_->ball += out_ball;
      counters_->range += out_range;
    }
  }
  const Tensor logits = target_.scores(batch);
  std::vector<double> losses(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto row = logits.sample(b);
    const bool success = argmax(row) != label_;
    losses[b] = cross_entropy(single_sample(row, {row.size()}), std::span<const int>(&label_, 1)).value;
    ledger_.record(losses[b], success);
    if (success && !adversarial_) adversarial_ = single_sample(batch.sample(b), x0_.shape()).reshaped(x0_.shape());
  }
  if (counters_ && ledger_.count() > ledger_.max_queries()) ++counters_->budget;
  return losses;
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::Success: return "success";
    case StopReason::BudgetExhausted: return "budget";
    case StopReason::Converged: return "converged";
  }
  return "?";
}

namespace {

BlackBoxOutcome finish(QueryClient& client, StopReason reason, Tensor last) {
  BlackBoxOutcome out;
  out.success = client.succeeded();
  out.first_success = client.ledger().first_success();
  out.queries = client.ledger().count();
  out.reason = out.success ? StopReason::Success : reason;
  out.final_point = out.success ? *client.adversarial() : std::move(last);
  return out;
}

/// Loss of every row after projecting it into the feasible set.
BatchLossFn projected_loss(QueryClient& client) {
  return [&client](const Tensor& points) { return client.query(client.project(points)); };
}

Tensor as_batch(const Tensor& x) {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  return x.reshaped(s);
}

}  // namespace

// --- NES ---------------------------------------------------------------

void NesConfig::validate() const {
  if (!(sigma > 0.0)) throw InputError("NES sigma must be > 0");
  if (n_samples == 0) throw InputError("NES needs at least one sample");
  if (antithetic && n_samples % 2 != 0) throw InputError("antithetic NES needs an even sample count");
  if (batch == 0) throw InputError("NES batch must be positive");
  if (!(step_size > 0.0)) throw InputError("NES step size must be > 0");
}

NesEstimate nes_gradient(const BatchLossFn& loss, const Tensor& x, const NesConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t dim = x.size();
  NesEstimate est;
  est.gradient = Tensor(x.shape());
  Shape batch_shape{0};
  batch_shape.insert(batch_shape.end(), x.shape().begin(), x.shape().end());

  std::size_t done = 0;
  while (done < cfg.n_samples) {
    const std::size_t k = std::min(cfg.batch - cfg.batch % (cfg.antithetic ? 2 : 1), cfg.n_samples - done);
    const std::size_t chunk = k == 0 ? std::min<std::size_t>(2, cfg.n_samples - done) : k;
    batch_shape[0] = chunk;
    Tensor points(batch_shape);
    Tensor deltas(batch_shape);
    for (std::size_t j = 0; j < chunk; ++j) {
      auto d = deltas.sample(j);
      if (cfg.antithetic && j % 2 == 1) {
        auto prev = deltas.sample(j - 1);
        for (std::size_t i = 0; i < dim; ++i) d[i] = -prev[i];
      } else {
        for (std::size_t i = 0; i < dim; ++i) d[i] = rng.normal();
      }
      auto p = points.sample(j);
      for (std::size_t i = 0; i < dim; ++i) p[i] = x[i] + cfg.sigma * d[i];
    }
    const std::vector<double> losses = loss(points);
    for (std::size_t j = 0; j < losses.size(); ++j) {
      // A complete pair contributes (l+ - l-) delta, which cancels exactly for a flat loss.
      if (cfg.antithetic && j % 2 == 0 && j + 1 < losses.size()) {
        kernels::axpy(losses[j] - losses[j + 1], deltas.sample(j).data(), est.gradient.data().data(), dim);
        ++j;
      } else {
        kernels::axpy(losses[j], deltas.sample(j).data(), est.gradient.data().data(), dim);
      }
    }
    est.queries += losses.size();
    done += losses.size();
    if (losses.size() < chunk) {
      est.complete = false;
      break;
    }
  }
  const double scale = 1.0 / (cfg.sigma * static_cast<double>(cfg.n_samples));
  for (double& v : est.gradient.data()) v *= scale;
  return est;
}

BlackBoxOutcome nes_attack(QueryClient& client, const NesConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Tensor x = client.clean();
  const BatchLossFn loss = projected_loss(client);
  while (!client.succeeded() && !client.ledger().exhausted()) {
    const NesEstimate est = nes_gradient(loss, x, cfg, rng);
    if (client.succeeded() || !est.complete) break;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = est.gradient[i];
      x[i] += cfg.step_size * (g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0));
    }
    client.project(x.data());
    if (client.query(as_batch(x)).empty()) break;
  }
  return finish(client, StopReason::BudgetExhausted, x);
}

// --- bandits -----------------------------------------------------------

void BanditsConfig::validate() const {
  if (!(sigma > 0.0)) throw InputError("bandits sigma must be > 0");
  if (!(online_lr > 0.0)) throw InputError("bandits online learning rate must be > 0");
  if (!(exploration > 0.0)) throw InputError("bandits exploration must be > 0");
  if (prior_size == 0) throw InputError("bandits prior size must be > 0");
  if (grad_iters == 0) throw InputError("bandits gradient iterations must be > 0");
  if (!(image_lr > 0.0)) throw InputError("bandits image step must be > 0");
}

Tensor upsample_nearest(const Tensor& prior, std::size_t height, std::size_t width) {
  if (prior.rank() != 3) throw InputError("prior must be [C, s, s]");
  const std::size_t c = prior.dim(0), ph = prior.dim(1), pw = prior.dim(2);
  Tensor out({c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t py = y * ph / height;
      for (std::size_t xx = 0; xx < width; ++xx) {
        out[(ch * height + y) * width + xx] = prior[(ch * ph + py) * pw + xx * pw / width];
      }
    }
  }
  return out;
}

namespace {

double l2_norm(std::span<const double> v) { return std::sqrt(kernels::dot(v.data(), v.data(), v.size())); }

}  // namespace

BlackBoxOutcome bandits_attack(QueryClient& client, const BanditsConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Shape& shape = client.clean().shape();
  if (shape.size() != 3) throw InputError("bandits expects [C, H, W] samples");
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  const std::size_t s = cfg.prior_size;
  Rng rng(seed);
  Tensor x = client.clean();
  Tensor prior({c, s, s});
  const double prior_dim = static_cast<double>(prior.size());
  const std::size_t n = x.size();
  Shape pair_shape{2, c, h, w};

  while (!client.succeeded() && !client.ledger().exhausted()) {
    Tensor grad_prior({c, s, s});
    bool complete = true;
    for (std::size_t it = 0; it < cfg.grad_iters && complete; ++it) {
      Tensor noise({c, s, s});
      for (double& v : noise.data()) v = cfg.exploration * rng.normal() / std::sqrt(prior_dim);
      Tensor q1 = prior, q2 = prior;
      for (std::size_t i = 0; i < prior.size(); ++i) {
        q1[i] += noise[i];
        q2[i] -= noise[i];
      }
      const Tensor u1 = upsample_nearest(q1, h, w), u2 = upsample_nearest(q2, h, w);
      const double n1 = l2_norm(u1.data()), n2 = l2_norm(u2.data());
      Tensor probes(pair_shape);
      auto p1 = probes.sample(0), p2 = probes.sample(1);
      for (std::size_t i = 0; i < n; ++i) {
        p1[i] = x[i] + cfg.sigma * (n1 > 0.0 ? u1[i] / n1 : 0.0);
        p2[i] = x[i] + cfg.sigma * (n2 > 0.0 ? u2[i] / n2 : 0.0);
      }
      const std::vector<double> l = client.query(client.project(probes));
      if (l.size() < 2 || client.succeeded()) {
        complete = false;
        break;
      }
      const double deriv = (l[0] - l[1]) / (cfg.sigma * cfg.exploration);
      for (std::size_t i = 0; i < prior.size(); ++i) grad_prior[i] += deriv * noise[i];
    }
    if (!complete) break;
    // Exponentiated-gradient step on the prior, which lives in [-1, 1].
    for (std::size_t i = 0; i < prior.size(); ++i) {
      const double g = grad_prior[i] / static_cast<double>(cfg.grad_iters);
      const double real = (prior[i] + 1.0) / 2.0;
      const double pos = real * std::exp(cfg.online_lr * g);
      const double neg = (1.0 - real) * std::exp(-cfg.online_lr * g);
      const double next = pos + neg > 0.0 ? pos / (pos + neg) : real;
      prior[i] = std::isfinite(next) ? 2.0 * next - 1.0 : (g > 0.0 ? 1.0 : -1.0);
    }
    const Tensor step = upsample_nearest(prior, h, w);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = step[i];
      x[i] += cfg.image_lr * (g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0));
    }
    client.project(x.data());
    if (client.query(as_batch(x)).empty()) break;
  }
  return finish(client, StopReason::BudgetExhausted, x);
}

// --- parsimonious ------------------------------------------------------

void ParsimoniousConfig::validate() const {
  if (!(epsilon >= 0.0)) throw InputError("parsimonious epsilon must be >= 0");
  if (local_search_iters == 0) throw InputError("parsimonious local search needs at least one round");
  if (init_block_size == 0) throw InputError("parsimonious block size must be > 0");
  if (batch == 0) throw InputError("parsimonious batch must be > 0");
  if (hierarchical) throw InputError("hierarchical evaluation is not supported");
}

namespace {

struct Candidate {
  double gain;
  std::size_t group;
  std::size_t stamp;  // number of accepted flips when the gain was computed
};

struct CandidateOrder {
  bool operator()(const Candidate& a, const Candidate& b) const {
    if (a.gain != b.gain) return a.gain < b.gain;
    return a.group > b.group;
  }
};

class SearchState {
 public:
  SearchState(const SignSearchProblem& p, const std::vector<std::vector<std::size_t>>& groups,
              std::vector<std::int8_t> signs, double loss, std::size_t batch)
      : p_(p), groups_(groups), batch_(batch) {
    res_.signs = std::move(signs);
    res_.loss = loss;
  }

  SignSearchResult& result() { return res_; }
  bool halted() const { return res_.halted; }

  /// One lazy-greedy pass over the groups whose current sign equals `from`.
  void pass(std::int8_t from) {
    std::vector<std::size_t> pool;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (res_.signs[groups_[g].front()] == from) pool.push_back(g);
    }
    std::priority_queue<Candidate, std::vector<Candidate>, CandidateOrder> heap;
    for (std::size_t start = 0; start < pool.size() && !res_.halted; start += batch_) {
      const std::size_t end = std::min(pool.size(), start + batch_);
      std::vector<std::vector<std::int8_t>> trial;
      for (std::size_t k = start; k < end; ++k) trial.push_back(flipped(pool[k]));
      const auto losses = evaluate(trial);
      for (std::size_t k = 0; k < losses.size(); ++k) heap.push({losses[k] - res_.loss, pool[start + k], accepted_});
    }
    while (!heap.empty() && !res_.halted) {
      Candidate top = heap.top();
      heap.pop();
      if (!(top.gain > 0.0)) break;
      if (top.stamp != accepted_) {
        const auto fresh = evaluate({flipped(top.group)});
        if (fresh.empty()) break;
        top.gain = fresh[0] - res_.loss;
        top.stamp = accepted_;
        if (!heap.empty() && CandidateOrder{}(top, heap.top())) {
          heap.push(top);
          continue;
        }
        if (!(top.gain > 0.0)) continue;
      }
      for (std::size_t i : groups_[top.group]) res_.signs[i] = static_cast<std::int8_t>(-from);
      res_.loss += top.gain;
      res_.improved = true;
      ++accepted_;
    }
  }

 private:
  std::vector<std::int8_t> flipped(std::size_t g) const {
    std::vector<std::int8_t> s = res_.signs;
    for (std::size_t i : groups_[g]) s[i] = static_cast<std::int8_t>(-s[i]);
    return s;
  }

  std::vector<double> evaluate(const std::vector<std::vector<std::int8_t>>& trial) {
    auto losses = p_.evaluate(trial);
    if (losses.size() < trial.size() || (p_.stop && p_.stop())) res_.halted = true;
    return losses;
  }

  const SignSearchProblem& p_;
  const std::vector<std::vector<std::size_t>>& groups_;
  std::size_t batch_;
  std::size_t accepted_ = 0;
  SignSearchResult res_;
};

}  // namespace

SignSearchResult sign_local_search(const SignSearchProblem& problem,
                                   const std::vector<std::vector<std::size_t>>& groups,
                                   std::vector<std::int8_t> signs, double loss, std::size_t rounds,
                                   std::size_t batch) {
  if (signs.size() != problem.size) throw InputError("sign vector does not match the problem size");
  if (batch == 0) throw InputError("search batch must be positive");
  for (const auto& g : groups) {
    if (g.empty()) throw InputError("empty search group");
    for (std::size_t i : g) {
      if (i >= problem.size) throw InputError("search group index out of range");
      if (signs[i] != signs[g.front()]) throw InputError("search group is not sign-uniform");
    }
  }
  SearchState state(problem, groups, std::move(signs), loss, batch);
  for (std::size_t r = 0; r < rounds && !state.halted(); ++r) {
    state.pass(-1);
    if (!state.halted()) state.pass(+1);
  }
  SignSearchResult out = std::move(state.result());
  return out;
}

std::vector<std::vector<std::size_t>> image_blocks(const Shape& shape, std::size_t block) {
  if (shape.size() != 3) throw InputError("image blocks need a [C, H, W] shape");
  if (block == 0) throw InputError("block size must be positive");
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t by = 0; by < h; by += block) {
      for (std::size_t bx = 0; bx < w; bx += block) {
        std::vector<std::size_t> g;
        for (std::size_t y = by; y < std::min(h, by + block); ++y) {
          for (std::size_t xx = bx; xx < std::min(w, bx + block); ++xx) g.push_back((ch * h + y) * w + xx);
        }
        groups.push_back(std::move(g));
      }
    }
  }
  return groups;
}

BlackBoxOutcome parsimonious_attack(QueryClient& client, const ParsimoniousConfig& cfg) {
  cfg.validate();
  const Tensor& x0 = client.clean();
  const std::size_t n = x0.size();
  Shape batch_shape{0};
  batch_shape.insert(batch_shape.end(), x0.shape().begin(), x0.shape().end());

  auto render = [&](const std::vector<std::int8_t>& s, std::span<double> out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x0[i] + cfg.epsilon * static_cast<double>(s[i]);
    client.project(out);
  };

  SignSearchProblem problem;
  problem.size = n;
  problem.evaluate = [&](const std::vector<std::vector<std::int8_t>>& trial) {
    batch_shape[0] = trial.size();
    Tensor points(batch_shape);
    for (std::size_t k = 0; k < trial.size(); ++k) render(trial[k], points.sample(k));
    return client.query(points);
  };
  problem.stop = [&] { return client.succeeded(); };

  std::vector<std::int8_t> signs(n, -1);
  Tensor current(x0.shape());
  const auto first = problem.evaluate({signs});
  if (first.empty() || client.succeeded()) {
    render(signs, current.data());
    return finish(client, StopReason::BudgetExhausted, current);
  }
  double loss = first[0];
  std::size_t block = cfg.init_block_size;
  StopReason reason = StopReason::BudgetExhausted;
  while (true) {
    const auto groups = image_blocks(x0.shape(), block);
    SignSearchResult r = sign_local_search(problem, groups, signs, loss, cfg.local_search_iters, cfg.batch);
    signs = std::move(r.signs);
    loss = r.loss;
    if (r.halted) break;
    if (block > 1) {
      block /= 2;
    } else if (!r.improved) {
      reason = StopReason::Converged;
      break;
    }
  }
  render(signs, current.data());
  return finish(client, reason, current);
}

// --- CSR ---------------------------------------------------------------

CsrCurve::CsrCurve(std::vector<std::optional<std::size_t>> first, std::size_t max_queries)
    : n_(first.size()), max_(max_queries) {
  if (first.empty()) throw InputError("CSR of an empty collection");
  std::vector<std::size_t> hits;
  for (const auto& f : first) {
    if (f && *f <= max_queries) hits.push_back(*f);
  }
  std::sort(hits.begin(), hits.end());
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (i + 1 < hits.size() && hits[i + 1] == hits[i]) continue;
    steps_.emplace_back(hits[i], static_cast<double>(i + 1) / static_cast<double>(n_));
  }
}

double CsrCurve::at(std::size_t queries) const {
  double rate = 0.0;
  for (const auto& [q, r] : steps_) {
    if (q > queries) break;
    rate = r;
  }
  return rate;
}

CsrCurve csr_curve(const std::vector<BlackBoxOutcome>& outcomes, std::size_t max_queries) {
  std::vector<std::optional<std::size_t>> first;
  first.reserve(outcomes.size());
  for (const auto& o : outcomes) first.push_back(o.first_success);
  return CsrCurve(std::move(first), max_queries);
}

}  // namespace opushield
