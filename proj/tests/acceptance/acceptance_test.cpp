// Acceptance gate: runs the twelve criteria and prints one PASS/FAIL line
// for each. Exits nonzero when any criterion fails.
//
// Trained checkpoints are cached under $OPUSHIELD_ACCEPTANCE_CACHE (default:
// <build>/acceptance_cache) and reused while the model config is unchanged.
// $OPUSHIELD_ACCEPTANCE_ONLY=1,2,3 restricts the run to a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradient_check.hpp"
#include "opu_reference.hpp"
#include "opu_test_access.hpp"
#include "opushield/blackbox.hpp"
#include "opushield/checkpoint.hpp"
#include "opushield/harness.hpp"
#include "opushield/manifest.hpp"
#include "opushield/opu.hpp"
#include "opushield/runner.hpp"
#include "test_util.hpp"
#include "toy_targets.hpp"

namespace {

using namespace opushield;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

// Mid-range of the white-box grid, declared before any run.
const std::vector<double> kMidRange{0.1, 0.2, 0.3};
// Differences of accuracies are compared with this slack so that, e.g., a
// 10-point gap computed as 0.5 - 0.4 is not lost to rounding.
constexpr double kRound = 1e-9;

// --- criteria 1 to 5: in-process ----------------------------------------

Verdict gradient_exactness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t tensors = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Model m = testing::random_gradcheck_model(seed);
    Rng rng(1000 + seed);
    Shape xs{2};
    xs.insert(xs.end(), m.input_shape().begin(), m.input_shape().end());
    const Tensor x = testing::random_tensor(xs, rng);
    const auto y = testing::random_labels(2, m.num_classes(), rng);
    const auto r = testing::check_bp_gradients(m, x, y);
    worst = std::max({worst, r.worst_param, r.worst_input});
    tensors += r.params_checked + 1;
  }
  const double t = seconds_since(t0);
  return {worst < 1e-4 && t < 60.0, "worst relative error " + fmt("%.3g", worst) + " over 100 instances (" +
                                        std::to_string(tensors) + " tensors), " + fmt("%.1f", t) + " s"};
}

Verdict opu_oracle() {
  const auto t0 = Clock::now();
  Rng dims(3);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const std::size_t n = 1 + dims.below(128);
    const std::size_t m = 1 + dims.below(64);
    const OpuLayer layer(OpuConfig{n, m, seed});
    Rng rng(seed + 7);
    const Tensor x = testing::random_tensor({1, n}, rng);
    const Tensor out = layer.forward(x);
    const auto ref = testing::reference_forward(OpuTestAccess::matrix(layer), x.sample(0));
    for (std::size_t j = 0; j < m; ++j) worst = std::max(worst, std::abs(out[j] - ref[j]));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-10 && t < 60.0,
          "max abs deviation " + fmt("%.3g", worst) + " over 1000 pairs up to 64x128, " + fmt("%.1f", t) + " s"};
}

Verdict retrieval_anchors() {
  const double a = retrieval_cost_estimate(1e4, 1e5, 0.32).minutes;
  const double b = retrieval_cost_estimate(1e4, 1e5, 0.08).minutes;
  const double half = retrieval_cost_estimate(1e4, 1e5, 0.16).minutes;
  const double tb = retrieval_cost_estimate(1e6, 1e6, 0.32).bytes / 1e12;
  const bool ok = std::abs(a - 72.0) < 1e-9 && b >= 1140.0 && b <= 1160.0 && half / a == 4.0 &&
                  std::abs(tb - 8.0) <= 0.4;
  return {ok, fmt("%.6g min at 32%%, ", a) + fmt("%.6g min at 8%%, ", b) + fmt("halving ratio %.17g, ", half / a) +
                  fmt("%.4g TB at 1e6 x 1e6", tb)};
}

Verdict nes_convergence() {
  const auto t0 = Clock::now();
  int good = 0;
  double worst = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor w = testing::random_tensor({20}, rng);
    const NesConfig cfg{0.01, 1000, true, 1024};
    const auto loss = testing::plain_loss(
        [&](std::span<const double> x) { return kernels::dot(w.data().data(), x.data(), 20); });
    const NesEstimate est = nes_gradient(loss, testing::random_tensor({20}, rng), cfg, rng);
    const double c = testing::cos_sim(est.gradient.data(), w.data());
    worst = std::min(worst, c);
    good += c > 0.9;
  }
  const double t = seconds_since(t0);
  return {good >= 9 && t < 10.0, std::to_string(good) + "/10 seeds with cosine > 0.9 (lowest " +
                                     fmt("%.4f", worst) + "), " + fmt("%.2f", t) + " s"};
}

Verdict parsimonious_brute_force() {
  const auto t0 = Clock::now();
  std::size_t agree = 0, total = 0, violations = 0;
  for (std::size_t init_block : {1u, 2u}) {  // four blocks from the start, or one then four
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed);
      std::vector<double> a(4), b(4);
      for (std::size_t i = 0; i < 4; ++i) {
        a[i] = rng.uniform(-0.5, 0.5);
        b[i] = rng.uniform(-0.5, 0.5);
      }
      auto f = [&](std::span<const double> x) {
        double v = -5.0;
        for (std::size_t i = 0; i < 4; ++i) v += a[i] * x[i] + b[i] * x[i] * x[i];
        return v;
      };
      const testing::FunctionTarget target({1, 2, 2}, f);
      Tensor x0({1, 2, 2});
      for (double& v : x0.data()) v = rng.uniform(0.0, 1.0);
      const double eps = 0.2;
      QueryLedger ledger;
      FeasibilityCounters counters;
      QueryClient client(target, x0, 0, eps, 0.0, 1.0, ledger, &counters);
      ParsimoniousConfig cfg;
      cfg.epsilon = eps;
      cfg.init_block_size = init_block;
      const BlackBoxOutcome out = parsimonious_attack(client, cfg);

      double best = -1e300;
      for (std::size_t code = 0; code < 16; ++code) {
        const auto s = testing::decode_signs(code, 4);
        std::vector<double> x(4);
        for (std::size_t i = 0; i < 4; ++i) {
          x[i] = s[i] > 0 ? std::min(x0[i] + eps, 1.0) : std::max(x0[i] - eps, 0.0);
        }
        best = std::max(best, testing::softplus(f(x)));
      }
      const Tensor scores = target.scores(out.final_point.reshaped({1, 1, 2, 2}));
      agree += std::abs(testing::softplus(scores[1]) - best) <= 1e-12 * best;
      violations += counters.violations();
      ++total;
    }
  }
  const double t = seconds_since(t0);
  return {agree == total && violations == 0 && t < 10.0,
          std::to_string(agree) + "/" + std::to_string(total) + " toys match enumeration, " + fmt("%.2f", t) + " s"};
}

// --- criteria 6 to 12: manifest runs -----------------------------------

struct ManifestRun {
  std::string stem;
  std::optional<RunOutput> out;
  std::string error;
  double seconds = 0.0;
};

class Runs {
 public:
  Runs(fs::path source, fs::path cache) : source_(std::move(source)), cache_(std::move(cache)) {}

  Manifest manifest(const std::string& stem, const std::string& subdir) const {
    Manifest m = load_manifest(source_ / "manifests" / "acceptance" / (stem + ".yaml"));
    for (fs::path* p : {&m.data.train_images, &m.data.train_labels, &m.data.test_images, &m.data.test_labels}) {
      if (p->is_relative()) *p = source_ / *p;
    }
    m.output = cache_ / subdir / stem;
    m.harness.checkpoints = cache_ / "checkpoints";
    return m;
  }

  ManifestRun run(const std::string& stem, const std::string& subdir) {
    ManifestRun r{stem, std::nullopt, "", 0.0};
    const auto t0 = Clock::now();
    try {
      const Manifest m = manifest(stem, subdir);
      fs::remove_all(m.output);
      fs::create_directories(cache_ / "logs");
      std::ofstream log(cache_ / "logs" / (subdir + "_" + stem + ".log"));
      std::cout << "  running " << subdir << "/" << stem << " ..." << std::flush;
      r.out = run_manifest(m, log);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.seconds = seconds_since(t0);
    std::cout << (r.out ? " done" : " failed: " + r.error) << " (" << fmt("%.0f", r.seconds) << " s)" << std::endl;
    return r;
  }

  double train_seconds(const std::string& model) const {
    CheckpointMeta meta;
    try {
      load_checkpoint(cache_ / "checkpoints" / (model + ".ckpt"), &meta);
      return std::stod(meta.at("train_seconds"));
    } catch (const std::exception&) {
      return 0.0;
    }
  }

 private:
  fs::path source_, cache_;
};

const RunRecord* find_record(const RunOutput& out, const std::string& variant, const std::string& attack) {
  for (const auto& r : out.records) {
    if (r.variant == variant && r.attack == attack) return &r;
  }
  return nullptr;
}

std::optional<double> value_at(const RunRecord& r, double x) {
  for (const auto& p : r.points) {
    if (std::abs(p.x - x) < 1e-12) return p.value;
  }
  return std::nullopt;
}

double final_value(const RunRecord& r) { return r.points.back().value; }

Verdict failed_run(const ManifestRun& r) { return {false, r.stem + " did not complete: " + r.error}; }

Verdict baseline_strength(const ManifestRun& r) {
  if (!r.out) return failed_run(r);
  const RunRecord* rec = find_record(*r.out, "VANILLA", "parsimonious");
  if (!rec) return {false, "no CSR record for VANILLA"};
  const double csr = final_value(*rec);
  const bool ok = csr >= 0.95 && rec->samples >= 200 && r.seconds <= 3600.0;
  return {ok, "CSR " + fmt("%.4f", csr) + " within 15000 queries over " + std::to_string(rec->samples) +
                  " samples, " + fmt("%.0f", r.seconds) + " s"};
}

Verdict whitebox_direction(const ManifestRun& r, double train_seconds) {
  if (!r.out) return failed_run(r);
  const RunRecord* van = find_record(*r.out, "VANILLA", "pgd/bp");
  const RunRecord* dfa = find_record(*r.out, "DFA+OPU", "pgd/dfa");
  const RunRecord* bpda = find_record(*r.out, "DFA+OPU", "pgd/bpda");
  if (!van || !dfa || !bpda) return {false, "missing white-box curve"};
  bool ok = true;
  std::string gaps = "DFA-bypass minus BP at mid-range:";
  for (double e : kMidRange) {
    const auto a = value_at(*dfa, e), b = value_at(*van, e);
    if (!a || !b) return {false, "mid-range epsilon " + fmt("%g", e) + " missing from the grid"};
    ok = ok && *a - *b >= 0.10 - kRound;
    gaps += fmt(" %+.3f", *a - *b);
  }
  double worst = 1.0;
  for (const auto& p : dfa->points) {
    const auto c = value_at(*bpda, p.x);
    if (!c) return {false, "BPDA curve misses epsilon " + fmt("%g", p.x)};
    worst = std::min(worst, *c - p.value);
  }
  ok = ok && worst >= -0.03 - kRound;
  const double total = r.seconds + train_seconds;
  ok = ok && total <= 7200.0;
  return {ok, gaps + "; lowest BPDA minus DFA-bypass " + fmt("%+.3f", worst) + "; " + fmt("%.0f", total) +
                  " s with training (" + std::to_string(dfa->samples) + " samples)"};
}

Verdict natural_accuracy(const ManifestRun& r) {
  if (!r.out) return failed_run(r);
  const auto& acc = r.out->natural_accuracy;
  if (!acc.count("VANILLA") || !acc.count("DFA+OPU")) return {false, "missing accuracies"};
  const double gap = acc.at("VANILLA") - acc.at("DFA+OPU");
  return {std::abs(gap) <= 0.03 + kRound, "VANILLA " + fmt("%.4f", acc.at("VANILLA")) + ", DFA+OPU " +
                                              fmt("%.4f", acc.at("DFA+OPU")) + ", gap " + fmt("%+.4f", gap)};
}

Verdict ablation_order(const ManifestRun& r) {
  if (!r.out) return failed_run(r);
  std::map<std::string, double> csr;
  for (const char* v : {"DFA", "DFA+BIN", "DFA+RP", "DFA+OPU"}) {
    const RunRecord* rec = find_record(*r.out, v, "parsimonious");
    if (!rec) return {false, std::string("no CSR record for ") + v};
    csr[v] = final_value(*rec);
  }
  const bool ok = csr["DFA+OPU"] < csr["DFA+BIN"] && csr["DFA+BIN"] <= csr["DFA"] &&
                  csr["DFA"] - csr["DFA+OPU"] >= 0.05 - kRound;
  return {ok, "final CSR DFA " + fmt("%.3f", csr["DFA"]) + ", DFA+BIN " + fmt("%.3f", csr["DFA+BIN"]) + ", DFA+RP " +
                  fmt("%.3f", csr["DFA+RP"]) + ", DFA+OPU " + fmt("%.3f", csr["DFA+OPU"]) + " on " +
                  std::to_string(r.out->common_set_size) + " shared samples"};
}

Verdict transfer_direction(const ManifestRun& r) {
  if (!r.out) return failed_run(r);
  const RunRecord* bp = find_record(*r.out, "VANILLA_B", "pgd-transfer/VANILLA");
  const RunRecord* dfa = find_record(*r.out, "DFA", "pgd-transfer/VANILLA");
  if (!bp || !dfa) return {false, "missing transfer curve"};
  bool ok = value_at(*bp, 0.0) == 1.0 && value_at(*dfa, 0.0) == 1.0;
  std::string gaps = "eps 0: " + fmt("%.3f", value_at(*bp, 0.0).value_or(-1)) + "/" +
                     fmt("%.3f", value_at(*dfa, 0.0).value_or(-1)) + "; DFA minus BP target at mid-range:";
  for (double e : kMidRange) {
    const auto a = value_at(*dfa, e), b = value_at(*bp, e);
    if (!a || !b) return {false, "mid-range epsilon " + fmt("%g", e) + " missing from the grid"};
    ok = ok && *a - *b >= 0.05 - kRound;
    gaps += fmt(" %+.3f", *a - *b);
  }
  return {ok, gaps + " (" + std::to_string(r.out->common_set_size) + " samples)"};
}

Verdict feasibility(const std::vector<const ManifestRun*>& runs) {
  FeasibilityCounters total;
  std::size_t mismatches = 0, missing = 0;
  for (const ManifestRun* r : runs) {
    if (!r->out) {
      ++missing;
      continue;
    }
    total += r->out->counters;
    mismatches += r->out->ledger_mismatches;
  }
  const bool ok = missing == 0 && total.checked > 0 && total.violations() == 0 && mismatches == 0;
  return {ok, std::to_string(total.checked) + " points checked; ball " + std::to_string(total.ball) + ", range " +
                  std::to_string(total.range) + ", budget " + std::to_string(total.budget) + ", ledger mismatches " +
                  std::to_string(mismatches) + (missing ? ", " + std::to_string(missing) + " runs missing" : "")};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict reproducibility(const std::vector<std::pair<const ManifestRun*, const ManifestRun*>>& pairs) {
  std::size_t compared = 0;
  std::vector<std::string> differ;
  for (const auto& [a, b] : pairs) {
    if (!a->out || !b->out) {
      differ.push_back(a->stem + " (run failed)");
      continue;
    }
    for (const auto& f : a->out->files) {
      if (f.extension() != ".csv") continue;
      const fs::path other = b->out->directory / f.filename();
      ++compared;
      if (!fs::exists(other) || slurp(f) != slurp(other)) differ.push_back(a->stem + "/" + f.filename().string());
    }
  }
  std::string detail = std::to_string(compared) + " CSV files compared across " + std::to_string(pairs.size()) +
                       " manifests";
  for (const auto& d : differ) detail += "; differs: " + d;
  return {differ.empty() && compared > 0, detail};
}

std::set<int> selected() {
  std::set<int> out;
  const char* env = std::getenv("OPUSHIELD_ACCEPTANCE_ONLY");
  if (!env || !*env) {
    for (int i = 1; i <= 12; ++i) out.insert(i);
    return out;
  }
  std::stringstream s(env);
  std::string tok;
  while (std::getline(s, tok, ',')) out.insert(std::stoi(tok));
  return out;
}

}  // namespace

int main() {
  const fs::path source = OPUSHIELD_SOURCE_DIR;
  const char* env_cache = std::getenv("OPUSHIELD_ACCEPTANCE_CACHE");
  const fs::path cache = env_cache && *env_cache ? fs::path(env_cache) : fs::path(OPUSHIELD_ACCEPTANCE_CACHE_DIR);
  const std::set<int> only = selected();
  std::cout << "acceptance cache: " << cache.string() << std::endl;

  std::map<int, Verdict> verdicts;
  const std::pair<int, std::function<Verdict()>> quick[] = {
      {1, gradient_exactness}, {2, opu_oracle}, {3, retrieval_anchors}, {4, nes_convergence},
      {5, parsimonious_brute_force}};
  for (const auto& [id, fn] : quick) {
    if (only.count(id)) verdicts[id] = fn();
  }

  const bool need_runs = std::any_of(only.begin(), only.end(), [](int i) { return i >= 6; });
  if (need_runs) {
    Runs runs(source, cache);
    const std::vector<std::string> stems{"natural_accuracy", "parsimonious_baseline", "whitebox", "ablation_black",
                                         "transfer"};
    const std::map<std::string, int> criterion{{"natural_accuracy", 8},
                                               {"parsimonious_baseline", 6},
                                               {"whitebox", 7},
                                               {"ablation_black", 9},
                                               {"transfer", 10}};
    const bool all_for_11_12 = only.count(11) || only.count(12);
    std::map<std::string, ManifestRun> first, second;
    for (const auto& s : stems) {
      if (only.count(criterion.at(s)) || all_for_11_12) first.emplace(s, runs.run(s, "runs"));
    }
    if (only.count(12)) {
      for (const auto& s : stems) second.emplace(s, runs.run(s, "rerun"));
    }

    if (first.count("parsimonious_baseline")) verdicts[6] = baseline_strength(first.at("parsimonious_baseline"));
    if (first.count("whitebox")) {
      verdicts[7] = whitebox_direction(first.at("whitebox"),
                                       runs.train_seconds("VANILLA") + runs.train_seconds("DFA+OPU"));
    }
    if (first.count("natural_accuracy")) verdicts[8] = natural_accuracy(first.at("natural_accuracy"));
    if (first.count("ablation_black")) verdicts[9] = ablation_order(first.at("ablation_black"));
    if (first.count("transfer")) verdicts[10] = transfer_direction(first.at("transfer"));
    if (only.count(11)) {
      std::vector<const ManifestRun*> attacks;
      for (const auto* set : {&first, &second}) {
        for (const char* s : {"parsimonious_baseline", "whitebox", "ablation_black", "transfer"}) {
          if (set->count(s)) attacks.push_back(&set->at(s));
        }
      }
      verdicts[11] = feasibility(attacks);
    }
    if (only.count(12)) {
      std::vector<std::pair<const ManifestRun*, const ManifestRun*>> pairs;
      for (const auto& s : stems) pairs.emplace_back(&first.at(s), &second.at(s));
      verdicts[12] = reproducibility(pairs);
    }
  }

  static const char* names[] = {"",
                                "gradient exactness",
                                "optical layer oracle",
                                "retrieval cost anchors",
                                "NES convergence",
                                "parsimonious brute force",
                                "parsimonious baseline strength",
                                "white-box direction",
                                "natural accuracy",
                                "black-box ablation order",
                                "transfer direction",
                                "feasibility invariants",
                                "reproducibility"};
  bool all = true;
  std::cout << "\n";
  for (const auto& [id, v] : verdicts) {
    all = all && v.pass;
    std::printf("criterion %2d %s  %-31s %s\n", id, v.pass ? "PASS" : "FAIL", names[id], v.detail.c_str());
  }
  std::fflush(stdout);
  return all ? 0 : 1;
}
