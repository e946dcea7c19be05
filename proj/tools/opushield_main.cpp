// opushield: train, attack, ablate, transfer, report and cost-model runs
// from a YAML manifest plus command-line overrides.

#include <yaml-cpp/exceptions.h>

#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "opushield/errors.hpp"
#include "opushield/runner.hpp"

namespace {

using namespace opushield;

constexpr int kOk = 0, kValidation = 2, kRuntime = 3;

struct Overrides {
  std::string manifest;
  std::string out;
  std::string attack;
  std::string grad_source;
  std::vector<double> eps;
  std::optional<double> alpha;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_queries;
  std::vector<double> sigma_sweep;
  std::vector<std::string> variants;
  std::optional<std::size_t> samples;
  std::string checkpoints;
  std::vector<std::string> positional;  // report inputs, or N=.. M=.. err=..
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("manifest", o.manifest, "YAML manifest (defaults apply when omitted)");
  cmd->add_option("--out", o.out, "output directory (default: manifest, then $OPUSHIELD_OUT, then ./out)");
  cmd->add_option("--variants", o.variants, "model variants, e.g. VANILLA DFA+OPU");
  cmd->add_option("--checkpoints", o.checkpoints, "checkpoint directory");
  cmd->add_option("--seed", o.seed, "attack seed");
}

void add_attack(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--attack", o.attack, "pgd|fgsm (white-box) or nes|bandits|parsimonious (black-box)");
  cmd->add_option("--grad-source", o.grad_source, "bp|dfa|bpda, for models with an optical layer");
  cmd->add_option("--eps", o.eps,
                  "white-box: epsilon grid in the model range ([-1,1] by default); "
                  "black-box: one epsilon in [0,1] units (half the [-1,1] value)");
  cmd->add_option("--alpha", o.alpha, "PGD step size");
  cmd->add_option("--steps", o.steps, "PGD iterations");
  cmd->add_option("--max-queries", o.max_queries, "black-box query budget per sample");
  cmd->add_option("--sigma-sweep", o.sigma_sweep, "NES sigmas to sweep, best final CSR kept");
  cmd->add_option("--samples", o.samples, "number of attacked samples");
}

bool is_black(const std::string& attack) {
  return attack == "nes" || attack == "bandits" || attack == "parsimonious";
}

void apply(Manifest& m, Command c, const Overrides& o) {
  m.command = c;
  if (!o.out.empty()) m.output = o.out;
  if (!o.checkpoints.empty()) m.harness.checkpoints = o.checkpoints;
  if (o.seed) m.seeds.attack = *o.seed;
  if (!o.variants.empty()) {
    m.harness.variants.clear();
    for (const auto& v : o.variants) m.harness.variants.push_back(parse_variant(v));
  }
  if (!o.attack.empty()) {
    if (is_black(o.attack)) {
      m.harness.threat = Threat::Black;
      m.black.attack = parse_black_attack(o.attack);
    } else {
      m.harness.threat = Threat::White;
      m.white.attack = parse_white_attack(o.attack);
    }
  }
  if (!o.grad_source.empty()) m.white.grad_sources = {parse_grad_kind(o.grad_source)};
  if (!o.eps.empty()) {
    if (m.harness.threat == Threat::Black && c != Command::Transfer) {
      if (o.eps.size() != 1) throw InputError("--eps: black-box attacks take a single epsilon");
      m.black.epsilon = o.eps.front();
    } else {
      m.white.epsilons = o.eps;
    }
  }
  if (o.alpha) m.white.alpha = *o.alpha;
  if (o.steps) m.white.steps = *o.steps;
  if (o.max_queries) m.black.max_queries = *o.max_queries;
  if (!o.sigma_sweep.empty()) m.black.sigma_sweep = o.sigma_sweep;
  if (o.samples) {
    m.white.samples = *o.samples;
    m.black.samples = *o.samples;
    m.harness.transfer_samples = *o.samples;
  }
  if (c == Command::Report) {
    for (const auto& p : o.positional) m.report.inputs.emplace_back(p);
  }
  if (c == Command::CostModel) {
    for (const auto& p : o.positional) {
      const auto eq = p.find('=');
      if (eq == std::string::npos) throw InputError("cost-model: expected KEY=VALUE, got '" + p + "'");
      const std::string key = p.substr(0, eq);
      double value = 0.0;
      try {
        std::size_t used = 0;
        value = std::stod(p.substr(eq + 1), &used);
        if (used != p.size() - eq - 1) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw InputError("cost-model: '" + p + "' does not hold a number");
      }
      if (key == "N" || key == "n") {
        m.harness.cost_n = value;
      } else if (key == "M" || key == "m") {
        m.harness.cost_m = value;
      } else if (key == "err" || key == "error") {
        m.harness.cost_error = value;
      } else {
        throw InputError("cost-model: unknown key '" + key + "' (expected N, M or err)");
      }
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optical random-projection defense: training, attacks and reports"};
  app.require_subcommand(1);
  Overrides o;
  struct Sub {
    Command command;
    const char* help;
  };
  const Sub subs[] = {
      {Command::Train, "train (or load cached) models; optionally resample and fine-tune"},
      {Command::Attack, "white-box or black-box attack on each variant"},
      {Command::Ablate, "attack all variants on a shared sample set after an accuracy-band check"},
      {Command::Transfer, "craft on the BP source, evaluate on each target"},
      {Command::Report, "render SVG plots from report CSVs"},
      {Command::CostModel, "matrix retrieval time and memory estimate"},
  };
  std::optional<Command> chosen;
  for (const auto& s : subs) {
    CLI::App* cmd = app.add_subcommand(to_string(s.command), s.help);
    if (s.command == Command::Report) {
      cmd->add_option("inputs", o.positional, "report CSVs")->expected(0, -1);
      cmd->add_option("--manifest", o.manifest, "YAML manifest");
      cmd->add_option("--out", o.out, "output directory");
      cmd->add_option("--title", o.attack, "plot title");
    } else if (s.command == Command::CostModel) {
      cmd->add_option("params", o.positional, "N=<cols> M=<rows> err=<relative error>")->expected(0, -1);
      cmd->add_option("--manifest", o.manifest, "YAML manifest");
      cmd->add_option("--out", o.out, "output directory");
    } else {
      add_common(cmd, o);
      if (s.command != Command::Train) add_attack(cmd, o);
    }
    cmd->callback([&chosen, c = s.command] { chosen = c; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    Manifest m = o.manifest.empty() ? Manifest{} : load_manifest(o.manifest);
    if (*chosen == Command::Report && !o.attack.empty()) {
      m.report.title = o.attack;
      o.attack.clear();
    }
    apply(m, *chosen, o);
    const RunOutput out = run_manifest(m, std::cerr);
    if (out.cost) {
      std::cout << format_number(out.cost->minutes) << " minutes\n"
                << format_number(out.cost->bytes) << " bytes (" << format_number(out.cost->bytes / 1e12) << " TB)\n";
    }
    for (const auto& f : out.files) std::cout << f.string() << "\n";
    return kOk;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const YAML::Exception& e) {
    std::cerr << "error: manifest: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kRuntime;
  }
}
