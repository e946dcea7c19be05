#include "opushield/manifest.hpp"

#include <yaml-cpp/yaml.h>

#include <functional>
#include <set>

#include "opushield/errors.hpp"
#include "opushield/report.hpp"

namespace opushield {

std::string to_string(Command c) {
  switch (c) {
    case Command::Train: return "train";
    case Command::Attack: return "attack";
    case Command::Ablate: return "ablate";
    case Command::Transfer: return "transfer";
    case Command::Report: return "report";
    case Command::CostModel: return "cost-model";
  }
  return "?";
}

Command parse_command(const std::string& s) {
  for (Command c : {Command::Train, Command::Attack, Command::Ablate, Command::Transfer, Command::Report,
                    Command::CostModel}) {
    if (to_string(c) == s) return c;
  }
  throw InputError("unknown command '" + s + "' (expected train|attack|ablate|transfer|report|cost-model)");
}

std::string to_string(Threat t) { return t == Threat::White ? "white" : "black"; }

Threat parse_threat(const std::string& s) {
  if (s == "white") return Threat::White;
  if (s == "black") return Threat::Black;
  throw InputError("unknown threat model '" + s + "' (expected white|black)");
}

void Manifest::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw InputError(key + ": " + why); };
  if (data.format != "idx" && data.format != "cifar10" && data.format != "cifar100-fine" &&
      data.format != "cifar100-coarse") {
    fail("data-io.format", "expected idx|cifar10|cifar100-fine|cifar100-coarse");
  }
  try {
    arch.validate();
  } catch (const InputError& e) {
    fail("nn-core", e.what());
  }
  if (training.batch_size == 0) fail("dfa-train.batch_size", "must be positive");
  if (!(training.lr >= 0.0)) fail("dfa-train.lr", "must be >= 0");
  if (!(training.momentum >= 0.0 && training.momentum < 1.0)) fail("dfa-train.momentum", "must lie in [0, 1)");
  if (white.epsilons.empty()) fail("attack-white.epsilons", "must not be empty");
  for (double e : white.epsilons) {
    if (!(e >= 0.0)) fail("attack-white.epsilons", "entries must be >= 0");
  }
  if (white.steps == 0) fail("attack-white.steps", "must be positive");
  if (!(white.alpha > 0.0)) fail("attack-white.alpha", "must be positive");
  if (!(white.bpda_beta > 0.0)) fail("attack-white.bpda_beta", "must be positive");
  if (white.grad_sources.empty()) fail("attack-white.grad_sources", "must not be empty");
  if (white.samples == 0) fail("attack-white.samples", "must be positive");
  if (black.samples == 0) fail("attack-black.samples", "must be positive");
  for (double s : black.sigma_sweep) {
    if (!(s > 0.0)) fail("attack-black.sigma_sweep", "entries must be positive");
  }
  try {
    BlackAttackSpec spec;
    spec.attack = black.attack;
    spec.epsilon = black.epsilon;
    spec.max_queries = black.max_queries;
    spec.nes = black.nes;
    spec.bandits = black.bandits;
    spec.parsimonious = black.parsimonious;
    spec.workers = black.workers;
    spec.validate();
  } catch (const InputError& e) {
    fail("attack-black", e.what());
  }
  if (harness.variants.empty()) fail("harness.variants", "must not be empty");
  if (!(harness.accuracy_band >= 0.0)) fail("harness.accuracy_band", "must be >= 0");
  if (harness.targets.empty()) fail("harness.targets", "must not be empty");
  if (harness.transfer_samples == 0) fail("harness.transfer_samples", "must be positive");
  if (!(harness.cost_n >= 1.0)) fail("harness.cost.n", "must be >= 1");
  if (!(harness.cost_m >= 1.0)) fail("harness.cost.m", "must be >= 1");
  if (!(harness.cost_error > 0.0 && harness.cost_error <= 1.0)) fail("harness.cost.error", "must lie in (0, 1]");
  if (command == Command::Report && report.inputs.empty()) fail("report.inputs", "must not be empty");
}

namespace {

/// Reads a YAML mapping and remembers which keys were used, so that
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (present(node_) && !node_.IsMap()) throw InputError(where() + "must be a mapping");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    used_.insert(key);
    const YAML::Node v = get(key);
    if (!present(v)) return;
    try {
      out = v.template as<T>();
    } catch (const YAML::Exception&) {
      throw InputError(full(key) + ": value has the wrong type");
    }
  }

  void read_path(const std::string& key, std::filesystem::path& out) {
    std::string s = out.string();
    read(key, s);
    out = s;
  }

  template <class T>
  void read_enum(const std::string& key, T& out, const std::function<T(const std::string&)>& parse) {
    used_.insert(key);
    if (!present(get(key))) return;
    std::string s;
    read(key, s);
    try {
      out = parse(s);
    } catch (const InputError& e) {
      throw InputError(full(key) + ": " + e.what());
    }
  }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(get(key), full(key));
  }

  void finish() const {
    if (!present(node_)) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!used_.count(key)) throw InputError("unknown key '" + full(key) + "'");
    }
  }

 private:
  static bool present(const YAML::Node& n) { return n.IsDefined() && !n.IsNull(); }
  // Const lookup: the mutable operator[] would insert the key.
  YAML::Node get(const std::string& key) const {
    const YAML::Node& n = node_;
    return present(n) ? n[key] : YAML::Node(YAML::NodeType::Undefined);
  }
  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "manifest " : path_ + " "; }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> used_;
};

std::vector<GradKind> parse_grad_list(const std::vector<std::string>& v) {
  std::vector<GradKind> out;
  for (const auto& s : v) out.push_back(parse_grad_kind(s));
  return out;
}

}  // namespace

Manifest parse_manifest(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw InputError(std::string("manifest is not valid YAML: ") + e.what());
  }
  Manifest m;
  if (!root || root.IsNull()) return m;
  Section top(root, "");
  top.read_enum<Command>("command", m.command, parse_command);
  top.read_path("output", m.output);

  {
    Section s = top.child("seeds");
    s.read("init", m.seeds.init);
    s.read("opu", m.seeds.opu);
    s.read("feedback", m.seeds.feedback);
    s.read("train", m.seeds.train);
    s.read("attack", m.seeds.attack);
    s.read("surrogate", m.seeds.surrogate);
    s.read("offset_b", m.seeds.offset_b);
    s.finish();
  }
  {
    Section s = top.child("data-io");
    s.read("format", m.data.format);
    s.read_path("train_images", m.data.train_images);
    s.read_path("train_labels", m.data.train_labels);
    s.read_path("test_images", m.data.test_images);
    s.read_path("test_labels", m.data.test_labels);
    s.read("train_limit", m.data.train_limit);
    s.read("test_limit", m.data.test_limit);
    s.read_enum<PixelRange>("model_range", m.data.model_range, parse_pixel_range);
    s.finish();
  }
  {
    Section s = top.child("nn-core");
    s.read("input_shape", m.arch.input_shape);
    s.read("num_classes", m.arch.num_classes);
    s.read("conv_channels", m.arch.conv_channels);
    s.read("kernel", m.arch.kernel);
    s.read("hidden", m.arch.hidden);
    s.read("projected", m.arch.projected);
    s.finish();
  }
  {
    Section s = top.child("opu-sim");
    s.read("scale", m.arch.opu_scale);
    s.read_enum<Quantization>("quantize", m.arch.quantize, parse_quantization);
    s.finish();
  }
  {
    Section s = top.child("dfa-train");
    s.read("epochs", m.training.epochs);
    s.read("lr", m.training.lr);
    s.read("batch_size", m.training.batch_size);
    s.read_enum<Optimizer>("optimizer", m.training.optimizer, parse_optimizer);
    s.read("momentum", m.training.momentum);
    s.read("beta1", m.training.beta1);
    s.read("beta2", m.training.beta2);
    s.read("adam_eps", m.training.adam_eps);
    s.finish();
  }
  {
    Section s = top.child("attack-white");
    s.read_enum<WhiteAttack>("attack", m.white.attack, parse_white_attack);
    std::vector<std::string> sources;
    for (GradKind k : m.white.grad_sources) sources.push_back(to_string(k));
    s.read("grad_sources", sources);
    try {
      m.white.grad_sources = parse_grad_list(sources);
    } catch (const InputError& e) {
      throw InputError(std::string("attack-white.grad_sources: ") + e.what());
    }
    s.read("epsilons", m.white.epsilons);
    s.read("alpha", m.white.alpha);
    s.read("steps", m.white.steps);
    s.read("bpda_beta", m.white.bpda_beta);
    s.read("samples", m.white.samples);
    s.finish();
  }
  {
    Section s = top.child("attack-black");
    s.read_enum<BlackAttack>("attack", m.black.attack, parse_black_attack);
    s.read("epsilon", m.black.epsilon);
    s.read("max_queries", m.black.max_queries);
    s.read("samples", m.black.samples);
    s.read("sigma_sweep", m.black.sigma_sweep);
    s.read("workers", m.black.workers);
    Section nes = s.child("nes");
    nes.read("sigma", m.black.nes.sigma);
    nes.read("n_samples", m.black.nes.n_samples);
    nes.read("antithetic", m.black.nes.antithetic);
    nes.read("batch", m.black.nes.batch);
    nes.read("step_size", m.black.nes.step_size);
    nes.finish();
    Section bandits = s.child("bandits");
    bandits.read("sigma", m.black.bandits.sigma);
    bandits.read("online_lr", m.black.bandits.online_lr);
    bandits.read("exploration", m.black.bandits.exploration);
    bandits.read("prior_size", m.black.bandits.prior_size);
    bandits.read("grad_iters", m.black.bandits.grad_iters);
    bandits.read("image_lr", m.black.bandits.image_lr);
    bandits.finish();
    Section pars = s.child("parsimonious");
    pars.read("local_search_iters", m.black.parsimonious.local_search_iters);
    pars.read("init_block_size", m.black.parsimonious.init_block_size);
    pars.read("batch", m.black.parsimonious.batch);
    pars.read("hierarchical", m.black.parsimonious.hierarchical);
    pars.finish();
    s.finish();
  }
  {
    Section s = top.child("harness");
    std::vector<std::string> variants;
    for (Variant v : m.harness.variants) variants.push_back(to_string(v));
    s.read("variants", variants);
    m.harness.variants.clear();
    for (const auto& v : variants) {
      try {
        m.harness.variants.push_back(parse_variant(v));
      } catch (const InputError& e) {
        throw InputError(std::string("harness.variants: ") + e.what());
      }
    }
    s.read_enum<Threat>("threat", m.harness.threat, parse_threat);
    s.read("accuracy_band", m.harness.accuracy_band);
    s.read("source", m.harness.source);
    s.read("targets", m.harness.targets);
    s.read("transfer_samples", m.harness.transfer_samples);
    s.read_path("checkpoints", m.harness.checkpoints);
    s.read("finetune_epochs", m.harness.finetune_epochs);
    s.read("resample_seed", m.harness.resample_seed);
    Section cost = s.child("cost");
    cost.read("n", m.harness.cost_n);
    cost.read("m", m.harness.cost_m);
    cost.read("error", m.harness.cost_error);
    cost.finish();
    s.finish();
  }
  {
    Section s = top.child("report");
    std::vector<std::string> inputs;
    s.read("inputs", inputs);
    for (const auto& i : inputs) m.report.inputs.emplace_back(i);
    s.read("title", m.report.title);
    s.finish();
  }
  top.finish();
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()));
}

namespace {

YAML::Emitter& num(YAML::Emitter& out, double v) { return out << format_number(v); }

template <class T>
void seq(YAML::Emitter& out, const std::vector<T>& v) {
  out << YAML::Flow << YAML::BeginSeq;
  for (const auto& x : v) {
    if constexpr (std::is_floating_point_v<T>) {
      num(out, x);
    } else {
      out << x;
    }
  }
  out << YAML::EndSeq;
}

}  // namespace

std::string dump_manifest(const Manifest& m) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "command" << YAML::Value << to_string(m.command);
  out << YAML::Key << "output" << YAML::Value << m.output.string();

  out << YAML::Key << "seeds" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "init" << YAML::Value << m.seeds.init;
  out << YAML::Key << "opu" << YAML::Value << m.seeds.opu;
  out << YAML::Key << "feedback" << YAML::Value << m.seeds.feedback;
  out << YAML::Key << "train" << YAML::Value << m.seeds.train;
  out << YAML::Key << "attack" << YAML::Value << m.seeds.attack;
  out << YAML::Key << "surrogate" << YAML::Value << m.seeds.surrogate;
  out << YAML::Key << "offset_b" << YAML::Value << m.seeds.offset_b;
  out << YAML::EndMap;

  out << YAML::Key << "data-io" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "format" << YAML::Value << m.data.format;
  out << YAML::Key << "train_images" << YAML::Value << m.data.train_images.string();
  out << YAML::Key << "train_labels" << YAML::Value << m.data.train_labels.string();
  out << YAML::Key << "test_images" << YAML::Value << m.data.test_images.string();
  out << YAML::Key << "test_labels" << YAML::Value << m.data.test_labels.string();
  out << YAML::Key << "train_limit" << YAML::Value << m.data.train_limit;
  out << YAML::Key << "test_limit" << YAML::Value << m.data.test_limit;
  out << YAML::Key << "model_range" << YAML::Value << to_string(m.data.model_range);
  out << YAML::EndMap;

  out << YAML::Key << "nn-core" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "input_shape" << YAML::Value;
  seq(out, m.arch.input_shape);
  out << YAML::Key << "num_classes" << YAML::Value << m.arch.num_classes;
  out << YAML::Key << "conv_channels" << YAML::Value;
  seq(out, m.arch.conv_channels);
  out << YAML::Key << "kernel" << YAML::Value << m.arch.kernel;
  out << YAML::Key << "hidden" << YAML::Value << m.arch.hidden;
  out << YAML::Key << "projected" << YAML::Value << m.arch.projected;
  out << YAML::EndMap;

  out << YAML::Key << "opu-sim" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "scale" << YAML::Value;
  num(out, m.arch.opu_scale);
  out << YAML::Key << "quantize" << YAML::Value << to_string(m.arch.quantize);
  out << YAML::EndMap;

  out << YAML::Key << "dfa-train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "epochs" << YAML::Value << m.training.epochs;
  out << YAML::Key << "lr" << YAML::Value;
  num(out, m.training.lr);
  out << YAML::Key << "batch_size" << YAML::Value << m.training.batch_size;
  out << YAML::Key << "optimizer" << YAML::Value << to_string(m.training.optimizer);
  out << YAML::Key << "momentum" << YAML::Value;
  num(out, m.training.momentum);
  out << YAML::Key << "beta1" << YAML::Value;
  num(out, m.training.beta1);
  out << YAML::Key << "beta2" << YAML::Value;
  num(out, m.training.beta2);
  out << YAML::Key << "adam_eps" << YAML::Value;
  num(out, m.training.adam_eps);
  out << YAML::EndMap;

  out << YAML::Key << "attack-white" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "attack" << YAML::Value << to_string(m.white.attack);
  std::vector<std::string> sources;
  for (GradKind k : m.white.grad_sources) sources.push_back(to_string(k));
  out << YAML::Key << "grad_sources" << YAML::Value;
  seq(out, sources);
  out << YAML::Key << "epsilons" << YAML::Value;
  seq(out, m.white.epsilons);
  out << YAML::Key << "alpha" << YAML::Value;
  num(out, m.white.alpha);
  out << YAML::Key << "steps" << YAML::Value << m.white.steps;
  out << YAML::Key << "bpda_beta" << YAML::Value;
  num(out, m.white.bpda_beta);
  out << YAML::Key << "samples" << YAML::Value << m.white.samples;
  out << YAML::EndMap;

  out << YAML::Key << "attack-black" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "attack" << YAML::Value << to_string(m.black.attack);
  out << YAML::Key << "epsilon" << YAML::Value;
  num(out, m.black.epsilon);
  out << YAML::Key << "max_queries" << YAML::Value << m.black.max_queries;
  out << YAML::Key << "samples" << YAML::Value << m.black.samples;
  out << YAML::Key << "sigma_sweep" << YAML::Value;
  seq(out, m.black.sigma_sweep);
  out << YAML::Key << "workers" << YAML::Value << m.black.workers;
  out << YAML::Key << "nes" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "sigma" << YAML::Value;
  num(out, m.black.nes.sigma);
  out << YAML::Key << "n_samples" << YAML::Value << m.black.nes.n_samples;
  out << YAML::Key << "antithetic" << YAML::Value << m.black.nes.antithetic;
  out << YAML::Key << "batch" << YAML::Value << m.black.nes.batch;
  out << YAML::Key << "step_size" << YAML::Value;
  num(out, m.black.nes.step_size);
  out << YAML::EndMap;
  out << YAML::Key << "bandits" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "sigma" << YAML::Value;
  num(out, m.black.bandits.sigma);
  out << YAML::Key << "online_lr" << YAML::Value;
  num(out, m.black.bandits.online_lr);
  out << YAML::Key << "exploration" << YAML::Value;
  num(out, m.black.bandits.exploration);
  out << YAML::Key << "prior_size" << YAML::Value << m.black.bandits.prior_size;
  out << YAML::Key << "grad_iters" << YAML::Value << m.black.bandits.grad_iters;
  out << YAML::Key << "image_lr" << YAML::Value;
  num(out, m.black.bandits.image_lr);
  out << YAML::EndMap;
  out << YAML::Key << "parsimonious" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "local_search_iters" << YAML::Value << m.black.parsimonious.local_search_iters;
  out << YAML::Key << "init_block_size" << YAML::Value << m.black.parsimonious.init_block_size;
  out << YAML::Key << "batch" << YAML::Value << m.black.parsimonious.batch;
  out << YAML::Key << "hierarchical" << YAML::Value << m.black.parsimonious.hierarchical;
  out << YAML::EndMap;
  out << YAML::EndMap;

  out << YAML::Key << "harness" << YAML::Value << YAML::BeginMap;
  std::vector<std::string> variants;
  for (Variant v : m.harness.variants) variants.push_back(to_string(v));
  out << YAML::Key << "variants" << YAML::Value;
  seq(out, variants);
  out << YAML::Key << "threat" << YAML::Value << to_string(m.harness.threat);
  out << YAML::Key << "accuracy_band" << YAML::Value;
  num(out, m.harness.accuracy_band);
  out << YAML::Key << "source" << YAML::Value << m.harness.source;
  out << YAML::Key << "targets" << YAML::Value;
  seq(out, m.harness.targets);
  out << YAML::Key << "transfer_samples" << YAML::Value << m.harness.transfer_samples;
  out << YAML::Key << "checkpoints" << YAML::Value << m.harness.checkpoints.string();
  out << YAML::Key << "finetune_epochs" << YAML::Value << m.harness.finetune_epochs;
  out << YAML::Key << "resample_seed" << YAML::Value << m.harness.resample_seed;
  out << YAML::Key << "cost" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "n" << YAML::Value;
  num(out, m.harness.cost_n);
  out << YAML::Key << "m" << YAML::Value;
  num(out, m.harness.cost_m);
  out << YAML::Key << "error" << YAML::Value;
  num(out, m.harness.cost_error);
  out << YAML::EndMap;
  out << YAML::EndMap;

  out << YAML::Key << "report" << YAML::Value << YAML::BeginMap;
  std::vector<std::string> inputs;
  for (const auto& p : m.report.inputs) inputs.push_back(p.string());
  out << YAML::Key << "inputs" << YAML::Value;
  seq(out, inputs);
  out << YAML::Key << "title" << YAML::Value << m.report.title;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace opushield
