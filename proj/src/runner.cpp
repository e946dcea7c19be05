#include "opushield/runner.hpp"

#include <chrono>
#include <cstdlib>
#include <ostream>

#include "opushield/checkpoint.hpp"
#include "opushield/errors.hpp"
#include "opushield/io.hpp"

namespace opushield {

std::filesystem::path resolve_output(const Manifest& m) {
  if (!m.output.empty()) return m.output;
  if (const char* env = std::getenv("OPUSHIELD_OUT"); env && *env) return env;
  return "out";
}

ModelName parse_model_name(const std::string& name) {
  ModelName out;
  std::string base = name;
  if (base.size() > 2 && base.ends_with("_B")) {
    out.second_seed = true;
    base.resize(base.size() - 2);
  }
  out.variant = parse_variant(base);
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  return std::to_string(std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count());
}

/// Fields that determine a trained model; the cache key.
std::string model_config(const Manifest& m, const std::string& name) {
  Manifest k;
  k.data.format = m.data.format;
  k.data.train_images = m.data.train_images;
  k.data.train_labels = m.data.train_labels;
  k.data.train_limit = m.data.train_limit;
  k.data.model_range = m.data.model_range;
  k.arch = m.arch;
  k.training = m.training;
  k.seeds = m.seeds;
  k.seeds.attack = 0;
  k.seeds.surrogate = 0;
  return "model: " + name + "\n" + dump_manifest(k);
}

Dataset load_split(const Manifest& m, bool train) {
  const auto& images = train ? m.data.train_images : m.data.test_images;
  const auto& labels = train ? m.data.train_labels : m.data.test_labels;
  const std::size_t limit = train ? m.data.train_limit : m.data.test_limit;
  Dataset ds;
  if (m.data.format == "idx") {
    ds = load_idx(images, labels, m.data.model_range, m.arch.num_classes);
  } else {
    const CifarLayout layout = m.data.format == "cifar10"         ? CifarLayout::Cifar10
                               : m.data.format == "cifar100-fine" ? CifarLayout::Cifar100Fine
                                                                  : CifarLayout::Cifar100Coarse;
    ds = load_cifar_binary(images, layout, m.data.model_range);
  }
  if (limit > 0 && limit < ds.size()) {
    std::vector<std::size_t> idx(limit);
    for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
    ds = subset(ds, idx);
  }
  if (ds.images.sample_shape() != m.arch.input_shape) {
    throw InputError("data-io: sample shape " + shape_string(ds.images.sample_shape()) +
                     " does not match nn-core.input_shape " + shape_string(m.arch.input_shape));
  }
  return ds;
}

class Run {
 public:
  Run(const Manifest& m, std::ostream& log) : m_(m), log_(log) {
    out_.directory = resolve_output(m);
    checkpoints_ = m.harness.checkpoints.empty() ? out_.directory / "checkpoints" : m.harness.checkpoints;
  }

  RunOutput execute() {
    write("manifest.resolved.yaml", dump_manifest(resolved()));
    switch (m_.command) {
      case Command::Train: train(); break;
      case Command::Attack: attack(); break;
      case Command::Ablate: ablate(); break;
      case Command::Transfer: transfer(); break;
      case Command::Report: report(); break;
      case Command::CostModel: cost_model(); break;
    }
    return std::move(out_);
  }

 private:
  Manifest resolved() const {
    Manifest r = m_;
    r.output = out_.directory;
    r.harness.checkpoints = checkpoints_;
    return r;
  }

  void write(const std::string& name, const std::string& contents) {
    const auto path = out_.directory / name;
    write_file_atomic(path, contents);
    out_.files.push_back(path);
  }

  const Dataset& train_data() {
    if (!train_) train_ = load_split(m_, true);
    return *train_;
  }

  const Dataset& test_data() {
    if (!test_) test_ = load_split(m_, false);
    return *test_;
  }

  const Dataset& test_unit() {
    if (!test_unit_) test_unit_ = renormalize(test_data(), PixelRange::Unit);
    return *test_unit_;
  }

  const Model& model(const std::string& name) {
    auto it = models_.find(name);
    if (it == models_.end()) {
      Model loaded = obtain_model(m_, name, [this]() -> const Dataset& { return train_data(); }, checkpoints_, log_);
      it = models_.emplace(name, std::move(loaded)).first;
      out_.natural_accuracy[name] = accuracy(it->second, test_data());
      log_ << name << ": test accuracy " << out_.natural_accuracy[name] << "\n";
    }
    return it->second;
  }

  std::vector<std::string> variant_names() const {
    std::vector<std::string> out;
    for (Variant v : m_.harness.variants) out.push_back(to_string(v));
    return out;
  }

  std::vector<std::size_t> first_indices(std::size_t n) {
    const std::size_t k = std::min(n, test_data().size());
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    return idx;
  }

  WhiteAttackSpec white_spec() const {
    WhiteAttackSpec s;
    s.attack = m_.white.attack;
    s.alpha = m_.white.alpha;
    s.steps = m_.white.steps;
    s.range = m_.data.model_range;  // white-box epsilons are in model-range units
    return s;
  }

  BlackAttackSpec black_spec() const {
    BlackAttackSpec s;
    s.attack = m_.black.attack;
    s.epsilon = m_.black.epsilon;
    s.max_queries = m_.black.max_queries;
    s.range = PixelRange::Unit;
    s.nes = m_.black.nes;
    s.bandits = m_.black.bandits;
    s.parsimonious = m_.black.parsimonious;
    s.seed = m_.seeds.attack;
    s.workers = m_.black.workers;
    return s;
  }

  GradSource grad_source(GradKind k) const {
    GradSource g;
    g.kind = k;
    g.bpda_beta = m_.white.bpda_beta;
    g.surrogate_seed = m_.seeds.surrogate;
    return g;
  }

  std::vector<GradKind> sources_for(const Model& model) const {
    if (!model.slot_index()) return {GradKind::BP};
    return m_.white.grad_sources;
  }

  std::string white_name() const { return to_string(m_.white.attack); }

  void emit_table(const std::string& stem, const std::vector<RunRecord>& records, const std::string& title) {
    write(stem + ".csv", format_csv(records));
    write(stem + ".svg", render_svg(records, title));
    out_.records.insert(out_.records.end(), records.begin(), records.end());
  }

  RunRecord stamp(RunRecord r, const std::string& started) const {
    r.seeds = {{"init", m_.seeds.init},   {"opu", m_.seeds.opu},     {"feedback", m_.seeds.feedback},
               {"train", m_.seeds.train}, {"attack", m_.seeds.attack}, {"surrogate", m_.seeds.surrogate}};
    r.started = started;
    r.finished = timestamp();
    return r;
  }

  static std::string file_tag(std::string s) {
    for (char& c : s) {
      if (c == '+' || c == '/') c = '-';
    }
    return s;
  }

  // --- commands --------------------------------------------------------

  void train() {
    std::string table = "model,test_accuracy\n";
    for (const auto& name : variant_names()) {
      model(name);
      table += name + "," + format_number(out_.natural_accuracy[name]) + "\n";
    }
    write("natural_accuracy.csv", table);

    if (m_.harness.finetune_epochs > 0) {
      const std::string name = to_string(Variant::DfaOpu);
      Model copy = model(name);
      TrainConfig cfg = m_.training;
      cfg.epochs = m_.harness.finetune_epochs;
      cfg.seed = derive_seed(m_.seeds.train, "finetune");
      ResampleReport r = resample_and_finetune(copy, m_.harness.resample_seed, train_data(), test_data(), cfg);
      if (r.training.status == TrainStatus::Diverged) throw RunError("fine-tuning after resampling diverged");
      write("resample.csv", "model,new_seed,epochs,before,after_resample,after_finetune\n" + name + "," +
                                std::to_string(r.new_seed) + "," + std::to_string(cfg.epochs) + "," +
                                format_number(r.before) + "," + format_number(r.after_resample) + "," +
                                format_number(r.after_finetune) + "\n");
      log_ << "resample: " << r.before << " -> " << r.after_resample << " -> " << r.after_finetune << "\n";
      out_.resample = std::move(r);
    }
  }

  void attack() {
    if (m_.harness.threat == Threat::White) {
      std::vector<RunRecord> records;
      const auto idx = first_indices(m_.white.samples);
      for (const auto& name : variant_names()) {
        const Model& mdl = model(name);
        for (GradKind k : sources_for(mdl)) {
          const std::string started = timestamp();
          log_ << "white-box " << name << " via " << to_string(k) << "\n";
          WhiteBoxRun run = whitebox_curve(mdl, grad_source(k), test_data(), m_.white.epsilons, white_spec(), idx);
          out_.counters += run.counters;
          const std::string attack = white_name() + "/" + to_string(k);
          write("whitebox_samples_" + file_tag(name) + "_" + to_string(k) + ".csv", format_whitebox_samples(run));
          records.push_back(stamp(accuracy_record("fig3_whitebox", name, attack, run.curve), started));
        }
      }
      emit_table("fig3_whitebox", records, "Accuracy under white-box attack");
      return;
    }
    std::vector<RunRecord> records;
    for (const auto& name : variant_names()) {
      const Model& mdl = model(name);
      const std::string started = timestamp();
      const auto idx = correct_under_all({&mdl}, m_.data.model_range, test_unit(), m_.black.samples);
      if (idx.empty()) throw RunError(name + " classifies no test sample correctly");
      BlackBoxRun run;
      if (m_.black.attack == BlackAttack::Nes && !m_.black.sigma_sweep.empty()) {
        SigmaSweep sweep = nes_sigma_sweep(mdl, m_.data.model_range, test_unit(), idx, black_spec(), m_.black.sigma_sweep);
        std::string table = "model,sigma,final_csr\n";
        for (std::size_t s = 0; s < sweep.sigmas.size(); ++s) {
          table += name + "," + format_number(sweep.sigmas[s]) + "," +
                   format_number(sweep.runs[s].csr().final_rate()) + "\n";
          out_.counters += sweep.runs[s].counters;
          out_.ledger_mismatches += sweep.runs[s].ledger_mismatches;
        }
        write("nes_sigma_sweep_" + file_tag(name) + ".csv", table);
        run = std::move(sweep.runs[sweep.best]);
      } else {
        log_ << "black-box " << to_string(m_.black.attack) << " on " << name << " (" << idx.size() << " samples)\n";
        run = run_blackbox(mdl, m_.data.model_range, test_unit(), idx, black_spec());
        out_.counters += run.counters;
        out_.ledger_mismatches += run.ledger_mismatches;
      }
      write("blackbox_samples_" + file_tag(name) + ".csv", format_blackbox_samples(run));
      records.push_back(stamp(csr_record("fig4_csr", name, to_string(m_.black.attack), run.csr()), started));
    }
    emit_table("fig4_csr", records, "Cumulative success rate");
  }

  std::vector<AblationMember> members() {
    std::vector<AblationMember> out;
    for (const auto& name : variant_names()) {
      const Model& mdl = model(name);
      out.push_back({name, &mdl, out_.natural_accuracy[name], grad_source(sources_for(mdl).front())});
    }
    return out;
  }

  void ablate() {
    const auto mem = members();
    const std::string started = timestamp();
    std::vector<RunRecord> records;
    if (m_.harness.threat == Threat::White) {
      WhiteAblation ab = run_whitebox_ablation(mem, m_.harness.accuracy_band, test_data(), m_.white.samples,
                                               m_.white.epsilons, white_spec());
      out_.common_set_size = ab.indices.size();
      for (std::size_t i = 0; i < ab.names.size(); ++i) {
        out_.counters += ab.runs[i].counters;
        const std::string attack = white_name() + "/" + to_string(mem[i].white_source.kind);
        write("ablation_samples_" + file_tag(ab.names[i]) + ".csv", format_whitebox_samples(ab.runs[i]));
        records.push_back(stamp(accuracy_record("fig6_fig7_ablation", ab.names[i], attack, ab.runs[i].curve), started));
      }
    } else {
      BlackAblation ab = run_blackbox_ablation(mem, m_.harness.accuracy_band, m_.data.model_range, test_unit(),
                                               m_.black.samples, black_spec());
      out_.common_set_size = ab.indices.size();
      for (std::size_t i = 0; i < ab.names.size(); ++i) {
        out_.counters += ab.runs[i].counters;
        out_.ledger_mismatches += ab.runs[i].ledger_mismatches;
        write("ablation_samples_" + file_tag(ab.names[i]) + ".csv", format_blackbox_samples(ab.runs[i]));
        records.push_back(
            stamp(csr_record("fig6_fig7_ablation", ab.names[i], to_string(m_.black.attack), ab.runs[i].csr()), started));
      }
    }
    emit_table("fig6_fig7_ablation", records, "Ablation");
  }

  void transfer() {
    const Model& source = model(m_.harness.source);
    if (source.slot_index()) throw InputError("harness.source: the transfer source must be a BP model");
    std::vector<NamedModel> targets;
    std::vector<const Model*> all{&source};
    for (const auto& t : m_.harness.targets) {
      targets.push_back({t, &model(t)});
      all.push_back(targets.back().model);
    }
    const std::string started = timestamp();
    const TransferSet set = build_common_correct_set(all, test_data(), m_.harness.transfer_samples);
    out_.common_set_size = set.size();
    log_ << "transfer set: " << set.size() << " samples\n";
    std::string idx = "index\n";
    for (std::size_t i : set.indices) idx += std::to_string(i) + "\n";
    write("transfer_set.csv", idx);

    TransferTable table = transfer_eval(source, targets, set, m_.white.epsilons, white_spec());
    out_.counters += table.counters;
    std::vector<RunRecord> records;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      AccuracyCurve c{table.epsilons, table.accuracy[t], table.samples};
      records.push_back(stamp(
          accuracy_record("fig5_transfer", table.targets[t], white_name() + "-transfer/" + m_.harness.source, c),
          started));
    }
    emit_table("fig5_transfer", records, "Accuracy under transfer attack");
  }

  void report() {
    for (const auto& input : m_.report.inputs) {
      const auto bytes = read_file_bytes(input);
      const auto records = parse_csv(std::string(bytes.begin(), bytes.end()));
      const std::string title = m_.report.title.empty() ? input.stem().string() : m_.report.title;
      write(input.stem().string() + ".svg", render_svg(records, title));
      out_.records.insert(out_.records.end(), records.begin(), records.end());
    }
  }

  void cost_model() {
    const RetrievalCost c = retrieval_cost_estimate(m_.harness.cost_n, m_.harness.cost_m, m_.harness.cost_error);
    write("cost_model.csv", "n,m,rel_error,minutes,bytes\n" + format_number(m_.harness.cost_n) + "," +
                                format_number(m_.harness.cost_m) + "," + format_number(m_.harness.cost_error) +
                                "," + format_number(c.minutes) + "," + format_number(c.bytes) + "\n");
    log_ << format_number(c.minutes) << " minutes, " << format_number(c.bytes / 1e12) << " TB\n";
    out_.cost = c;
  }

  const Manifest& m_;
  std::ostream& log_;
  RunOutput out_;
  std::filesystem::path checkpoints_;
  std::optional<Dataset> train_, test_, test_unit_;
  std::map<std::string, Model> models_;
};

}  // namespace

Model obtain_model(const Manifest& m, const std::string& name,
                   const std::function<const Dataset&()>& train_data,
                   const std::filesystem::path& checkpoint_dir, std::ostream& log) {
  const ModelName parsed = parse_model_name(name);
  const std::string config = model_config(m, name);
  const auto path = checkpoint_dir / (name + ".ckpt");
  if (std::filesystem::exists(path)) {
    CheckpointMeta meta;
    Model cached = load_checkpoint(path, &meta);
    if (meta["config"] == config) {
      log << name << ": loaded " << path.string() << "\n";
      return cached;
    }
    log << name << ": checkpoint config differs, retraining\n";
  }

  const std::uint64_t shift = parsed.second_seed ? m.seeds.offset_b : 0;
  VariantSpec spec;
  spec.tag = parsed.variant;
  spec.arch = m.arch;
  spec.init_seed = m.seeds.init + shift;
  spec.opu_seed = m.seeds.opu;
  Model model = build_model(spec);
  TrainConfig cfg = m.training;
  cfg.seed = m.seeds.train + shift;

  const Dataset& data = train_data();
  log << name << ": training " << cfg.epochs << " epochs on " << data.size() << " samples\n";
  const auto t0 = Clock::now();
  TrainResult result;
  if (model.slot_index()) {
    model.set_feedback(FeedbackMatrix(m.arch.hidden, m.arch.num_classes, m.seeds.feedback));
    result = train_hybrid(model, data, cfg);
  } else {
    result = train_bp(model, data, cfg);
  }
  if (result.status == TrainStatus::Diverged) throw RunError(name + ": training diverged");
  const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  log << name << ": trained in " << seconds << " s\n";
  save_checkpoint(model, path, {{"config", config}, {"train_seconds", format_number(seconds)}});
  return model;
}

RunOutput run_manifest(const Manifest& m, std::ostream& log) {
  m.validate();
  return Run(m, log).execute();
}

}  // namespace opushield
