#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "opushield/data.hpp"
#include "opushield/dfa.hpp"
#include "opushield/harness.hpp"
#include "opushield/variants.hpp"

namespace opushield {

enum class Command { Train, Attack, Ablate, Transfer, Report, CostModel };

std::string to_string(Command c);
Command parse_command(const std::string& s);

enum class Threat { White, Black };

std::string to_string(Threat t);
Threat parse_threat(const std::string& s);

struct DataSection {
  std::string format = "idx";  // idx | cifar10 | cifar100-fine | cifar100-coarse
  std::filesystem::path train_images = "data/mnist/train-10k-images-idx3-ubyte.gz";
  std::filesystem::path train_labels = "data/mnist/train-10k-labels-idx1-ubyte.gz";  // idx only
  std::filesystem::path test_images = "data/mnist/test-2k-images-idx3-ubyte.gz";
  std::filesystem::path test_labels = "data/mnist/test-2k-labels-idx1-ubyte.gz";
  std::size_t train_limit = 0;  // 0 keeps everything
  std::size_t test_limit = 0;
  PixelRange model_range = PixelRange::Signed;  // range the models train on
};

struct WhiteSection {
  WhiteAttack attack = WhiteAttack::Pgd;
  std::vector<GradKind> grad_sources{GradKind::DfaBypass};  // models with a slot; BP otherwise
  std::vector<double> epsilons{0.0, 0.05, 0.1, 0.2, 0.3, 0.4};  // data-io.model_range units
  double alpha = 0.01;
  std::size_t steps = 50;
  double bpda_beta = 10.0;
  std::size_t samples = 500;
};

struct BlackSection {
  BlackAttack attack = BlackAttack::Parsimonious;
  double epsilon = 8.0 / 256.0;  // [0, 1] units
  std::size_t max_queries = 15000;
  std::size_t samples = 200;
  NesConfig nes;
  BanditsConfig bandits;
  ParsimoniousConfig parsimonious;
  std::vector<double> sigma_sweep;  // empty: no sweep
  std::size_t workers = 1;
};

struct HarnessSection {
  std::vector<Variant> variants{Variant::Vanilla, Variant::DfaOpu};
  Threat threat = Threat::White;
  double accuracy_band = 0.02;
  std::string source = "VANILLA";                 // transfer source, a BP model
  std::vector<std::string> targets{"VANILLA_B", "DFA"};  // "<VARIANT>" or "<VARIANT>_B" (second seed set)
  std::size_t transfer_samples = 500;
  std::filesystem::path checkpoints;  // empty: <output>/checkpoints
  std::size_t finetune_epochs = 0;    // train: resample + fine-tune when > 0
  std::uint64_t resample_seed = 1001;
  double cost_n = 1e4;
  double cost_m = 1e5;
  double cost_error = 0.32;
};

struct ReportSection {
  std::vector<std::filesystem::path> inputs;
  std::string title;
};

struct SeedSection {
  std::uint64_t init = 11;
  std::uint64_t opu = 12;
  std::uint64_t feedback = 14;
  std::uint64_t train = 13;
  std::uint64_t attack = 7;
  std::uint64_t surrogate = 99;
  std::uint64_t offset_b = 10;  // "_B" models add this to init and train
};

struct Manifest {
  Command command = Command::Train;
  std::filesystem::path output;  // empty: $OPUSHIELD_OUT or ./out
  SeedSection seeds;
  DataSection data;
  Architecture arch;  // nn-core and opu-sim sections
  TrainConfig training;  // seed comes from seeds.train
  WhiteSection white;
  BlackSection black;
  HarnessSection harness;
  ReportSection report;

  /// Range and consistency checks; throws InputError naming the key.
  void validate() const;
};

/// Parses YAML text. Unknown sections or keys, and values of the wrong type,
/// throw InputError naming the key path.
Manifest parse_manifest(const std::string& text);
Manifest load_manifest(const std::filesystem::path& path);

/// Every field, defaults included, as YAML that parse_manifest accepts.
std::string dump_manifest(const Manifest& m);

}  // namespace opushield
