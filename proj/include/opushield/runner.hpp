#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "opushield/harness.hpp"
#include "opushield/manifest.hpp"
#include "opushield/model.hpp"
#include "opushield/report.hpp"

namespace opushield {

/// What a run produced, for callers that check results in-process.
struct RunOutput {
  std::filesystem::path directory;
  std::vector<std::filesystem::path> files;  // written, in order
  std::vector<RunRecord> records;
  std::map<std::string, double> natural_accuracy;  // per model name, full test set
  FeasibilityCounters counters;                    // every attack in the run
  std::size_t ledger_mismatches = 0;
  std::size_t common_set_size = 0;                 // transfer and ablation runs
  std::optional<RetrievalCost> cost;
  std::optional<ResampleReport> resample;
};

/// `output` from the manifest, else $OPUSHIELD_OUT, else ./out.
std::filesystem::path resolve_output(const Manifest& m);

/// Model names are variant tags, optionally suffixed "_B" for the second
/// seed set (init and train seeds shifted by seeds.offset_b).
struct ModelName {
  Variant variant = Variant::Vanilla;
  bool second_seed = false;
};
ModelName parse_model_name(const std::string& name);

/// Loads `name` from the checkpoint directory when its stored config matches
/// the manifest, otherwise trains it on `train_data()` and saves it.
Model obtain_model(const Manifest& m, const std::string& name,
                   const std::function<const Dataset&()>& train_data,
                   const std::filesystem::path& checkpoint_dir, std::ostream& log);

/// Validates and executes one manifest. Writes the resolved manifest and
/// every artifact under the output directory.
RunOutput run_manifest(const Manifest& m, std::ostream& log);

}  // namespace opushield
