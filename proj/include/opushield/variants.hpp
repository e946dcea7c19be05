#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "opushield/model.hpp"
#include "opushield/opu.hpp"

namespace opushield {

/// Ablation variants. DFA+OPU is DFA+BIN plus DFA+RP.
enum class Variant { Vanilla, Dfa, DfaBin, DfaRp, DfaOpu };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
const std::vector<Variant>& all_variants();

bool uses_binarization(Variant v);
bool uses_projection(Variant v);

/// Small conv stack -> standardize -> fc1 -> [slot] -> standardize -> fc3.
struct Architecture {
  Shape input_shape{1, 28, 28};
  std::size_t num_classes = 10;
  std::vector<std::size_t> conv_channels{8, 16};  // each conv is followed by relu + 2x2 pool
  std::size_t kernel = 3;
  std::size_t hidden = 256;     // fc1 width, input of the optical slot
  std::size_t projected = 2048; // optical output width (and the dense stand-in's width)
  double opu_scale = 0.0;       // 0 selects the default 1/sqrt(2N)
  Quantization quantize = Quantization::Off;

  void validate() const;
};

struct VariantSpec {
  Variant tag = Variant::Vanilla;
  Architecture arch;
  std::uint64_t init_seed = 0;  // weight initialisation
  std::uint64_t opu_seed = 0;   // hidden optical matrix
};

/// VANILLA replaces the optical slot by relu -> fc2 (hidden -> projected) -> relu
/// and is trained by plain BP. The other variants keep the slot with the
/// stages their tag names; DFA keeps a pass-through slot so that it trains
/// with the same hybrid rule.
Model build_model(const VariantSpec& spec);

}  // namespace opushield
