#include "opushield/variants.hpp"

#include <algorithm>

#include "opushield/errors.hpp"
#include "opushield/rng.hpp"

namespace opushield {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "VANILLA";
    case Variant::Dfa: return "DFA";
    case Variant::DfaBin: return "DFA+BIN";
    case Variant::DfaRp: return "DFA+RP";
    case Variant::DfaOpu: return "DFA+OPU";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : all_variants()) {
    if (to_string(v) == s) return v;
  }
  throw InputError("unknown variant '" + s + "' (expected VANILLA|DFA|DFA+BIN|DFA+RP|DFA+OPU)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> all{Variant::Vanilla, Variant::Dfa, Variant::DfaBin,
                                        Variant::DfaRp, Variant::DfaOpu};
  return all;
}

bool uses_binarization(Variant v) { return v == Variant::DfaBin || v == Variant::DfaOpu; }
bool uses_projection(Variant v) { return v == Variant::DfaRp || v == Variant::DfaOpu; }

void Architecture::validate() const {
  if (input_shape.size() != 3) throw InputError("architecture input must be [C,H,W]");
  if (num_classes < 2) throw InputError("architecture needs at least two classes");
  if (conv_channels.empty() || conv_channels.size() > 4) {
    throw InputError("architecture needs between 1 and 4 conv layers");
  }
  if (kernel == 0 || kernel % 2 == 0) throw InputError("conv kernel must be odd");
  if (hidden < 2 || projected < 2) throw InputError("hidden and projected widths must be >= 2");
  if (opu_scale < 0.0) throw InputError("opu scale must be nonnegative");
}

Model build_model(const VariantSpec& spec) {
  const Architecture& a = spec.arch;
  a.validate();
  Rng rng(derive_seed(spec.init_seed, "init"));
  std::vector<Layer> layers;
  std::size_t ch = a.input_shape[0], h = a.input_shape[1], w = a.input_shape[2];
  for (std::size_t i = 0; i < a.conv_channels.size(); ++i) {
    layers.push_back(Conv2d::make("conv" + std::to_string(i + 1), ch, a.conv_channels[i], a.kernel, 1,
                                  a.kernel / 2, rng));
    layers.push_back(Relu{});
    layers.push_back(MaxPool2d{2});
    ch = a.conv_channels[i];
    h /= 2;
    w /= 2;
    if (h == 0 || w == 0) throw InputError("too many pooling stages for the input size");
  }
  layers.push_back(Flatten{});
  layers.push_back(Standardize{});
  layers.push_back(Dense::make("fc1", ch * h * w, a.hidden, rng));

  std::size_t head_in = a.projected;
  if (spec.tag == Variant::Vanilla) {
    layers.push_back(Relu{});
    layers.push_back(Dense::make("fc2", a.hidden, a.projected, rng));
    layers.push_back(Relu{});
  } else {
    OpuConfig oc;
    oc.input_dim = a.hidden;
    oc.seed = spec.opu_seed;
    oc.entry_scale = a.opu_scale;
    oc.quantize = a.quantize;
    oc.binarization = uses_binarization(spec.tag) ? Binarization::Sign : Binarization::None;
    oc.projection = uses_projection(spec.tag) ? Projection::Random : Projection::None;
    oc.output_dim = uses_projection(spec.tag) ? a.projected : a.hidden;
    head_in = oc.output_dim;
    layers.push_back(OpuLayer(oc));
  }
  layers.push_back(Standardize{});
  layers.push_back(Dense::make("fc3", head_in, a.num_classes, rng));

  Model m(a.input_shape, a.num_classes, std::move(layers));
  m.set_training_method(spec.tag == Variant::Vanilla ? TrainingMethod::BP : TrainingMethod::HybridDFA);
  return m;
}

}  // namespace opushield
