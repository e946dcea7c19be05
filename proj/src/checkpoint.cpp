#include "opushield/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"
#include "opushield/data.hpp"
#include "opushield/errors.hpp"
#include "opushield/io.hpp"

namespace opushield {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'O', 'P', 'S', 'H', 'C', 'K', 'P', 'T'};
constexpr std::size_t kPrefix = 8 + 4 + 8;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void append_raw(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

void append_tensor(std::string& out, const Tensor& t) {
  append_raw(out, t.data().data(), t.size() * sizeof(double));
}

json layer_to_json(const Layer& layer) {
  return std::visit(
      Overloaded{
          [](const Conv2d& c) {
            return json{{"kind", "conv2d"}, {"name", c.name},       {"in_channels", c.in_channels},
                        {"out_channels", c.out_channels}, {"kernel", c.kernel},
                        {"stride", c.stride}, {"padding", c.padding}};
          },
          [](const MaxPool2d& p) { return json{{"kind", "maxpool2d"}, {"size", p.size}}; },
          [](const Relu&) { return json{{"kind", "relu"}}; },
          [](const Standardize& s) { return json{{"kind", "standardize"}, {"eps", s.eps}}; },
          [](const Flatten&) { return json{{"kind", "flatten"}}; },
          [](const Dense& d) {
            return json{{"kind", "dense"}, {"name", d.name}, {"in", d.in}, {"out", d.out}};
          },
          [](const OpuLayer& o) {
            const OpuConfig& c = o.config();
            return json{{"kind", "opu"},
                        {"input_dim", c.input_dim},
                        {"output_dim", c.output_dim},
                        {"seed", c.seed},
                        {"entry_scale", c.entry_scale},
                        {"binarization", to_string(c.binarization)},
                        {"projection", to_string(c.projection)},
                        {"quantize", to_string(c.quantize)}};
          },
      },
      layer);
}

class Payload {
 public:
  Payload(const std::string& bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  Tensor take(Shape shape) {
    Tensor t(std::move(shape));
    const std::size_t n = t.size() * sizeof(double);
    if (bytes_.size() - pos_ < n) throw ParseError("checkpoint payload truncated", bytes_.size());
    std::memcpy(t.data().data(), bytes_.data() + pos_, n);
    pos_ += n;
    return t;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_;
};

Layer layer_from_json(const json& j, Payload& payload) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv2d") {
    Conv2d c;
    c.name = j.at("name").get<std::string>();
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.out_channels = j.at("out_channels").get<std::size_t>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.stride = j.at("stride").get<std::size_t>();
    c.padding = j.at("padding").get<std::size_t>();
    c.weight = payload.take({c.out_channels, c.in_channels, c.kernel, c.kernel});
    c.bias = payload.take({c.out_channels});
    return c;
  }
  if (kind == "maxpool2d") return MaxPool2d{j.at("size").get<std::size_t>()};
  if (kind == "relu") return Relu{};
  if (kind == "standardize") return Standardize{j.at("eps").get<double>()};
  if (kind == "flatten") return Flatten{};
  if (kind == "dense") {
    Dense d;
    d.name = j.at("name").get<std::string>();
    d.in = j.at("in").get<std::size_t>();
    d.out = j.at("out").get<std::size_t>();
    d.weight = payload.take({d.out, d.in});
    d.bias = payload.take({d.out});
    return d;
  }
  if (kind == "opu") {
    OpuConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.output_dim = j.at("output_dim").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.entry_scale = j.at("entry_scale").get<double>();
    c.binarization = parse_binarization(j.at("binarization").get<std::string>());
    c.projection = parse_projection(j.at("projection").get<std::string>());
    c.quantize = parse_quantization(j.at("quantize").get<std::string>());
    return OpuLayer(c);
  }
  throw InputError("unknown layer kind '" + kind + "'");
}

}  // namespace

std::string encode_checkpoint(const Model& model, const CheckpointMeta& meta) {
  json header;
  header["input_shape"] = model.input_shape();
  header["num_classes"] = model.num_classes();
  header["training_method"] = to_string(model.training_method());
  header["meta"] = meta;
  json layers = json::array();
  std::string payload;
  for (const Layer& layer : model.layers()) {
    layers.push_back(layer_to_json(layer));
    if (const auto* d = std::get_if<Dense>(&layer)) {
      append_tensor(payload, d->weight);
      append_tensor(payload, d->bias);
    } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
      append_tensor(payload, c->weight);
      append_tensor(payload, c->bias);
    }
  }
  header["layers"] = std::move(layers);
  if (const auto& fb = model.feedback()) {
    json f{{"rows", fb->rows()}, {"cols", fb->cols()}, {"explicit", fb->explicit_values()}};
    if (fb->explicit_values()) {
      append_raw(payload, fb->values().data(), fb->values().size() * sizeof(double));
    } else {
      f["seed"] = fb->seed();
      f["scale"] = fb->scale();
    }
    header["feedback"] = std::move(f);
  } else {
    header["feedback"] = nullptr;
  }

  const std::string text = header.dump();
  std::string out;
  append_raw(out, kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  append_raw(out, &version, sizeof version);
  const std::uint64_t len = text.size();
  append_raw(out, &len, sizeof len);
  out += text;
  out += payload;
  return out;
}

Model decode_checkpoint(const std::string& bytes, CheckpointMeta* meta) {
  if (bytes.size() < kPrefix) throw ParseError("checkpoint shorter than its fixed prefix", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw ParseError("bad checkpoint magic", 0);
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 8, sizeof version);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 8);
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 12, sizeof len);
  if (len > bytes.size() - kPrefix) throw ParseError("checkpoint header truncated", bytes.size());

  json header;
  try {
    header = json::parse(bytes.begin() + kPrefix, bytes.begin() + static_cast<std::ptrdiff_t>(kPrefix + len));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint header is not valid JSON: ") + e.what(), kPrefix + e.byte);
  }

  try {
    Payload payload(bytes, kPrefix + len);
    std::vector<Layer> layers;
    for (const json& j : header.at("layers")) layers.push_back(layer_from_json(j, payload));
    Model model(header.at("input_shape").get<Shape>(), header.at("num_classes").get<std::size_t>(),
                std::move(layers));
    model.set_training_method(parse_training_method(header.at("training_method").get<std::string>()));
    const json& f = header.at("feedback");
    if (!f.is_null()) {
      const auto rows = f.at("rows").get<std::size_t>();
      const auto cols = f.at("cols").get<std::size_t>();
      if (f.at("explicit").get<bool>()) {
        Tensor v = payload.take({rows, cols});
        model.set_feedback(FeedbackMatrix(rows, cols, std::vector<double>(v.data().begin(), v.data().end())));
      } else {
        model.set_feedback(FeedbackMatrix(rows, cols, f.at("seed").get<std::uint64_t>(), f.at("scale").get<double>()));
      }
    }
    if (payload.pos() != bytes.size()) throw ParseError("trailing bytes after checkpoint payload", payload.pos());
    if (meta) *meta = header.at("meta").get<CheckpointMeta>();
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint header: ") + e.what(), kPrefix);
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, const CheckpointMeta& meta) {
  write_file_atomic(path, encode_checkpoint(model, meta));
}

Model load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  const auto raw = read_file_bytes(path);
  return decode_checkpoint(std::string(raw.begin(), raw.end()), meta);
}

}  // namespace opushield
