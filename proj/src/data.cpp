#include "opushield/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "opushield/errors.hpp"
#include "opushield/rng.hpp"

namespace opushield {

std::string to_string(PixelRange r) { return r == PixelRange::Unit ? "[0,1]" : "[-1,1]"; }

PixelRange parse_pixel_range(const std::string& s) {
  if (s == "[0,1]" || s == "unit" || s == "0,1") return PixelRange::Unit;
  if (s == "[-1,1]" || s == "signed" || s == "-1,1") return PixelRange::Signed;
  throw InputError("unknown pixel range '" + s + "' (expected [0,1] or [-1,1])");
}

double range_lo(PixelRange r) { return r == PixelRange::Unit ? 0.0 : -1.0; }
double range_hi(PixelRange) { return 1.0; }

double convert_epsilon(double eps, PixelRange from, PixelRange to) {
  const double w_from = range_hi(from) - range_lo(from);
  const double w_to = range_hi(to) - range_lo(to);
  return eps * (w_to / w_from);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("no such file: " + path.string());
  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw InputError("cannot open " + path.string());
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> buf(1 << 16);
    int n;
    while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) {
      out.insert(out.end(), buf.begin(), buf.begin() + n);
    }
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw ParseError("gzip stream is corrupt in " + path.string(), out.size());
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw ParseError("idx header truncated", bytes.size());
  if (bytes[0] != 0 || bytes[1] != 0) throw ParseError("bad idx magic", 0);
  if (bytes[2] != 0x08) throw ParseError("unsupported idx element type (only unsigned byte)", 2);
  const std::size_t ndim = bytes[3];
  if (ndim == 0) throw ParseError("idx file declares zero dimensions", 3);
  IdxArray out;
  std::size_t off = 4;
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    if (off + 4 > bytes.size()) throw ParseError("idx dimension header truncated", bytes.size());
    const std::uint32_t v = (std::uint32_t{bytes[off]} << 24) | (std::uint32_t{bytes[off + 1]} << 16) |
                            (std::uint32_t{bytes[off + 2]} << 8) | std::uint32_t{bytes[off + 3]};
    out.dims.push_back(v);
    count *= v;
    off += 4;
  }
  if (bytes.size() < off + count) throw ParseError("idx payload truncated", bytes.size());
  if (bytes.size() > off + count) throw ParseError("trailing bytes after idx payload", off + count);
  out.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
  return out;
}

IdxArray read_idx(const std::filesystem::path& path) { return parse_idx(read_file_bytes(path)); }

namespace {

double byte_to_pixel(std::uint8_t v, PixelRange range) {
  const double unit = static_cast<double>(v) / 255.0;
  return range == PixelRange::Unit ? unit : 2.0 * unit - 1.0;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 PixelRange range, std::size_t num_classes) {
  const IdxArray img = read_idx(images);
  const IdxArray lab = read_idx(labels);
  if (img.dims.size() != 3) throw ParseError("image idx must be 3-dimensional", 3);
  if (lab.dims.size() != 1) throw ParseError("label idx must be 1-dimensional", 3);
  if (img.dims[0] != lab.dims[0]) throw InputError("image and label counts differ");
  const std::size_t n = img.dims[0], h = img.dims[1], w = img.dims[2];
  Dataset ds;
  ds.num_classes = num_classes;
  ds.range = range;
  ds.images = Tensor({n, 1, h, w});
  for (std::size_t i = 0; i < img.values.size(); ++i) ds.images[i] = byte_to_pixel(img.values[i], range);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab.values[i] >= num_classes) {
      throw ParseError("label " + std::to_string(lab.values[i]) + " out of range", 8 + i);
    }
    ds.labels[i] = lab.values[i];
  }
  audit(ds);
  return ds;
}

Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes, CifarLayout layout, PixelRange range) {
  const std::size_t label_bytes = layout == CifarLayout::Cifar10 ? 1 : 2;
  const std::size_t pixels = 3 * 32 * 32;
  const std::size_t record = label_bytes + pixels;
  if (bytes.size() % record != 0) {
    throw ParseError("file size is not a multiple of the " + std::to_string(record) + "-byte record",
                     bytes.size() - bytes.size() % record);
  }
  const std::size_t n = bytes.size() / record;
  Dataset ds;
  ds.num_classes = layout == CifarLayout::Cifar10 ? 10 : layout == CifarLayout::Cifar100Fine ? 100 : 20;
  ds.range = range;
  ds.images = Tensor({n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * record;
    const std::size_t label_at = layout == CifarLayout::Cifar100Fine ? base + 1 : base;
    const std::uint8_t label = bytes[label_at];
    if (label >= ds.num_classes) throw ParseError("label out of range", label_at);
    ds.labels[r] = label;
    auto dst = ds.images.sample(r);
    for (std::size_t p = 0; p < pixels; ++p) dst[p] = byte_to_pixel(bytes[base + label_bytes + p], range);
  }
  audit(ds);
  return ds;
}

Dataset load_cifar_binary(const std::filesystem::path& path, CifarLayout layout, PixelRange range) {
  return parse_cifar_binary(read_file_bytes(path), layout, range);
}

Dataset renormalize(const Dataset& ds, PixelRange target) {
  Dataset out = ds;
  if (ds.range == target) return out;
  for (double& v : out.images.data()) {
    v = target == PixelRange::Signed ? 2.0 * v - 1.0 : (v + 1.0) / 2.0;
  }
  out.range = target;
  return out;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.images = gather_samples(ds.images, indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(ds.labels.at(i));
  out.num_classes = ds.num_classes;
  out.range = ds.range;
  out.split_seed = ds.split_seed;
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, std::size_t n_a, std::size_t n_b, std::uint64_t seed) {
  if (n_a + n_b > ds.size()) throw InputError("split asks for more samples than the dataset holds");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_a));
  std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(n_a),
                             order.begin() + static_cast<std::ptrdiff_t>(n_a + n_b));
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  auto first = subset(ds, a);
  auto second = subset(ds, b);
  first.split_seed = second.split_seed = seed;
  return {std::move(first), std::move(second)};
}

void audit(const Dataset& ds) {
  const double lo = range_lo(ds.range), hi = range_hi(ds.range);
  for (double v : ds.images.data()) {
    if (!(v >= lo && v <= hi)) throw InputError("pixel value outside the tagged range " + to_string(ds.range));
  }
  if (ds.images.batch() != ds.labels.size()) throw InputError("image and label counts differ");
  for (int l : ds.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= ds.num_classes) throw InputError("label out of range");
  }
}

}  // namespace opushield
