#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "opushield/tensor.hpp"

namespace opushield {

/// Value interval images are mapped into.
enum class PixelRange { Unit, Signed };  // [0, 1] and [-1, 1]

std::string to_string(PixelRange r);
PixelRange parse_pixel_range(const std::string& s);
double range_lo(PixelRange r);
double range_hi(PixelRange r);

/// Converts an l-inf radius expressed in `from` units to `to` units.
double convert_epsilon(double eps, PixelRange from, PixelRange to);

struct Dataset {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
  std::size_t num_classes = 10;
  PixelRange range = PixelRange::Unit;
  std::uint64_t split_seed = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

/// Decoded IDX container: big-endian dims followed by unsigned bytes.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> values;
};

/// Reads an IDX file (optionally gzip-compressed). Only the unsigned-byte
/// element type is accepted. Throws ParseError with the failing byte offset.
IdxArray read_idx(const std::filesystem::path& path);
IdxArray parse_idx(std::span<const std::uint8_t> bytes);

/// MNIST-family image/label pair.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 PixelRange range, std::size_t num_classes = 10);

enum class CifarLayout { Cifar10, Cifar100Fine, Cifar100Coarse };

/// CIFAR binary batches: a label byte (two for CIFAR-100) then 3072 pixel bytes.
Dataset load_cifar_binary(const std::filesystem::path& path, CifarLayout layout, PixelRange range);
Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes, CifarLayout layout, PixelRange range);

/// Affine remap to another pixel range.
Dataset renormalize(const Dataset& ds, PixelRange target);

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

/// Seeded shuffle, then the first n_a samples and the next n_b samples (disjoint).
std::pair<Dataset, Dataset> split(const Dataset& ds, std::size_t n_a, std::size_t n_b, std::uint64_t seed);

/// Throws InputError if any pixel lies outside the tagged range or a label is out of bounds.
void audit(const Dataset& ds);

/// Raw bytes of a file, transparently gunzipped when it ends in ".gz".
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace opushield
