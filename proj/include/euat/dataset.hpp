#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "euat/tensor.hpp"

namespace euat {

struct Dataset {
  Tensor inputs;  // [n x d], features in [0, 1]
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_count() const { return inputs.cols(); }
  Dataset subset(std::span<const std::size_t> ids) const;
  std::vector<std::size_t> class_counts() const;
};

struct SplitDataset {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Seeded shuffle, then validation and test take their fractions off the front.
SplitDataset split_dataset(const Dataset& data, double validation_fraction, double test_fraction,
                           std::uint64_t seed);

enum class DatasetKind { two_moons, gaussian_blobs, rings };

DatasetKind parse_dataset_kind(const std::string& name);
std::string to_string(DatasetKind kind);

struct GeneratorSpec {
  DatasetKind kind = DatasetKind::gaussian_blobs;
  std::size_t n = 3000;
  double noise = 0.62;  // 3 blobs: about 14% Bayes error
  std::size_t classes = 3;  // ignored by two_moons
  std::size_t dims = 2;     // blobs only; extra dimensions carry pure noise
  std::uint64_t seed = 0;
};

/// Deterministic synthetic classification data, min-max scaled to [0, 1].
///  gaussian_blobs: isotropic Gaussians (stddev = noise) centred on the unit circle.
///  two_moons: the interleaved half circles, jittered by noise.
///  rings: concentric circles of radius 1..classes, radial jitter noise.
Dataset generate_dataset(const GeneratorSpec& spec);

/// Centre of class k for gaussian_blobs, before scaling. With equal priors and a
/// shared isotropic covariance the nearest centre is the Bayes decision.
std::vector<double> blob_center(std::size_t k, std::size_t classes, std::size_t dims);

enum class DataErrorCode { io, bad_magic, truncated, count_mismatch, bad_label, empty };

class DataError : public std::runtime_error {
 public:
  DataError(DataErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  DataErrorCode code() const { return code_; }

 private:
  DataErrorCode code_;
};

/// MNIST-style IDX pair: images (magic 0x00000803) and labels (0x00000801),
/// big-endian dimensions. Pixels are scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
Dataset parse_idx(std::span<const unsigned char> image_bytes,
                  std::span<const unsigned char> label_bytes);

struct IdxBytes {
  std::vector<unsigned char> images;
  std::vector<unsigned char> labels;
};

/// Inverse of parse_idx for features that are multiples of 1/255. Each row is
/// written as a rows x cols image; rows * cols must equal the feature count.
IdxBytes encode_idx(const Dataset& data, std::size_t rows, std::size_t cols);
void save_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
              const Dataset& data, std::size_t rows, std::size_t cols);

/// One-vs-rest relabelling: positive_class -> 1, everything else -> 0.
Dataset make_binary_task(const Dataset& data, std::size_t positive_class);

}  // namespace euat
