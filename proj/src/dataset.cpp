#include "euat/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "euat/rng.hpp"

namespace euat {

namespace {

std::vector<std::size_t> shuffled_ids(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  CounterRng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(ids[i - 1], ids[rng.next_below(i)]);
  }
  return ids;
}

void min_max_scale(Tensor& x) {
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double lo = x(0, c), hi = x(0, c);
    for (std::size_t r = 1; r < x.rows(); ++r) {
      lo = std::min(lo, x(r, c));
      hi = std::max(hi, x(r, c));
    }
    const double span = hi - lo;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      x(r, c) = span > 0.0 ? (x(r, c) - lo) / span : 0.5;
    }
  }
}

std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrorCode::io, "idx: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> ids) const {
  Dataset out;
  out.inputs = inputs.gather_rows(ids);
  out.labels.reserve(ids.size());
  for (std::size_t id : ids) out.labels.push_back(labels.at(id));
  out.class_count = class_count;
  out.provenance = provenance;
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(class_count, 0);
  for (std::size_t y : labels) ++counts.at(y);
  return counts;
}

SplitDataset split_dataset(const Dataset& data, double validation_fraction, double test_fraction,
                           std::uint64_t seed) {
  if (validation_fraction < 0.0 || test_fraction < 0.0 ||
      validation_fraction + test_fraction >= 1.0) {
    throw std::invalid_argument("split: fractions must be non-negative and sum below 1");
  }
  const auto ids = shuffled_ids(data.size(), seed);
  const auto n = static_cast<double>(data.size());
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * n));
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * n));
  const std::span<const std::size_t> all(ids);
  SplitDataset split{data.subset(all.subspan(n_val + n_test)), data.subset(all.first(n_val)),
                     data.subset(all.subspan(n_val, n_test))};
  return split;
}

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "two_moons") return DatasetKind::two_moons;
  if (name == "gaussian_blobs") return DatasetKind::gaussian_blobs;
  if (name == "rings") return DatasetKind::rings;
  throw std::invalid_argument("unknown dataset kind '" + name + "'");
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::two_moons: return "two_moons";
    case DatasetKind::gaussian_blobs: return "gaussian_blobs";
    case DatasetKind::rings: return "rings";
  }
  return "unknown";
}

std::vector<double> blob_center(std::size_t k, std::size_t classes, std::size_t dims) {
  std::vector<double> c(dims, 0.0);
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
  c[0] = std::cos(angle);
  if (dims > 1) c[1] = std::sin(angle);
  return c;
}

Dataset generate_dataset(const GeneratorSpec& spec) {
  const std::size_t classes = spec.kind == DatasetKind::two_moons ? 2 : spec.classes;
  if (classes < 2) throw std::invalid_argument("generator: need at least two classes");
  if (spec.n < classes) throw std::invalid_argument("generator: n must be at least the class count");
  if (spec.noise < 0.0) throw std::invalid_argument("generator: noise must be non-negative");
  const std::size_t dims = spec.kind == DatasetKind::gaussian_blobs ? std::max<std::size_t>(spec.dims, 2) : 2;

  CounterRng rng(derive_seed(spec.seed, to_string(spec.kind)));
  Dataset data;
  data.class_count = classes;
  data.inputs = Tensor::matrix(spec.n, dims);
  data.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t y = i % classes;
    data.labels[i] = y;
    auto x = data.inputs.row(i);
    switch (spec.kind) {
      case DatasetKind::gaussian_blobs: {
        const auto centre = blob_center(y, classes, dims);
        for (std::size_t d = 0; d < dims; ++d) x[d] = centre[d] + spec.noise * rng.next_normal();
        break;
      }
      case DatasetKind::two_moons: {
        const double t = std::numbers::pi * rng.next_uniform();
        if (y == 0) {
          x[0] = std::cos(t);
          x[1] = std::sin(t);
        } else {
          x[0] = 1.0 - std::cos(t);
          x[1] = 0.5 - std::sin(t);
        }
        x[0] += spec.noise * rng.next_normal();
        x[1] += spec.noise * rng.next_normal();
        break;
      }
      case DatasetKind::rings: {
        const double t = 2.0 * std::numbers::pi * rng.next_uniform();
        const double radius = static_cast<double>(y + 1) + spec.noise * rng.next_normal();
        x[0] = radius * std::cos(t);
        x[1] = radius * std::sin(t);
        break;
      }
    }
  }
  min_max_scale(data.inputs);
  data.provenance = "generator:" + to_string(spec.kind) + ";n=" + std::to_string(spec.n) +
                    ";classes=" + std::to_string(classes) + ";dims=" + std::to_string(dims) +
                    ";noise=" + std::to_string(spec.noise) + ";seed=" + std::to_string(spec.seed);
  return data;
}

Dataset parse_idx(std::span<const unsigned char> image_bytes,
                  std::span<const unsigned char> label_bytes) {
  if (image_bytes.size() < 16) throw DataError(DataErrorCode::truncated, "idx: image header truncated");
  if (label_bytes.size() < 8) throw DataError(DataErrorCode::truncated, "idx: label header truncated");
  if (read_be32(image_bytes, 0) != 0x00000803) {
    throw DataError(DataErrorCode::bad_magic, "idx: image file magic is not 0x00000803");
  }
  if (read_be32(label_bytes, 0) != 0x00000801) {
    throw DataError(DataErrorCode::bad_magic, "idx: label file magic is not 0x00000801");
  }
  const std::size_t count = read_be32(image_bytes, 4);
  const std::size_t rows = read_be32(image_bytes, 8);
  const std::size_t cols = read_be32(image_bytes, 12);
  const std::size_t label_count = read_be32(label_bytes, 4);
  if (count != label_count) {
    throw DataError(DataErrorCode::count_mismatch,
                    "idx: " + std::to_string(count) + " images but " + std::to_string(label_count) +
                        " labels");
  }
  if (count == 0) throw DataError(DataErrorCode::empty, "idx: no samples");
  const std::size_t pixels = rows * cols;
  if (image_bytes.size() < 16 + count * pixels) {
    throw DataError(DataErrorCode::truncated, "idx: image payload truncated");
  }
  if (label_bytes.size() < 8 + count) {
    throw DataError(DataErrorCode::truncated, "idx: label payload truncated");
  }
  Dataset data;
  data.inputs = Tensor::matrix(count, pixels);
  data.labels.resize(count);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      data.inputs(i, p) = static_cast<double>(image_bytes[16 + i * pixels + p]) / 255.0;
    }
    data.labels[i] = label_bytes[8 + i];
    max_label = std::max(max_label, data.labels[i]);
  }
  data.class_count = std::max<std::size_t>(max_label + 1, 2);
  data.provenance = "idx:digest=" + std::to_string(fnv1a64(image_bytes.data(), image_bytes.size(),
                                                            fnv1a64(label_bytes.data(),
                                                                    label_bytes.size(),
                                                                    0xcbf29ce484222325ULL)));
  return data;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  return parse_idx(images, labels);
}

IdxBytes encode_idx(const Dataset& data, std::size_t rows, std::size_t cols) {
  if (rows * cols != data.feature_count()) {
    throw std::invalid_argument("idx: " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " images do not hold " + std::to_string(data.feature_count()) +
                                " features");
  }
  auto put_be32 = [](std::vector<unsigned char>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<unsigned char>(v >> shift));
  };
  IdxBytes out;
  put_be32(out.images, 0x00000803);
  put_be32(out.images, static_cast<std::uint32_t>(data.size()));
  put_be32(out.images, static_cast<std::uint32_t>(rows));
  put_be32(out.images, static_cast<std::uint32_t>(cols));
  for (double v : data.inputs.data()) {
    out.images.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  put_be32(out.labels, 0x00000801);
  put_be32(out.labels, static_cast<std::uint32_t>(data.size()));
  for (std::size_t y : data.labels) {
    if (y > 255) throw std::invalid_argument("idx: labels must fit in one byte");
    out.labels.push_back(static_cast<unsigned char>(y));
  }
  return out;
}

void save_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
              const Dataset& data, std::size_t rows, std::size_t cols) {
  const IdxBytes bytes = encode_idx(data, rows, cols);
  auto write = [](const std::filesystem::path& path, const std::vector<unsigned char>& b) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(DataErrorCode::io, "idx: cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  };
  write(images_path, bytes.images);
  write(labels_path, bytes.labels);
}

Dataset make_binary_task(const Dataset& data, std::size_t positive_class) {
  if (std::find(data.labels.begin(), data.labels.end(), positive_class) == data.labels.end()) {
    throw std::invalid_argument("binary task: class " + std::to_string(positive_class) +
                                " does not occur in the dataset");
  }
  Dataset out = data;
  std::size_t positives = 0;
  for (auto& y : out.labels) {
    y = y == positive_class ? 1 : 0;
    positives += y;
  }
  out.class_count = 2;
  out.provenance += ";binary:positive=" + std::to_string(positive_class) +
                    ";balance=" + std::to_string(positives) + "/" + std::to_string(out.size());
  return out;
}

}  // namespace euat
