#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "euat/dataset.hpp"
#include "euat/rng.hpp"

using namespace euat;

namespace {

// Two 2x2 images labelled 7 and 3.
const std::vector<unsigned char> kImages{0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                         0,    51,   102,  255,  255, 204, 153, 0};
const std::vector<unsigned char> kLabels{0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 7, 3};

double loo_1nn_error(const Dataset& d) {
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t label = 0;
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (i == j) continue;
      double dist = 0.0;
      for (std::size_t c = 0; c < d.feature_count(); ++c) {
        const double t = d.inputs(i, c) - d.inputs(j, c);
        dist += t * t;
      }
      if (dist < best) {
        best = dist;
        label = d.labels[j];
      }
    }
    wrong += label != d.labels[i];
  }
  return double(wrong) / double(d.size());
}

}  // namespace

TEST_CASE("IDX fixture parses to the hand-computed pixels") {
  const Dataset d = parse_idx(kImages, kLabels);
  REQUIRE(d.size() == 2);
  CHECK(d.feature_count() == 4);
  CHECK(d.labels == std::vector<std::size_t>{7, 3});
  CHECK(d.class_count == 8);
  const std::vector<double> want{0.0, 0.2, 0.4, 1.0, 1.0, 0.8, 0.6, 0.0};
  for (std::size_t k = 0; k < 8; ++k) CHECK(d.inputs[k] == want[k]);
}

TEST_CASE("IDX round trip through bytes and files is exact") {
  const Dataset d = parse_idx(kImages, kLabels);
  const IdxBytes bytes = encode_idx(d, 2, 2);
  CHECK(bytes.images == kImages);
  CHECK(bytes.labels == kLabels);

  const auto dir = std::filesystem::temp_directory_path();
  const auto img = dir / "euat_test_images.idx", lab = dir / "euat_test_labels.idx";
  save_idx(img, lab, d, 2, 2);
  const Dataset back = load_idx(img, lab);
  std::filesystem::remove(img);
  std::filesystem::remove(lab);
  CHECK(back.inputs == d.inputs);
  CHECK(back.labels == d.labels);
  CHECK(back.provenance == d.provenance);
  CHECK_THROWS_AS((void)encode_idx(d, 3, 2), std::invalid_argument);
}

TEST_CASE("IDX errors carry specific codes") {
  auto code_of = [](std::vector<unsigned char> img, std::vector<unsigned char> lab) {
    try {
      (void)parse_idx(img, lab);
    } catch (const DataError& e) {
      return e.code();
    }
    FAIL("expected a data error");
    return DataErrorCode::io;
  };
  auto lab = kLabels;
  lab[7] = 3;
  CHECK(code_of(kImages, lab) == DataErrorCode::count_mismatch);
  CHECK(code_of({kImages.begin(), kImages.begin() + 10}, kLabels) == DataErrorCode::truncated);
  CHECK(code_of({kImages.begin(), kImages.end() - 1}, kLabels) == DataErrorCode::truncated);
  auto img = kImages;
  img[3] = 0x01;
  CHECK(code_of(img, kLabels) == DataErrorCode::bad_magic);
  try {
    (void)load_idx("/nonexistent/images", "/nonexistent/labels");
    FAIL("expected an io error");
  } catch (const DataError& e) {
    CHECK(e.code() == DataErrorCode::io);
  }
}

TEST_CASE("generators") {
  for (auto kind : {DatasetKind::gaussian_blobs, DatasetKind::two_moons, DatasetKind::rings}) {
    CAPTURE(to_string(kind));
    GeneratorSpec spec;
    spec.kind = kind;
    spec.n = 500;
    spec.seed = 4;
    const Dataset a = generate_dataset(spec);
    const Dataset b = generate_dataset(spec);
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK(parse_dataset_kind(to_string(kind)) == kind);
    for (double v : a.inputs.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    spec.seed = 5;
    CHECK(generate_dataset(spec).inputs != a.inputs);
  }
  GeneratorSpec tiny;
  tiny.n = 2;
  tiny.classes = 3;
  CHECK_THROWS_AS((void)generate_dataset(tiny), std::invalid_argument);
  CHECK_THROWS_AS((void)parse_dataset_kind("spirals"), std::invalid_argument);
}

TEST_CASE("noise-free blobs are linearly separable") {
  GeneratorSpec spec;
  spec.noise = 0.0;
  spec.n = 300;
  const Dataset d = generate_dataset(spec);
  // Each class collapses to one point; the nearest of the three points is the label.
  std::vector<std::vector<double>> centre(3);
  for (std::size_t i = 0; i < 3; ++i) centre[d.labels[i]] = {d.inputs(i, 0), d.inputs(i, 1)};
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d.inputs(i, 0) == centre[d.labels[i]][0]);
    CHECK(d.inputs(i, 1) == centre[d.labels[i]][1]);
  }
}

TEST_CASE("overlapping blobs sit near the intended Bayes error") {
  GeneratorSpec spec;
  spec.n = 10000;
  spec.seed = 1;
  CHECK(spec.noise == 0.62);
  CHECK(spec.classes == 3);

  // Monte-Carlo Bayes error: nearest centre on draws from the generative density.
  CounterRng rng(2024);
  std::size_t wrong = 0;
  const std::size_t draws = 200000;
  for (std::size_t i = 0; i < draws; ++i) {
    const std::size_t y = i % 3;
    const auto c = blob_center(y, 3, 2);
    const double x0 = c[0] + spec.noise * rng.next_normal();
    const double x1 = c[1] + spec.noise * rng.next_normal();
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto ck = blob_center(k, 3, 2);
      const double dist = (x0 - ck[0]) * (x0 - ck[0]) + (x1 - ck[1]) * (x1 - ck[1]);
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    wrong += best != y;
  }
  const double bayes = double(wrong) / double(draws);
  CHECK(bayes > 0.12);
  CHECK(bayes < 0.16);

  const double nn = loo_1nn_error(generate_dataset(spec));
  CHECK(nn >= 0.12);
  CHECK(nn <= 0.22);
}

TEST_CASE("splits are disjoint and sized by the fractions") {
  GeneratorSpec spec;
  spec.n = 1003;
  Dataset d = generate_dataset(spec);
  // Tag every row with its index so the splits can be traced back.
  for (std::size_t i = 0; i < d.size(); ++i) d.inputs(i, 0) = double(i);
  const auto s = split_dataset(d, 0.1, 0.2, 8);
  CHECK(s.validation.size() == 100);
  CHECK(s.test.size() == 201);
  CHECK(s.train.size() == 702);
  std::set<double> seen;
  for (const Dataset* part : {&s.train, &s.validation, &s.test})
    for (std::size_t i = 0; i < part->size(); ++i) {
      seen.insert(part->inputs(i, 0));
      CHECK(part->labels[i] == d.labels[std::size_t(part->inputs(i, 0))]);
    }
  CHECK(seen.size() == d.size());
  CHECK_THROWS_AS((void)split_dataset(d, 0.6, 0.5, 1), std::invalid_argument);
}

TEST_CASE("one-vs-rest reduction") {
  Dataset d;
  d.class_count = 10;
  d.inputs = Tensor::matrix(100, 1);
  for (std::size_t i = 0; i < 100; ++i) d.labels.push_back(i % 10);
  const Dataset b = make_binary_task(d, 3);
  CHECK(b.class_count == 2);
  CHECK(b.class_counts() == std::vector<std::size_t>{90, 10});
  for (std::size_t i = 0; i < 100; ++i) CHECK(b.labels[i] == (d.labels[i] == 3 ? 1u : 0u));
  CHECK(b.provenance.find("balance=10/100") != std::string::npos);
  CHECK(make_binary_task(b, 1).labels == b.labels);
  CHECK_THROWS_AS((void)make_binary_task(d, 12), std::invalid_argument);
}
