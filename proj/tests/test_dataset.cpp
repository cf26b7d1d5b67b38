#include <doctest.h>

#include <algorithm>
#include <set>

#include "dlab/dataset.hpp"
#include "dlab/runstore.hpp"
#include "support.hpp"

using namespace dlab;
using dlab::test::TempDir;

namespace {

void expect_fixture(const test::FormatFixture& f, const std::function<Dataset()>& load) {
  INFO(f.name);
  if (f.valid) {
    CHECK_NOTHROW(load());
    return;
  }
  try {
    load();
    FAIL("malformed fixture loaded");
  } catch (const FormatError& e) {
    CHECK(e.offset() == f.offset);
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
}

}  // namespace

TEST_CASE("cifar-10 binary batches") {
  TempDir dir;
  SUBCASE("fixture corpus") {
    const auto corpus = test::cifar_fixtures(dir.path());
    CHECK(corpus.size() == 7);
    for (const auto& f : corpus) expect_fixture(f, [&] { return load_cifar10_batch(f.files[0]); });
  }
  SUBCASE("record decoding is channel-planar and row-major") {
    test::write_bytes(dir / "b.bin", test::cifar_records({3, 0, 9}));
    const auto ds = load_cifar10_batch(dir / "b.bin");
    REQUIRE(ds.size() == 3);
    CHECK(ds.labels == std::vector<std::int64_t>{3, 0, 9});
    CHECK(ds.num_classes() == 10);
    CHECK(ds.image_shape() == Shape{3, 32, 32});
    for (Index r = 0; r < 3; ++r) {
      for (Index c = 0; c < 3; ++c) {
        for (Index p : {0, 1, 31, 32, 500, 1023}) {
          const auto expect = static_cast<float>((r * 7 + c * 50 + p) % 256) / 255.0f;
          CHECK(ds.images[((r * 3 + c) * 1024) + p] == expect);
        }
      }
    }
  }
  SUBCASE("all-255 record") {
    std::vector<unsigned char> rec(3073, 255);
    rec[0] = 3;
    test::write_bytes(dir / "one.bin", rec);
    const auto ds = load_cifar10_batch(dir / "one.bin");
    CHECK(ds.labels == std::vector<std::int64_t>{3});
    CHECK((ds.images.flat().array() == 1.0f).all());
  }
  SUBCASE("directory layout and class names") {
    test::write_bytes(dir / "test_batch.bin", test::cifar_records({1, 2}));
    std::ofstream(dir / "batches.meta.txt") << "a\nb\nc\nd\ne\nf\ng\nh\ni\nj\n";
    const auto ds = load_cifar10_bin(dir.path());
    CHECK(ds.size() == 2);
    CHECK(ds.class_names.front() == "a");
    CHECK(ds.class_names.back() == "j");
    for (int i = 1; i <= 5; ++i) {
      test::write_bytes(dir / ("data_batch_" + std::to_string(i) + ".bin"), test::cifar_records({i, i}));
    }
    const auto train = load_cifar10_bin(dir.path(), CifarSplit::train);
    CHECK(train.size() == 10);
    CHECK(train.labels[9] == 5);
    fs::remove(dir / "data_batch_4.bin");
    CHECK_THROWS_AS(load_cifar10_bin(dir.path(), CifarSplit::train), Error);
  }
}

TEST_CASE("mnist idx files") {
  TempDir dir;
  SUBCASE("fixture corpus") {
    const auto corpus = test::mnist_fixtures(dir.path());
    CHECK(corpus.size() == 7);
    for (const auto& f : corpus) expect_fixture(f, [&] { return load_mnist_idx(f.files[0], f.files[1]); });
  }
  SUBCASE("exact pixel round-trip") {
    test::write_bytes(dir / "i", test::mnist_images(1, 28, 28));
    test::write_bytes(dir / "l", test::mnist_labels({6}));
    const auto ds = load_mnist_idx(dir / "i", dir / "l");
    CHECK(ds.image_shape() == Shape{1, 28, 28});
    CHECK(ds.labels == std::vector<std::int64_t>{6});
    for (Index p = 0; p < 784; ++p) CHECK(ds.images[p] * 255.0f == static_cast<float>((p * 13) % 256));
  }
  SUBCASE("swapped arguments hit the magic check") {
    test::write_bytes(dir / "i", test::mnist_images(2, 3, 3));
    test::write_bytes(dir / "l", test::mnist_labels({1, 2}));
    try {
      load_mnist_idx(dir / "l", dir / "i");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
  }
}

TEST_CASE("human labels") {
  Dataset ds;
  ds.images = TensorF({2, 1, 2, 2});
  ds.labels = {0, 1};
  ds.class_names = {"x", "y", "z"};
  SUBCASE("counts are normalized") {
    TensorD counts({2, 3}, (Vector<double>(6) << 9, 1, 0, 0, 2, 2).finished());
    const auto out = attach_human_labels(ds, counts);
    REQUIRE(out.human_probs);
    CHECK(out.human_probs->matrix()(0, 0) == 0.9);
    CHECK(out.human_probs->matrix()(0, 1) == 0.1);
    CHECK(out.human_probs->matrix()(1, 2) == 0.5);
  }
  SUBCASE("normalized rows are unchanged") {
    TensorD probs({2, 3}, (Vector<double>(6) << 0.2, 0.3, 0.5, 0.1, 0.1, 0.8).finished());
    const auto out = attach_human_labels(ds, probs);
    CHECK((out.human_probs->flat() - probs.flat()).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("zero row names its index") {
    TensorD counts({2, 3}, (Vector<double>(6) << 1, 0, 0, 0, 0, 0).finished());
    try {
      attach_human_labels(ds, counts);
      FAIL("expected ValueError");
    } catch (const ValueError& e) {
      CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
  }
  SUBCASE("shape mismatch") { CHECK_THROWS_AS(attach_human_labels(ds, TensorD({2, 2})), ShapeError); }
  SUBCASE("from an array container, any numeric dtype") {
    TempDir dir;
    Tensor<std::uint8_t> counts({2, 3});
    counts[0] = 3, counts[1] = 1, counts[5] = 7;
    save_array(counts, dir / "h.dlab");
    const auto out = attach_human_labels(ds, dir / "h.dlab");
    CHECK(out.human_probs->matrix()(0, 0) == 0.75);
    CHECK(out.human_probs->matrix()(1, 2) == 1.0);
  }
}

TEST_CASE("synthetic datasets") {
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.per_class = 30;
  SUBCASE("same seed, same bytes") {
    const auto a = make_synthetic(cfg), b = make_synthetic(cfg);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    CHECK(*a.human_probs == *b.human_probs);
    auto other = cfg;
    other.sample_stream = 1;
    CHECK_FALSE(make_synthetic(other).images == a.images);
  }
  SUBCASE("noiseless data is separable by template matching") {
    cfg.difficulty = 0;
    const auto ds = make_synthetic(cfg);
    const auto templates = synthetic_templates(cfg);
    const Index pix = shape_size(ds.image_shape());
    for (Index i = 0; i < ds.size(); ++i) {
      Index best = 0;
      double best_d = 1e300;
      for (Index k = 0; k < cfg.n_classes; ++k) {
        const double d = (ds.images.flat().segment(i * pix, pix) - templates.flat().segment(k * pix, pix)).squaredNorm();
        if (d < best_d) best_d = d, best = k;
      }
      CHECK(best == ds.labels[static_cast<std::size_t>(i)]);
    }
  }
  SUBCASE("valid dataset with human rows summing to one") {
    cfg.difficulty = 1.0;
    const auto ds = make_synthetic(cfg);
    CHECK_NOTHROW(ds.validate());
    CHECK(ds.size() == 120);
    CHECK(ds.labels[5] == 1);
    for (Index i = 0; i < ds.size(); ++i) CHECK(std::abs(ds.human_probs->matrix().row(i).sum() - 1) < 1e-12);
    CHECK((ds.images.flat().array() >= 0).all());
    CHECK((ds.images.flat().array() <= 1).all());
  }
  SUBCASE("fewer than two classes") {
    cfg.n_classes = 1;
    CHECK_THROWS_AS(make_synthetic(cfg), ValueError);
  }
}

TEST_CASE("split") {
  SynthConfig cfg;
  cfg.n_classes = 2;
  cfg.per_class = 5;
  const auto ds = make_synthetic(cfg);
  SUBCASE("whole set, permuted") {
    const auto parts = split(ds, {1.0}, 3);
    REQUIRE(parts.size() == 1);
    CHECK(parts[0].size() == 10);
    auto a = parts[0].labels, b = ds.labels;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK(parts[0].human_probs);
  }
  SUBCASE("halves are disjoint and seeded") {
    // Tag each sample by its first pixel so the halves can be compared.
    Dataset tagged = ds;
    for (Index i = 0; i < 10; ++i) tagged.images[i * shape_size(ds.image_shape())] = static_cast<float>(i) / 10;
    const auto parts = split(tagged, {0.5, 0.5}, 9);
    CHECK(parts[0].size() == 5);
    CHECK(parts[1].size() == 5);
    std::set<float> seen;
    for (const auto& p : parts) {
      for (Index i = 0; i < p.size(); ++i) seen.insert(p.images[i * shape_size(p.image_shape())]);
    }
    CHECK(seen.size() == 10);
    CHECK(split(tagged, {0.5, 0.5}, 9)[0].images == parts[0].images);
  }
  SUBCASE("bad fractions") {
    CHECK_THROWS_AS(split(ds, {0.7, 0.4}, 1), ValueError);
    CHECK_THROWS_AS(split(ds, {0.0}, 1), ValueError);
  }
}

TEST_CASE("subset and validation") {
  SynthConfig cfg;
  cfg.per_class = 3;
  const auto ds = make_synthetic(cfg);
  const auto sub = ds.subset({4, 0});
  CHECK(sub.labels == std::vector<std::int64_t>{0, 0});
  CHECK(sub.image(0) == ds.image(4));
  CHECK_THROWS_AS(ds.subset({12}), ValueError);
  Dataset bad = ds;
  bad.labels[2] = 7;
  CHECK_THROWS_AS(bad.validate(), ValueError);
}
