#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dlab/metrics.hpp"
#include "dlab/prob.hpp"
#include "dlab/rng.hpp"

namespace dlab::test {

namespace fs = std::filesystem;

/// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "dlab") {
    std::random_device rd;
    for (;;) {
      path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
      if (fs::create_directory(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- format fixtures ---------------------------------------------------------

/// CIFAR-10 records: label byte, then R, G, B planes of 32x32. Pixel value
/// depends on (record, channel, position) so decoding order is checkable.
inline std::vector<unsigned char> cifar_records(const std::vector<int>& labels) {
  std::vector<unsigned char> out;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    out.push_back(static_cast<unsigned char>(labels[r]));
    for (int c = 0; c < 3; ++c) {
      for (int p = 0; p < 1024; ++p) out.push_back(static_cast<unsigned char>((r * 7 + c * 50 + p) % 256));
    }
  }
  return out;
}

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

inline std::vector<unsigned char> mnist_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                               std::uint32_t magic = 0x803) {
  std::vector<unsigned char> out;
  put_be32(out, magic);
  put_be32(out, n);
  put_be32(out, rows);
  put_be32(out, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) out.push_back(static_cast<unsigned char>((i * 13) % 256));
  return out;
}

inline std::vector<unsigned char> mnist_labels(const std::vector<int>& labels, std::uint32_t magic = 0x801) {
  std::vector<unsigned char> out;
  put_be32(out, magic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) out.push_back(static_cast<unsigned char>(l));
  return out;
}

/// One loader input and its expected outcome: success, or a FormatError at
/// `offset`.
struct FormatFixture {
  std::string name;
  std::vector<fs::path> files;
  bool valid = false;
  std::uint64_t offset = 0;
};

/// CIFAR-10 corpus: one valid batch and six malformed ones, written under `dir`.
inline std::vector<FormatFixture> cifar_fixtures(const fs::path& dir) {
  std::vector<FormatFixture> out;
  auto add = [&](const std::string& name, std::vector<unsigned char> bytes, bool valid, std::uint64_t offset) {
    const auto path = dir / (name + ".bin");
    write_bytes(path, bytes);
    out.push_back({name, {path}, valid, offset});
  };
  const auto three = cifar_records({3, 0, 9});
  add("valid", three, true, 0);
  add("empty", {}, false, 0);
  add("one_byte", {5}, false, 0);
  add("truncated_record", {three.begin(), three.end() - 100}, false, 2 * 3073);
  auto extra = three;
  extra.push_back(0);
  add("trailing_byte", extra, false, 3 * 3073);
  auto bad_first = three;
  bad_first[0] = 255;
  add("label_255_record_0", bad_first, false, 0);
  auto bad_second = three;
  bad_second[3073] = 10;
  add("label_10_record_1", bad_second, false, 3073);
  return out;
}

/// MNIST corpus: files[0] images, files[1] labels.
inline std::vector<FormatFixture> mnist_fixtures(const fs::path& dir) {
  std::vector<FormatFixture> out;
  auto add = [&](const std::string& name, const std::vector<unsigned char>& img, const std::vector<unsigned char>& lab,
                 bool valid, std::uint64_t offset) {
    const auto ip = dir / (name + "-images.idx3"), lp = dir / (name + "-labels.idx1");
    write_bytes(ip, img);
    write_bytes(lp, lab);
    out.push_back({name, {ip, lp}, valid, offset});
  };
  const auto img = mnist_images(3, 4, 5);
  const auto lab = mnist_labels({1, 7, 4});
  add("valid", img, lab, true, 0);
  add("image_magic", mnist_images(3, 4, 5, 0x801), lab, false, 0);
  add("label_magic", img, mnist_labels({1, 7, 4}, 0x803), false, 0);
  add("count_mismatch", img, mnist_labels({1, 7}), false, 4);
  add("truncated_pixels", {img.begin(), img.end() - 7}, lab, false, img.size() - 7);
  add("truncated_header", {img.begin(), img.begin() + 10}, lab, false, 10);
  add("label_out_of_range", img, mnist_labels({1, 12, 4}), false, 9);
  return out;
}

// --- random evaluation dumps ------------------------------------------------

struct DumpShape {
  Index n = 0, c = 0, d = 0;
};

/// Random dump where every class has at least two samples. Probability rows
/// range from flat to nearly one-hot; some embedding columns are constant.
inline EvalDump random_dump(Rng& rng, DumpShape s, bool human = true) {
  EvalDump dump;
  dump.probs = TensorD({s.n, s.c});
  dump.embeddings = TensorD({s.n, s.d});
  dump.true_labels.resize(static_cast<std::size_t>(s.n));
  for (Index i = 0; i < s.n; ++i) {
    dump.true_labels[static_cast<std::size_t>(i)] = i < 2 * s.c ? i % s.c : rng.uniform_int(0, s.c - 1);
  }
  const double scale = 0.1 + 8.0 * rng.uniform();
  for (Index i = 0; i < s.n; ++i) {
    Vector<double> z(s.c);
    for (Index k = 0; k < s.c; ++k) z[k] = scale * rng.normal();
    z[dump.true_labels[static_cast<std::size_t>(i)]] += scale * rng.uniform();
    dump.probs.matrix().row(i) = softmax_t(z, 1.0).transpose();
  }
  const Index constant_col = rng.bernoulli(0.5) ? rng.uniform_int(0, s.d - 1) : -1;
  for (Index i = 0; i < s.n; ++i) {
    for (Index j = 0; j < s.d; ++j) {
      const double offset = (dump.true_labels[static_cast<std::size_t>(i)] * 7 + j) % 5 - 2.0;
      dump.embeddings.matrix()(i, j) = j == constant_col ? 3.25 : offset + rng.normal();
    }
  }
  if (human) {
    TensorD h({s.n, s.c});
    for (Index i = 0; i < s.n; ++i) {
      Vector<double> z(s.c);
      for (Index k = 0; k < s.c; ++k) z[k] = 2.0 * rng.normal();
      z[dump.true_labels[static_cast<std::size_t>(i)]] += 4.0;
      h.matrix().row(i) = softmax_t(z, 1.0).transpose();
    }
    dump.human_probs = std::move(h);
  }
  return dump;
}

}  // namespace dlab::test
