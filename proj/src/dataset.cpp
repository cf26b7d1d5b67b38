#include "dlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dlab/prob.hpp"
#include "dlab/rng.hpp"
#include "dlab/runstore.hpp"

namespace dlab {

namespace fs = std::filesystem;

TensorF Dataset::image(Index i) const {
  const Shape shape = image_shape();
  const Index n = shape_size(shape);
  return TensorF(shape, images.flat().segment(i * n, n));
}

Dataset Dataset::subset(const std::vector<std::int64_t>& indices) const {
  Dataset out;
  const Shape shape = image_shape();
  const Index n = shape_size(shape);
  out.images = TensorF({static_cast<Index>(indices.size()), shape[0], shape[1], shape[2]});
  out.class_names = class_names;
  if (human_probs) out.human_probs = TensorD({static_cast<Index>(indices.size()), human_probs->dim(1)});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Index i = indices[r];
    if (i < 0 || i >= size()) throw ValueError("subset: index " + std::to_string(i) + " out of range");
    out.images.flat().segment(static_cast<Index>(r) * n, n) = images.flat().segment(i * n, n);
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    if (human_probs) out.human_probs->matrix().row(static_cast<Index>(r)) = human_probs->matrix().row(i);
  }
  return out;
}

void Dataset::validate() const {
  if (images.rank() != 4) throw ShapeError("Dataset: images must be [N, channels, H, W]");
  if (static_cast<Index>(labels.size()) != size()) throw ShapeError("Dataset: label count differs from image count");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes()) {
      throw ValueError("Dataset: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                       " outside [0, " + std::to_string(num_classes()) + ")");
    }
  }
  if (human_probs) {
    if (human_probs->shape() != Shape{size(), num_classes()}) throw ShapeError("Dataset: human_probs must be [N, C]");
    const auto m = human_probs->matrix();
    for (Index i = 0; i < m.rows(); ++i) {
      if (std::abs(m.row(i).sum() - 1.0) > 1e-6 || (m.row(i).array() < 0).any()) {
        throw ValueError("Dataset: human_probs row " + std::to_string(i) + " is not a distribution");
      }
    }
  }
}

std::vector<std::string> cifar10_class_names() {
  return {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};
}

namespace {

std::vector<unsigned char> read_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

Dataset concat(std::vector<Dataset> parts) {
  if (parts.size() == 1) return std::move(parts.front());
  Index total = 0;
  for (const auto& p : parts) total += p.size();
  Dataset out;
  const Shape shape = parts.front().image_shape();
  out.images = TensorF({total, shape[0], shape[1], shape[2]});
  out.class_names = parts.front().class_names;
  Index offset = 0;
  for (const auto& p : parts) {
    out.images.flat().segment(offset, p.images.size()) = p.images.flat();
    offset += p.images.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

}  // namespace

Dataset load_cifar10_batch(const fs::path& file) {
  const auto bytes = read_bytes(file);
  const std::uint64_t size = bytes.size();
  if (size == 0) throw FormatError(file.string() + ": empty CIFAR-10 batch", 0);
  if (size % kCifarRecordBytes != 0) {
    throw FormatError(file.string() + ": length " + std::to_string(size) + " is not a multiple of " +
                          std::to_string(kCifarRecordBytes) + " (truncated record)",
                      size - size % kCifarRecordBytes);
  }
  const Index n = static_cast<Index>(size / kCifarRecordBytes);
  Dataset ds;
  ds.images = TensorF({n, 3, 32, 32});
  ds.class_names = cifar10_class_names();
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * kCifarRecordBytes;
    const unsigned label = bytes[off];
    if (label > 9) {
      throw FormatError(file.string() + ": label byte " + std::to_string(label) + " > 9 in record " + std::to_string(r),
                        off);
    }
    ds.labels[static_cast<std::size_t>(r)] = label;
    for (Index p = 0; p < 3072; ++p) {
      ds.images[r * 3072 + p] = static_cast<float>(bytes[off + 1 + static_cast<std::size_t>(p)]) / 255.0f;
    }
  }
  return ds;
}

Dataset load_cifar10_bin(const fs::path& dir, CifarSplit split) {
  std::vector<fs::path> files;
  if (split == CifarSplit::test) {
    files.push_back(dir / "test_batch.bin");
  } else {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  }
  std::vector<Dataset> parts;
  for (const auto& f : files) {
    if (!fs::exists(f)) throw Error("CIFAR-10 batch missing: " + f.string());
    parts.push_back(load_cifar10_batch(f));
  }
  Dataset ds = concat(std::move(parts));
  if (const auto meta = dir / "batches.meta.txt"; fs::exists(meta)) {
    std::ifstream in(meta);
    std::vector<std::string> names;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) names.push_back(line);
    }
    if (names.size() == 10) ds.class_names = names;
  }
  return ds;
}

Dataset load_mnist_idx(const fs::path& images_path, const fs::path& labels_path) {
  const auto img = read_bytes(images_path);
  const auto lab = read_bytes(labels_path);
  // Magic numbers first, so swapped arguments are reported as such.
  if (img.size() < 4) throw FormatError(images_path.string() + ": truncated IDX image header", img.size());
  if (const auto magic = read_be32(img, 0); magic != 0x00000803) {
    throw FormatError(images_path.string() + ": bad IDX image magic " + std::to_string(magic) + " (expected 2051)", 0);
  }
  if (lab.size() < 4) throw FormatError(labels_path.string() + ": truncated IDX label header", lab.size());
  if (const auto magic = read_be32(lab, 0); magic != 0x00000801) {
    throw FormatError(labels_path.string() + ": bad IDX label magic " + std::to_string(magic) + " (expected 2049)", 0);
  }
  if (img.size() < 16) throw FormatError(images_path.string() + ": truncated IDX image header", img.size());
  if (lab.size() < 8) throw FormatError(labels_path.string() + ": truncated IDX label header", lab.size());
  const std::uint64_t n = read_be32(img, 4), rows = read_be32(img, 8), cols = read_be32(img, 12);
  const std::uint64_t n_labels = read_be32(lab, 4);
  if (n != n_labels) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) + " labels",
                      4);
  }
  const std::uint64_t expected_img = 16 + n * rows * cols;
  if (img.size() != expected_img) {
    throw FormatError(images_path.string() + ": expected " + std::to_string(expected_img) + " bytes, found " +
                          std::to_string(img.size()),
                      std::min<std::uint64_t>(img.size(), expected_img));
  }
  if (lab.size() != 8 + n) {
    throw FormatError(labels_path.string() + ": expected " + std::to_string(8 + n) + " bytes, found " +
                          std::to_string(lab.size()),
                      std::min<std::uint64_t>(lab.size(), 8 + n));
  }
  Dataset ds;
  ds.images = TensorF({static_cast<Index>(n), 1, static_cast<Index>(rows), static_cast<Index>(cols)});
  for (std::uint64_t i = 0; i < n * rows * cols; ++i) {
    ds.images[static_cast<Index>(i)] = static_cast<float>(img[16 + i]) / 255.0f;
  }
  for (std::uint64_t i = 0; i < n; ++i) {
    if (lab[8 + i] > 9) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(lab[8 + i]) + " > 9 at record " +
                            std::to_string(i),
                        8 + i);
    }
    ds.labels.push_back(lab[8 + i]);
  }
  for (int k = 0; k < 10; ++k) ds.class_names.push_back(std::to_string(k));
  return ds;
}

Dataset attach_human_labels(Dataset ds, const TensorD& counts) {
  if (counts.shape() != Shape{ds.size(), ds.num_classes()}) {
    throw ShapeError("attach_human_labels: array shape " + shape_string(counts.shape()) + " does not match [" +
                     std::to_string(ds.size()) + "," + std::to_string(ds.num_classes()) + "]");
  }
  TensorD probs = counts;
  auto m = probs.matrix();
  for (Index i = 0; i < m.rows(); ++i) {
    if ((m.row(i).array() < 0).any()) throw ValueError("attach_human_labels: negative entry in row " + std::to_string(i));
    const double total = m.row(i).sum();
    if (!(total > 0)) throw ValueError("attach_human_labels: row " + std::to_string(i) + " sums to zero");
    m.row(i) /= total;
  }
  ds.human_probs = std::move(probs);
  return ds;
}

Dataset attach_human_labels(Dataset ds, const fs::path& array_path) {
  return attach_human_labels(std::move(ds), to_double(load_array(array_path)));
}

TensorF synthetic_templates(const SynthConfig& cfg) {
  if (cfg.n_classes < 2) throw ValueError("make_synthetic: n_classes must be >= 2");
  if (cfg.img_side < 2 || cfg.channels < 1) throw ValueError("make_synthetic: bad image geometry");
  const Index s = cfg.img_side, c = cfg.channels;
  Rng rng(derive_seed(cfg.seed, "synthetic-templates"));
  TensorF templates({cfg.n_classes, c, s, s});
  Vector<double> field(s * s);
  for (Index k = 0; k < cfg.n_classes; ++k) {
    for (Index ch = 0; ch < c; ++ch) {
      field.setZero();
      // A few Gaussian blobs plus one oriented grating per channel.
      for (int blob = 0; blob < 3; ++blob) {
        const double cy = rng.uniform() * static_cast<double>(s);
        const double cx = rng.uniform() * static_cast<double>(s);
        const double sigma = static_cast<double>(s) * (0.12 + 0.2 * rng.uniform());
        const double amp = 2.0 * rng.uniform() - 1.0;
        for (Index y = 0; y < s; ++y) {
          for (Index x = 0; x < s; ++x) {
            const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            field[y * s + x] += amp * std::exp(-r2 / (2 * sigma * sigma));
          }
        }
      }
      const double theta = rng.uniform() * M_PI;
      const double freq = (1.0 + 2.0 * rng.uniform()) * 2.0 * M_PI / static_cast<double>(s);
      const double phase = rng.uniform() * 2.0 * M_PI;
      for (Index y = 0; y < s; ++y) {
        for (Index x = 0; x < s; ++x) {
          field[y * s + x] += 0.5 * std::sin(freq * (std::cos(theta) * x + std::sin(theta) * y) + phase);
        }
      }
      const double lo = field.minCoeff(), hi = field.maxCoeff();
      for (Index p = 0; p < s * s; ++p) {
        templates[((k * c) + ch) * s * s + p] = static_cast<float>((field[p] - lo) / (hi - lo));
      }
    }
  }
  return templates;
}

Dataset make_synthetic(const SynthConfig& cfg) {
  const TensorF templates = synthetic_templates(cfg);
  const Index k = cfg.n_classes, c = cfg.channels, s = cfg.img_side;
  const Index pix = c * s * s;
  const Index n = k * cfg.per_class;
  Rng rng(derive_seed(cfg.seed, "synthetic-samples", cfg.sample_stream));
  Dataset ds;
  ds.images = TensorF({n, c, s, s});
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index j = 0; j < k; ++j) ds.class_names.push_back("class" + std::to_string(j));
  TensorD human({n, k});
  const Index max_shift = cfg.difficulty > 0 ? 1 : 0;
  Vector<double> base(pix);
  for (Index i = 0; i < n; ++i) {
    const Index y = i % k;
    ds.labels[static_cast<std::size_t>(i)] = y;
    Index other = rng.uniform_int(0, k - 2);
    if (other >= y) ++other;
    const double blend = 0.45 * cfg.difficulty * rng.uniform();
    const Index dy = rng.uniform_int(-max_shift, max_shift);
    const Index dx = rng.uniform_int(-max_shift, max_shift);
    for (Index ch = 0; ch < c; ++ch) {
      for (Index yy = 0; yy < s; ++yy) {
        const Index sy = std::clamp<Index>(yy + dy, 0, s - 1);
        for (Index xx = 0; xx < s; ++xx) {
          const Index sx = std::clamp<Index>(xx + dx, 0, s - 1);
          const Index src = (ch * s + sy) * s + sx;
          base[(ch * s + yy) * s + xx] =
              (1 - blend) * templates[y * pix + src] + blend * templates[other * pix + src];
        }
      }
    }
    Vector<float> img(pix);
    for (Index p = 0; p < pix; ++p) {
      const double noise = cfg.difficulty > 0 ? 0.3 * cfg.difficulty * rng.normal() : 0.0;
      const double v = 0.5 + cfg.contrast * (base[p] - 0.5) + cfg.brightness + noise;
      img[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    ds.images.flat().segment(i * pix, pix) = img;
    Vector<double> score(k);
    for (Index j = 0; j < k; ++j) {
      score[j] = -cfg.human_sharpness *
                 (img.cast<double>() - templates.flat().segment(j * pix, pix).cast<double>()).squaredNorm() /
                 static_cast<double>(pix);
    }
    human.matrix().row(i) = softmax_t(score, 1.0).transpose();
  }
  ds.human_probs = std::move(human);
  return ds;
}

std::vector<Dataset> split(const Dataset& ds, const std::vector<double>& fractions, std::uint64_t seed) {
  double total = 0;
  for (double f : fractions) {
    if (!(f > 0)) throw ValueError("split: fractions must be positive");
    total += f;
  }
  if (total > 1 + 1e-12) throw ValueError("split: fractions sum to more than 1");
  Rng rng(derive_seed(seed, "split"));
  const auto perm = rng.permutation(ds.size());
  std::vector<Dataset> out;
  std::size_t offset = 0;
  for (double f : fractions) {
    const auto count = static_cast<std::size_t>(std::floor(f * static_cast<double>(ds.size()) + 1e-9));
    const std::size_t end = std::min(perm.size(), offset + count);
    out.push_back(ds.subset({perm.begin() + static_cast<std::ptrdiff_t>(offset),
                             perm.begin() + static_cast<std::ptrdiff_t>(end)}));
    offset = end;
  }
  return out;
}

std::pair<std::vector<float>, std::vector<float>> channel_stats(const Dataset& ds) {
  const Index c = ds.images.dim(1);
  const Index plane = ds.images.dim(2) * ds.images.dim(3);
  std::vector<float> mean(static_cast<std::size_t>(c)), stddev(static_cast<std::size_t>(c));
  for (Index ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    for (Index i = 0; i < ds.size(); ++i) {
      const auto seg = ds.images.flat().segment((i * c + ch) * plane, plane).cast<double>();
      sum += seg.sum();
      sq += seg.squaredNorm();
    }
    const double n = static_cast<double>(ds.size() * plane);
    const double m = n > 0 ? sum / n : 0.0;
    mean[static_cast<std::size_t>(ch)] = static_cast<float>(m);
    stddev[static_cast<std::size_t>(ch)] = static_cast<float>(std::sqrt(std::max(0.0, n > 0 ? sq / n - m * m : 0.0)));
  }
  return {mean, stddev};
}

}  // namespace dlab
