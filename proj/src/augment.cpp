#include "dlab/augment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>

namespace dlab {

ProbVector<double> one_hot(Index cls, Index num_classes) {
  if (cls < 0 || cls >= num_classes) {
    throw ValueError("class id " + std::to_string(cls) + " outside [0, " + std::to_string(num_classes) + ")");
  }
  ProbVector<double> v = ProbVector<double>::Zero(num_classes);
  v[cls] = 1.0;
  return v;
}

std::string to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::none: return "none";
    case AugmentKind::standard: return "standard";
    case AugmentKind::cutout: return "cutout";
    case AugmentKind::mixup: return "mixup";
    case AugmentKind::cutmix: return "cutmix";
  }
  return "unknown";
}

AugmentKind augment_kind_from_string(const std::string& name) {
  for (auto k : {AugmentKind::none, AugmentKind::standard, AugmentKind::cutout, AugmentKind::mixup,
                 AugmentKind::cutmix}) {
    if (to_string(k) == name) return k;
  }
  throw ValueError("unknown augmentation strategy '" + name + "'");
}

AugmentStrategy AugmentStrategy::from_kind(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::none: return none();
    case AugmentKind::standard: return standard();
    case AugmentKind::cutout: return cutout();
    case AugmentKind::mixup: return mixup();
    case AugmentKind::cutmix: return cutmix();
  }
  throw ValueError("unknown augmentation kind");
}

void AugmentStrategy::validate() const {
  if (const auto* p = std::get_if<StandardParams>(&params_)) {
    if (p->pad < 0) throw ValueError("standard: pad must be >= 0");
  } else if (const auto* p = std::get_if<CutoutParams>(&params_)) {
    if (p->n_holes < 1 || p->hole_size < 1) throw ValueError("cutout: n_holes and hole_size must be >= 1");
  } else if (const auto* p = std::get_if<MixupParams>(&params_)) {
    if (!(p->alpha > 0)) throw ValueError("mixup: alpha must be positive");
  } else if (const auto* p = std::get_if<CutmixParams>(&params_)) {
    if (!(p->beta_a > 0) || !(p->beta_b > 0)) throw ValueError("cutmix: beta parameters must be positive");
  }
}

namespace {

void require_compatible(const LabeledImage& a, const LabeledImage& b, const char* op) {
  if (a.pixels.shape() != b.pixels.shape()) {
    throw ShapeError(std::string(op) + ": image shapes differ, " + shape_string(a.pixels.shape()) + " vs " +
                     shape_string(b.pixels.shape()));
  }
  if (a.label.size() != b.label.size()) throw ShapeError(std::string(op) + ": class counts differ");
}

// Reflection without edge repetition, valid for any offset.
Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

StandardDraw draw_standard(Index pad, Rng& rng) {
  StandardDraw d;
  d.dy = rng.uniform_int(0, 2 * pad);
  d.dx = rng.uniform_int(0, 2 * pad);
  d.flip = rng.bernoulli(0.5);
  return d;
}

LabeledImage apply_standard(const LabeledImage& img, Index pad, const StandardDraw& draw) {
  if (pad < 0) throw ValueError("standard_transform: pad must be >= 0");
  const Index c = img.channels(), h = img.height(), w = img.width();
  LabeledImage out{TensorF(img.pixels.shape()), img.label};
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < h; ++y) {
      const Index sy = reflect(y + draw.dy - pad, h);
      for (Index x = 0; x < w; ++x) {
        const Index cx = draw.flip ? w - 1 - x : x;
        const Index sx = reflect(cx + draw.dx - pad, w);
        out.pixels[(ch * h + y) * w + x] = img.pixels[(ch * h + sy) * w + sx];
      }
    }
  }
  return out;
}

LabeledImage standard_transform(const LabeledImage& img, Index pad, Rng& rng) {
  return apply_standard(img, pad, draw_standard(pad, rng));
}

LabeledImage cutout(const LabeledImage& img, const CutoutParams& params, Rng& rng, const std::vector<float>& fill) {
  if (params.n_holes < 1 || params.hole_size < 1) throw ValueError("cutout: n_holes and hole_size must be >= 1");
  const Index c = img.channels(), h = img.height(), w = img.width();
  if (!fill.empty() && static_cast<Index>(fill.size()) != c) {
    throw ShapeError("cutout: fill needs one value per channel");
  }
  auto fill_value = [&](Index ch) { return fill.empty() ? 0.0f : fill[static_cast<std::size_t>(ch)]; };
  LabeledImage out = img;
  if (params.hole_size > std::max(h, w)) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      std::cerr << "warning: cutout hole_size " << params.hole_size << " exceeds image side; filling whole image\n";
    }
    for (Index ch = 0; ch < c; ++ch) out.pixels.flat().segment(ch * h * w, h * w).setConstant(fill_value(ch));
    return out;
  }
  for (Index hole = 0; hole < params.n_holes; ++hole) {
    const Index side = params.random_size ? rng.uniform_int(std::max<Index>(1, params.hole_size / 2), params.hole_size)
                                          : params.hole_size;
    const Index cy = rng.uniform_int(0, h - 1);
    const Index cx = rng.uniform_int(0, w - 1);
    const Index y0 = std::clamp<Index>(cy - side / 2, 0, h), y1 = std::clamp<Index>(cy - side / 2 + side, 0, h);
    const Index x0 = std::clamp<Index>(cx - side / 2, 0, w), x1 = std::clamp<Index>(cx - side / 2 + side, 0, w);
    for (Index ch = 0; ch < c; ++ch) {
      for (Index y = y0; y < y1; ++y) {
        for (Index x = x0; x < x1; ++x) out.pixels[(ch * h + y) * w + x] = fill_value(ch);
      }
    }
  }
  return out;
}

double quantize_lambda(double lambda) {
  return std::ldexp(std::round(std::ldexp(std::clamp(lambda, 0.0, 1.0), 24)), -24);
}

MixResult mixup_with_lambda(const LabeledImage& a, const LabeledImage& b, double lambda) {
  require_compatible(a, b, "mixup");
  if (!(lambda >= 0 && lambda <= 1)) throw ValueError("mixup: lambda must lie in [0,1]");
  const auto la = static_cast<float>(lambda);
  const auto lb = static_cast<float>(1.0 - lambda);
  MixResult r;
  r.img.pixels = TensorF(a.pixels.shape());
  r.img.pixels.flat() = la * a.pixels.flat().array() + lb * b.pixels.flat().array();
  r.img.label = lambda * a.label + (1.0 - lambda) * b.label;
  r.spec.lambda = lambda;
  return r;
}

MixResult mixup(const LabeledImage& a, const LabeledImage& b, double alpha, Rng& rng) {
  if (!(alpha > 0)) throw ValueError("mixup: alpha must be positive, got " + std::to_string(alpha));
  require_compatible(a, b, "mixup");
  return mixup_with_lambda(a, b, quantize_lambda(rng.beta(alpha, alpha)));
}

CutBox draw_cut_box(Index height, Index width, double lambda, Rng& rng) {
  const double ratio = std::sqrt(std::clamp(1.0 - lambda, 0.0, 1.0));
  const auto cut_h = static_cast<Index>(std::floor(static_cast<double>(height) * ratio));
  const auto cut_w = static_cast<Index>(std::floor(static_cast<double>(width) * ratio));
  const Index cy = rng.uniform_int(0, height - 1);
  const Index cx = rng.uniform_int(0, width - 1);
  CutBox box;
  box.y0 = std::clamp<Index>(cy - cut_h / 2, 0, height);
  box.y1 = std::clamp<Index>(cy - cut_h / 2 + cut_h, 0, height);
  box.x0 = std::clamp<Index>(cx - cut_w / 2, 0, width);
  box.x1 = std::clamp<Index>(cx - cut_w / 2 + cut_w, 0, width);
  return box;
}

MixResult cutmix_with_box(const LabeledImage& a, const LabeledImage& b, const CutBox& box) {
  require_compatible(a, b, "cutmix");
  const Index c = a.channels(), h = a.height(), w = a.width();
  if (box.y0 < 0 || box.x0 < 0 || box.y1 > h || box.x1 > w || box.y0 > box.y1 || box.x0 > box.x1) {
    throw ValueError("cutmix: box outside image");
  }
  MixResult r;
  r.img.pixels = a.pixels;
  Tensor<std::uint8_t> mask({h, w});
  for (Index y = box.y0; y < box.y1; ++y) {
    for (Index x = box.x0; x < box.x1; ++x) {
      mask[y * w + x] = 1;
      for (Index ch = 0; ch < c; ++ch) r.img.pixels[(ch * h + y) * w + x] = b.pixels[(ch * h + y) * w + x];
    }
  }
  const Index total = h * w;
  const double lambda = static_cast<double>(total - box.area()) / static_cast<double>(total);
  r.img.label = lambda * a.label + (1.0 - lambda) * b.label;
  r.spec.lambda = lambda;
  r.spec.mask = std::move(mask);
  return r;
}

MixResult cutmix(const LabeledImage& a, const LabeledImage& b, Rng& rng, const CutmixParams& params) {
  require_compatible(a, b, "cutmix");
  const double lambda = rng.beta(params.beta_a, params.beta_b);
  return cutmix_with_box(a, b, draw_cut_box(a.height(), a.width(), lambda, rng));
}

std::vector<LabeledImage> apply_strategy(const std::vector<LabeledImage>& batch, const AugmentStrategy& strategy,
                                         Rng& rng, const std::vector<float>& fill) {
  if (batch.empty()) throw ValueError("apply_strategy: empty batch");
  strategy.validate();
  std::vector<LabeledImage> out;
  out.reserve(batch.size());
  const auto& params = strategy.params();
  switch (strategy.kind()) {
    case AugmentKind::none:
      return batch;
    case AugmentKind::standard:
      for (const auto& img : batch) out.push_back(standard_transform(img, std::get<StandardParams>(params).pad, rng));
      return out;
    case AugmentKind::cutout:
      for (const auto& img : batch) out.push_back(cutout(img, std::get<CutoutParams>(params), rng, fill));
      return out;
    case AugmentKind::mixup:
    case AugmentKind::cutmix: {
      const auto perm = rng.permutation(static_cast<std::int64_t>(batch.size()));
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& partner = batch[static_cast<std::size_t>(perm[i])];
        MixResult r = strategy.kind() == AugmentKind::mixup
                          ? mixup(batch[i], partner, std::get<MixupParams>(params).alpha, rng)
                          : cutmix(batch[i], partner, rng, std::get<CutmixParams>(params));
        out.push_back(std::move(r.img));
      }
      return out;
    }
  }
  throw ValueError("apply_strategy: unknown strategy kind");
}

}  // namespace dlab
