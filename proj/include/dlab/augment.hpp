#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dlab/prob.hpp"
#include "dlab/rng.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

/// An image [channels, H, W] with pixels in [0,1] and a label distribution.
struct LabeledImage {
  TensorF pixels;
  ProbVector<double> label;

  Index channels() const { return pixels.dim(0); }
  Index height() const { return pixels.dim(1); }
  Index width() const { return pixels.dim(2); }
};

/// One-hot label vector.
ProbVector<double> one_hot(Index cls, Index num_classes);

enum class AugmentKind { none, standard, cutout, mixup, cutmix };

std::string to_string(AugmentKind kind);
AugmentKind augment_kind_from_string(const std::string& name);

struct StandardParams {
  Index pad = 2;
  friend bool operator==(const StandardParams&, const StandardParams&) = default;
};

struct CutoutParams {
  Index n_holes = 16;
  Index hole_size = 4;
  /// Hole side drawn uniformly from [max(1, hole_size/2), hole_size] when set.
  bool random_size = true;
  friend bool operator==(const CutoutParams&, const CutoutParams&) = default;
};

struct MixupParams {
  double alpha = 1.0;
  friend bool operator==(const MixupParams&, const MixupParams&) = default;
};

struct CutmixParams {
  double beta_a = 1.0;
  double beta_b = 1.0;
  friend bool operator==(const CutmixParams&, const CutmixParams&) = default;
};

/// Strategy kind and exactly the parameters that kind needs.
class AugmentStrategy {
 public:
  using Params = std::variant<std::monostate, StandardParams, CutoutParams, MixupParams, CutmixParams>;

  AugmentStrategy() = default;
  explicit AugmentStrategy(Params params) : params_(std::move(params)) {}

  static AugmentStrategy none() { return AugmentStrategy(); }
  static AugmentStrategy standard(Index pad = 2) { return AugmentStrategy(StandardParams{pad}); }
  static AugmentStrategy cutout(Index n_holes = 16, Index hole_size = 4, bool random_size = true) {
    return AugmentStrategy(CutoutParams{n_holes, hole_size, random_size});
  }
  static AugmentStrategy mixup(double alpha = 1.0) { return AugmentStrategy(MixupParams{alpha}); }
  static AugmentStrategy cutmix(double a = 1.0, double b = 1.0) { return AugmentStrategy(CutmixParams{a, b}); }
  /// Strategy of the named kind with default parameters.
  static AugmentStrategy from_kind(AugmentKind kind);

  AugmentKind kind() const { return static_cast<AugmentKind>(params_.index()); }
  const Params& params() const noexcept { return params_; }
  bool mixes() const { return kind() == AugmentKind::mixup || kind() == AugmentKind::cutmix; }

  /// Throws ValueError for out-of-domain parameters.
  void validate() const;

  friend bool operator==(const AugmentStrategy&, const AugmentStrategy&) = default;

 private:
  Params params_;
};

/// Mixing record: weight kept from the first image, partner index, and for
/// CutMix the [H, W] mask of pixels pasted from the partner.
struct MixSpec {
  double lambda = 1.0;
  Index partner_index = 0;
  std::optional<Tensor<std::uint8_t>> mask;
};

struct MixResult {
  LabeledImage img;
  MixSpec spec;
};

// --- standard transform ------------------------------------------------------

struct StandardDraw {
  Index dy = 0;  // crop offset into the padded image, in [0, 2*pad]
  Index dx = 0;
  bool flip = false;
};

StandardDraw draw_standard(Index pad, Rng& rng);
/// Reflect-pad by `pad`, crop at the drawn offset, optionally flip horizontally.
LabeledImage apply_standard(const LabeledImage& img, Index pad, const StandardDraw& draw);
LabeledImage standard_transform(const LabeledImage& img, Index pad, Rng& rng);

// --- cutout ------------------------------------------------------------------

/// Fills `params.n_holes` square holes with the per-channel `fill` values
/// (zeros when empty).
LabeledImage cutout(const LabeledImage& img, const CutoutParams& params, Rng& rng,
                    const std::vector<float>& fill = {});

// --- mixup -------------------------------------------------------------------

/// Rounds a mixing weight onto the 2^-24 grid so that lambda and 1 - lambda
/// are both exact in float and double.
double quantize_lambda(double lambda);

/// lambda * a + (1 - lambda) * b for pixels and labels.
MixResult mixup_with_lambda(const LabeledImage& a, const LabeledImage& b, double lambda);
MixResult mixup(const LabeledImage& a, const LabeledImage& b, double alpha, Rng& rng);

// --- cutmix ------------------------------------------------------------------

/// Half-open rectangle [y0, y1) x [x0, x1).
struct CutBox {
  Index y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  Index area() const { return (y1 - y0) * (x1 - x0); }
};

/// Rectangle of side sqrt(1 - lambda) times the image sides around a uniform
/// center, clipped at the borders.
CutBox draw_cut_box(Index height, Index width, double lambda, Rng& rng);
/// Pastes b into the box of a; labels mixed by the retained fraction of a.
MixResult cutmix_with_box(const LabeledImage& a, const LabeledImage& b, const CutBox& box);
MixResult cutmix(const LabeledImage& a, const LabeledImage& b, Rng& rng, const CutmixParams& params = {});

// --- batch dispatch ----------------------------------------------------------

/// Augments every element of a nonempty batch. Mixing strategies pair element
/// i with element perm[i] of a uniform random permutation of the input batch.
std::vector<LabeledImage> apply_strategy(const std::vector<LabeledImage>& batch, const AugmentStrategy& strategy,
                                         Rng& rng, const std::vector<float>& fill = {});

}  // namespace dlab
