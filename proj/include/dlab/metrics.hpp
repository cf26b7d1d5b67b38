#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dlab/tensor.hpp"

namespace dlab {

/// Per-sample model outputs on an evaluation set.
struct EvalDump {
  TensorD probs{Shape{0, 0}};       // [N, C]
  TensorD embeddings{Shape{0, 0}};  // [N, d]
  std::vector<std::int64_t> true_labels;
  std::optional<TensorD> human_probs;  // [N, C]

  Index size() const { return probs.dim(0); }
  Index num_classes() const { return probs.rank() == 2 ? probs.dim(1) : 0; }

  /// Throws ShapeError/ValueError if fields are inconsistent or rows are not
  /// distributions (tolerance 1e-5).
  void validate() const;
};

/// argmax of each probability row, ties to the lowest index.
std::vector<std::int64_t> predictions(const EvalDump& dump);

struct ConfusionMetrics {
  double accuracy = 0;
  double precision = 0;  // macro
  double recall = 0;     // macro
  double f1 = 0;         // macro
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> confusion;  // [true, predicted]
};

/// Macro averages run over the classes that occur in the truth or the predictions.
ConfusionMetrics confusion_metrics(const EvalDump& dump);

struct ReliabilityBin {
  double lo = 0;
  double hi = 0;
  std::int64_t count = 0;
  double confidence = 0;  // mean max-probability in the bin
  double accuracy = 0;
};

struct ReliabilityReport {
  std::vector<ReliabilityBin> bins;
  double ece = 0;
};

inline constexpr int kDefaultEceBins = 15;

/// Equal-width, right-closed confidence bins (m/M, (m+1)/M]; confidence 0 goes
/// to the first bin.
ReliabilityReport ece(const EvalDump& dump, int n_bins = kDefaultEceBins);

/// Recomputes the ECE from the stored bin records.
double ece_from_bins(const std::vector<ReliabilityBin>& bins);

enum class HumanDivergence {
  kl_model_human,  // mean KL(p_model || p_human)
  kl_human_model,  // mean KL(p_human || p_model)
  cross_entropy,   // mean -sum p_human log p_model
};

std::string to_string(HumanDivergence mode);
HumanDivergence human_divergence_from_string(const std::string& name);

/// Mean per-sample divergence between model and human label distributions.
double human_kld(const EvalDump& dump, HumanDivergence mode = HumanDivergence::kl_model_human);

/// Mean probability row per true class, [C, C]. Throws if a class is empty.
RowMatrix<double> class_mean_distributions(const TensorD& probs, const std::vector<std::int64_t>& labels,
                                           Index num_classes);

/// (1/C^2) sum_i sum_j KL(p_i, p_j) over per-class mean predictions.
double class_separability(const EvalDump& dump);

/// Zero-mean, unit population-std columns; constant columns become 0.
TensorD standardize_embeddings(const TensorD& embeddings);

enum class CohesionNormalizer {
  upper_triangle_over_ordered_pairs,  // sum_{i<j} S / (n (n-1))
  unordered_pair_mean,                // sum_{i<j} S / (n (n-1) / 2)
};

std::string to_string(CohesionNormalizer n);
CohesionNormalizer cohesion_normalizer_from_string(const std::string& name);

struct DiscriminationReport {
  std::vector<double> cohesion;                            // per class
  std::map<std::pair<Index, Index>, double> adhesion;      // i < j
  double mean_cohesion = 0;
  double mean_adhesion = 0;
  double discrimination = 0;
  Index dim = 0;
  std::int64_t zero_norm_count = 0;  // embeddings with zero norm after standardization
};

/// Cohesion, adhesion and class discrimination of standardized embeddings
/// under cosine similarity. Every class needs at least two samples.
DiscriminationReport class_discrimination(
    const EvalDump& dump, CohesionNormalizer normalizer = CohesionNormalizer::upper_triangle_over_ordered_pairs);

struct KldMatrix {
  RowMatrix<double> values;  // (i, j) = KL(mean human of class i || mean model of class j)
  double min = 0;
  double max = 0;
};

KldMatrix kld_confusion_matrix(const EvalDump& dump);

}  // namespace dlab
