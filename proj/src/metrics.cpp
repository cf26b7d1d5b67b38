#include "dlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "dlab/prob.hpp"

namespace dlab {

namespace {

void check_distribution_rows(const TensorD& t, const char* what) {
  const auto m = t.matrix();
  for (Index i = 0; i < m.rows(); ++i) {
    if ((m.row(i).array() < 0).any() || (m.row(i).array() > 1 + 1e-9).any() ||
        std::abs(m.row(i).sum() - 1.0) > 1e-5) {
      throw ValueError(std::string(what) + " row " + std::to_string(i) + " is not a probability distribution");
    }
  }
}

// Neumaier compensated accumulation, elementwise over a vector.
struct CompensatedVector {
  Vector<double> sum, comp;
  explicit CompensatedVector(Index n) : sum(Vector<double>::Zero(n)), comp(Vector<double>::Zero(n)) {}
  template <typename Derived>
  void add(const Eigen::MatrixBase<Derived>& v) {
    for (Index k = 0; k < sum.size(); ++k) {
      const double x = v(k);
      const double t = sum[k] + x;
      comp[k] += std::abs(sum[k]) >= std::abs(x) ? (sum[k] - t) + x : (x - t) + sum[k];
      sum[k] = t;
    }
  }
  Vector<double> value() const { return sum + comp; }
};

std::vector<std::vector<Index>> members_by_class(const std::vector<std::int64_t>& labels, Index num_classes) {
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    members[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
  }
  return members;
}

}  // namespace

void EvalDump::validate() const {
  if (probs.rank() != 2) throw ShapeError("EvalDump: probs must be [N, C]");
  const Index n = probs.dim(0);
  const Index c = probs.dim(1);
  if (embeddings.rank() != 2 || embeddings.dim(0) != n) {
    throw ShapeError("EvalDump: embeddings must be [N, d] with N = " + std::to_string(n));
  }
  if (static_cast<Index>(true_labels.size()) != n) throw ShapeError("EvalDump: label count differs from N");
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    if (true_labels[i] < 0 || true_labels[i] >= c) {
      throw ValueError("EvalDump: label " + std::to_string(true_labels[i]) + " at row " + std::to_string(i) +
                       " outside [0, C)");
    }
  }
  check_distribution_rows(probs, "EvalDump: probs");
  if (human_probs) {
    if (human_probs->shape() != probs.shape()) throw ShapeError("EvalDump: human_probs must match probs shape");
    check_distribution_rows(*human_probs, "EvalDump: human_probs");
  }
}

std::vector<std::int64_t> predictions(const EvalDump& dump) {
  std::vector<std::int64_t> pred(static_cast<std::size_t>(dump.size()));
  const auto m = dump.probs.matrix();
  for (Index i = 0; i < m.rows(); ++i) pred[static_cast<std::size_t>(i)] = argmax(m.row(i));
  return pred;
}

ConfusionMetrics confusion_metrics(const EvalDump& dump) {
  const Index c = dump.num_classes();
  const auto pred = predictions(dump);
  ConfusionMetrics out;
  out.confusion = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(c, c);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out.confusion(dump.true_labels[i], pred[i]) += 1;
    if (pred[i] == dump.true_labels[i]) ++correct;
  }
  if (pred.empty()) return out;
  out.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  Index present = 0;
  for (Index k = 0; k < c; ++k) {
    const std::int64_t tp = out.confusion(k, k);
    const std::int64_t truth = out.confusion.row(k).sum();
    const std::int64_t predicted = out.confusion.col(k).sum();
    if (truth == 0 && predicted == 0) continue;
    ++present;
    const double p = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    const double r = truth ? static_cast<double>(tp) / static_cast<double>(truth) : 0.0;
    out.precision += p;
    out.recall += r;
    out.f1 += (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  out.precision /= static_cast<double>(present);
  out.recall /= static_cast<double>(present);
  out.f1 /= static_cast<double>(present);
  return out;
}

ReliabilityReport ece(const EvalDump& dump, int n_bins) {
  if (n_bins < 1) throw ValueError("ece: n_bins must be >= 1");
  ReliabilityReport report;
  report.bins.resize(static_cast<std::size_t>(n_bins));
  std::vector<double> conf_sum(report.bins.size(), 0.0);
  std::vector<std::int64_t> correct(report.bins.size(), 0);
  const double m = n_bins;
  for (int b = 0; b < n_bins; ++b) {
    report.bins[static_cast<std::size_t>(b)].lo = b / m;
    report.bins[static_cast<std::size_t>(b)].hi = (b + 1) / m;
  }
  const auto probs = dump.probs.matrix();
  for (Index i = 0; i < probs.rows(); ++i) {
    const Index k = argmax(probs.row(i));
    const double conf = probs(i, k);
    int b = std::clamp(static_cast<int>(std::ceil(conf * m)) - 1, 0, n_bins - 1);
    // Settle floating-point disagreement with the stored edges.
    while (b > 0 && conf <= report.bins[static_cast<std::size_t>(b)].lo) --b;
    while (b < n_bins - 1 && conf > report.bins[static_cast<std::size_t>(b)].hi) ++b;
    auto& bin = report.bins[static_cast<std::size_t>(b)];
    bin.count += 1;
    conf_sum[static_cast<std::size_t>(b)] += conf;
    if (k == dump.true_labels[static_cast<std::size_t>(i)]) correct[static_cast<std::size_t>(b)] += 1;
  }
  for (std::size_t b = 0; b < report.bins.size(); ++b) {
    auto& bin = report.bins[b];
    if (bin.count == 0) continue;
    bin.confidence = conf_sum[b] / static_cast<double>(bin.count);
    bin.accuracy = static_cast<double>(correct[b]) / static_cast<double>(bin.count);
  }
  report.ece = ece_from_bins(report.bins);
  return report;
}

double ece_from_bins(const std::vector<ReliabilityBin>& bins) {
  std::int64_t n = 0;
  for (const auto& b : bins) n += b.count;
  if (n == 0) return 0.0;
  double total = 0;
  for (const auto& b : bins) {
    if (b.count) total += static_cast<double>(b.count) / static_cast<double>(n) * std::abs(b.accuracy - b.confidence);
  }
  return total;
}

double human_kld(const EvalDump& dump, HumanDivergence mode) {
  if (!dump.human_probs) throw ValueError("human_kld: dump has no human label distributions");
  const auto model = dump.probs.matrix();
  const auto human = dump.human_probs->matrix();
  if (model.rows() == 0) return 0.0;
  double total = 0;
  for (Index i = 0; i < model.rows(); ++i) {
    switch (mode) {
      case HumanDivergence::kl_model_human: total += kl_div(model.row(i), human.row(i)); break;
      case HumanDivergence::kl_human_model: total += kl_div(human.row(i), model.row(i)); break;
      case HumanDivergence::cross_entropy: total += cross_entropy(model.row(i), human.row(i)); break;
    }
  }
  return total / static_cast<double>(model.rows());
}

RowMatrix<double> class_mean_distributions(const TensorD& probs, const std::vector<std::int64_t>& labels,
                                           Index num_classes) {
  const auto members = members_by_class(labels, num_classes);
  const auto m = probs.matrix();
  RowMatrix<double> means(num_classes, m.cols());
  for (Index k = 0; k < num_classes; ++k) {
    const auto& idx = members[static_cast<std::size_t>(k)];
    if (idx.empty()) throw ValueError("class " + std::to_string(k) + " has no samples");
    CompensatedVector acc(m.cols());
    for (Index i : idx) acc.add(m.row(i).transpose());
    means.row(k) = acc.value().transpose() / static_cast<double>(idx.size());
  }
  return means;
}

double class_separability(const EvalDump& dump) {
  const Index c = dump.num_classes();
  const auto means = class_mean_distributions(dump.probs, dump.true_labels, c);
  double total = 0;
  for (Index i = 0; i < c; ++i) {
    for (Index j = 0; j < c; ++j) {
      if (i != j) total += kl_div(means.row(i), means.row(j));
    }
  }
  return total / static_cast<double>(c * c);
}

TensorD standardize_embeddings(const TensorD& embeddings) {
  if (embeddings.rank() != 2) throw ShapeError("standardize_embeddings: expects [N, d]");
  const Index n = embeddings.dim(0);
  if (n < 2) throw ValueError("standardize_embeddings: needs at least 2 samples, got " + std::to_string(n));
  TensorD out(embeddings.shape());
  const auto in = embeddings.matrix();
  auto z = out.matrix();
  for (Index j = 0; j < in.cols(); ++j) {
    const double mean = in.col(j).mean();
    const auto centered = (in.col(j).array() - mean).eval();
    const double stddev = std::sqrt(centered.square().mean());
    const double scale = in.col(j).cwiseAbs().maxCoeff();
    if (stddev <= 1e-10 * scale || stddev == 0.0) {
      z.col(j).setZero();
    } else {
      z.col(j) = (centered / stddev).matrix();
    }
  }
  return out;
}

DiscriminationReport class_discrimination(const EvalDump& dump, CohesionNormalizer normalizer) {
  const Index k = dump.num_classes();
  if (k < 2) throw ValueError("class_discrimination: needs at least 2 classes");
  const auto members = members_by_class(dump.true_labels, k);
  for (Index c = 0; c < k; ++c) {
    if (members[static_cast<std::size_t>(c)].size() < 2) {
      throw ValueError("class_discrimination: class " + std::to_string(c) + " has fewer than 2 samples");
    }
  }
  const TensorD z = standardize_embeddings(dump.embeddings);
  const auto zm = z.matrix();
  const Index d = zm.cols();

  DiscriminationReport report;
  report.dim = d;
  // Per class: sum of unit vectors and count of nonzero rows. Intra-class pair
  // sums follow from |s|^2 = sum_i |u_i|^2 + 2 sum_{i<j} u_i.u_j.
  std::vector<Vector<double>> unit_sums;
  std::vector<double> nonzero;
  for (Index c = 0; c < k; ++c) {
    CompensatedVector acc(d);
    double count = 0;
    for (Index i : members[static_cast<std::size_t>(c)]) {
      const double norm = zm.row(i).norm();
      if (norm == 0.0) {
        ++report.zero_norm_count;
        continue;
      }
      acc.add(zm.row(i).transpose() / norm);
      count += 1;
    }
    unit_sums.push_back(acc.value());
    nonzero.push_back(count);
  }

  const double pair_scale = normalizer == CohesionNormalizer::unordered_pair_mean ? 2.0 : 1.0;
  double cohesion_total = 0;
  for (Index c = 0; c < k; ++c) {
    const auto n = static_cast<double>(members[static_cast<std::size_t>(c)].size());
    const double upper = 0.5 * (unit_sums[c].squaredNorm() - nonzero[c]);
    const double value = pair_scale * upper / (n * (n - 1));
    report.cohesion.push_back(value);
    cohesion_total += value;
  }
  double adhesion_total = 0;
  for (Index i = 0; i < k; ++i) {
    for (Index j = i + 1; j < k; ++j) {
      const auto ni = static_cast<double>(members[static_cast<std::size_t>(i)].size());
      const auto nj = static_cast<double>(members[static_cast<std::size_t>(j)].size());
      const double value = unit_sums[i].dot(unit_sums[j]) / (ni * nj);
      report.adhesion[{i, j}] = value;
      adhesion_total += value;
    }
  }
  report.mean_cohesion = cohesion_total / static_cast<double>(k);
  report.mean_adhesion = 2.0 * adhesion_total / static_cast<double>(k * (k - 1));
  report.discrimination = (report.mean_cohesion - report.mean_adhesion) / std::sqrt(static_cast<double>(d));
  return report;
}

KldMatrix kld_confusion_matrix(const EvalDump& dump) {
  if (!dump.human_probs) throw ValueError("kld_confusion_matrix: dump has no human label distributions");
  const Index c = dump.num_classes();
  const auto human = class_mean_distributions(*dump.human_probs, dump.true_labels, c);
  const auto model = class_mean_distributions(dump.probs, dump.true_labels, c);
  KldMatrix out;
  out.values.resize(c, c);
  for (Index i = 0; i < c; ++i) {
    for (Index j = 0; j < c; ++j) out.values(i, j) = kl_div(human.row(i), model.row(j));
  }
  out.min = out.values.minCoeff();
  out.max = out.values.maxCoeff();
  return out;
}

std::string to_string(HumanDivergence mode) {
  switch (mode) {
    case HumanDivergence::kl_model_human: return "kl_model_human";
    case HumanDivergence::kl_human_model: return "kl_human_model";
    case HumanDivergence::cross_entropy: return "cross_entropy";
  }
  return "unknown";
}

HumanDivergence human_divergence_from_string(const std::string& name) {
  for (auto m : {HumanDivergence::kl_model_human, HumanDivergence::kl_human_model, HumanDivergence::cross_entropy}) {
    if (to_string(m) == name) return m;
  }
  throw ValueError("unknown human divergence '" + name + "'");
}

std::string to_string(CohesionNormalizer n) {
  return n == CohesionNormalizer::unordered_pair_mean ? "unordered_pair_mean" : "upper_triangle_over_ordered_pairs";
}

CohesionNormalizer cohesion_normalizer_from_string(const std::string& name) {
  for (auto n : {CohesionNormalizer::upper_triangle_over_ordered_pairs, CohesionNormalizer::unordered_pair_mean}) {
    if (to_string(n) == name) return n;
  }
  throw ValueError("unknown cohesion normalizer '" + name + "'");
}

}  // namespace dlab
