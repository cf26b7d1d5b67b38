#pragma once

// Re-parses every CSV written by emit_report and compares each cell against a
// fresh in-memory computation. Values must match bit for bit.

#include <cmath>
#include <string>
#include <vector>

#include "dlab/runstore.hpp"

namespace dlab::test {

class ReportChecker {
 public:
  explicit ReportChecker(fs::path dir) : dir_(std::move(dir)) {}

  const std::vector<std::string>& problems() const { return problems_; }
  int cells() const { return cells_; }

  void expect_cell(const std::string& file, const std::string& text, double expected) {
    ++cells_;
    double got = 0;
    try {
      got = parse_double(text);
    } catch (const std::exception& e) {
      problems_.push_back(file + ": " + e.what());
      return;
    }
    const bool same = (std::isnan(got) && std::isnan(expected)) || got == expected;
    if (!same) problems_.push_back(file + ": '" + text + "' != " + format_double(expected));
  }

  void expect_blank(const std::string& file, const std::string& text) {
    ++cells_;
    if (!text.empty()) problems_.push_back(file + ": expected an empty cell, got '" + text + "'");
  }

  CsvTable table(const std::string& name, const std::vector<std::string>& header) {
    CsvTable t;
    try {
      t = read_csv(dir_ / name);
    } catch (const std::exception& e) {
      problems_.push_back(name + ": " + e.what());
      return {};
    }
    if (t.header != header) problems_.push_back(name + ": unexpected header");
    return t;
  }

  template <typename Derived>
  void matrix(const std::string& name, const std::string& row_label, const std::string& prefix,
              const Eigen::MatrixBase<Derived>& m, bool masked) {
    std::vector<std::string> header{row_label};
    for (Index j = 0; j < m.cols(); ++j) header.push_back(prefix + std::to_string(j));
    const auto t = table(name, header);
    if (static_cast<Index>(t.rows.size()) != m.rows()) {
      problems_.push_back(name + ": row count");
      return;
    }
    for (Index i = 0; i < m.rows(); ++i) {
      const auto& row = t.rows[static_cast<std::size_t>(i)];
      if (static_cast<Index>(row.size()) != m.cols() + 1 || row[0] != std::to_string(i)) {
        problems_.push_back(name + ": malformed row " + std::to_string(i));
        continue;
      }
      for (Index j = 0; j < m.cols(); ++j) {
        const auto& cell = row[static_cast<std::size_t>(j + 1)];
        if (masked && i == j) {
          expect_blank(name, cell);
        } else {
          expect_cell(name, cell, static_cast<double>(m(i, j)));
        }
      }
    }
  }

 private:
  fs::path dir_;
  std::vector<std::string> problems_;
  int cells_ = 0;
};

/// Empty result means every selected report re-parsed to the exact values.
inline std::vector<std::string> report_mismatches(const EvalDump& dump, const ReportSelection& sel,
                                                  const fs::path& dir) {
  ReportChecker c(dir);
  if (sel.metrics) {
    const auto expected = compute_metrics(dump, sel);
    const auto t = c.table("metrics.csv", metrics_columns());
    if (t.rows.size() != 1 || t.rows[0].size() != metrics_columns().size()) {
      return {"metrics.csv: expected one full row"};
    }
    for (std::size_t k = 0; k < metrics_columns().size(); ++k) {
      const auto it = expected.find(metrics_columns()[k]);
      if (it == expected.end()) {
        c.expect_blank("metrics.csv", t.rows[0][k]);
      } else {
        c.expect_cell("metrics.csv", t.rows[0][k], it->second);
      }
    }
  }
  if (sel.reliability) {
    const auto rel = ece(dump, sel.ece_bins);
    const auto t = c.table("reliability.csv", {"bin_lo", "bin_hi", "count", "confidence", "accuracy"});
    if (t.rows.size() != rel.bins.size()) return {"reliability.csv: bin count"};
    for (std::size_t m = 0; m < rel.bins.size(); ++m) {
      const auto& b = rel.bins[m];
      const auto& r = t.rows[m];
      if (r.size() != 5) return {"reliability.csv: malformed row"};
      c.expect_cell("reliability.csv", r[0], b.lo);
      c.expect_cell("reliability.csv", r[1], b.hi);
      c.expect_cell("reliability.csv", r[2], static_cast<double>(b.count));
      c.expect_cell("reliability.csv", r[3], b.confidence);
      c.expect_cell("reliability.csv", r[4], b.accuracy);
    }
  }
  if (sel.confusion) c.matrix("confusion.csv", "true_class", "pred_", confusion_metrics(dump).confusion, false);
  if (sel.discrimination) {
    const auto d = class_discrimination(dump, sel.normalizer);
    const auto t = c.table("discrimination.csv", {"kind", "class_i", "class_j", "value"});
    std::vector<std::pair<std::string, double>> expected;
    for (double v : d.cohesion) expected.emplace_back("cohesion", v);
    for (const auto& [ij, v] : d.adhesion) expected.emplace_back("adhesion", v);
    expected.emplace_back("mean_cohesion", d.mean_cohesion);
    expected.emplace_back("mean_adhesion", d.mean_adhesion);
    expected.emplace_back("discrimination", d.discrimination);
    expected.emplace_back("dim", static_cast<double>(d.dim));
    expected.emplace_back("zero_norm_count", static_cast<double>(d.zero_norm_count));
    if (t.rows.size() != expected.size()) return {"discrimination.csv: row count"};
    for (std::size_t k = 0; k < expected.size(); ++k) {
      if (t.rows[k].size() != 4 || t.rows[k][0] != expected[k].first) return {"discrimination.csv: row kinds"};
      c.expect_cell("discrimination.csv", t.rows[k][3], expected[k].second);
    }
  }
  if (sel.confidence_matrices) {
    const auto avg = class_mean_distributions(dump.probs, dump.true_labels, dump.num_classes());
    c.matrix("avg_confidence.csv", "true_class", "p_", avg, false);
    c.matrix("avg_confidence_masked.csv", "true_class", "p_", avg, true);
  }
  if (sel.human) {
    const auto kld = kld_confusion_matrix(dump);
    c.matrix("kld_matrix.csv", "human_class", "model_", kld.values, false);
    const auto t = c.table("kld_matrix_scale.csv", {"min", "max"});
    if (t.rows.size() == 1 && t.rows[0].size() == 2) {
      c.expect_cell("kld_matrix_scale.csv", t.rows[0][0], kld.min);
      c.expect_cell("kld_matrix_scale.csv", t.rows[0][1], kld.max);
    } else {
      return {"kld_matrix_scale.csv: malformed"};
    }
    const auto human = class_mean_distributions(*dump.human_probs, dump.true_labels, dump.num_classes());
    c.matrix("human_confidence.csv", "true_class", "p_", human, false);
    c.matrix("human_confidence_masked.csv", "true_class", "p_", human, true);
  }
  if (c.cells() == 0 && c.problems().empty()) return {"no report cells were checked"};
  return c.problems();
}

}  // namespace dlab::test
