#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dlab/runstore.hpp"

namespace dlab {

// --- datasets ----------------------------------------------------------------

/// A training set plus named evaluation sets, all resolved from one descriptor.
struct DatasetBundle {
  std::string descriptor;
  Dataset train;
  std::vector<std::pair<std::string, Dataset>> evals;

  const Dataset& eval(const std::string& name) const;
  /// Descriptor plus a content hash per split.
  Json describe() const;
};

/// Descriptors:
///   synth[:key=value,...]    keys: seed, classes, train, eval, side, channels, difficulty
///                           (eval sets "eval" and the contrast-shifted "shift")
///   dir:PATH                 PATH/train plus every other dataset directory under PATH
///   cifar10:DIR[,human=FILE] data_batch_1..5 for training, test_batch as "eval"
///   mnist:DIR                train-/t10k- IDX files
/// `seed` seeds synthetic data unless the descriptor sets its own.
DatasetBundle resolve_dataset(const std::string& descriptor, std::uint64_t seed);

// --- recipes -----------------------------------------------------------------

struct ModelRecipe {
  ArchSpec arch;
  TrainConfig config;
  friend bool operator==(const ModelRecipe&, const ModelRecipe&) = default;
};

/// Everything a run needs besides the data itself.
struct ExperimentRecipe {
  std::string name = "default";
  std::uint64_t seed = 0;
  std::string dataset = "synth";
  ModelRecipe teacher;
  ModelRecipe student;
  /// Evaluation sets to score; empty means every set in the bundle.
  std::vector<std::string> eval_sets;
  double eval_temperature = 1.0;
  /// Fraction of the training split held out for distillation (0 = distill on
  /// the teacher's training data).
  double distill_fraction = 0.0;
  int ece_bins = kDefaultEceBins;
  CohesionNormalizer normalizer = CohesionNormalizer::upper_triangle_over_ordered_pairs;
  HumanDivergence human_divergence = HumanDivergence::kl_model_human;
  bool export_embeddings = false;

  void validate() const;
  ReportSelection report_selection(const EvalDump& dump) const;
  friend bool operator==(const ExperimentRecipe&, const ExperimentRecipe&) = default;
};

Json to_json(const ExperimentRecipe& r);
ExperimentRecipe recipe_from_json(const Json& j);

/// Desk-scale defaults: cnn teacher, lenet student, seeds derived from `seed`.
ExperimentRecipe default_recipe(std::uint64_t seed);

/// Which side of the distillation pair receives the augmentation.
enum class Arm { teacher_aug, student_aug, both };
std::string to_string(Arm arm);
Arm arm_from_string(const std::string& name);

/// The recipe for one matrix cell. Non-augmented sides use strategy none.
ExperimentRecipe matrix_cell(const ExperimentRecipe& base, AugmentKind strategy, Arm arm);

// --- runs --------------------------------------------------------------------

enum class Stage { teacher, student, cell };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& name);

struct EvalOutcome {
  std::string role;
  std::string eval_set;
  std::map<std::string, double> metrics;
};

struct RunResult {
  fs::path dir;
  fs::path manifest;
  std::vector<EvalOutcome> outcomes;

  const EvalOutcome& outcome(const std::string& role, const std::string& eval_set) const;
};

/// Run directory layout:
///   manifest.json, metrics.csv, <role>.ckpt(.params),
///   <role>/<eval>/dump/*.dlab, <role>/<eval>/report/*.csv
/// metrics.csv has columns role, eval_set, then metrics_columns().

/// Trains and evaluates a teacher.
RunResult run_teacher(const ExperimentRecipe& recipe, const DatasetBundle& data, const fs::path& dir);

/// Distills a student from `teacher` (copied into the run directory).
RunResult run_student(const ExperimentRecipe& recipe, const DatasetBundle& data, const TrainedModel& teacher,
                      const fs::path& dir);

/// Teacher then student. A supplied teacher must match recipe.teacher.
RunResult run_cell(const ExperimentRecipe& recipe, const DatasetBundle& data, const fs::path& dir,
                   const TrainedModel* teacher = nullptr);

/// Re-runs the recorded stage from a manifest into `dir`. Input data must hash
/// to the recorded values.
RunResult rerun_from_manifest(const fs::path& manifest, const fs::path& dir);

struct MatrixCell {
  AugmentKind strategy;
  Arm arm;
  RunResult result;
};

struct MatrixResult {
  std::vector<MatrixCell> cells;
  fs::path summary;  // matrix_metrics.csv
  double seconds = 0;
};

/// 5 strategies x 3 arms. Teachers with identical recipes are trained once.
/// Cells run on `jobs` threads; results do not depend on `jobs`.
MatrixResult run_matrix(const ExperimentRecipe& base, const DatasetBundle& data, const fs::path& out, int jobs = 1);

/// Cell directory name within a matrix output, e.g. "mixup-both".
std::string cell_name(AugmentKind strategy, Arm arm);

}  // namespace dlab
