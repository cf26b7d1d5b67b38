#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dlab/augment.hpp"
#include "dlab/dataset.hpp"
#include "dlab/metrics.hpp"
#include "dlab/nn.hpp"

namespace dlab {

/// Which way round the distillation divergence is taken.
enum class KlDirection {
  student_teacher,  // KL(student^tau || teacher^tau), as the objective is written
  teacher_student,  // KL(teacher^tau || student^tau)
};

std::string to_string(KlDirection d);
KlDirection kl_direction_from_string(const std::string& name);

struct TrainConfig {
  int epochs = 12;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Cosine decay of lr over the run.
  bool cosine_schedule = true;
  std::uint64_t seed = 0;
  AugmentStrategy strategy;
  // Student runs only.
  double temperature = 20.0;
  double distill_weight = 0.5;
  KlDirection kl_direction = KlDirection::student_teacher;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

enum class Role { teacher, student };
std::string to_string(Role r);
Role role_from_string(const std::string& name);

struct EpochRecord {
  int epoch = 0;
  double loss = 0;
  double accuracy = 0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainedModel {
  NetworkF net;
  Role role = Role::teacher;
  ArchSpec arch;
  TrainConfig config;
  std::vector<EpochRecord> history;
};

struct KdLoss {
  double loss = 0;  // batch mean
  double ce = 0;    // batch mean of the cross-entropy term
  double kl = 0;    // batch mean of the (unscaled) divergence term
  TensorD grad;     // d loss / d student logits, [B, C]
};

/// (1 - w) CE(softmax(student), labels) + w tau^2 KL(softmax(student/tau), softmax(teacher/tau)),
/// averaged over the batch, with its analytic gradient. `labels` rows are
/// label distributions. Throws ValueError for tau <= 0 or w outside [0,1].
KdLoss kd_loss(const TensorD& student_logits, const TensorD& teacher_logits, const TensorD& labels, double tau,
               double w, KlDirection direction = KlDirection::student_teacher);

/// Cross-entropy only (the w = 0 case) without a teacher.
KdLoss ce_loss(const TensorD& logits, const TensorD& labels);

/// Builds and initializes a network for `data` from `arch` and `seed`.
NetworkF init_network(const ArchSpec& arch, const Dataset& data, std::uint64_t seed);

/// Cross-entropy training on (possibly mixed) augmented labels.
TrainedModel train_teacher(const TrainConfig& cfg, const ArchSpec& arch, const Dataset& data);

struct StudentOptions {
  /// Start from these weights instead of a fresh initialization.
  std::optional<NetworkF> init;
};

/// Distillation: batches are augmented with `cfg.strategy`, the teacher scores
/// the same augmented batch, and the student minimizes kd_loss. The teacher is
/// never modified.
TrainedModel train_student(const TrainConfig& cfg, const ArchSpec& arch, const TrainedModel& teacher,
                           const Dataset& data, const StudentOptions& options = {});

/// Per-sample probabilities at `temperature` and embeddings for every sample.
EvalDump evaluate_model(const TrainedModel& model, const Dataset& data, double temperature = 1.0);
EvalDump evaluate_network(const NetworkF& net, const Dataset& data, double temperature = 1.0);

}  // namespace dlab
