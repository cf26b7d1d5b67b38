#include "dlab/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dlab/prob.hpp"

namespace dlab {

std::string to_string(KlDirection d) {
  return d == KlDirection::student_teacher ? "student_teacher" : "teacher_student";
}

KlDirection kl_direction_from_string(const std::string& name) {
  if (name == "student_teacher") return KlDirection::student_teacher;
  if (name == "teacher_student") return KlDirection::teacher_student;
  throw ValueError("unknown KL direction '" + name + "'");
}

std::string to_string(Role r) { return r == Role::teacher ? "teacher" : "student"; }

Role role_from_string(const std::string& name) {
  if (name == "teacher") return Role::teacher;
  if (name == "student") return Role::student;
  throw ValueError("unknown role '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValueError("epochs must be >= 1");
  if (batch_size < 1) throw ValueError("batch_size must be >= 1");
  if (!(lr >= 0) || !std::isfinite(lr)) throw ValueError("lr must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ValueError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0)) throw ValueError("weight_decay must be >= 0");
  if (!(temperature > 0) || !std::isfinite(temperature)) throw ValueError("temperature must be positive");
  if (!(distill_weight >= 0 && distill_weight <= 1)) throw ValueError("distill_weight must lie in [0,1]");
  strategy.validate();
}

namespace {

void check_logits(const TensorD& logits, const TensorD& labels, const char* op) {
  if (logits.rank() != 2 || labels.shape() != logits.shape()) {
    throw ShapeError(std::string(op) + ": logits " + shape_string(logits.shape()) + " and labels " +
                     shape_string(labels.shape()) + " must both be [B, C]");
  }
}

// Cross-entropy of softmax(z) against y for one row; adds its gradient into g.
double row_cross_entropy(const Eigen::Ref<const Vector<double>>& z, const Eigen::Ref<const Vector<double>>& y,
                         double scale, Eigen::Ref<Vector<double>> g) {
  const Vector<double> p = softmax_t(z, 1.0);
  const double ce = cross_entropy(p, y);
  // Terms whose probability sits under the clamp have zero derivative.
  double active_mass = 0;
  for (Index k = 0; k < p.size(); ++k) {
    if (y[k] != 0 && p[k] >= kProbEpsilon) active_mass += y[k];
  }
  for (Index j = 0; j < p.size(); ++j) {
    const double own = (y[j] != 0 && p[j] >= kProbEpsilon) ? y[j] : 0.0;
    g[j] += scale * (p[j] * active_mass - own);
  }
  return ce;
}

}  // namespace

KdLoss kd_loss(const TensorD& student_logits, const TensorD& teacher_logits, const TensorD& labels, double tau,
               double w, KlDirection direction) {
  if (!(tau > 0) || !std::isfinite(tau)) throw ValueError("kd_loss: temperature must be positive");
  if (!(w >= 0 && w <= 1)) throw ValueError("kd_loss: distill weight must lie in [0,1], got " + std::to_string(w));
  check_logits(student_logits, labels, "kd_loss");
  if (teacher_logits.shape() != student_logits.shape()) {
    throw ShapeError("kd_loss: teacher logits " + shape_string(teacher_logits.shape()) + " differ from student " +
                     shape_string(student_logits.shape()));
  }
  const Index batch = student_logits.dim(0);
  const Index classes = student_logits.dim(1);
  KdLoss out;
  out.grad = TensorD({batch, classes});
  if (batch == 0) return out;
  const double inv_b = 1.0 / static_cast<double>(batch);
  const auto zs = student_logits.matrix();
  const auto zt = teacher_logits.matrix();
  const auto y = labels.matrix();
  auto g = out.grad.matrix();
  for (Index b = 0; b < batch; ++b) {
    Vector<double> grow = Vector<double>::Zero(classes);
    const double ce = row_cross_entropy(zs.row(b).transpose(), y.row(b).transpose(), (1 - w) * inv_b, grow);
    double kl = 0;
    if (w > 0) {
      const Vector<double> log_q = log_softmax_t(zs.row(b).transpose(), tau);
      const Vector<double> log_t = log_softmax_t(zt.row(b).transpose(), tau);
      const Vector<double> q = log_q.array().exp();
      const double scale = w * tau * inv_b;  // w tau^2 times d(z/tau)/dz
      if (direction == KlDirection::student_teacher) {
        const Vector<double> f = log_q - log_t;
        kl = q.dot(f);
        grow += scale * (q.array() * (f.array() - kl)).matrix();
      } else {
        const Vector<double> t = log_t.array().exp();
        kl = t.dot(log_t - log_q);
        grow += scale * (q - t);
      }
    }
    out.ce += ce * inv_b;
    out.kl += kl * inv_b;
    out.loss += ((1 - w) * ce + w * tau * tau * kl) * inv_b;
    g.row(b) = grow.transpose();
  }
  return out;
}

KdLoss ce_loss(const TensorD& logits, const TensorD& labels) {
  check_logits(logits, labels, "ce_loss");
  const Index batch = logits.dim(0);
  KdLoss out;
  out.grad = TensorD(logits.shape());
  if (batch == 0) return out;
  const double inv_b = 1.0 / static_cast<double>(batch);
  auto g = out.grad.matrix();
  for (Index b = 0; b < batch; ++b) {
    Vector<double> grow = Vector<double>::Zero(logits.dim(1));
    const double ce =
        row_cross_entropy(logits.matrix().row(b).transpose(), labels.matrix().row(b).transpose(), inv_b, grow);
    out.ce += ce * inv_b;
    out.loss += ce * inv_b;
    g.row(b) = grow.transpose();
  }
  return out;
}

NetworkF init_network(const ArchSpec& arch, const Dataset& data, std::uint64_t seed) {
  NetworkF net = build_network<float>(arch, data.image_shape(), data.num_classes());
  Rng rng(derive_seed(seed, "init"));
  net.init(rng);
  if (arch.normalize_input && data.size() > 0) {
    const auto [mean, stddev] = channel_stats(data);
    Vector<float> m(static_cast<Index>(mean.size())), s(static_cast<Index>(stddev.size()));
    for (std::size_t c = 0; c < mean.size(); ++c) {
      m[static_cast<Index>(c)] = mean[c];
      s[static_cast<Index>(c)] = std::max(stddev[c], 1e-6f);
    }
    net.set_input_normalization(m, s);
  }
  return net;
}

namespace {

std::vector<EpochRecord> run_training(const TrainConfig& cfg, NetworkF& net, const Dataset& data,
                                      const TrainedModel* teacher) {
  cfg.validate();
  if (data.size() == 0) throw ValueError("training dataset is empty");
  const Index n = data.size();
  const Index classes = data.num_classes();
  const Shape img_shape = data.image_shape();
  const Index pix = shape_size(img_shape);
  const std::vector<float> fill = channel_stats(data).first;

  std::vector<EpochRecord> history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.cosine_schedule ? cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs)) : cfg.lr;
    Rng shuffle(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    const auto order = shuffle.permutation(n);
    double loss_sum = 0;
    std::int64_t correct = 0;
    int batch_index = 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const Index b = std::min<Index>(cfg.batch_size, n - start);
      std::vector<LabeledImage> batch;
      batch.reserve(static_cast<std::size_t>(b));
      for (Index r = 0; r < b; ++r) {
        const Index i = order[static_cast<std::size_t>(start + r)];
        batch.push_back({data.image(i), one_hot(data.labels[static_cast<std::size_t>(i)], classes)});
      }
      Rng aug(derive_seed(cfg.seed, "augment",
                          (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(batch_index)));
      const auto augmented = apply_strategy(batch, cfg.strategy, aug, fill);

      TensorF x({b, img_shape[0], img_shape[1], img_shape[2]});
      TensorD y({b, classes});
      for (Index r = 0; r < b; ++r) {
        x.flat().segment(r * pix, pix) = augmented[static_cast<std::size_t>(r)].pixels.flat();
        y.matrix().row(r) = augmented[static_cast<std::size_t>(r)].label.transpose();
      }

      const auto out = forward_record(net, x);
      if (!out.logits.all_finite()) throw DivergenceError(epoch, batch_index);
      const TensorD zs = out.logits.cast<double>();
      KdLoss loss;
      if (teacher && cfg.distill_weight > 0) {
        const TensorD zt = forward(teacher->net, x).logits.cast<double>();
        loss = kd_loss(zs, zt, y, cfg.temperature, cfg.distill_weight, cfg.kl_direction);
      } else {
        loss = ce_loss(zs, y);
      }
      if (!std::isfinite(loss.loss)) throw DivergenceError(epoch, batch_index);

      backward(net, loss.grad.cast<float>());
      sgd_step(net, SgdOptions{lr, cfg.momentum, cfg.weight_decay});

      loss_sum += loss.loss * static_cast<double>(b);
      for (Index r = 0; r < b; ++r) {
        if (argmax(zs.matrix().row(r)) == argmax(y.matrix().row(r))) ++correct;
      }
    }
    if (!net.parameters().allFinite()) throw DivergenceError(epoch, batch_index - 1);
    history.push_back({epoch, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)});
  }
  net.tape().reset();
  return history;
}

}  // namespace

TrainedModel train_teacher(const TrainConfig& cfg, const ArchSpec& arch, const Dataset& data) {
  TrainedModel model;
  model.role = Role::teacher;
  model.arch = arch;
  model.config = cfg;
  model.net = init_network(arch, data, cfg.seed);
  model.history = run_training(cfg, model.net, data, nullptr);
  return model;
}

TrainedModel train_student(const TrainConfig& cfg, const ArchSpec& arch, const TrainedModel& teacher,
                           const Dataset& data, const StudentOptions& options) {
  if (teacher.net.num_classes() != data.num_classes()) {
    throw ValueError("train_student: teacher predicts " + std::to_string(teacher.net.num_classes()) +
                     " classes but the dataset has " + std::to_string(data.num_classes()));
  }
  TrainedModel model;
  model.role = Role::student;
  model.arch = arch;
  model.config = cfg;
  model.net = options.init ? *options.init : init_network(arch, data, cfg.seed);
  if (model.net.input_shape() != data.image_shape() || model.net.num_classes() != data.num_classes()) {
    throw ShapeError("train_student: student network does not match the dataset");
  }
  model.history = run_training(cfg, model.net, data, &teacher);
  return model;
}

EvalDump evaluate_network(const NetworkF& net, const Dataset& data, double temperature) {
  if (data.size() > 0 && data.num_classes() != net.num_classes()) {
    throw ShapeError("evaluate: dataset has " + std::to_string(data.num_classes()) + " classes, model predicts " +
                     std::to_string(net.num_classes()));
  }
  const Index n = data.size();
  const Index classes = net.num_classes();
  const Shape img_shape = data.image_shape();
  const Index pix = shape_size(img_shape);
  EvalDump dump;
  dump.probs = TensorD({n, classes});
  dump.embeddings = TensorD({n, net.embedding_dim()});
  dump.true_labels = data.labels;
  dump.human_probs = data.human_probs;
  constexpr Index kChunk = 256;
  for (Index start = 0; start < n; start += kChunk) {
    const Index b = std::min(kChunk, n - start);
    TensorF x({b, img_shape[0], img_shape[1], img_shape[2]}, data.images.flat().segment(start * pix, b * pix));
    const auto out = forward(net, x);
    const TensorD logits = out.logits.cast<double>();
    for (Index r = 0; r < b; ++r) {
      dump.probs.matrix().row(start + r) = softmax_t(logits.matrix().row(r).transpose(), temperature).transpose();
    }
    dump.embeddings.matrix().middleRows(start, b) = out.embeddings.cast<double>().matrix();
  }
  return dump;
}

EvalDump evaluate_model(const TrainedModel& model, const Dataset& data, double temperature) {
  return evaluate_network(model.net, data, temperature);
}

}  // namespace dlab
