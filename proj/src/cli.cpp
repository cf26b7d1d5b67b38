#include "dlab/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "dlab/experiment.hpp"
#include "dlab/gradcheck.hpp"

namespace dlab {

namespace {

struct UsageError : Error {
  using Error::Error;
};

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

int fail(std::ostream& err, const char* kind, const std::string& message, int code) {
  err << "error: kind=" << kind << " message=\"" << one_line(message) << "\"\n";
  return code;
}

struct Options {
  std::optional<std::uint64_t> seed;
  std::string dataset = "synth";
  std::optional<std::string> strategy;
  std::optional<double> temperature;
  std::optional<double> distill_weight;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::string> arch;
  std::optional<std::string> kl_direction;
  std::optional<double> distill_fraction;
  std::string out;
  std::string from_manifest;
  std::string recipe;
  std::string teacher;
  std::string checkpoint;
  std::string dump;
  double eval_temperature = 1.0;
  int ece_bins = kDefaultEceBins;
  std::string normalizer = to_string(CohesionNormalizer::upper_triangle_over_ordered_pairs);
  std::string human_divergence = to_string(HumanDivergence::kl_model_human);
  bool embeddings = false;
  int jobs = 1;
  std::string precision = "both";
  int instances = 20;
};

std::uint64_t require_seed(const Options& o) {
  if (!o.seed) throw UsageError("--seed is required");
  return *o.seed;
}

void require_out(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
}

ExperimentRecipe base_recipe(const Options& o) {
  const std::uint64_t seed = require_seed(o);
  ExperimentRecipe r = default_recipe(seed);
  if (!o.recipe.empty()) {
    std::ifstream in(o.recipe);
    if (!in) throw UsageError("cannot open recipe file " + o.recipe);
    r = recipe_from_json(Json::parse(in));
    r.seed = seed;
    r.teacher.config.seed = derive_seed(seed, "teacher");
    r.student.config.seed = derive_seed(seed, "student");
  }
  r.dataset = o.dataset;
  r.eval_temperature = o.eval_temperature;
  r.ece_bins = o.ece_bins;
  r.normalizer = cohesion_normalizer_from_string(o.normalizer);
  r.human_divergence = human_divergence_from_string(o.human_divergence);
  r.export_embeddings = r.export_embeddings || o.embeddings;
  if (o.distill_fraction) r.distill_fraction = *o.distill_fraction;
  if (o.epochs) r.teacher.config.epochs = r.student.config.epochs = *o.epochs;
  return r;
}

void print_outcomes(std::ostream& out, const RunResult& r) {
  out << "manifest=" << r.manifest.string() << "\n";
  for (const auto& o : r.outcomes) {
    out << o.role << "/" << o.eval_set;
    for (const char* key : {"accuracy", "ece", "separability", "discrimination"}) {
      if (const auto it = o.metrics.find(key); it != o.metrics.end()) out << " " << key << "=" << format_double(it->second);
    }
    out << "\n";
  }
}

void check_stage(const fs::path& manifest, Stage expected) {
  const auto m = read_manifest(manifest, false);
  const auto stage = m.config.at("stage").get<std::string>();
  if (stage != to_string(expected)) {
    throw UsageError("manifest " + manifest.string() + " records a " + stage + " run, not a " + to_string(expected) +
                     " run");
  }
}

int cmd_synth(const Options& o, std::ostream& out) {
  require_out(o);
  if (o.dataset.rfind("synth", 0) != 0) throw UsageError("synth writes synthetic datasets only (--dataset synth[:...])");
  const auto bundle = resolve_dataset(o.dataset, require_seed(o));
  const fs::path dir(o.out);
  save_dataset(bundle.train, dir / "train");
  for (const auto& [name, ds] : bundle.evals) save_dataset(ds, dir / name);
  std::ofstream(dir / "descriptor.txt") << bundle.descriptor << "\n";
  out << "dataset=dir:" << dir.string() << "\n" << "source=" << bundle.descriptor << "\n";
  return kExitOk;
}

int cmd_train_teacher(const Options& o, std::ostream& out) {
  require_out(o);
  if (!o.from_manifest.empty()) {
    check_stage(o.from_manifest, Stage::teacher);
    print_outcomes(out, rerun_from_manifest(o.from_manifest, o.out));
    return kExitOk;
  }
  ExperimentRecipe r = base_recipe(o);
  r.name = "teacher";
  if (o.strategy) r.teacher.config.strategy = AugmentStrategy::from_kind(augment_kind_from_string(*o.strategy));
  if (o.arch) r.teacher.arch.kind = *o.arch;
  if (o.lr) r.teacher.config.lr = *o.lr;
  const auto data = resolve_dataset(r.dataset, r.seed);
  r.dataset = data.descriptor;
  print_outcomes(out, run_teacher(r, data, o.out));
  return kExitOk;
}

int cmd_distill(const Options& o, std::ostream& out) {
  require_out(o);
  if (!o.from_manifest.empty()) {
    check_stage(o.from_manifest, Stage::student);
    print_outcomes(out, rerun_from_manifest(o.from_manifest, o.out));
    return kExitOk;
  }
  if (o.teacher.empty()) throw UsageError("--teacher is required");
  ExperimentRecipe r = base_recipe(o);
  r.name = "student";
  if (o.strategy) r.student.config.strategy = AugmentStrategy::from_kind(augment_kind_from_string(*o.strategy));
  if (o.temperature) r.student.config.temperature = *o.temperature;
  if (o.distill_weight) r.student.config.distill_weight = *o.distill_weight;
  if (o.kl_direction) r.student.config.kl_direction = kl_direction_from_string(*o.kl_direction);
  if (o.arch) r.student.arch.kind = *o.arch;
  if (o.lr) r.student.config.lr = *o.lr;
  const TrainedModel teacher = load_checkpoint(o.teacher);
  const auto data = resolve_dataset(r.dataset, r.seed);
  r.dataset = data.descriptor;
  print_outcomes(out, run_student(r, data, teacher, o.out));
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  require_out(o);
  const auto seed = require_seed(o);
  const TrainedModel model = load_checkpoint(o.checkpoint);
  const auto data = resolve_dataset(o.dataset, seed);
  for (const auto& [name, ds] : data.evals) {
    const auto dump = evaluate_model(model, ds, o.eval_temperature);
    const fs::path dir = fs::path(o.out) / name;
    save_dump(dump, dir);
    out << name << " dump=" << dir.string() << " samples=" << dump.size();
    if (dump.size() > 0) out << " accuracy=" << format_double(confusion_metrics(dump).accuracy);
    out << "\n";
  }
  return kExitOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  if (o.dump.empty()) throw UsageError("--dump is required");
  require_out(o);
  require_seed(o);
  const EvalDump dump = load_dump(o.dump);
  ExperimentRecipe r;
  r.ece_bins = o.ece_bins;
  r.normalizer = cohesion_normalizer_from_string(o.normalizer);
  r.human_divergence = human_divergence_from_string(o.human_divergence);
  r.export_embeddings = o.embeddings;
  const auto report = emit_report(dump, r.report_selection(dump), o.out);
  for (const auto& f : report.files) out << "wrote " << f.string() << "\n";
  for (const auto& [k, v] : report.metrics) out << k << "=" << format_double(v) << "\n";
  return kExitOk;
}

int cmd_matrix(const Options& o, std::ostream& out) {
  require_out(o);
  if (!o.from_manifest.empty()) {
    check_stage(o.from_manifest, Stage::cell);
    print_outcomes(out, rerun_from_manifest(o.from_manifest, o.out));
    return kExitOk;
  }
  ExperimentRecipe r = base_recipe(o);
  if (o.temperature) r.student.config.temperature = *o.temperature;
  if (o.distill_weight) r.student.config.distill_weight = *o.distill_weight;
  if (o.kl_direction) r.student.config.kl_direction = kl_direction_from_string(*o.kl_direction);
  const auto data = resolve_dataset(r.dataset, r.seed);
  r.dataset = data.descriptor;
  const auto result = run_matrix(r, data, o.out, o.jobs);
  for (const auto& cell : result.cells) {
    out << cell_name(cell.strategy, cell.arm) << " manifest=" << cell.result.manifest.string();
    for (const auto& role : {"teacher", "student"}) {
      const auto& m = cell.result.outcome(role, data.evals.front().first).metrics;
      out << " " << role << "_accuracy=" << format_double(m.at("accuracy"));
    }
    out << "\n";
  }
  out << "summary=" << result.summary.string() << " seconds=" << result.seconds << "\n";
  return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const auto seed = require_seed(o);
  std::vector<Precision> precisions;
  if (o.precision == "f64" || o.precision == "both") precisions.push_back(Precision::f64);
  if (o.precision == "f32" || o.precision == "both") precisions.push_back(Precision::f32);
  bool ok = true;
  for (auto p : precisions) {
    const auto report = run_gradcheck(seed, p, o.instances);
    for (const auto& c : report.cases) {
      out << (c.passed() ? "PASS" : "FAIL") << " " << (p == Precision::f64 ? "f64" : "f32") << " " << c.name
          << " instances=" << c.instances << " max_params=" << c.max_params << " max_rel_error=" << c.max_error
          << " tolerance=" << c.tolerance << "\n";
    }
    ok = ok && report.passed();
  }
  if (!ok) throw Error("gradient check failed");
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Augmentation and knowledge-distillation lab", args.empty() ? "dlab" : args.front()};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Seed for every random choice (required)"); };
  auto dataset = [&](CLI::App* c) {
    c->add_option("--dataset", o.dataset, "synth[:k=v,...] | dir:PATH | cifar10:DIR[,human=FILE] | mnist:DIR")
        ->capture_default_str();
  };
  auto outdir = [&](CLI::App* c, const char* what) { c->add_option("--out", o.out, what); };
  auto from_manifest = [&](CLI::App* c) {
    c->add_option("--from-manifest", o.from_manifest, "Re-run the run recorded in this manifest (seed not needed)");
  };
  auto training = [&](CLI::App* c) {
    c->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::PositiveNumber);
    c->add_option("--recipe", o.recipe, "Recipe file (JSON); flags override it")->check(CLI::ExistingFile);
    c->add_option("--distill-fraction", o.distill_fraction, "Hold out this fraction of training data for distillation");
  };
  auto reports = [&](CLI::App* c) {
    c->add_option("--eval-temperature", o.eval_temperature, "Softmax temperature of evaluation dumps")
        ->capture_default_str();
    c->add_option("--ece-bins", o.ece_bins, "Reliability bins")->capture_default_str();
    c->add_option("--normalizer", o.normalizer, "Cohesion normalizer")
        ->check(CLI::IsMember({"upper_triangle_over_ordered_pairs", "unordered_pair_mean"}))
        ->capture_default_str();
    c->add_option("--human-divergence", o.human_divergence, "Model-vs-human dataset divergence")
        ->check(CLI::IsMember({"kl_model_human", "kl_human_model", "cross_entropy"}))
        ->capture_default_str();
    c->add_flag("--embeddings", o.embeddings, "Also export embeddings for external projection");
  };
  const std::vector<std::string> strategies{"none", "standard", "cutout", "mixup", "cutmix"};
  const std::vector<std::string> directions{"student_teacher", "teacher_student"};
  const std::vector<std::string> archs{"cnn", "lenet", "mlp", "linear"};

  auto* synth = app.add_subcommand("synth", "Write the synthetic train and evaluation sets to a directory");
  seed(synth);
  dataset(synth);
  outdir(synth, "Output directory (required)");

  auto* teacher = app.add_subcommand("train-teacher", "Train and evaluate a teacher");
  seed(teacher);
  dataset(teacher);
  outdir(teacher, "Run directory (required, must be empty)");
  from_manifest(teacher);
  training(teacher);
  reports(teacher);
  teacher->add_option("--strategy", o.strategy, "Teacher augmentation")->check(CLI::IsMember(strategies));
  teacher->add_option("--arch", o.arch, "Teacher architecture")->check(CLI::IsMember(archs));
  teacher->add_option("--lr", o.lr, "Learning rate")->check(CLI::NonNegativeNumber);

  auto* distill = app.add_subcommand("distill", "Distill a student from a teacher checkpoint");
  seed(distill);
  dataset(distill);
  outdir(distill, "Run directory (required, must be empty)");
  from_manifest(distill);
  training(distill);
  reports(distill);
  distill->add_option("--teacher", o.teacher, "Teacher checkpoint")->check(CLI::ExistingFile);
  distill->add_option("--strategy", o.strategy, "Student augmentation")->check(CLI::IsMember(strategies));
  distill->add_option("--temperature", o.temperature, "Distillation temperature");
  distill->add_option("--distill-weight", o.distill_weight, "Weight of the soft-target term");
  distill->add_option("--kl-direction", o.kl_direction, "Divergence direction")->check(CLI::IsMember(directions));
  distill->add_option("--arch", o.arch, "Student architecture")->check(CLI::IsMember(archs));
  distill->add_option("--lr", o.lr, "Learning rate")->check(CLI::NonNegativeNumber);

  auto* evaluate = app.add_subcommand("evaluate", "Write evaluation dumps of a checkpoint");
  seed(evaluate);
  dataset(evaluate);
  outdir(evaluate, "Output directory (required)");
  evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate (required)");
  evaluate->add_option("--eval-temperature", o.eval_temperature, "Softmax temperature")->capture_default_str();

  auto* report = app.add_subcommand("report", "Emit CSV reports for an evaluation dump");
  seed(report);
  outdir(report, "Report directory (required)");
  report->add_option("--dump", o.dump, "Dump directory (required)");
  report->add_option("--ece-bins", o.ece_bins, "Reliability bins")->capture_default_str();
  report->add_option("--normalizer", o.normalizer, "Cohesion normalizer")
      ->check(CLI::IsMember({"upper_triangle_over_ordered_pairs", "unordered_pair_mean"}));
  report->add_option("--human-divergence", o.human_divergence, "Model-vs-human dataset divergence")
      ->check(CLI::IsMember({"kl_model_human", "kl_human_model", "cross_entropy"}));
  report->add_flag("--embeddings", o.embeddings, "Also export embeddings");

  auto* matrix = app.add_subcommand("matrix", "Run every strategy under every augmentation arm");
  seed(matrix);
  dataset(matrix);
  outdir(matrix, "Output directory (required)");
  from_manifest(matrix);
  training(matrix);
  reports(matrix);
  matrix->add_option("--temperature", o.temperature, "Distillation temperature");
  matrix->add_option("--distill-weight", o.distill_weight, "Weight of the soft-target term");
  matrix->add_option("--kl-direction", o.kl_direction, "Divergence direction")->check(CLI::IsMember(directions));
  matrix->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every layer kind and the loss");
  seed(gradcheck);
  gradcheck->add_option("--precision", o.precision, "f64, f32 or both")
      ->check(CLI::IsMember({"f64", "f32", "both"}))
      ->capture_default_str();
  gradcheck->add_option("--instances", o.instances, "Random instances per case")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  if (args.empty()) argv.push_back("dlab");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", e.what(), kExitUsage);
  }

  try {
    if (!o.from_manifest.empty() && (o.seed || !o.recipe.empty())) {
      throw UsageError("--from-manifest takes its seed and recipe from the manifest");
    }
    if (*synth) return cmd_synth(o, out);
    if (*teacher) return cmd_train_teacher(o, out);
    if (*distill) return cmd_distill(o, out);
    if (*evaluate) return cmd_evaluate(o, out);
    if (*report) return cmd_report(o, out);
    if (*matrix) return cmd_matrix(o, out);
    if (*gradcheck) return cmd_gradcheck(o, out);
    return fail(err, "usage", "no subcommand", kExitUsage);
  } catch (const UsageError& e) {
    return fail(err, "usage", e.what(), kExitUsage);
  } catch (const FormatError& e) {
    return fail(err, "format", e.what(), kExitFormat);
  } catch (const IntegrityError& e) {
    return fail(err, "integrity", e.what(), kExitIntegrity);
  } catch (const std::exception& e) {
    return fail(err, "failure", e.what(), kExitFailure);
  }
}

int dispatch(int argc, const char* const* argv) {
  return dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace dlab
