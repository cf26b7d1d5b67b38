#include "dlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <sstream>
#include <thread>

namespace dlab {

// --- datasets ----------------------------------------------------------------

const Dataset& DatasetBundle::eval(const std::string& name) const {
  for (const auto& [n, ds] : evals) {
    if (n == name) return ds;
  }
  throw ValueError("dataset '" + descriptor + "' has no evaluation set '" + name + "'");
}

Json DatasetBundle::describe() const {
  Json evals_json = Json::object();
  for (const auto& [name, ds] : evals) evals_json[name] = dataset_hash(ds);
  return {{"descriptor", descriptor}, {"train", dataset_hash(train)}, {"evals", evals_json}};
}

namespace {

std::map<std::string, std::string> parse_options(const std::string& text, const std::string& descriptor) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  for (std::string item; std::getline(is, item, ',');) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValueError("dataset descriptor '" + descriptor + "': expected key=value, got '" + item + "'");
    }
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

template <typename T>
T take_number(std::map<std::string, std::string>& opts, const std::string& key, T fallback) {
  const auto it = opts.find(key);
  if (it == opts.end()) return fallback;
  const std::string text = it->second;
  opts.erase(it);
  std::size_t used = 0;
  T value{};
  try {
    if constexpr (std::is_floating_point_v<T>) {
      value = static_cast<T>(std::stod(text, &used));
    } else {
      value = static_cast<T>(std::stoull(text, &used));
    }
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ValueError("dataset option " + key + ": not a number: '" + text + "'");
  return value;
}

DatasetBundle resolve_synth(const std::string& options, std::uint64_t seed) {
  auto opts = parse_options(options, "synth:" + options);
  SynthConfig cfg;
  cfg.seed = take_number<std::uint64_t>(opts, "seed", seed);
  cfg.n_classes = take_number<Index>(opts, "classes", 4);
  const Index train = take_number<Index>(opts, "train", 2000);
  const Index eval = take_number<Index>(opts, "eval", 1000);
  cfg.img_side = take_number<Index>(opts, "side", 12);
  cfg.channels = take_number<Index>(opts, "channels", 3);
  cfg.difficulty = take_number<double>(opts, "difficulty", 1.0);
  if (!opts.empty()) throw ValueError("dataset descriptor synth: unknown option '" + opts.begin()->first + "'");
  if (cfg.n_classes < 2) throw ValueError("synth: need at least two classes");
  if (train % cfg.n_classes != 0 || eval % cfg.n_classes != 0 || train <= 0 || eval <= 0) {
    throw ValueError("synth: train and eval sizes must be positive multiples of the class count");
  }

  DatasetBundle b;
  std::ostringstream canonical;
  canonical << "synth:seed=" << cfg.seed << ",classes=" << cfg.n_classes << ",train=" << train << ",eval=" << eval
            << ",side=" << cfg.img_side << ",channels=" << cfg.channels << ",difficulty=" << format_double(cfg.difficulty);
  b.descriptor = canonical.str();

  cfg.per_class = train / cfg.n_classes;
  cfg.sample_stream = 0;
  b.train = make_synthetic(cfg);

  cfg.per_class = eval / cfg.n_classes;
  cfg.sample_stream = 1;
  b.evals.emplace_back("eval", make_synthetic(cfg));

  cfg.sample_stream = 2;
  cfg.contrast = 0.6;
  cfg.brightness = 0.1;
  b.evals.emplace_back("shift", make_synthetic(cfg));
  return b;
}

DatasetBundle resolve_dir(const std::string& path) {
  DatasetBundle b;
  b.descriptor = "dir:" + path;
  const fs::path root(path);
  if (!fs::exists(root / "train" / "images.dlab")) throw Error("dataset directory " + path + " has no train/ split");
  b.train = load_dataset(root / "train");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename() != "train" && fs::exists(entry.path() / "images.dlab")) {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  for (const auto& n : names) b.evals.emplace_back(n, load_dataset(root / n));
  return b;
}

DatasetBundle resolve_cifar(const std::string& rest) {
  const auto comma = rest.find(',');
  const std::string dir = rest.substr(0, comma);
  auto opts = comma == std::string::npos ? std::map<std::string, std::string>{}
                                         : parse_options(rest.substr(comma + 1), "cifar10:" + rest);
  DatasetBundle b;
  b.descriptor = "cifar10:" + rest;
  b.train = load_cifar10_bin(dir, CifarSplit::train);
  Dataset test = load_cifar10_bin(dir, CifarSplit::test);
  if (const auto it = opts.find("human"); it != opts.end()) {
    test = attach_human_labels(std::move(test), fs::path(it->second));
    opts.erase(it);
  }
  if (!opts.empty()) throw ValueError("dataset descriptor cifar10: unknown option '" + opts.begin()->first + "'");
  b.evals.emplace_back("eval", std::move(test));
  return b;
}

DatasetBundle resolve_mnist(const std::string& dir) {
  const fs::path root(dir);
  DatasetBundle b;
  b.descriptor = "mnist:" + dir;
  b.train = load_mnist_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte");
  b.evals.emplace_back("eval", load_mnist_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte"));
  return b;
}

}  // namespace

DatasetBundle resolve_dataset(const std::string& descriptor, std::uint64_t seed) {
  const auto colon = descriptor.find(':');
  const std::string kind = descriptor.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : descriptor.substr(colon + 1);
  if (kind == "synth") return resolve_synth(rest, seed);
  if (rest.empty()) throw ValueError("dataset descriptor '" + descriptor + "' needs a path");
  if (kind == "dir") return resolve_dir(rest);
  if (kind == "cifar10") return resolve_cifar(rest);
  if (kind == "mnist") return resolve_mnist(rest);
  throw ValueError("unknown dataset kind '" + kind + "' (expected synth, dir, cifar10 or mnist)");
}

// --- recipes -----------------------------------------------------------------

void ExperimentRecipe::validate() const {
  teacher.config.validate();
  student.config.validate();
  teacher.config.strategy.validate();
  student.config.strategy.validate();
  if (!(eval_temperature > 0)) throw ValueError("eval temperature must be positive");
  if (!(distill_fraction >= 0 && distill_fraction < 1)) throw ValueError("distill fraction must lie in [0, 1)");
  if (ece_bins < 1) throw ValueError("ece bins must be positive");
}

ReportSelection ExperimentRecipe::report_selection(const EvalDump& dump) const {
  ReportSelection sel = ReportSelection::all_for(dump);
  sel.ece_bins = ece_bins;
  sel.normalizer = normalizer;
  sel.human_divergence = human_divergence;
  sel.embeddings = export_embeddings;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(dump.num_classes()), 0);
  for (auto l : dump.true_labels) ++counts[static_cast<std::size_t>(l)];
  const auto smallest = counts.empty() ? 0 : *std::min_element(counts.begin(), counts.end());
  if (dump.size() == 0) {
    sel.reliability = sel.confusion = false;
  }
  sel.confidence_matrices = smallest >= 1;
  sel.human = sel.human && smallest >= 1;
  sel.discrimination = smallest >= 2 && dump.num_classes() >= 2;
  return sel;
}

namespace {

Json to_json(const ModelRecipe& m) { return {{"arch", dlab::to_json(m.arch)}, {"config", dlab::to_json(m.config)}}; }

ModelRecipe model_recipe_from_json(const Json& j) {
  return {arch_from_json(j.at("arch")), train_config_from_json(j.at("config"))};
}

}  // namespace

Json to_json(const ExperimentRecipe& r) {
  return {{"name", r.name},
          {"seed", r.seed},
          {"dataset", r.dataset},
          {"teacher", to_json(r.teacher)},
          {"student", to_json(r.student)},
          {"eval_sets", r.eval_sets},
          {"eval_temperature", r.eval_temperature},
          {"distill_fraction", r.distill_fraction},
          {"ece_bins", r.ece_bins},
          {"normalizer", to_string(r.normalizer)},
          {"human_divergence", to_string(r.human_divergence)},
          {"export_embeddings", r.export_embeddings}};
}

ExperimentRecipe recipe_from_json(const Json& j) {
  ExperimentRecipe r;
  r.name = j.value("name", r.name);
  r.seed = j.at("seed").get<std::uint64_t>();
  r.dataset = j.value("dataset", r.dataset);
  r.teacher = model_recipe_from_json(j.at("teacher"));
  r.student = model_recipe_from_json(j.at("student"));
  r.eval_sets = j.value("eval_sets", r.eval_sets);
  r.eval_temperature = j.value("eval_temperature", r.eval_temperature);
  r.distill_fraction = j.value("distill_fraction", r.distill_fraction);
  r.ece_bins = j.value("ece_bins", r.ece_bins);
  r.normalizer = cohesion_normalizer_from_string(j.value("normalizer", to_string(r.normalizer)));
  r.human_divergence = human_divergence_from_string(j.value("human_divergence", to_string(r.human_divergence)));
  r.export_embeddings = j.value("export_embeddings", r.export_embeddings);
  return r;
}

ExperimentRecipe default_recipe(std::uint64_t seed) {
  ExperimentRecipe r;
  r.seed = seed;
  r.teacher.arch = ArchSpec{"cnn", 8, 16, 32, true};
  r.teacher.config.seed = derive_seed(seed, "teacher");
  r.student.arch = ArchSpec{"lenet", 4, 8, 16, true};
  r.student.config.seed = derive_seed(seed, "student");
  // The tau^2-scaled soft term dominates early gradients; a smaller step keeps students stable.
  r.student.config.lr = 0.01;
  return r;
}

std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::teacher_aug: return "teacher_aug";
    case Arm::student_aug: return "student_aug";
    case Arm::both: return "both";
  }
  return "unknown";
}

Arm arm_from_string(const std::string& name) {
  for (auto a : {Arm::teacher_aug, Arm::student_aug, Arm::both}) {
    if (to_string(a) == name) return a;
  }
  throw ValueError("unknown arm '" + name + "'");
}

std::string cell_name(AugmentKind strategy, Arm arm) { return to_string(strategy) + "-" + to_string(arm); }

ExperimentRecipe matrix_cell(const ExperimentRecipe& base, AugmentKind strategy, Arm arm) {
  ExperimentRecipe r = base;
  r.name = cell_name(strategy, arm);
  const auto s = AugmentStrategy::from_kind(strategy);
  r.teacher.config.strategy = arm == Arm::student_aug ? AugmentStrategy::none() : s;
  r.student.config.strategy = arm == Arm::teacher_aug ? AugmentStrategy::none() : s;
  return r;
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::teacher: return "teacher";
    case Stage::student: return "student";
    case Stage::cell: return "cell";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& name) {
  for (auto s : {Stage::teacher, Stage::student, Stage::cell}) {
    if (to_string(s) == name) return s;
  }
  throw ValueError("unknown stage '" + name + "'");
}

// --- runs --------------------------------------------------------------------

const EvalOutcome& RunResult::outcome(const std::string& role, const std::string& eval_set) const {
  for (const auto& o : outcomes) {
    if (o.role == role && o.eval_set == eval_set) return o;
  }
  throw ValueError("run has no outcome for " + role + "/" + eval_set);
}

namespace {

struct TrainingSplits {
  std::vector<Dataset> owned;
  const Dataset* teacher = nullptr;
  const Dataset* student = nullptr;
};

TrainingSplits training_splits(const ExperimentRecipe& recipe, const DatasetBundle& data) {
  TrainingSplits s;
  if (recipe.distill_fraction == 0) {
    s.teacher = s.student = &data.train;
    return s;
  }
  s.owned = split(data.train, {1 - recipe.distill_fraction, recipe.distill_fraction},
                  derive_seed(recipe.seed, "distill-split"));
  s.teacher = &s.owned[0];
  s.student = &s.owned[1];
  return s;
}

void prepare_dir(const fs::path& dir) {
  if (fs::exists(dir) && !fs::is_empty(dir)) throw Error("output directory " + dir.string() + " is not empty");
  fs::create_directories(dir);
}

std::vector<std::string> selected_evals(const ExperimentRecipe& recipe, const DatasetBundle& data) {
  if (recipe.eval_sets.empty()) {
    std::vector<std::string> names;
    for (const auto& e : data.evals) names.push_back(e.first);
    return names;
  }
  for (const auto& n : recipe.eval_sets) data.eval(n);
  return recipe.eval_sets;
}

RunResult finish_run(const ExperimentRecipe& recipe, const DatasetBundle& data, const fs::path& dir, Stage stage,
                     const std::vector<std::pair<std::string, const TrainedModel*>>& models) {
  RunResult result;
  result.dir = dir;
  const auto evals = selected_evals(recipe, data);

  CsvTable metrics_table;
  metrics_table.header = {"role", "eval_set"};
  for (const auto& c : metrics_columns()) metrics_table.header.push_back(c);

  RunManifest m;
  for (const auto& [role, model] : models) {
    save_checkpoint(*model, dir / (role + ".ckpt"));
    for (const auto& name : evals) {
      const EvalDump dump = evaluate_model(*model, data.eval(name), recipe.eval_temperature);
      save_dump(dump, dir / role / name / "dump");
      const auto report = emit_report(dump, recipe.report_selection(dump), dir / role / name / "report");
      result.outcomes.push_back({role, name, report.metrics});
      std::vector<std::string> row{role, name};
      for (const auto& c : metrics_columns()) {
        const auto it = report.metrics.find(c);
        row.push_back(it == report.metrics.end() ? std::string() : format_double(it->second));
      }
      metrics_table.rows.push_back(std::move(row));
      for (const auto& [k, v] : report.metrics) m.metrics[role + "/" + name + "/" + k] = v;
    }
  }
  write_csv(dir / "metrics.csv", metrics_table);

  m.run_id = new_run_id();
  m.created_at = utc_timestamp();
  m.role = stage == Stage::teacher ? "teacher" : "student";
  m.config = {{"stage", to_string(stage)}, {"recipe", to_json(recipe)}};
  m.dataset = data.describe();
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    m.files[rel] = FileRef{rel, ""};
  }
  result.manifest = dir / "manifest.json";
  write_manifest(m, result.manifest);
  return result;
}

TrainedModel train_cell_teacher(const ExperimentRecipe& recipe, const TrainingSplits& splits) {
  return train_teacher(recipe.teacher.config, recipe.teacher.arch, *splits.teacher);
}

}  // namespace

RunResult run_teacher(const ExperimentRecipe& recipe, const DatasetBundle& data, const fs::path& dir) {
  recipe.validate();
  selected_evals(recipe, data);
  prepare_dir(dir);
  const auto splits = training_splits(recipe, data);
  const TrainedModel teacher = train_cell_teacher(recipe, splits);
  return finish_run(recipe, data, dir, Stage::teacher, {{"teacher", &teacher}});
}

RunResult run_student(const ExperimentRecipe& recipe_in, const DatasetBundle& data, const TrainedModel& teacher,
                      const fs::path& dir) {
  ExperimentRecipe recipe = recipe_in;
  recipe.teacher = {teacher.arch, teacher.config};
  recipe.validate();
  selected_evals(recipe, data);
  prepare_dir(dir);
  const auto splits = training_splits(recipe, data);
  const TrainedModel student = train_student(recipe.student.config, recipe.student.arch, teacher, *splits.student);
  return finish_run(recipe, data, dir, Stage::student, {{"teacher", &teacher}, {"student", &student}});
}

RunResult run_cell(const ExperimentRecipe& recipe, const DatasetBundle& data, const fs::path& dir,
                   const TrainedModel* teacher) {
  recipe.validate();
  selected_evals(recipe, data);
  if (teacher && !(teacher->config == recipe.teacher.config && teacher->arch == recipe.teacher.arch)) {
    throw ValueError("run_cell: supplied teacher does not match the recipe");
  }
  prepare_dir(dir);
  const auto splits = training_splits(recipe, data);
  std::optional<TrainedModel> trained;
  if (!teacher) teacher = &trained.emplace(train_cell_teacher(recipe, splits));
  const TrainedModel student = train_student(recipe.student.config, recipe.student.arch, *teacher, *splits.student);
  return finish_run(recipe, data, dir, Stage::cell, {{"teacher", teacher}, {"student", &student}});
}

RunResult rerun_from_manifest(const fs::path& manifest, const fs::path& dir) {
  const RunManifest m = read_manifest(manifest, true);
  const Stage stage = stage_from_string(m.config.at("stage").get<std::string>());
  const ExperimentRecipe recipe = recipe_from_json(m.config.at("recipe"));
  const DatasetBundle data = resolve_dataset(m.dataset.at("descriptor").get<std::string>(), recipe.seed);
  if (data.describe() != m.dataset) {
    throw IntegrityError("dataset '" + data.descriptor + "' no longer matches the content hashes in " +
                         manifest.string());
  }
  switch (stage) {
    case Stage::teacher: return run_teacher(recipe, data, dir);
    case Stage::cell: return run_cell(recipe, data, dir);
    case Stage::student: {
      const TrainedModel teacher = load_checkpoint(manifest.parent_path() / "teacher.ckpt");
      return run_student(recipe, data, teacher, dir);
    }
  }
  throw ValueError("unknown stage");
}

namespace {

/// Runs fn(0..n-1) on up to `jobs` threads; rethrows the lowest-index failure.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::clamp<int>(jobs, 1, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

MatrixResult run_matrix(const ExperimentRecipe& base, const DatasetBundle& data, const fs::path& out, int jobs) {
  const auto start = std::chrono::steady_clock::now();
  base.validate();
  fs::create_directories(out);

  MatrixResult result;
  std::vector<ExperimentRecipe> recipes;
  for (auto s : {AugmentKind::none, AugmentKind::standard, AugmentKind::cutout, AugmentKind::mixup,
                 AugmentKind::cutmix}) {
    for (auto a : {Arm::teacher_aug, Arm::student_aug, Arm::both}) {
      recipes.push_back(matrix_cell(base, s, a));
      result.cells.push_back({s, a, {}});
      if (fs::exists(out / cell_name(s, a))) {
        throw Error("matrix cell directory " + (out / cell_name(s, a)).string() + " already exists");
      }
    }
  }

  // Cells that agree on the teacher recipe share one trained teacher.
  std::vector<ModelRecipe> teacher_recipes;
  std::vector<std::size_t> teacher_of(recipes.size());
  for (std::size_t i = 0; i < recipes.size(); ++i) {
    const auto it = std::find(teacher_recipes.begin(), teacher_recipes.end(), recipes[i].teacher);
    teacher_of[i] = static_cast<std::size_t>(it - teacher_recipes.begin());
    if (it == teacher_recipes.end()) teacher_recipes.push_back(recipes[i].teacher);
  }
  const auto splits = training_splits(base, data);
  std::vector<std::optional<TrainedModel>> teachers(teacher_recipes.size());
  parallel_for(teacher_recipes.size(), jobs, [&](std::size_t t) {
    teachers[t] = train_teacher(teacher_recipes[t].config, teacher_recipes[t].arch, *splits.teacher);
  });
  parallel_for(recipes.size(), jobs, [&](std::size_t i) {
    result.cells[i].result = run_cell(recipes[i], data, out / recipes[i].name, &*teachers[teacher_of[i]]);
  });

  CsvTable summary;
  summary.header = {"strategy", "arm", "role", "eval_set"};
  for (const auto& c : metrics_columns()) summary.header.push_back(c);
  for (const auto& cell : result.cells) {
    for (const auto& o : cell.result.outcomes) {
      std::vector<std::string> row{to_string(cell.strategy), to_string(cell.arm), o.role, o.eval_set};
      for (const auto& c : metrics_columns()) {
        const auto it = o.metrics.find(c);
        row.push_back(it == o.metrics.end() ? std::string() : format_double(it->second));
      }
      summary.rows.push_back(std::move(row));
    }
  }
  result.summary = out / "matrix_metrics.csv";
  write_csv(result.summary, summary);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace dlab
