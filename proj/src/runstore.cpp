#include "dlab/runstore.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <random>
#include <sstream>

namespace dlab {

static_assert(std::endian::native == std::endian::little, "array container I/O assumes a little-endian host");

// --- array container ---------------------------------------------------------

namespace {

template <typename T>
void put(std::vector<char>& out, T value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<char>& in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

std::size_t element_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
    case DType::i64: return 8;
  }
  return 0;
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, {text.begin(), text.end()}); }

template <typename Scalar>
AnyArray decode_payload(const Shape& shape, const std::vector<char>& bytes, std::size_t offset) {
  Tensor<Scalar> t(shape);
  if (t.size() > 0) std::memcpy(t.data(), bytes.data() + offset, static_cast<std::size_t>(t.size()) * sizeof(Scalar));
  return t;
}

}  // namespace

DType dtype_of(const AnyArray& a) { return static_cast<DType>(a.index() + 1); }

std::vector<char> encode_array(const AnyArray& a) {
  std::vector<char> out(kArrayMagic, kArrayMagic + 8);
  put<std::uint32_t>(out, kArrayVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dtype_of(a)));
  std::visit(
      [&](const auto& t) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (Index e : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(e));
        const auto* p = reinterpret_cast<const char*>(t.data());
        out.insert(out.end(), p, p + static_cast<std::size_t>(t.size()) * sizeof(*t.data()));
      },
      a);
  return out;
}

AnyArray decode_array(const std::vector<char>& bytes, const std::string& source) {
  if (bytes.size() < 20) {
    throw FormatError(source + ": truncated array header (" + std::to_string(bytes.size()) + " bytes)", bytes.size());
  }
  if (std::memcmp(bytes.data(), kArrayMagic, 8) != 0) throw FormatError(source + ": bad array magic", 0);
  if (const auto v = get<std::uint32_t>(bytes, 8); v != kArrayVersion) {
    throw FormatError(source + ": unsupported array version " + std::to_string(v), 8);
  }
  const auto code = get<std::uint32_t>(bytes, 12);
  if (code < 1 || code > 4) throw FormatError(source + ": unknown dtype code " + std::to_string(code), 12);
  const auto dtype = static_cast<DType>(code);
  const auto ndim = get<std::uint32_t>(bytes, 16);
  const std::size_t header = 20 + 8 * static_cast<std::size_t>(ndim);
  if (bytes.size() < header) throw FormatError(source + ": truncated shape", bytes.size());
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const auto e = get<std::uint64_t>(bytes, 20 + 8 * i);
    if (e > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      throw FormatError(source + ": extent out of range", 20 + 8 * i);
    }
    shape.push_back(static_cast<Index>(e));
    count *= e;
  }
  const std::uint64_t expected = count * element_size(dtype);
  const std::uint64_t actual = bytes.size() - header;
  if (actual != expected) {
    throw FormatError(source + ": payload holds " + std::to_string(actual) + " bytes, expected " +
                          std::to_string(expected),
                      header);
  }
  switch (dtype) {
    case DType::f32: return decode_payload<float>(shape, bytes, header);
    case DType::f64: return decode_payload<double>(shape, bytes, header);
    case DType::u8: return decode_payload<std::uint8_t>(shape, bytes, header);
    case DType::i64: return decode_payload<std::int64_t>(shape, bytes, header);
  }
  throw FormatError(source + ": unknown dtype", 12);
}

void save_array(const AnyArray& a, const fs::path& path) { write_file(path, encode_array(a)); }

AnyArray load_array(const fs::path& path) { return decode_array(read_file(path), path.string()); }

TensorD to_double(const AnyArray& a) {
  return std::visit([](const auto& t) { return t.template cast<double>(); }, a);
}

// --- hashing -----------------------------------------------------------------

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  }
  void update(const void* data, std::size_t size) {
    if (size && EVP_DigestUpdate(ctx_.get(), data, size) != 1) throw Error("sha256 update failed");
  }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest, &len);
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
    return os.str();
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(const void* data, std::size_t size) {
  Sha256 h;
  h.update(data, size);
  return h.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("referenced file missing: " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

// --- datasets and dumps ------------------------------------------------------

namespace {

Tensor<std::int64_t> labels_tensor(const std::vector<std::int64_t>& labels) {
  Tensor<std::int64_t> t({static_cast<Index>(labels.size())});
  for (std::size_t i = 0; i < labels.size(); ++i) t[static_cast<Index>(i)] = labels[i];
  return t;
}

std::vector<std::int64_t> labels_vector(const Tensor<std::int64_t>& t) {
  return {t.data(), t.data() + t.size()};
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  save_array(ds.images, dir / "images.dlab");
  save_array(labels_tensor(ds.labels), dir / "labels.dlab");
  if (ds.human_probs) save_array(*ds.human_probs, dir / "human_probs.dlab");
  else fs::remove(dir / "human_probs.dlab");
  std::string names;
  for (const auto& n : ds.class_names) names += n + "\n";
  write_text(dir / "classes.txt", names);
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.images = load_array_as<float>(dir / "images.dlab");
  ds.labels = labels_vector(load_array_as<std::int64_t>(dir / "labels.dlab"));
  if (fs::exists(dir / "human_probs.dlab")) ds.human_probs = load_array_as<double>(dir / "human_probs.dlab");
  std::ifstream in(dir / "classes.txt");
  if (!in) throw Error("cannot open " + (dir / "classes.txt").string());
  for (std::string line; std::getline(in, line);) ds.class_names.push_back(line);
  ds.validate();
  return ds;
}

std::string dataset_hash(const Dataset& ds) {
  Sha256 h;
  for (const AnyArray& a : {AnyArray(ds.images), AnyArray(labels_tensor(ds.labels))}) {
    const auto bytes = encode_array(a);
    h.update(bytes.data(), bytes.size());
  }
  for (const auto& n : ds.class_names) h.update(n.data(), n.size() + 1);
  if (ds.human_probs) {
    const auto bytes = encode_array(*ds.human_probs);
    h.update(bytes.data(), bytes.size());
  }
  return h.hex();
}

void save_dump(const EvalDump& dump, const fs::path& dir) {
  fs::create_directories(dir);
  save_array(dump.probs, dir / "probs.dlab");
  save_array(dump.embeddings, dir / "embeddings.dlab");
  save_array(labels_tensor(dump.true_labels), dir / "labels.dlab");
  if (dump.human_probs) save_array(*dump.human_probs, dir / "human_probs.dlab");
}

EvalDump load_dump(const fs::path& dir) {
  EvalDump dump;
  dump.probs = load_array_as<double>(dir / "probs.dlab");
  dump.embeddings = load_array_as<double>(dir / "embeddings.dlab");
  dump.true_labels = labels_vector(load_array_as<std::int64_t>(dir / "labels.dlab"));
  if (fs::exists(dir / "human_probs.dlab")) dump.human_probs = load_array_as<double>(dir / "human_probs.dlab");
  dump.validate();
  return dump;
}

// --- configuration serialization --------------------------------------------

Json to_json(const AugmentStrategy& s) {
  Json j{{"kind", to_string(s.kind())}};
  if (const auto* p = std::get_if<StandardParams>(&s.params())) {
    j["pad"] = p->pad;
  } else if (const auto* p = std::get_if<CutoutParams>(&s.params())) {
    j["n_holes"] = p->n_holes;
    j["hole_size"] = p->hole_size;
    j["random_size"] = p->random_size;
  } else if (const auto* p = std::get_if<MixupParams>(&s.params())) {
    j["alpha"] = p->alpha;
  } else if (const auto* p = std::get_if<CutmixParams>(&s.params())) {
    j["beta_a"] = p->beta_a;
    j["beta_b"] = p->beta_b;
  }
  return j;
}

AugmentStrategy strategy_from_json(const Json& j) {
  switch (augment_kind_from_string(j.at("kind").get<std::string>())) {
    case AugmentKind::none: return AugmentStrategy::none();
    case AugmentKind::standard: return AugmentStrategy::standard(j.at("pad").get<Index>());
    case AugmentKind::cutout:
      return AugmentStrategy::cutout(j.at("n_holes").get<Index>(), j.at("hole_size").get<Index>(),
                                     j.at("random_size").get<bool>());
    case AugmentKind::mixup: return AugmentStrategy::mixup(j.at("alpha").get<double>());
    case AugmentKind::cutmix: return AugmentStrategy::cutmix(j.at("beta_a").get<double>(), j.at("beta_b").get<double>());
  }
  throw ValueError("unknown strategy");
}

Json to_json(const ArchSpec& a) {
  return {{"kind", a.kind}, {"conv1", a.conv1}, {"conv2", a.conv2}, {"hidden", a.hidden},
          {"normalize_input", a.normalize_input}};
}

ArchSpec arch_from_json(const Json& j) {
  ArchSpec a;
  a.kind = j.at("kind").get<std::string>();
  a.conv1 = j.at("conv1").get<Index>();
  a.conv2 = j.at("conv2").get<Index>();
  a.hidden = j.at("hidden").get<Index>();
  a.normalize_input = j.at("normalize_input").get<bool>();
  return a;
}

Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"cosine_schedule", c.cosine_schedule},
          {"seed", c.seed},
          {"strategy", to_json(c.strategy)},
          {"temperature", c.temperature},
          {"distill_weight", c.distill_weight},
          {"kl_direction", to_string(c.kl_direction)}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.cosine_schedule = j.at("cosine_schedule").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.strategy = strategy_from_json(j.at("strategy"));
  c.temperature = j.at("temperature").get<double>();
  c.distill_weight = j.at("distill_weight").get<double>();
  c.kl_direction = kl_direction_from_string(j.at("kl_direction").get<std::string>());
  return c;
}

Json to_json(const std::vector<EpochRecord>& history) {
  Json j = Json::array();
  for (const auto& r : history) j.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"accuracy", r.accuracy}});
  return j;
}

std::vector<EpochRecord> history_from_json(const Json& j) {
  std::vector<EpochRecord> out;
  for (const auto& r : j) out.push_back({r.at("epoch").get<int>(), r.at("loss").get<double>(), r.at("accuracy").get<double>()});
  return out;
}

// --- checkpoints -------------------------------------------------------------

namespace {

Json layer_to_json(const LayerSpec& s) {
  Json j{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case LayerKind::dense:
      j["in_features"] = s.in_features;
      j["out_features"] = s.out_features;
      break;
    case LayerKind::conv2d:
      j["in_channels"] = s.in_channels;
      j["out_channels"] = s.out_channels;
      j["kernel"] = s.kernel;
      j["padding"] = s.padding == Padding::same ? "same" : "valid";
      break;
    case LayerKind::maxpool2d:
      j["pool"] = s.pool;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const Json& j) {
  switch (layer_kind_from_string(j.at("kind").get<std::string>())) {
    case LayerKind::dense: return LayerSpec::dense(j.at("in_features").get<Index>(), j.at("out_features").get<Index>());
    case LayerKind::conv2d:
      return LayerSpec::conv2d(j.at("in_channels").get<Index>(), j.at("out_channels").get<Index>(),
                               j.at("kernel").get<Index>(),
                               j.at("padding").get<std::string>() == "same" ? Padding::same : Padding::valid);
    case LayerKind::maxpool2d: return LayerSpec::maxpool2d(j.at("pool").get<Index>());
    case LayerKind::relu: return LayerSpec::relu();
    case LayerKind::flatten: return LayerSpec::flatten();
  }
  throw ValueError("bad layer record");
}

std::vector<float> to_std(const Vector<float>& v) { return {v.data(), v.data() + v.size()}; }

Vector<float> from_std(const std::vector<float>& v) {
  return Eigen::Map<const Vector<float>>(v.data(), static_cast<Index>(v.size()));
}

fs::path params_path(const fs::path& checkpoint) { return checkpoint.string() + ".params"; }

}  // namespace

void save_checkpoint(const TrainedModel& model, const fs::path& path) {
  const fs::path params = params_path(path);
  save_array(TensorF({model.net.parameter_count()}, model.net.parameters()), params);
  Json layers = Json::array();
  for (const auto& s : model.net.specs()) layers.push_back(layer_to_json(s));
  Json j{{"format", "dlab-checkpoint"},
         {"version", 1},
         {"role", to_string(model.role)},
         {"arch", to_json(model.arch)},
         {"config", to_json(model.config)},
         {"history", to_json(model.history)},
         {"input_shape", model.net.input_shape()},
         {"embedding_tap", model.net.embedding_tap()},
         {"layers", layers},
         {"input_mean", to_std(model.net.input_mean())},
         {"input_std", to_std(model.net.input_std())},
         {"params",
          {{"path", params.filename().string()},
           {"count", model.net.parameter_count()},
           {"sha256", sha256_file(params)}}}};
  write_text(path, j.dump(2) + "\n");
}

TrainedModel load_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  const Json j = Json::parse(in);
  if (j.value("format", "") != "dlab-checkpoint") throw Error(path.string() + ": not a dlab checkpoint");
  TrainedModel model;
  model.role = role_from_string(j.at("role").get<std::string>());
  model.arch = arch_from_json(j.at("arch"));
  model.config = train_config_from_json(j.at("config"));
  model.history = history_from_json(j.at("history"));
  std::vector<LayerSpec> specs;
  for (const auto& l : j.at("layers")) specs.push_back(layer_from_json(l));
  model.net = NetworkF(j.at("input_shape").get<Shape>(), specs, j.at("embedding_tap").get<Index>());
  const fs::path params = path.parent_path() / j.at("params").at("path").get<std::string>();
  if (sha256_file(params) != j.at("params").at("sha256").get<std::string>()) {
    throw IntegrityError("checkpoint parameters " + params.string() + " do not match their recorded hash");
  }
  model.net.set_parameters(load_array_as<float>(params).flat());
  const auto mean = j.at("input_mean").get<std::vector<float>>();
  if (!mean.empty()) model.net.set_input_normalization(from_std(mean), from_std(j.at("input_std").get<std::vector<float>>()));
  return model;
}

// --- manifests ---------------------------------------------------------------

std::string new_run_id() {
  std::random_device rd;
  const auto now = std::chrono::system_clock::now().time_since_epoch().count();
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0')
     << mix64(static_cast<std::uint64_t>(now) ^ (static_cast<std::uint64_t>(rd()) << 32 | rd()));
  return os.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_manifest(RunManifest& m, const fs::path& path) {
  const fs::path base = path.parent_path();
  Json files = Json::object();
  for (auto& [name, ref] : m.files) {
    ref.sha256 = sha256_file(base / ref.path);
    files[name] = {{"path", ref.path}, {"sha256", ref.sha256}};
  }
  Json metrics = Json::object();
  for (const auto& [k, v] : m.metrics) {
    if (std::isfinite(v)) metrics[k] = v;
  }
  Json j{{"run_id", m.run_id}, {"created_at", m.created_at}, {"role", m.role}, {"config", m.config},
         {"dataset", m.dataset}, {"metrics", metrics}, {"files", files}};
  write_text(path, j.dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& path, bool verify) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  const Json j = Json::parse(in);
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.created_at = j.at("created_at").get<std::string>();
  m.role = j.at("role").get<std::string>();
  m.config = j.at("config");
  m.dataset = j.at("dataset");
  for (const auto& [k, v] : j.at("metrics").items()) m.metrics[k] = v.get<double>();
  for (const auto& [k, v] : j.at("files").items()) {
    m.files[k] = FileRef{v.at("path").get<std::string>(), v.at("sha256").get<std::string>()};
  }
  if (verify) {
    for (const auto& [name, ref] : m.files) {
      const fs::path file = path.parent_path() / ref.path;
      if (!fs::exists(file)) throw IntegrityError("manifest file '" + name + "' missing: " + file.string());
      if (sha256_file(file) != ref.sha256) {
        throw IntegrityError("manifest file '" + name + "' (" + file.string() + ") does not match its recorded hash");
      }
    }
  }
  return m;
}

// --- CSV reports -------------------------------------------------------------

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  if (s == "nan" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
  double x = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || end != s.data() + s.size()) throw ValueError("not a number: '" + s + "'");
  return x;
}

namespace {

std::string join_row(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].find_first_of(",\n\"") != std::string::npos) throw ValueError("CSV cell contains a separator");
    if (i) line += ',';
    line += cells[i];
  }
  return line + "\n";
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

template <typename Derived>
CsvTable class_matrix_table(const std::string& row_label, const std::string& col_prefix,
                            const Eigen::MatrixBase<Derived>& m, bool mask_diagonal) {
  CsvTable t;
  t.header.push_back(row_label);
  for (Index j = 0; j < m.cols(); ++j) t.header.push_back(col_prefix + std::to_string(j));
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (Index j = 0; j < m.cols(); ++j) {
      if (mask_diagonal && i == j) {
        row.emplace_back();
      } else if constexpr (std::is_integral_v<typename Derived::Scalar>) {
        row.push_back(std::to_string(m(i, j)));
      } else {
        row.push_back(format_double(m(i, j)));
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace

void write_csv(const fs::path& path, const CsvTable& table) {
  std::string text = join_row(table.header);
  for (const auto& r : table.rows) text += join_row(r);
  write_text(path, text);
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (std::getline(in, line)) t.header = split_row(line);
  while (std::getline(in, line)) t.rows.push_back(split_row(line));
  return t;
}

ReportSelection ReportSelection::all_for(const EvalDump& dump) {
  ReportSelection sel;
  sel.human = dump.human_probs.has_value();
  return sel;
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{"accuracy", "kld",        "ece",      "precision", "recall",
                                             "f1",       "separability", "cohesion", "adhesion",  "discrimination"};
  return cols;
}

std::map<std::string, double> compute_metrics(const EvalDump& dump, const ReportSelection& sel) {
  std::map<std::string, double> out;
  if (dump.size() == 0) return out;
  const auto cm = confusion_metrics(dump);
  out["accuracy"] = cm.accuracy;
  out["precision"] = cm.precision;
  out["recall"] = cm.recall;
  out["f1"] = cm.f1;
  out["ece"] = ece(dump, sel.ece_bins).ece;
  if (dump.human_probs) out["kld"] = human_kld(dump, sel.human_divergence);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(dump.num_classes()), 0);
  for (auto l : dump.true_labels) ++counts[static_cast<std::size_t>(l)];
  const auto smallest = counts.empty() ? 0 : *std::min_element(counts.begin(), counts.end());
  if (smallest >= 1) out["separability"] = class_separability(dump);
  if (smallest >= 2 && dump.num_classes() >= 2) {
    const auto d = class_discrimination(dump, sel.normalizer);
    out["cohesion"] = d.mean_cohesion;
    out["adhesion"] = d.mean_adhesion;
    out["discrimination"] = d.discrimination;
  }
  return out;
}

ReportOutput emit_report(const EvalDump& dump, const ReportSelection& sel, const fs::path& dir) {
  if (sel.human && !dump.human_probs) {
    throw ValueError("emit_report: human-label reports requested but the dump has no human labels");
  }
  fs::create_directories(dir);
  ReportOutput out;
  auto emit = [&](const std::string& name, const CsvTable& t) {
    write_csv(dir / name, t);
    out.files.push_back(dir / name);
  };

  if (sel.metrics) {
    out.metrics = compute_metrics(dump, sel);
    CsvTable t;
    t.header = metrics_columns();
    std::vector<std::string> row;
    for (const auto& c : metrics_columns()) {
      const auto it = out.metrics.find(c);
      row.push_back(it == out.metrics.end() ? std::string() : format_double(it->second));
    }
    t.rows.push_back(std::move(row));
    emit("metrics.csv", t);
  }
  if (sel.reliability) {
    const auto rel = ece(dump, sel.ece_bins);
    CsvTable t{{"bin_lo", "bin_hi", "count", "confidence", "accuracy"}, {}};
    for (const auto& b : rel.bins) {
      t.rows.push_back({format_double(b.lo), format_double(b.hi), std::to_string(b.count), format_double(b.confidence),
                        format_double(b.accuracy)});
    }
    emit("reliability.csv", t);
  }
  if (sel.confusion) {
    emit("confusion.csv", class_matrix_table("true_class", "pred_", confusion_metrics(dump).confusion, false));
  }
  if (sel.discrimination) {
    const auto d = class_discrimination(dump, sel.normalizer);
    CsvTable t{{"kind", "class_i", "class_j", "value"}, {}};
    for (std::size_t i = 0; i < d.cohesion.size(); ++i) {
      t.rows.push_back({"cohesion", std::to_string(i), "", format_double(d.cohesion[i])});
    }
    for (const auto& [ij, v] : d.adhesion) {
      t.rows.push_back({"adhesion", std::to_string(ij.first), std::to_string(ij.second), format_double(v)});
    }
    t.rows.push_back({"mean_cohesion", "", "", format_double(d.mean_cohesion)});
    t.rows.push_back({"mean_adhesion", "", "", format_double(d.mean_adhesion)});
    t.rows.push_back({"discrimination", "", "", format_double(d.discrimination)});
    t.rows.push_back({"dim", "", "", std::to_string(d.dim)});
    t.rows.push_back({"zero_norm_count", "", "", std::to_string(d.zero_norm_count)});
    emit("discrimination.csv", t);
  }
  if (sel.confidence_matrices) {
    const auto avg = class_mean_distributions(dump.probs, dump.true_labels, dump.num_classes());
    emit("avg_confidence.csv", class_matrix_table("true_class", "p_", avg, false));
    emit("avg_confidence_masked.csv", class_matrix_table("true_class", "p_", avg, true));
  }
  if (sel.human) {
    const auto kld = kld_confusion_matrix(dump);
    emit("kld_matrix.csv", class_matrix_table("human_class", "model_", kld.values, false));
    emit("kld_matrix_scale.csv", CsvTable{{"min", "max"}, {{format_double(kld.min), format_double(kld.max)}}});
    const auto human = class_mean_distributions(*dump.human_probs, dump.true_labels, dump.num_classes());
    emit("human_confidence.csv", class_matrix_table("true_class", "p_", human, false));
    emit("human_confidence_masked.csv", class_matrix_table("true_class", "p_", human, true));
  }
  if (sel.embeddings) {
    save_array(dump.embeddings, dir / "embeddings.dlab");
    save_array(labels_tensor(dump.true_labels), dir / "embedding_labels.dlab");
    out.files.push_back(dir / "embeddings.dlab");
    out.files.push_back(dir / "embedding_labels.dlab");
  }
  return out;
}

}  // namespace dlab
