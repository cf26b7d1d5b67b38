#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dlab/dataset.hpp"
#include "dlab/distill.hpp"
#include "dlab/metrics.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// --- array container ---------------------------------------------------------
//
// Layout (all integers little-endian):
//   0   8 bytes  magic "DLABARR\0"
//   8   u32      version (1)
//   12  u32      dtype code: 1 = f32, 2 = f64, 3 = u8, 4 = i64
//   16  u32      ndim
//   20  ndim*u64 shape
//   ..  payload  row-major values

inline constexpr char kArrayMagic[8] = {'D', 'L', 'A', 'B', 'A', 'R', 'R', '\0'};
inline constexpr std::uint32_t kArrayVersion = 1;

enum class DType : std::uint32_t { f32 = 1, f64 = 2, u8 = 3, i64 = 4 };

using AnyArray = std::variant<TensorF, TensorD, Tensor<std::uint8_t>, Tensor<std::int64_t>>;

DType dtype_of(const AnyArray& a);
std::vector<char> encode_array(const AnyArray& a);
/// Throws FormatError naming the offset of the first inconsistency.
AnyArray decode_array(const std::vector<char>& bytes, const std::string& source = "<memory>");

void save_array(const AnyArray& a, const fs::path& path);
AnyArray load_array(const fs::path& path);

/// Loads and requires a specific element type.
template <typename Scalar>
Tensor<Scalar> load_array_as(const fs::path& path) {
  AnyArray a = load_array(path);
  if (auto* t = std::get_if<Tensor<Scalar>>(&a)) return std::move(*t);
  throw FormatError(path.string() + ": unexpected dtype code " + std::to_string(static_cast<int>(dtype_of(a))), 12);
}

/// Any numeric array converted to f64.
TensorD to_double(const AnyArray& a);

// --- hashing -----------------------------------------------------------------

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const fs::path& path);

// --- datasets and dumps ------------------------------------------------------

/// images.dlab (f32), labels.dlab (i64), optional human_probs.dlab (f64), classes.txt.
void save_dataset(const Dataset& ds, const fs::path& dir);
Dataset load_dataset(const fs::path& dir);
/// Content hash over images, labels, class names and human labels.
std::string dataset_hash(const Dataset& ds);

/// probs.dlab, embeddings.dlab, labels.dlab, optional human_probs.dlab.
/// embeddings.dlab + labels.dlab double as the embedding export.
void save_dump(const EvalDump& dump, const fs::path& dir);
EvalDump load_dump(const fs::path& dir);

// --- configuration serialization --------------------------------------------

Json to_json(const AugmentStrategy& s);
AugmentStrategy strategy_from_json(const Json& j);
Json to_json(const ArchSpec& a);
ArchSpec arch_from_json(const Json& j);
Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);
Json to_json(const std::vector<EpochRecord>& history);
std::vector<EpochRecord> history_from_json(const Json& j);

// --- checkpoints -------------------------------------------------------------

/// Writes `path` (JSON: architecture, layers, normalization, config, history)
/// and `<path>.params` (f32 array container with all parameters).
void save_checkpoint(const TrainedModel& model, const fs::path& path);
/// Verifies the parameter file hash recorded in the checkpoint.
TrainedModel load_checkpoint(const fs::path& path);

// --- manifests ---------------------------------------------------------------

struct FileRef {
  std::string path;  // relative to the manifest's directory
  std::string sha256;
  friend bool operator==(const FileRef&, const FileRef&) = default;
};

struct RunManifest {
  std::string run_id;
  std::string created_at;
  std::string role;
  Json config;   // full recipe for the run
  Json dataset;  // descriptor plus content hash
  std::map<std::string, double> metrics;
  std::map<std::string, FileRef> files;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

/// Fresh run id from the clock and a random device.
std::string new_run_id();
std::string utc_timestamp();

/// Hashes every referenced file (filling FileRef::sha256) and writes
/// key-ordered, indented JSON.
void write_manifest(RunManifest& m, const fs::path& path);
/// Parses and checks every referenced file against its hash (IntegrityError).
RunManifest read_manifest(const fs::path& path, bool verify = true);

// --- CSV reports -------------------------------------------------------------

/// Shortest decimal string that parses back to exactly `x`.
std::string format_double(double x);
double parse_double(const std::string& s);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

void write_csv(const fs::path& path, const CsvTable& table);
CsvTable read_csv(const fs::path& path);

struct ReportSelection {
  bool metrics = true;
  bool reliability = true;
  bool confusion = true;
  bool discrimination = true;
  bool confidence_matrices = true;
  /// Human-label reports: KLD confusion matrix and human confidence matrices.
  bool human = true;
  bool embeddings = false;
  int ece_bins = kDefaultEceBins;
  CohesionNormalizer normalizer = CohesionNormalizer::upper_triangle_over_ordered_pairs;
  HumanDivergence human_divergence = HumanDivergence::kl_model_human;

  /// Everything computable from `dump` (human reports only when it has human labels).
  static ReportSelection all_for(const EvalDump& dump);
};

/// Column order of metrics.csv.
const std::vector<std::string>& metrics_columns();

/// Computes the metrics.csv row. Entries that cannot be computed for the dump
/// (no human labels, classes too small) are absent from the map.
std::map<std::string, double> compute_metrics(const EvalDump& dump, const ReportSelection& sel);

struct ReportOutput {
  std::map<std::string, double> metrics;
  std::vector<fs::path> files;
};

/// Writes the selected CSV reports into `dir`. Throws ValueError when human
/// reports are requested for a dump without human labels.
ReportOutput emit_report(const EvalDump& dump, const ReportSelection& sel, const fs::path& dir);

}  // namespace dlab
