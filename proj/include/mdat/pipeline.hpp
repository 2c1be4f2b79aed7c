#pragma once

// Experiment driver: generate/ingest -> partition -> train -> extract ->
// backend -> score -> eval, every stage reading and writing files in one
// output directory so each can be rerun on its own.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mdat/datagen.hpp"
#include "mdat/error.hpp"
#include "mdat/mdann.hpp"
#include "mdat/metrics.hpp"
#include "mdat/vectors.hpp"

namespace mdat {

inline constexpr const char* kVersion = "0.1.0";

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

enum class PartitionMode { Single, Codes, KMeans };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::Single;
  int k = 1;  // KMeans only

  bool operator==(const PartitionSpec&) const = default;
};

enum class WhiteningSource { Target, Source, Pooled };

struct SyntheticConfig {
  int dim = 50;
  int source_speakers = 100;
  int source_sessions = 8;
  int target_speakers = 60;
  int target_sessions = 6;
  int eval_speakers = 200;
  int eval_sessions = 6;
  int source_domains = 2;
  int target_domains = 2;
  double shift = 3.0;
  double shift_sharing = 0.0;  // see default_spec
  double sigma_between = 1.0;
  double sigma_within = 0.7;
  double target_scale = 1.0;  // noise multiplier of every target domain
  bool rotate_target = false;

  GenSpec to_spec(std::uint64_t seed) const;
};

enum class Stage { Gen, Partition, Train, Extract, Backend, Score, Eval };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);
const std::vector<Stage>& all_stages();

struct ExperimentConfig {
  std::optional<std::filesystem::path> data_dir;  // ingest files instead of generating
  SyntheticConfig synthetic;
  PartitionSpec source_partition;
  PartitionSpec target_partition;
  int kmeans_source_k = 3;  // used by "<condition>:kmeans"
  int kmeans_target_k = 2;
  // Desk-scale network: linear G narrower than its input, as 600 -> 512 is.
  Architecture arch{{43}, {64}, {64}, nn::Activation::Linear, nn::Activation::ReLU, nn::Activation::Linear};
  TrainConfig train{1.0, 0.05, 40, 32, 0, {}, LossTerms::Both, false};
  EmbeddingLayer embedding_layer = EmbeddingLayer::FirstHiddenOfG;
  WhiteningSource whitening = WhiteningSource::Target;           // adapted system
  WhiteningSource baseline_whitening = WhiteningSource::Source;  // no-adaptation system
  int plda_iters = 10;
  bool preprocess = true;
  CostParams dcf10 = CostParams::dcf10();
  CostParams dcf08 = CostParams::dcf08();
  std::filesystem::path out_dir = "mdat_out";
  std::uint64_t seed = 1;
  std::vector<Stage> stages = all_stages();

  void check() const;
};

/// Flat `key = value` lines, `#` comments. Unknown keys are errors.
void apply_config_text(ExperimentConfig& cfg, const std::string& text);
void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every experiment key in canonical order (output directory excluded).
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg);
std::string format_config(const ExperimentConfig& cfg);

/// DAT / MS-DAT / MT-DAT / MDAT from the sub-domain counts.
std::string condition_name(int source_domains, int target_domains);

/// Sets both partition specs from `DAT`, `MS-DAT`, `MT-DAT` or `MDAT`, with an
/// optional `:codes` (default) or `:kmeans` suffix.
void apply_condition(ExperimentConfig& cfg, const std::string& condition);

/// The Table-style condition matrix: DAT plus MS/MT/MDAT for codes and k-means.
const std::vector<std::string>& condition_matrix();

struct Report {
  std::string version = kVersion;
  std::string condition;  // derived from (N, M)
  std::string partition_style;
  int source_domains = 0;
  int target_domains = 0;
  MetricSummary baseline;  // raw vectors -> backend
  MetricSummary adapted;   // MDANN embeddings -> backend
  std::optional<EpochStats> final_epoch;
  std::vector<std::pair<std::string, std::string>> config;

  std::string label() const;
};

std::string format_report(const Report& r);
Report parse_report(const std::string& text);
Report read_report(const std::filesystem::path& path);

/// Artifact paths inside the output directory.
struct Artifacts {
  std::filesystem::path dir;

  std::filesystem::path source() const { return dir / "source.vec"; }
  std::filesystem::path target() const { return dir / "target.vec"; }
  std::filesystem::path enroll() const { return dir / "enroll.vec"; }
  std::filesystem::path test() const { return dir / "test.vec"; }
  std::filesystem::path trials() const { return dir / "trials.txt"; }
  std::filesystem::path source_partition() const { return dir / "partition_source.txt"; }
  std::filesystem::path target_partition() const { return dir / "partition_target.txt"; }
  std::filesystem::path model() const { return dir / "model.ckpt"; }
  std::filesystem::path train_stats() const { return dir / "train_stats.json"; }
  std::filesystem::path embedding(const std::string& set) const { return dir / ("emb_" + set + ".vec"); }
  std::filesystem::path backend(bool adapted) const {
    return dir / (adapted ? "backend_adapted.txt" : "backend_raw.txt");
  }
  std::filesystem::path scores(bool adapted) const {
    return dir / (adapted ? "scores_adapted.txt" : "scores_raw.txt");
  }
  std::filesystem::path report() const { return dir / "report.json"; }
};

/// Runs one stage against the files in cfg.out_dir. Errors are rethrown as StageError.
void run_stage(Stage stage, const ExperimentConfig& cfg);

/// Runs cfg.stages in pipeline order and returns the report (read back from
/// disk when the eval stage ran, otherwise from an existing report file).
Report run_experiment(const ExperimentConfig& cfg);

/// Runs every condition of condition_matrix() in its own subdirectory.
std::vector<Report> run_condition_matrix(const ExperimentConfig& cfg);

struct ComparisonRow {
  std::string name;
  MetricSummary metrics;
  /// Relative reduction versus the first row, in percent.
  double eer_reduction = 0;
  double dcf10_reduction = 0;
  double dcf08_reduction = 0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  std::string best;  // lowest EER
};

/// 100 * (baseline - value) / baseline.
double relative_reduction(double baseline, double value);

/// First entry is the reference row.
ComparisonTable compare_conditions(const std::vector<std::pair<std::string, MetricSummary>>& results);
/// Reference row is the first report's baseline, then each report's adapted system.
ComparisonTable compare_conditions(const std::vector<Report>& reports);
std::string format_comparison(const ComparisonTable& table);

struct ProbeResult {
  double accuracy = 0;  // held-out
  double chance = 0;    // majority-class rate of the held-out split
};

/// Multinomial logistic regression from vectors to domain labels, trained on
/// a random half and scored on the other half.
ProbeResult linear_domain_probe(const LabeledVectorSet& data, std::uint64_t seed, int iterations = 300);

}  // namespace mdat
