#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "mdat/pipeline.hpp"
#include "mdat/text_io.hpp"

using namespace mdat;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mdat_test_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig tiny_config(const fs::path& dir) {
  ExperimentConfig cfg;
  apply_config_text(cfg,
                    "gen.dim = 8\n"
                    "gen.source_speakers = 12\n"
                    "gen.source_sessions = 4\n"
                    "gen.target_speakers = 10\n"
                    "gen.target_sessions = 4\n"
                    "gen.eval_speakers = 8\n"
                    "gen.eval_sessions = 3\n"
                    "model.generator = 6\n"
                    "model.classifier = 8\n"
                    "model.discriminator = 8\n"
                    "train.epochs = 3\n"
                    "condition = MDAT\n");
  cfg.out_dir = dir;
  return cfg;
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

}  // namespace

TEST_CASE("condition names follow the sub-domain counts") {
  CHECK(condition_name(1, 1) == "DAT");
  CHECK(condition_name(6, 1) == "MS-DAT");
  CHECK(condition_name(1, 4) == "MT-DAT");
  CHECK(condition_name(6, 4) == "MDAT");
  CHECK(condition_name(3, 1) == "MS-DAT");
  CHECK(condition_name(1, 2) == "MT-DAT");
  CHECK(condition_name(3, 2) == "MDAT");
  CHECK_THROWS_AS(condition_name(0, 1), ConfigError);
}

TEST_CASE("apply_condition sets both partitions") {
  ExperimentConfig cfg;
  apply_condition(cfg, "MDAT");
  CHECK(cfg.source_partition.mode == PartitionMode::Codes);
  CHECK(cfg.target_partition.mode == PartitionMode::Codes);
  apply_condition(cfg, "MS-DAT:kmeans");
  CHECK(cfg.source_partition == PartitionSpec{PartitionMode::KMeans, 3});
  CHECK(cfg.target_partition.mode == PartitionMode::Single);
  apply_condition(cfg, "MT-DAT:kmeans");
  CHECK(cfg.source_partition.mode == PartitionMode::Single);
  CHECK(cfg.target_partition == PartitionSpec{PartitionMode::KMeans, 2});
  apply_condition(cfg, "DAT");
  CHECK(cfg.source_partition.mode == PartitionMode::Single);
  CHECK(cfg.target_partition.mode == PartitionMode::Single);
  CHECK_THROWS_AS(apply_condition(cfg, "XDAT"), ConfigError);
  CHECK_THROWS_AS(apply_condition(cfg, "MDAT:spectral"), ConfigError);
  CHECK(condition_matrix().size() == 7);
}

TEST_CASE("config text round trip") {
  ExperimentConfig cfg;
  apply_config_text(cfg,
                    "# comment line\n"
                    "seed = 42   # trailing comment\n"
                    "gen.shift = 2.5\n"
                    "partition.source = kmeans:4\n"
                    "model.generator = 16,8\n"
                    "model.activation = tanh\n"
                    "train.schedule = ramp\n"
                    "train.terms = classifier\n"
                    "embed.layer = last\n"
                    "backend.whitening = pooled\n"
                    "metric.dcf08.c_miss = 5\n");
  CHECK(cfg.seed == 42);
  CHECK(cfg.synthetic.shift == 2.5);
  CHECK(cfg.source_partition == PartitionSpec{PartitionMode::KMeans, 4});
  CHECK(cfg.arch.generator == std::vector<int>{16, 8});
  CHECK(cfg.arch.discriminator_act == nn::Activation::Tanh);
  CHECK(cfg.train.schedule.kind == LambdaSchedule::Kind::Ramp);
  CHECK(cfg.train.terms == LossTerms::ClassifierOnly);
  CHECK(cfg.embedding_layer == EmbeddingLayer::LastOfG);
  CHECK(cfg.whitening == WhiteningSource::Pooled);
  CHECK(cfg.dcf08.c_miss == 5);

  ExperimentConfig back;
  apply_config_text(back, format_config(cfg));
  CHECK(config_entries(back) == config_entries(cfg));
  CHECK(format_config(ExperimentConfig{}).find("train.lambda = 1\n") != std::string::npos);
}

TEST_CASE("config errors carry line numbers") {
  ExperimentConfig cfg;
  try {
    apply_config_text(cfg, "seed = 1\n\nbogus.key = 3\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("bogus.key") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_config_text(cfg, "seed\n"), ParseError);
  CHECK_THROWS_AS(apply_config_text(cfg, "train.epochs = many\n"), ParseError);
  CHECK_THROWS_AS(apply_config_entry(cfg, "partition.target", "kmeans:0"), ConfigError);
  CHECK_THROWS_AS(apply_config_entry(cfg, "stages", "gen,fly"), ConfigError);
  CHECK_THROWS_AS(apply_config_entry(cfg, "gen.rotate_target", "maybe"), ConfigError);
  CHECK_THROWS_AS(apply_config_entry(cfg, "model.activation", "sigmoid"), ConfigError);
}

TEST_CASE("relative reduction figures") {
  using Rows = std::vector<std::pair<std::string, MetricSummary>>;
  const auto t = compare_conditions(Rows{{"baseline", {5.66, 0.8, 0.6}}, {"MDAT", {3.58, 0.7, 0.5}}});
  REQUIRE(t.rows.size() == 2);
  CHECK(std::abs(t.rows[1].eer_reduction - 36.7) < 0.05);
  CHECK(t.rows[0].eer_reduction == 0);
  CHECK(t.best == "MDAT");
  CHECK(std::abs(relative_reduction(3.73, 3.58) - 4.0) < 0.05);
  CHECK_THROWS_AS(compare_conditions(Rows{{"only", {1, 1, 1}}}), DataError);
}

TEST_CASE("identical reports give zero deltas") {
  Report r;
  r.condition = "MDAT";
  r.partition_style = "codes";
  r.baseline = {4.0, 0.5, 0.4};
  r.adapted = {4.0, 0.5, 0.4};
  const auto t = compare_conditions(std::vector<Report>{r, r});
  REQUIRE(t.rows.size() == 3);
  for (const auto& row : t.rows) {
    CHECK(row.eer_reduction == 0);
    CHECK(row.dcf10_reduction == 0);
    CHECK(row.dcf08_reduction == 0);
  }
  CHECK(format_comparison(t).find("+0.0") != std::string::npos);
}

TEST_CASE("comparison flags the lowest EER") {
  Report dat, mdat;
  dat.condition = "DAT";
  dat.partition_style = "none";
  dat.baseline = {5.0, 0.9, 0.7};
  dat.adapted = {4.0, 0.8, 0.6};
  mdat.condition = "MDAT";
  mdat.partition_style = "codes";
  mdat.baseline = dat.baseline;
  mdat.adapted = {3.0, 0.7, 0.5};
  const auto t = compare_conditions(std::vector<Report>{dat, mdat});
  CHECK(t.rows[0].name == "no-adapt");
  CHECK(t.rows[1].name == "DAT");
  CHECK(t.rows[2].name == "MDAT (codes)");
  CHECK(t.best == "MDAT (codes)");
  CHECK(format_comparison(t).find("best: MDAT (codes)") != std::string::npos);
}

TEST_CASE("report round trip") {
  Report r;
  r.condition = "MS-DAT";
  r.partition_style = "k-means";
  r.source_domains = 3;
  r.target_domains = 1;
  r.baseline = {5.123456789, 0.81, 0.62};
  r.adapted = {1.0 / 3.0, 0.5, 0.25};
  r.final_epoch = EpochStats{1.5, 0.69, 0.81, 0.95, 0.5};
  r.config = config_entries(ExperimentConfig{});
  const auto text = format_report(r);
  const auto back = parse_report(text);
  CHECK(back.condition == r.condition);
  CHECK(back.partition_style == r.partition_style);
  CHECK(back.source_domains == 3);
  CHECK(back.baseline.eer == r.baseline.eer);
  CHECK(back.adapted.eer == r.adapted.eer);
  REQUIRE(back.final_epoch);
  CHECK(back.final_epoch->domain_accuracy == 0.5);
  CHECK(back.config == r.config);
  CHECK(back.version == kVersion);
  CHECK(format_report(back) == text);
  CHECK(text.find("\"dcf10\"") != std::string::npos);
  CHECK_THROWS_AS(parse_report("{not json"), DataError);
}

TEST_CASE("full run, rerun and stage purity") {
  const auto dir = fresh_dir("pipeline_run");
  const auto cfg = tiny_config(dir);
  const auto r = run_experiment(cfg);
  CHECK(r.condition == "MDAT");
  CHECK(r.source_domains == 2);
  CHECK(r.target_domains == 2);
  CHECK(r.baseline.eer >= 0);
  CHECK(r.adapted.eer <= 100);
  CHECK(r.final_epoch);

  const Artifacts a{dir};
  for (const auto& p : {a.source(), a.target(), a.enroll(), a.test(), a.trials(), a.source_partition(),
                        a.target_partition(), a.model(), a.train_stats(), a.embedding("source"), a.backend(true),
                        a.scores(false), a.scores(true), a.report()})
    CHECK_MESSAGE(fs::exists(p), p.string());

  // Target-side files never carry speaker labels.
  for (const auto& p : {a.target(), a.enroll(), a.test()})
    for (const auto& rec : read_vectors(p).records) CHECK_FALSE(rec.speaker);

  const std::string scores = slurp(a.scores(true));
  const std::string raw = slurp(a.scores(false));
  const std::string report = slurp(a.report());
  const std::string model = slurp(a.model());

  for (const auto& p : {a.embedding("source"), a.embedding("target"), a.embedding("enroll"), a.embedding("test"),
                        a.backend(false), a.backend(true), a.scores(false), a.scores(true), a.report()})
    fs::remove(p);
  for (Stage s : {Stage::Extract, Stage::Backend, Stage::Score, Stage::Eval}) run_stage(s, cfg);
  CHECK(slurp(a.scores(true)) == scores);
  CHECK(slurp(a.scores(false)) == raw);
  CHECK(slurp(a.report()) == report);

  fs::remove(a.model());
  run_stage(Stage::Train, cfg);
  CHECK(slurp(a.model()) == model);

  const auto again = fresh_dir("pipeline_run_again");
  auto cfg2 = cfg;
  cfg2.out_dir = again;
  run_experiment(cfg2);
  CHECK(slurp(Artifacts{again}.scores(true)) == scores);
  CHECK(slurp(Artifacts{again}.report()) == report);
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST_CASE("lambda 0 gives the classifier-only embeddings") {
  const auto d1 = fresh_dir("pipeline_lambda0");
  const auto d2 = fresh_dir("pipeline_cls_only");
  auto a = tiny_config(d1);
  a.train.lambda = 0;
  auto b = tiny_config(d2);
  b.train.lambda = 0;
  b.train.terms = LossTerms::ClassifierOnly;
  run_experiment(a);
  run_experiment(b);
  for (const char* set : {"source", "target", "enroll", "test"})
    CHECK(slurp(Artifacts{d1}.embedding(set)) == slurp(Artifacts{d2}.embedding(set)));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("stage errors name the stage and keep earlier artifacts") {
  const auto dir = fresh_dir("pipeline_error");
  auto cfg = tiny_config(dir);
  try {
    run_stage(Stage::Train, cfg);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "train");
    CHECK(std::string(e.what()).rfind("stage 'train'", 0) == 0);
  }

  run_stage(Stage::Gen, cfg);
  cfg.source_partition = {PartitionMode::KMeans, 100000};
  try {
    run_stage(Stage::Partition, cfg);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "partition");
  }
  CHECK(fs::exists(Artifacts{dir}.source()));

  cfg.stages = {Stage::Gen};
  CHECK_THROWS_AS(run_experiment(cfg), StageError);
  fs::remove_all(dir);
}

TEST_CASE("ingesting files from a data directory") {
  const auto src = fresh_dir("pipeline_ingest_src");
  const auto dst = fresh_dir("pipeline_ingest_dst");
  auto cfg = tiny_config(src);
  cfg.stages = {Stage::Gen};
  run_stage(Stage::Gen, cfg);
  auto in = tiny_config(dst);
  in.data_dir = src;
  in.synthetic.dim = 3;  // ignored when ingesting
  const auto r = run_experiment(in);
  CHECK(r.condition == "MDAT");
  CHECK(slurp(Artifacts{dst}.source()) == slurp(Artifacts{src}.source()));
  fs::remove_all(src);
  fs::remove_all(dst);
}

TEST_CASE("condition matrix produces seven reports") {
  const auto dir = fresh_dir("pipeline_matrix");
  const auto reports = run_condition_matrix(tiny_config(dir));
  REQUIRE(reports.size() == 7);
  CHECK(reports[0].condition == "DAT");
  CHECK(reports[1].label() == "MS-DAT (codes)");
  CHECK(reports[3].label() == "MDAT (codes)");
  CHECK(reports[4].source_domains == 3);
  CHECK(reports[5].target_domains == 2);
  CHECK(reports[6].label() == "MDAT (k-means)");
  CHECK(fs::exists(dir / "comparison.txt"));
  CHECK(fs::exists(dir / "MDAT_kmeans" / "report.json"));
  CHECK(compare_conditions(reports).rows.size() == 8);
  fs::remove_all(dir);
}

TEST_CASE("linear domain probe") {
  LabeledVectorSet s;
  s.dim = 2;
  Rng rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd v(2);
    v << n(rng), n(rng);
    s.add({"r" + std::to_string(i), v, {}, i % 2, {}});
  }
  const auto blind = linear_domain_probe(s, 3);
  CHECK(blind.chance >= 0.5);
  CHECK(blind.accuracy < blind.chance + 0.15);
  for (auto& r : s.records) r.vector(0) += *r.domain == 0 ? 4 : -4;
  CHECK(linear_domain_probe(s, 3).accuracy > 0.95);
  s.records[0].domain.reset();
  CHECK_THROWS_AS(linear_domain_probe(s, 3), DataError);
}
