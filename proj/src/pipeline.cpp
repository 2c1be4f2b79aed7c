#include "mdat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "mdat/backend.hpp"
#include "mdat/partition.hpp"
#include "mdat/rng.hpp"
#include "mdat/text_io.hpp"
#include "mdat/trials.hpp"

namespace mdat {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

GenSpec SyntheticConfig::to_spec(std::uint64_t seed) const {
  GenSpec spec = default_spec(source_domains, target_domains, shift, seed, dim, shift_sharing);
  spec.source.speakers = source_speakers;
  spec.source.sessions_per_speaker = source_sessions;
  spec.target.speakers = target_speakers;
  spec.target.sessions_per_speaker = target_sessions;
  spec.eval_speakers = eval_speakers;
  spec.eval_sessions = eval_sessions;
  spec.sigma_between = sigma_between;
  spec.sigma_within = sigma_within;
  for (std::size_t i = 0; i < spec.target.domains.size(); ++i) {
    auto& d = spec.target.domains[i];
    d.scale = target_scale;
    if (rotate_target) d.rotation_seed = derive_seed(seed, "rotation/" + d.name);
  }
  return spec;
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Gen: return "gen";
    case Stage::Partition: return "partition";
    case Stage::Train: return "train";
    case Stage::Extract: return "extract";
    case Stage::Backend: return "backend";
    case Stage::Score: return "score";
    case Stage::Eval: return "eval";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : all_stages())
    if (to_string(st) == s) return st;
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages{Stage::Gen,     Stage::Partition, Stage::Train, Stage::Extract,
                                         Stage::Backend, Stage::Score,     Stage::Eval};
  return stages;
}

void ExperimentConfig::check() const {
  train.check();
  dcf10.check();
  dcf08.check();
  for (const auto* p : {&source_partition, &target_partition})
    if (p->mode == PartitionMode::KMeans && p->k < 1) throw ConfigError("k-means partition needs k >= 1");
  if (kmeans_source_k < 1 || kmeans_target_k < 1) throw ConfigError("k-means k must be >= 1");
  if (plda_iters < 0) throw ConfigError("backend.plda_iters must be >= 0");
  if (!data_dir) synthetic.to_spec(seed).check();
}

namespace {

std::string partition_text(const PartitionSpec& p) {
  switch (p.mode) {
    case PartitionMode::Single: return "single";
    case PartitionMode::Codes: return "codes";
    case PartitionMode::KMeans: return "kmeans:" + std::to_string(p.k);
  }
  return "?";
}

PartitionSpec parse_partition_spec(const std::string& v) {
  if (v == "single") return {PartitionMode::Single, 1};
  if (v == "codes") return {PartitionMode::Codes, 1};
  if (v.rfind("kmeans:", 0) == 0) {
    const int k = static_cast<int>(io::parse_int(v.substr(7)));
    if (k < 1) throw ConfigError("kmeans k must be >= 1");
    return {PartitionMode::KMeans, k};
  }
  throw ConfigError("partition mode must be single, codes or kmeans:<k>, got '" + v + "'");
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

std::vector<int> parse_widths(const std::string& v) {
  std::vector<int> out;
  if (io::trim(v).empty()) return out;
  for (auto part : io::split(v, ',')) out.push_back(static_cast<int>(io::parse_int(part)));
  return out;
}

std::string widths_text(const std::vector<int>& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? "," : "") + std::to_string(w[i]);
  return out;
}

std::string num(double v) { return io::format_double(v); }

WhiteningSource parse_whitening(const std::string& v) {
  if (v == "target") return WhiteningSource::Target;
  if (v == "source") return WhiteningSource::Source;
  if (v == "pooled") return WhiteningSource::Pooled;
  throw ConfigError("whitening source must be target, source or pooled, got '" + v + "'");
}

std::string_view whitening_text(WhiteningSource w) {
  switch (w) {
    case WhiteningSource::Target: return "target";
    case WhiteningSource::Source: return "source";
    case WhiteningSource::Pooled: return "pooled";
  }
  return "?";
}

int to_int(const std::string& v) { return static_cast<int>(io::parse_int(v)); }

}  // namespace

void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  auto& g = cfg.synthetic;
  try {
    if (key == "seed") cfg.seed = static_cast<std::uint64_t>(io::parse_int(value));
    else if (key == "out") cfg.out_dir = value;
    else if (key == "data_dir") cfg.data_dir = value.empty() ? std::nullopt : std::optional<std::filesystem::path>(value);
    else if (key == "stages") {
      cfg.stages.clear();
      for (auto s : io::split(value, ',')) cfg.stages.push_back(parse_stage(io::trim(s)));
    }
    else if (key == "condition") apply_condition(cfg, value);
    else if (key == "gen.dim") g.dim = to_int(value);
    else if (key == "gen.source_speakers") g.source_speakers = to_int(value);
    else if (key == "gen.source_sessions") g.source_sessions = to_int(value);
    else if (key == "gen.target_speakers") g.target_speakers = to_int(value);
    else if (key == "gen.target_sessions") g.target_sessions = to_int(value);
    else if (key == "gen.eval_speakers") g.eval_speakers = to_int(value);
    else if (key == "gen.eval_sessions") g.eval_sessions = to_int(value);
    else if (key == "gen.source_domains") g.source_domains = to_int(value);
    else if (key == "gen.target_domains") g.target_domains = to_int(value);
    else if (key == "gen.shift") g.shift = io::parse_double(value);
    else if (key == "gen.shift_sharing") g.shift_sharing = io::parse_double(value);
    else if (key == "gen.sigma_between") g.sigma_between = io::parse_double(value);
    else if (key == "gen.sigma_within") g.sigma_within = io::parse_double(value);
    else if (key == "gen.target_scale") g.target_scale = io::parse_double(value);
    else if (key == "gen.rotate_target") g.rotate_target = parse_bool(value);
    else if (key == "partition.source") cfg.source_partition = parse_partition_spec(value);
    else if (key == "partition.target") cfg.target_partition = parse_partition_spec(value);
    else if (key == "partition.kmeans_source_k") cfg.kmeans_source_k = to_int(value);
    else if (key == "partition.kmeans_target_k") cfg.kmeans_target_k = to_int(value);
    else if (key == "model.generator") cfg.arch.generator = parse_widths(value);
    else if (key == "model.classifier") cfg.arch.classifier = parse_widths(value);
    else if (key == "model.discriminator") cfg.arch.discriminator = parse_widths(value);
    else if (key == "model.activation")
      cfg.arch.generator_act = cfg.arch.classifier_act = cfg.arch.discriminator_act = nn::parse_activation(value);
    else if (key == "model.generator_activation") cfg.arch.generator_act = nn::parse_activation(value);
    else if (key == "model.classifier_activation") cfg.arch.classifier_act = nn::parse_activation(value);
    else if (key == "model.discriminator_activation") cfg.arch.discriminator_act = nn::parse_activation(value);
    else if (key == "train.lambda") cfg.train.lambda = io::parse_double(value);
    else if (key == "train.mu") cfg.train.mu = io::parse_double(value);
    else if (key == "train.epochs") cfg.train.epochs = to_int(value);
    else if (key == "train.batch_size") cfg.train.batch_size = to_int(value);
    else if (key == "train.schedule") {
      if (value == "constant") cfg.train.schedule.kind = LambdaSchedule::Kind::Constant;
      else if (value == "ramp") cfg.train.schedule.kind = LambdaSchedule::Kind::Ramp;
      else throw ConfigError("train.schedule must be constant or ramp");
    }
    else if (key == "train.ramp_steps") cfg.train.schedule.total_steps = static_cast<std::size_t>(io::parse_int(value));
    else if (key == "train.terms") {
      if (value == "both") cfg.train.terms = LossTerms::Both;
      else if (value == "classifier") cfg.train.terms = LossTerms::ClassifierOnly;
      else if (value == "adversarial") cfg.train.terms = LossTerms::AdversarialOnly;
      else throw ConfigError("train.terms must be both, classifier or adversarial");
    }
    else if (key == "train.balance_domains") cfg.train.balance_domains = parse_bool(value);
    else if (key == "embed.layer") {
      if (value == "first") cfg.embedding_layer = EmbeddingLayer::FirstHiddenOfG;
      else if (value == "last") cfg.embedding_layer = EmbeddingLayer::LastOfG;
      else throw ConfigError("embed.layer must be first or last");
    }
    else if (key == "backend.whitening") cfg.whitening = parse_whitening(value);
    else if (key == "backend.baseline_whitening") cfg.baseline_whitening = parse_whitening(value);
    else if (key == "backend.plda_iters") cfg.plda_iters = to_int(value);
    else if (key == "backend.preprocess") cfg.preprocess = parse_bool(value);
    else if (key == "metric.dcf10.p_target") cfg.dcf10.p_target = io::parse_double(value);
    else if (key == "metric.dcf10.c_miss") cfg.dcf10.c_miss = io::parse_double(value);
    else if (key == "metric.dcf10.c_fa") cfg.dcf10.c_fa = io::parse_double(value);
    else if (key == "metric.dcf08.p_target") cfg.dcf08.p_target = io::parse_double(value);
    else if (key == "metric.dcf08.c_miss") cfg.dcf08.c_miss = io::parse_double(value);
    else if (key == "metric.dcf08.c_fa") cfg.dcf08.c_fa = io::parse_double(value);
    else throw ConfigError("unknown config key '" + key + "'");
  } catch (const ParseError& e) {
    throw ConfigError("config key '" + key + "': " + e.detail());
  }
}

void apply_config_text(ExperimentConfig& cfg, const std::string& text) {
  std::size_t line_no = 0;
  for (auto line : io::split(text, '\n')) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = io::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
    const std::string key(io::trim(line.substr(0, eq)));
    const std::string value(io::trim(line.substr(eq + 1)));
    try {
      apply_config_entry(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig cfg;
  apply_config_text(cfg, io::read_file(path));
  return cfg;
}

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg) {
  const auto& g = cfg.synthetic;
  auto sched = cfg.train.schedule.kind == LambdaSchedule::Kind::Ramp ? "ramp" : "constant";
  auto terms = cfg.train.terms == LossTerms::Both             ? "both"
               : cfg.train.terms == LossTerms::ClassifierOnly ? "classifier"
                                                              : "adversarial";
  return {
      {"seed", std::to_string(cfg.seed)},
      {"data_dir", cfg.data_dir ? cfg.data_dir->string() : ""},
      {"gen.dim", std::to_string(g.dim)},
      {"gen.source_speakers", std::to_string(g.source_speakers)},
      {"gen.source_sessions", std::to_string(g.source_sessions)},
      {"gen.target_speakers", std::to_string(g.target_speakers)},
      {"gen.target_sessions", std::to_string(g.target_sessions)},
      {"gen.eval_speakers", std::to_string(g.eval_speakers)},
      {"gen.eval_sessions", std::to_string(g.eval_sessions)},
      {"gen.source_domains", std::to_string(g.source_domains)},
      {"gen.target_domains", std::to_string(g.target_domains)},
      {"gen.shift", num(g.shift)},
      {"gen.shift_sharing", num(g.shift_sharing)},
      {"gen.sigma_between", num(g.sigma_between)},
      {"gen.sigma_within", num(g.sigma_within)},
      {"gen.target_scale", num(g.target_scale)},
      {"gen.rotate_target", g.rotate_target ? "true" : "false"},
      {"partition.source", partition_text(cfg.source_partition)},
      {"partition.target", partition_text(cfg.target_partition)},
      {"partition.kmeans_source_k", std::to_string(cfg.kmeans_source_k)},
      {"partition.kmeans_target_k", std::to_string(cfg.kmeans_target_k)},
      {"model.generator", widths_text(cfg.arch.generator)},
      {"model.classifier", widths_text(cfg.arch.classifier)},
      {"model.discriminator", widths_text(cfg.arch.discriminator)},
      {"model.generator_activation", std::string(nn::to_string(cfg.arch.generator_act))},
      {"model.classifier_activation", std::string(nn::to_string(cfg.arch.classifier_act))},
      {"model.discriminator_activation", std::string(nn::to_string(cfg.arch.discriminator_act))},
      {"train.lambda", num(cfg.train.lambda)},
      {"train.mu", num(cfg.train.mu)},
      {"train.epochs", std::to_string(cfg.train.epochs)},
      {"train.batch_size", std::to_string(cfg.train.batch_size)},
      {"train.schedule", sched},
      {"train.ramp_steps", std::to_string(cfg.train.schedule.total_steps)},
      {"train.terms", terms},
      {"train.balance_domains", cfg.train.balance_domains ? "true" : "false"},
      {"embed.layer", cfg.embedding_layer == EmbeddingLayer::FirstHiddenOfG ? "first" : "last"},
      {"backend.whitening", std::string(whitening_text(cfg.whitening))},
      {"backend.baseline_whitening", std::string(whitening_text(cfg.baseline_whitening))},
      {"backend.plda_iters", std::to_string(cfg.plda_iters)},
      {"backend.preprocess", cfg.preprocess ? "true" : "false"},
      {"metric.dcf10.p_target", num(cfg.dcf10.p_target)},
      {"metric.dcf10.c_miss", num(cfg.dcf10.c_miss)},
      {"metric.dcf10.c_fa", num(cfg.dcf10.c_fa)},
      {"metric.dcf08.p_target", num(cfg.dcf08.p_target)},
      {"metric.dcf08.c_miss", num(cfg.dcf08.c_miss)},
      {"metric.dcf08.c_fa", num(cfg.dcf08.c_fa)},
  };
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

std::string condition_name(int source_domains, int target_domains) {
  if (source_domains < 1 || target_domains < 1) throw ConfigError("domain counts must be >= 1");
  if (source_domains == 1 && target_domains == 1) return "DAT";
  if (target_domains == 1) return "MS-DAT";
  if (source_domains == 1) return "MT-DAT";
  return "MDAT";
}

void apply_condition(ExperimentConfig& cfg, const std::string& condition) {
  std::string name = condition;
  std::string style = "codes";
  if (const auto colon = condition.find(':'); colon != std::string::npos) {
    name = condition.substr(0, colon);
    style = condition.substr(colon + 1);
  }
  PartitionSpec src_multi, tgt_multi;
  if (style == "codes") {
    src_multi = tgt_multi = {PartitionMode::Codes, 1};
  } else if (style == "kmeans") {
    src_multi = {PartitionMode::KMeans, cfg.kmeans_source_k};
    tgt_multi = {PartitionMode::KMeans, cfg.kmeans_target_k};
  } else {
    throw ConfigError("condition style must be codes or kmeans, got '" + style + "'");
  }
  const PartitionSpec single{PartitionMode::Single, 1};
  if (name == "DAT") {
    cfg.source_partition = cfg.target_partition = single;
  } else if (name == "MS-DAT") {
    cfg.source_partition = src_multi;
    cfg.target_partition = single;
  } else if (name == "MT-DAT") {
    cfg.source_partition = single;
    cfg.target_partition = tgt_multi;
  } else if (name == "MDAT") {
    cfg.source_partition = src_multi;
    cfg.target_partition = tgt_multi;
  } else {
    throw ConfigError("unknown condition '" + name + "' (expected DAT, MS-DAT, MT-DAT or MDAT)");
  }
}

const std::vector<std::string>& condition_matrix() {
  static const std::vector<std::string> m{"DAT",           "MS-DAT:codes",  "MT-DAT:codes", "MDAT:codes",
                                          "MS-DAT:kmeans", "MT-DAT:kmeans", "MDAT:kmeans"};
  return m;
}

// ---------------------------------------------------------------------------
// Reports

std::string Report::label() const {
  if (partition_style.empty() || partition_style == "none") return condition;
  return condition + " (" + partition_style + ")";
}

namespace {

json metrics_json(const MetricSummary& m) {
  return json{{"eer_percent", m.eer}, {"dcf10", m.dcf10}, {"dcf08", m.dcf08}};
}

MetricSummary metrics_from(const json& j) {
  return {j.at("eer_percent").get<double>(), j.at("dcf10").get<double>(), j.at("dcf08").get<double>()};
}

}  // namespace

std::string format_report(const Report& r) {
  json j;
  j["tool"] = "mdat";
  j["version"] = r.version;
  j["condition"] = r.condition;
  j["partition_style"] = r.partition_style;
  j["source_domains"] = r.source_domains;
  j["target_domains"] = r.target_domains;
  j["metrics"] = json{{"no-adapt", metrics_json(r.baseline)}, {"adapted", metrics_json(r.adapted)}};
  j["metric_notes"] =
      "dcf10/dcf08 are normalized minimum costs at the NIST SRE10 and SRE08 operating-point conventions "
      "(see config metric.*)";
  if (r.final_epoch) {
    const auto& e = *r.final_epoch;
    j["training"] = json{{"cls_loss", e.cls_loss},
                         {"adv_loss", e.adv_loss},
                         {"objective", e.objective},
                         {"speaker_accuracy", e.speaker_accuracy},
                         {"domain_accuracy", e.domain_accuracy}};
  }
  json cfg = json::object();
  for (const auto& [k, v] : r.config) cfg[k] = v;
  j["config"] = cfg;
  return j.dump(2) + "\n";
}

Report parse_report(const std::string& text) {
  Report r;
  try {
    const json j = json::parse(text);
    r.version = j.at("version").get<std::string>();
    r.condition = j.at("condition").get<std::string>();
    r.partition_style = j.value("partition_style", std::string{});
    r.source_domains = j.at("source_domains").get<int>();
    r.target_domains = j.at("target_domains").get<int>();
    r.baseline = metrics_from(j.at("metrics").at("no-adapt"));
    r.adapted = metrics_from(j.at("metrics").at("adapted"));
    if (j.contains("training")) {
      const auto& t = j["training"];
      r.final_epoch = EpochStats{t.at("cls_loss").get<double>(), t.at("adv_loss").get<double>(),
                                 t.at("objective").get<double>(), t.at("speaker_accuracy").get<double>(),
                                 t.at("domain_accuracy").get<double>()};
    }
    if (j.contains("config"))
      for (const auto& [k, v] : j["config"].items()) r.config.emplace_back(k, v.get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

Report read_report(const std::filesystem::path& path) { return parse_report(io::read_file(path)); }

// ---------------------------------------------------------------------------
// Stages

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

void stage_gen(const ExperimentConfig& cfg, const Artifacts& a) {
  SyntheticData d;
  if (cfg.data_dir) {
    const Artifacts in{*cfg.data_dir};
    d.source = read_vectors(in.source());
    d.target = read_vectors(in.target());
    d.enroll = read_vectors(in.enroll());
    d.test = read_vectors(in.test());
    d.trials = read_trials(in.trials());
  } else {
    d = generate(cfg.synthetic.to_spec(derive_seed(cfg.seed, "gen")));
  }
  for (const auto* s : {&d.source, &d.target, &d.enroll, &d.test}) s->validate();
  if (d.target.dim != d.source.dim || d.enroll.dim != d.source.dim || d.test.dim != d.source.dim)
    throw DataError("source, target, enroll and test vectors must share one dimension");
  // Only the trial keys carry evaluation-side identity.
  write_vectors(d.source, a.source());
  write_vectors(d.target.without_speakers(), a.target());
  write_vectors(d.enroll.without_speakers(), a.enroll());
  write_vectors(d.test.without_speakers(), a.test());
  write_trials(d.trials, a.trials());
}

DomainPartition make_partition(const PartitionSpec& spec, const LabeledVectorSet& data, std::uint64_t seed) {
  switch (spec.mode) {
    case PartitionMode::Single: return single_partition(data);
    case PartitionMode::Codes: return partition_by_code(data);
    case PartitionMode::KMeans: return kmeans_partition(data, spec.k, seed);
  }
  throw ConfigError("unknown partition mode");
}

void stage_partition(const ExperimentConfig& cfg, const Artifacts& a) {
  const auto source = read_vectors(a.source());
  const auto target = read_vectors(a.target());
  write_partition(make_partition(cfg.source_partition, source, derive_seed(cfg.seed, "partition/source")),
                  a.source_partition());
  write_partition(make_partition(cfg.target_partition, target, derive_seed(cfg.seed, "partition/target")),
                  a.target_partition());
}

struct TrainingSets {
  LabeledVectorSet source;
  LabeledVectorSet target;
  int n_source = 0;
  int n_target = 0;
};

TrainingSets load_training_sets(const Artifacts& a) {
  TrainingSets t;
  t.source = read_vectors(a.source());
  t.target = read_vectors(a.target()).without_speakers();
  const auto ps = read_partition(a.source_partition());
  const auto pt = read_partition(a.target_partition());
  apply_partition(t.source, ps, 0);
  apply_partition(t.target, pt, ps.k);
  t.n_source = ps.k;
  t.n_target = pt.k;
  return t;
}

void stage_train(const ExperimentConfig& cfg, const Artifacts& a) {
  const auto sets = load_training_sets(a);
  const int speakers = static_cast<int>(speaker_index(sets.source).size());
  MdannModel model = build_model(sets.source.dim, speakers, sets.n_source + sets.n_target, cfg.arch,
                                 derive_seed(cfg.seed, "init"));
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "train");
  const auto stats = train(model, sets.source, sets.target, tc);
  save_model(model, a.model());

  json epochs = json::array();
  for (const auto& e : stats.epochs)
    epochs.push_back(json{{"cls_loss", e.cls_loss},
                          {"adv_loss", e.adv_loss},
                          {"objective", e.objective},
                          {"speaker_accuracy", e.speaker_accuracy},
                          {"domain_accuracy", e.domain_accuracy}});
  io::write_file(a.train_stats(), json{{"epochs", epochs}}.dump(2) + "\n");
}

void stage_extract(const ExperimentConfig& cfg, const Artifacts& a) {
  const auto model = load_model(a.model());
  const std::pair<const char*, std::filesystem::path> sets[] = {
      {"source", a.source()}, {"target", a.target()}, {"enroll", a.enroll()}, {"test", a.test()}};
  for (const auto& [name, path] : sets)
    write_vectors(extract_embeddings(model, read_vectors(path), cfg.embedding_layer), a.embedding(name));
}

Eigen::MatrixXd whitening_data(WhiteningSource src, const LabeledVectorSet& source, const LabeledVectorSet& target) {
  switch (src) {
    case WhiteningSource::Target: return target.matrix();
    case WhiteningSource::Source: return source.matrix();
    case WhiteningSource::Pooled: {
      Eigen::MatrixXd m(source.dim, static_cast<Eigen::Index>(source.size() + target.size()));
      m << source.matrix(), target.matrix();
      return m;
    }
  }
  throw ConfigError("unknown whitening source");
}

void stage_backend(const ExperimentConfig& cfg, const Artifacts& a) {
  for (bool adapted : {false, true}) {
    const auto source = read_vectors(adapted ? a.embedding("source") : a.source());
    const auto target = read_vectors(adapted ? a.embedding("target") : a.target());
    PldaFit info;
    const auto wsrc = adapted ? cfg.whitening : cfg.baseline_whitening;
    const Backend b = fit_backend(source, whitening_data(wsrc, source, target), cfg.plda_iters,
                                  cfg.preprocess, &info);
    const char* which = adapted ? "adapted" : "raw";
    if (b.whitener.floored_dims > 0)
      warn(std::string(which) + " whitening floored " + std::to_string(b.whitener.floored_dims) + " eigenvalue(s)");
    if (info.regularized) warn(std::string(which) + " PLDA within-class covariance was regularized");
    save_backend(b, a.backend(adapted));
  }
}

void stage_score(const ExperimentConfig&, const Artifacts& a) {
  const auto trials = read_trials(a.trials());
  for (bool adapted : {false, true}) {
    const auto b = load_backend(a.backend(adapted));
    const auto enroll = read_vectors(adapted ? a.embedding("enroll") : a.enroll());
    const auto test = read_vectors(adapted ? a.embedding("test") : a.test());
    write_scores(score_trials(b, enroll, test, trials), a.scores(adapted));
  }
}

std::string partition_style(const ExperimentConfig& cfg) {
  const auto has = [&](PartitionMode m) {
    return cfg.source_partition.mode == m || cfg.target_partition.mode == m;
  };
  if (has(PartitionMode::KMeans)) return "k-means";
  if (has(PartitionMode::Codes)) return "codes";
  return "none";
}

void stage_eval(const ExperimentConfig& cfg, const Artifacts& a) {
  Report r;
  r.source_domains = read_partition(a.source_partition()).k;
  r.target_domains = read_partition(a.target_partition()).k;
  r.condition = condition_name(r.source_domains, r.target_domains);
  r.partition_style = partition_style(cfg);
  r.baseline = evaluate(read_scores(a.scores(false)), cfg.dcf10, cfg.dcf08);
  r.adapted = evaluate(read_scores(a.scores(true)), cfg.dcf10, cfg.dcf08);
  if (std::filesystem::exists(a.train_stats())) {
    const json j = json::parse(io::read_file(a.train_stats()));
    if (!j.at("epochs").empty()) {
      const auto& t = j["epochs"].back();
      r.final_epoch = EpochStats{t.at("cls_loss").get<double>(), t.at("adv_loss").get<double>(),
                                 t.at("objective").get<double>(), t.at("speaker_accuracy").get<double>(),
                                 t.at("domain_accuracy").get<double>()};
    }
  }
  r.config = config_entries(cfg);
  io::write_file(a.report(), format_report(r));
}

}  // namespace

void run_stage(Stage stage, const ExperimentConfig& cfg) {
  const Artifacts a{cfg.out_dir};
  try {
    cfg.check();
    std::filesystem::create_directories(cfg.out_dir);
    switch (stage) {
      case Stage::Gen: stage_gen(cfg, a); break;
      case Stage::Partition: stage_partition(cfg, a); break;
      case Stage::Train: stage_train(cfg, a); break;
      case Stage::Extract: stage_extract(cfg, a); break;
      case Stage::Backend: stage_backend(cfg, a); break;
      case Stage::Score: stage_score(cfg, a); break;
      case Stage::Eval: stage_eval(cfg, a); break;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(std::string(to_string(stage)), e.what());
  }
}

Report run_experiment(const ExperimentConfig& cfg) {
  for (Stage s : all_stages())
    if (std::find(cfg.stages.begin(), cfg.stages.end(), s) != cfg.stages.end()) run_stage(s, cfg);
  const Artifacts a{cfg.out_dir};
  if (!std::filesystem::exists(a.report())) throw StageError("eval", "no report produced in " + cfg.out_dir.string());
  return read_report(a.report());
}

std::vector<Report> run_condition_matrix(const ExperimentConfig& cfg) {
  std::vector<Report> reports;
  for (const auto& cond : condition_matrix()) {
    ExperimentConfig c = cfg;
    apply_condition(c, cond);
    std::string slug = cond;
    std::replace(slug.begin(), slug.end(), ':', '_');
    c.out_dir = cfg.out_dir / slug;
    c.stages = all_stages();
    reports.push_back(run_experiment(c));
  }
  io::write_file(cfg.out_dir / "comparison.txt", format_comparison(compare_conditions(reports)));
  return reports;
}

// ---------------------------------------------------------------------------
// Comparison

double relative_reduction(double baseline, double value) {
  if (baseline == 0) return value == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return 100.0 * (baseline - value) / baseline;
}

ComparisonTable compare_conditions(const std::vector<std::pair<std::string, MetricSummary>>& results) {
  if (results.size() < 2) throw DataError("compare_conditions: need at least two results");
  ComparisonTable t;
  const MetricSummary& ref = results.front().second;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [name, m] : results) {
    t.rows.push_back({name, m, relative_reduction(ref.eer, m.eer), relative_reduction(ref.dcf10, m.dcf10),
                      relative_reduction(ref.dcf08, m.dcf08)});
    if (m.eer < best) {
      best = m.eer;
      t.best = name;
    }
  }
  return t;
}

ComparisonTable compare_conditions(const std::vector<Report>& reports) {
  if (reports.empty()) throw DataError("compare_conditions: no reports");
  std::vector<std::pair<std::string, MetricSummary>> rows;
  rows.emplace_back("no-adapt", reports.front().baseline);
  for (const auto& r : reports) rows.emplace_back(r.label(), r.adapted);
  return compare_conditions(rows);
}

std::string format_comparison(const ComparisonTable& table) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s %9s %8s %8s %9s %9s %9s\n", "condition", "EER(%)", "DCF10", "DCF08",
                "dEER(%)", "dDCF10(%)", "dDCF08(%)");
  out += buf;
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%-24s %9.2f %8.3f %8.3f %+9.1f %+9.1f %+9.1f\n", r.name.c_str(), r.metrics.eer,
                  r.metrics.dcf10, r.metrics.dcf08, r.eer_reduction, r.dcf10_reduction, r.dcf08_reduction);
    out += buf;
  }
  out += "best: " + table.best + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Domain probe

ProbeResult linear_domain_probe(const LabeledVectorSet& data, std::uint64_t seed, int iterations) {
  if (data.size() < 4) throw DataError("linear_domain_probe: need at least 4 records");
  std::map<int, int> classes;
  for (const auto& r : data.records) {
    if (!r.domain) throw DataError("linear_domain_probe: record '" + r.id + "' has no domain label");
    classes.emplace(*r.domain, 0);
  }
  int next = 0;
  for (auto& [d, idx] : classes) idx = next++;
  if (next < 2) throw DataError("linear_domain_probe: need at least two domains");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t half = order.size() / 2;

  auto take = [&](std::size_t begin, std::size_t end, std::vector<int>& labels) {
    Eigen::MatrixXd m(data.dim, static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) {
      m.col(static_cast<Eigen::Index>(i - begin)) = data.records[order[i]].vector;
      labels.push_back(classes.at(*data.records[order[i]].domain));
    }
    return m;
  };
  std::vector<int> train_y, test_y;
  Eigen::MatrixXd train_x = take(0, half, train_y);
  Eigen::MatrixXd test_x = take(half, order.size(), test_y);

  // Standardize with training-split statistics.
  const Eigen::VectorXd mean = train_x.rowwise().mean();
  Eigen::VectorXd sd = ((train_x.colwise() - mean).array().square().rowwise().mean()).sqrt().matrix();
  for (Eigen::Index i = 0; i < sd.size(); ++i)
    if (!(sd(i) > 1e-12)) sd(i) = 1;
  train_x = (train_x.colwise() - mean).array().colwise() / sd.array();
  test_x = (test_x.colwise() - mean).array().colwise() / sd.array();

  Rng init(derive_seed(seed, "probe/init"));
  nn::Network<double> probe{nn::make_layer<double>(data.dim, next, nn::Activation::Linear, init)};
  const double n = static_cast<double>(train_y.size());
  for (int it = 0; it < iterations; ++it) {
    const auto caches = nn::network_forward<double>(probe, train_x);
    const auto ce = nn::softmax_cross_entropy<double>(caches.back().output, train_y);
    const auto back = nn::network_backward<double>(probe, caches, ce.grad_logits / n);
    nn::sgd_step(probe, back.gradients, 0.5);
  }
  const auto out = nn::network_forward<double>(probe, test_x);
  const auto ce = nn::softmax_cross_entropy<double>(out.back().output, test_y);
  int correct = 0;
  std::vector<int> counts(static_cast<std::size_t>(next), 0);
  for (std::size_t j = 0; j < test_y.size(); ++j) {
    correct += ce.predicted[j] == test_y[j];
    ++counts[static_cast<std::size_t>(test_y[j])];
  }
  ProbeResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test_y.size());
  r.chance = static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(test_y.size());
  return r;
}

}  // namespace mdat
