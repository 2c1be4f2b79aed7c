#include "mdat/mdann.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mdat/error.hpp"
#include "mdat/text_io.hpp"

namespace mdat {

using nn::Activation;

namespace {

void check_chain(const Network& net, Eigen::Index in, Eigen::Index out, const char* name) {
  if (net.empty()) throw ShapeError(std::string(name) + ": no layers");
  for (const auto& layer : net) {
    if (layer.in_dim() != in)
      throw ShapeError(std::string(name) + ": layer input " + std::to_string(layer.in_dim()) +
                       " does not match " + std::to_string(in));
    if (layer.bias.size() != layer.out_dim())
      throw ShapeError(std::string(name) + ": bias length does not match weight rows");
    in = layer.out_dim();
  }
  if (out >= 0 && in != out)
    throw ShapeError(std::string(name) + ": output " + std::to_string(in) + ", expected " +
                     std::to_string(out));
}

Network build_network(Eigen::Index in, const std::vector<int>& hidden, int logits,
                      Activation act, Rng& rng) {
  Network net;
  for (int width : hidden) {
    net.push_back(nn::make_layer<double>(in, width, act, rng));
    in = width;
  }
  if (logits > 0) net.push_back(nn::make_layer<double>(in, logits, Activation::Linear, rng));
  return net;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(cols[j]);
  return out;
}

}  // namespace

void MdannModel::check() const {
  if (input_dim < 1 || num_speakers < 1 || num_domains < 1)
    throw ShapeError("model dimensions must be >= 1");
  check_chain(generator, input_dim, -1, "generator");
  check_chain(classifier, feature_dim(), num_speakers, "classifier");
  check_chain(discriminator, feature_dim(), num_domains, "discriminator");
}

MdannModel build_model(int input_dim, int num_speakers, int num_domains,
                       const Architecture& arch, std::uint64_t seed) {
  if (input_dim < 1 || num_speakers < 1 || num_domains < 1)
    throw ConfigError("build_model: input_dim, speaker count and domain count must be >= 1");
  if (arch.generator.empty()) throw ConfigError("build_model: generator needs at least one layer");
  auto positive = [](const std::vector<int>& v) {
    return std::all_of(v.begin(), v.end(), [](int w) { return w >= 1; });
  };
  if (!positive(arch.generator) || !positive(arch.classifier) || !positive(arch.discriminator))
    throw ConfigError("build_model: layer widths must be >= 1");

  Rng rng(seed);
  MdannModel m;
  m.input_dim = input_dim;
  m.num_speakers = num_speakers;
  m.num_domains = num_domains;
  m.generator = build_network(input_dim, arch.generator, 0, arch.generator_act, rng);
  m.classifier = build_network(m.feature_dim(), arch.classifier, num_speakers, arch.classifier_act, rng);
  m.discriminator = build_network(m.feature_dim(), arch.discriminator, num_domains, arch.discriminator_act, rng);
  return m;
}

double LambdaSchedule::at(double lambda, std::size_t step) const {
  if (kind == Kind::Constant || total_steps == 0) return lambda;
  const double p = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return lambda * (2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0);
}

void TrainConfig::check() const {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
  if (!(mu > 0) || !std::isfinite(mu)) throw ConfigError("learning rate mu must be > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

ForwardLosses forward_losses(const MdannModel& model, const Eigen::VectorXd& x,
                             std::optional<int> speaker, int domain, int target_domain_start) {
  if (x.size() != model.input_dim)
    throw ShapeError("forward_losses: input has " + std::to_string(x.size()) +
                     " values, model expects " + std::to_string(model.input_dim));
  if (domain >= target_domain_start && speaker)
    throw ContractError("forward_losses: target-domain sample carries a speaker label");
  if (domain < target_domain_start && !speaker)
    throw ContractError("forward_losses: source-domain sample lacks a speaker label");

  ForwardLosses r;
  r.generator = nn::network_forward<double>(model.generator, x);
  const auto& feat = r.generator.back().output;
  if (speaker) {
    r.classifier = nn::network_forward<double>(model.classifier, feat);
    const int label[1] = {*speaker};
    r.cls = nn::softmax_cross_entropy<double>(r.classifier.back().output, label).loss(0);
  }
  r.discriminator = nn::network_forward<double>(model.discriminator, feat);
  const int dlabel[1] = {domain};
  r.adv = nn::softmax_cross_entropy<double>(r.discriminator.back().output, dlabel).loss(0);
  return r;
}

MdannGradients compute_gradients(const MdannModel& model, const Batch& batch, double lambda,
                                 LossTerms terms, StepStats* stats) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw ConfigError("compute_gradients: empty batch");
  if (batch.inputs.rows() != model.input_dim)
    throw ShapeError("compute_gradients: batch dimension does not match model input");
  if (static_cast<Eigen::Index>(batch.speakers.size()) != n ||
      static_cast<Eigen::Index>(batch.domains.size()) != n ||
      (!batch.domain_weights.empty() && static_cast<Eigen::Index>(batch.domain_weights.size()) != n))
    throw ShapeError("compute_gradients: label arrays do not match batch size");

  StepStats local;
  MdannGradients g;
  const auto gen = nn::network_forward<double>(model.generator, batch.inputs);
  const Eigen::MatrixXd& feat = gen.back().output;
  Eigen::MatrixXd d_feat = Eigen::MatrixXd::Zero(feat.rows(), n);

  // Speaker branch over source members only.
  std::vector<Eigen::Index> src;
  std::vector<int> spk;
  for (Eigen::Index j = 0; j < n; ++j)
    if (batch.speakers[j]) {
      src.push_back(j);
      spk.push_back(*batch.speakers[j]);
    }
  local.samples = static_cast<int>(n);
  local.sources = static_cast<int>(src.size());
  if (!src.empty()) {
    const auto cls = nn::network_forward<double>(model.classifier, gather(feat, src));
    const auto ce = nn::softmax_cross_entropy<double>(cls.back().output, spk);
    local.cls_loss_sum = ce.loss.sum();
    for (std::size_t j = 0; j < spk.size(); ++j) local.speaker_correct += ce.predicted[j] == spk[j];
    if (terms != LossTerms::AdversarialOnly) {
      auto back = nn::network_backward<double>(model.classifier, cls,
                                               ce.grad_logits / static_cast<double>(src.size()));
      g.classifier = std::move(back.gradients);
      for (std::size_t j = 0; j < src.size(); ++j) d_feat.col(src[j]) = back.downstream.col(static_cast<Eigen::Index>(j));
    }
  }
  if (g.classifier.empty()) g.classifier = nn::zero_gradients(model.classifier);

  // Domain branch over every member, reversed into the generator.
  const auto dis = nn::network_forward<double>(model.discriminator, feat);
  const auto ce = nn::softmax_cross_entropy<double>(dis.back().output, batch.domains);
  for (Eigen::Index j = 0; j < n; ++j) local.domain_correct += ce.predicted[j] == batch.domains[j];
  if (batch.domain_weights.empty()) {
    local.adv_loss_sum = ce.loss.sum();
  } else {
    for (Eigen::Index j = 0; j < n; ++j) local.adv_loss_sum += batch.domain_weights[j] * ce.loss(j);
  }
  if (terms != LossTerms::ClassifierOnly) {
    Eigen::MatrixXd up = ce.grad_logits / static_cast<double>(n);
    if (!batch.domain_weights.empty())
      for (Eigen::Index j = 0; j < n; ++j) up.col(j) *= batch.domain_weights[j];
    auto back = nn::network_backward<double>(model.discriminator, dis, up);
    g.discriminator = std::move(back.gradients);
    d_feat += nn::grl_backward(back.downstream, lambda);
  } else {
    g.discriminator = nn::zero_gradients(model.discriminator);
  }

  g.generator = nn::network_backward<double>(model.generator, gen, d_feat).gradients;
  if (stats) *stats = local;
  return g;
}

StepStats train_step(MdannModel& model, const Batch& batch, const TrainConfig& cfg,
                     std::size_t step, std::size_t total_steps) {
  cfg.check();
  LambdaSchedule sched = cfg.schedule;
  if (sched.total_steps == 0) sched.total_steps = total_steps;
  StepStats stats;
  const auto g = compute_gradients(model, batch, sched.at(cfg.lambda, step), cfg.terms, &stats);
  if (!std::isfinite(stats.cls_loss_sum) || !std::isfinite(stats.adv_loss_sum))
    throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(step));
  nn::sgd_step(model.generator, g.generator, cfg.mu);
  nn::sgd_step(model.classifier, g.classifier, cfg.mu);
  nn::sgd_step(model.discriminator, g.discriminator, cfg.mu);
  return stats;
}

std::map<std::string, int> speaker_index(const LabeledVectorSet& source) {
  std::map<std::string, int> index;
  for (const auto& r : source.records) {
    if (!r.speaker) throw DataError("source record '" + r.id + "' has no speaker label");
    index.emplace(*r.speaker, 0);
  }
  int k = 0;
  for (auto& [name, idx] : index) idx = k++;
  return index;
}

TrainStats train(MdannModel& model, const LabeledVectorSet& source,
                 const LabeledVectorSet& target, const TrainConfig& cfg) {
  cfg.check();
  model.check();
  if (source.dim != model.input_dim || (!target.empty() && target.dim != model.input_dim))
    throw ShapeError("train: data dimension does not match model input");

  const auto speakers = speaker_index(source);
  if (static_cast<int>(speakers.size()) > model.num_speakers)
    throw ConfigError("train: source has " + std::to_string(speakers.size()) +
                      " speakers, classifier has " + std::to_string(model.num_speakers) + " outputs");

  int src_max = -1;
  int tgt_min = model.num_domains;
  for (const auto& r : source.records) {
    if (!r.domain) throw DataError("source record '" + r.id + "' has no domain label");
    src_max = std::max(src_max, *r.domain);
    if (*r.domain < 0) throw ConfigError("negative domain label on '" + r.id + "'");
  }
  for (const auto& r : target.records) {
    if (r.speaker) throw ContractError("target record '" + r.id + "' carries a speaker label");
    if (!r.domain) throw DataError("target record '" + r.id + "' has no domain label");
    tgt_min = std::min(tgt_min, *r.domain);
  }
  if (!target.empty() && tgt_min <= src_max)
    throw ConfigError("train: source and target domain label ranges overlap");
  for (const auto* set : {&source, &target})
    for (const auto& r : set->records)
      if (*r.domain >= model.num_domains)
        throw ConfigError("domain label " + std::to_string(*r.domain) + " on '" + r.id +
                          "' exceeds discriminator size " + std::to_string(model.num_domains));

  TrainStats stats;
  if (cfg.epochs == 0) return stats;

  const std::size_t total = source.size() + target.size();
  if (total == 0) throw DataError("train: no samples");
  Eigen::MatrixXd all(model.input_dim, static_cast<Eigen::Index>(total));
  std::vector<std::optional<int>> spk(total);
  std::vector<int> dom(total);
  {
    std::size_t j = 0;
    for (const auto& r : source.records) {
      all.col(static_cast<Eigen::Index>(j)) = r.vector;
      spk[j] = speakers.at(*r.speaker);
      dom[j++] = *r.domain;
    }
    for (const auto& r : target.records) {
      all.col(static_cast<Eigen::Index>(j)) = r.vector;
      dom[j++] = *r.domain;
    }
  }
  std::vector<double> weights;
  if (cfg.balance_domains) {
    std::map<int, std::size_t> counts;
    for (int d : dom) ++counts[d];
    weights.resize(total);
    for (std::size_t j = 0; j < total; ++j)
      weights[j] = static_cast<double>(total) /
                   (static_cast<double>(counts.size()) * static_cast<double>(counts[dom[j]]));
  }

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t per_epoch = (total + bs - 1) / bs;
  const std::size_t total_steps = per_epoch * static_cast<std::size_t>(cfg.epochs);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(total);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    StepStats acc;
    double lambda_now = cfg.lambda;
    for (std::size_t start = 0; start < total; start += bs) {
      const std::size_t end = std::min(total, start + bs);
      Batch batch;
      batch.inputs.resize(model.input_dim, static_cast<Eigen::Index>(end - start));
      for (std::size_t i = start; i < end; ++i) {
        batch.inputs.col(static_cast<Eigen::Index>(i - start)) = all.col(static_cast<Eigen::Index>(order[i]));
        batch.speakers.push_back(spk[order[i]]);
        batch.domains.push_back(dom[order[i]]);
        if (!weights.empty()) batch.domain_weights.push_back(weights[order[i]]);
      }
      StepStats s;
      try {
        s = train_step(model, batch, cfg, step, total_steps);
      } catch (const DivergenceError&) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(step));
      }
      LambdaSchedule sched = cfg.schedule;
      if (sched.total_steps == 0) sched.total_steps = total_steps;
      lambda_now = sched.at(cfg.lambda, step);
      ++step;
      acc.cls_loss_sum += s.cls_loss_sum;
      acc.adv_loss_sum += s.adv_loss_sum;
      acc.sources += s.sources;
      acc.samples += s.samples;
      acc.speaker_correct += s.speaker_correct;
      acc.domain_correct += s.domain_correct;
    }
    EpochStats e;
    e.cls_loss = acc.sources ? acc.cls_loss_sum / acc.sources : 0.0;
    e.adv_loss = acc.adv_loss_sum / acc.samples;
    e.objective = e.cls_loss - lambda_now * e.adv_loss;
    e.speaker_accuracy = acc.sources ? static_cast<double>(acc.speaker_correct) / acc.sources : 0.0;
    e.domain_accuracy = static_cast<double>(acc.domain_correct) / acc.samples;
    stats.epochs.push_back(e);
  }
  return stats;
}

EmbeddingSet extract_embeddings(const MdannModel& model, const LabeledVectorSet& data,
                                EmbeddingLayer layer) {
  if (data.dim != model.input_dim)
    throw ShapeError("extract_embeddings: data dimension " + std::to_string(data.dim) +
                     " does not match model input " + std::to_string(model.input_dim));
  const std::size_t depth = layer == EmbeddingLayer::FirstHiddenOfG ? 1 : model.generator.size();
  EmbeddingSet out;
  out.dim = static_cast<int>(model.generator[depth - 1].out_dim());
  out.records.reserve(data.size());

  constexpr std::size_t chunk = 1024;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    Eigen::MatrixXd h(data.dim, static_cast<Eigen::Index>(end - start));
    for (std::size_t i = start; i < end; ++i) {
      if (data.records[i].vector.size() != data.dim)
        throw ShapeError("extract_embeddings: record '" + data.records[i].id + "' has wrong dimension");
      h.col(static_cast<Eigen::Index>(i - start)) = data.records[i].vector;
    }
    for (std::size_t l = 0; l < depth; ++l) h = nn::dense_forward<double>(model.generator[l], h).output;
    for (std::size_t i = start; i < end; ++i) {
      VectorRecord r = data.records[i];
      r.vector = h.col(static_cast<Eigen::Index>(i - start));
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

// Checkpoint: line-oriented text, every double in shortest round-trip form.

namespace {

constexpr const char* kMagic = "mdann-checkpoint";
constexpr int kVersion = 1;

void write_network(std::ostream& out, const char* name, const Network& net) {
  out << "network " << name << ' ' << net.size() << '\n';
  for (const auto& layer : net) {
    out << "layer " << layer.out_dim() << ' ' << layer.in_dim() << ' '
        << nn::to_string(layer.activation) << '\n';
    std::string line;
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      line = "w ";
      io::append_row(line, layer.weights.row(r).transpose(), ' ');
      out << line << '\n';
    }
    line = "b ";
    io::append_row(line, layer.bias, ' ');
    out << line << '\n';
  }
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::string next() {
    std::string s;
    if (!std::getline(in_, s)) throw ParseError("unexpected end of checkpoint", line_ + 1);
    ++line_;
    return s;
  }

  std::vector<std::string> tokens(const std::string& expect_head, std::size_t count) {
    std::istringstream ss(next());
    std::vector<std::string> t;
    for (std::string w; ss >> w;) t.push_back(w);
    if (t.empty() || t[0] != expect_head || (count && t.size() != count))
      throw ParseError("expected '" + expect_head + "' record", line_);
    return t;
  }

  Eigen::VectorXd row(char head, Eigen::Index expect) {
    const std::string s = next();
    if (s.size() < 2 || s[0] != head || s[1] != ' ')
      throw ParseError(std::string("expected '") + head + "' row", line_);
    Eigen::VectorXd v = io::parse_row(std::string_view(s).substr(2), ' ', line_);
    if (v.size() != expect)
      throw ParseError("row has " + std::to_string(v.size()) + " values, expected " + std::to_string(expect), line_);
    return v;
  }

  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

Network read_network(LineReader& rd, const char* name) {
  const auto head = rd.tokens("network", 3);
  if (head[1] != name) throw ParseError(std::string("expected network '") + name + "'", rd.line());
  const auto count = io::parse_int(head[2], rd.line());
  Network net;
  for (long long i = 0; i < count; ++i) {
    const auto t = rd.tokens("layer", 4);
    const auto out = io::parse_int(t[1], rd.line());
    const auto in = io::parse_int(t[2], rd.line());
    if (out < 1 || in < 1) throw ParseError("layer dimensions must be >= 1", rd.line());
    Layer layer;
    layer.activation = nn::parse_activation(t[3]);
    layer.weights.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r) layer.weights.row(r) = rd.row('w', in).transpose();
    layer.bias = rd.row('b', out);
    net.push_back(std::move(layer));
  }
  return net;
}

}  // namespace

void save_model(const MdannModel& model, std::ostream& out) {
  model.check();
  out << kMagic << ' ' << kVersion << '\n'
      << "input_dim " << model.input_dim << '\n'
      << "speakers " << model.num_speakers << '\n'
      << "domains " << model.num_domains << '\n';
  write_network(out, "generator", model.generator);
  write_network(out, "classifier", model.classifier);
  write_network(out, "discriminator", model.discriminator);
  if (!out) throw Error("save_model: write failed");
}

MdannModel load_model(std::istream& in) {
  LineReader rd(in);
  const auto magic = rd.tokens(kMagic, 2);
  if (io::parse_int(magic[1], rd.line()) != kVersion)
    throw ParseError("unsupported checkpoint version " + magic[1], rd.line());
  MdannModel m;
  m.input_dim = static_cast<int>(io::parse_int(rd.tokens("input_dim", 2)[1], rd.line()));
  m.num_speakers = static_cast<int>(io::parse_int(rd.tokens("speakers", 2)[1], rd.line()));
  m.num_domains = static_cast<int>(io::parse_int(rd.tokens("domains", 2)[1], rd.line()));
  m.generator = read_network(rd, "generator");
  m.classifier = read_network(rd, "classifier");
  m.discriminator = read_network(rd, "discriminator");
  m.check();
  return m;
}

void save_model(const MdannModel& model, const std::filesystem::path& path) {
  std::ostringstream ss;
  save_model(model, ss);
  io::write_file(path, ss.str());
}

MdannModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  return load_model(in);
}

}  // namespace mdat
