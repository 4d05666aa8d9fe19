#include "rcms/srp/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "rcms/keyvalue.hpp"

namespace rcms::srp {

Normalizer Normalizer::for_scenario(double max_speed, double max_accel, double max_tti) {
  Normalizer n;
  n.min << 0.0, 0.0, -1.0, 0.0, 1.0;
  n.max << max_speed, max_accel, 1.0, 1.0, max_tti;
  return n;
}

VectorXd Normalizer::apply(const VectorXd& raw) const {
  VectorXd out(raw.size());
  for (Eigen::Index k = 0; k < raw.size(); ++k) {
    const double span = max[k] - min[k];
    const double v = span > 0.0 ? (raw[k] - min[k]) / span : 0.0;
    out[k] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

VectorXd raw_features(const VehicleState& s, int heading_sign) {
  VectorXd f(kFeatureCount);
  f << s.speed.norm(), s.acceleration.norm(), static_cast<double>(heading_sign),
      std::clamp(s.segment_fraction, 0.0, 1.0), s.tti;
  return f;
}

Sequence feature_sequence(const Trajectory& t, const Normalizer& normalizer, std::size_t count,
                          const Trajectory* reference) {
  const std::size_t n = count == 0 ? t.size() : std::min(count, t.size());
  Sequence seq(static_cast<Eigen::Index>(n), kFeatureCount);
  const std::size_t first = t.size() - n;
  const bool relative = reference && reference->size() > 0 && t.size() > 0;
  const int window_sign = relative ? heading_sign_relative_to(t.back(), reference->back()) : +1;
  for (std::size_t k = 0; k < n; ++k) {
    const VehicleState& s = t[first + k];
    const int sign = relative ? window_sign : s.heading_sign;
    seq.row(static_cast<Eigen::Index>(k)) = normalizer.apply(raw_features(s, sign)).transpose();
  }
  return seq;
}

// ---------------------------------------------------------------------------

SrpModel SrpModel::zeros(const SrpConfig& config, Normalizer normalizer) {
  SrpModel m;
  m.encoder = GruCell::zeros(config.hidden, kFeatureCount);
  m.decoder = GruCell::zeros(config.hidden, kFeatureCount);
  m.projection = MatrixXd::Zero(kFeatureCount, config.hidden);
  m.projection_bias = VectorXd::Zero(kFeatureCount);
  m.sequence_length = config.sequence_length;
  m.horizon = config.horizon;
  m.gamma = config.gamma;
  m.loss = config.loss;
  m.normalizer = std::move(normalizer);
  m.check();
  return m;
}

SrpModel SrpModel::random(const SrpConfig& config, std::uint64_t seed, Normalizer normalizer) {
  SrpModel m = zeros(config, std::move(normalizer));
  const double scale = config.init_scale > 0.0 ? config.init_scale : 1.0 / std::sqrt(config.hidden);
  std::mt19937_64 rng(seed);
  m.encoder = GruCell::random(config.hidden, kFeatureCount, rng, scale);
  m.decoder = GruCell::random(config.hidden, kFeatureCount, rng, scale);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (Eigen::Index i = 0; i < m.projection.rows(); ++i)
    for (Eigen::Index j = 0; j < m.projection.cols(); ++j) m.projection(i, j) = dist(rng);
  // A small positive output bias keeps the ReLU units alive at the start.
  m.projection_bias.setConstant(0.1);
  return m;
}

void SrpModel::check() const {
  encoder.check_shapes();
  decoder.check_shapes();
  const auto h = encoder.hidden_size();
  const auto d = encoder.input_size();
  if (decoder.hidden_size() != h || decoder.input_size() != d || projection.rows() != d ||
      projection.cols() != h || projection_bias.size() != d)
    throw Error(Errc::ShapeMismatch, fmt::format("SRP model blocks disagree with H={} D={}", h, d));
  if (sequence_length < 2) throw Error(Errc::ShapeMismatch, "SRP sequence length must be >= 2");
  if (horizon < 1) throw Error(Errc::ShapeMismatch, "SRP horizon must be >= 1");
  if (normalizer.min.size() != d || normalizer.max.size() != d)
    throw Error(Errc::ShapeMismatch, "SRP normalizer width differs from feature count");
}

namespace {

template <typename Fn>
void for_each_block(GruCell& c, Fn&& fn) {
  fn(c.W_z), fn(c.W_r), fn(c.W_h), fn(c.U_z), fn(c.U_r), fn(c.U_h), fn(c.b_z), fn(c.b_r), fn(c.b_h);
}

template <typename Fn>
void for_each_block(SrpModel& m, Fn&& fn) {
  for_each_block(m.encoder, fn);
  for_each_block(m.decoder, fn);
  fn(m.projection);
  fn(m.projection_bias);
}

constexpr std::array<const char*, 9> kGruBlockNames{"W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h"};

template <typename M>
void flatten_into(const M& block, VectorXd& out, Eigen::Index& pos) {
  for (Eigen::Index i = 0; i < block.rows(); ++i)
    for (Eigen::Index j = 0; j < block.cols(); ++j) out[pos++] = block(i, j);
}

template <typename M>
void unflatten_from(M& block, const VectorXd& in, Eigen::Index& pos) {
  for (Eigen::Index i = 0; i < block.rows(); ++i)
    for (Eigen::Index j = 0; j < block.cols(); ++j) block(i, j) = in[pos++];
}

}  // namespace

Eigen::Index SrpModel::parameter_count() const {
  Eigen::Index n = 0;
  for_each_block(const_cast<SrpModel&>(*this), [&](const auto& b) { n += b.size(); });
  return n;
}

VectorXd SrpModel::parameters() const {
  VectorXd out(parameter_count());
  Eigen::Index pos = 0;
  for_each_block(const_cast<SrpModel&>(*this), [&](const auto& b) { flatten_into(b, out, pos); });
  return out;
}

void SrpModel::set_parameters(const VectorXd& flat) {
  if (flat.size() != parameter_count())
    throw Error(Errc::ShapeMismatch,
                fmt::format("parameter vector has {} entries, model needs {}", flat.size(), parameter_count()));
  Eigen::Index pos = 0;
  for_each_block(*this, [&](auto& b) { unflatten_from(b, flat, pos); });
}

// ---------------------------------------------------------------------------

VectorXd encode(const SrpModel& model, const Sequence& inputs) {
  if (inputs.rows() == 0) throw Error(Errc::ShapeMismatch, "encode needs at least one input step");
  if (inputs.cols() != model.feature_size())
    throw Error(Errc::ShapeMismatch,
                fmt::format("encode: inputs have {} features, model expects {}", inputs.cols(), model.feature_size()));
  VectorXd h = VectorXd::Zero(model.hidden_size());
  for (Eigen::Index t = 0; t < inputs.rows(); ++t) h = gru_step(model.encoder, inputs.row(t).transpose(), h);
  return h;
}

namespace {

struct DecodeTrace {
  std::vector<GruStepCache> steps;
  std::vector<VectorXd> pre_activation;
  Sequence outputs;
};

DecodeTrace decode_traced(const SrpModel& model, const VectorXd& h_last, int steps, const VectorXd& seed) {
  DecodeTrace tr;
  tr.outputs.resize(steps, model.feature_size());
  tr.steps.resize(static_cast<std::size_t>(steps));
  VectorXd x = seed;
  VectorXd h = h_last;
  for (int l = 0; l < steps; ++l) {
    h = gru_step(model.decoder, x, h, &tr.steps[static_cast<std::size_t>(l)]);
    VectorXd y = model.projection * h + model.projection_bias;
    x = y.cwiseMax(0.0);
    tr.pre_activation.push_back(std::move(y));
    tr.outputs.row(l) = x.transpose();
  }
  return tr;
}

}  // namespace

Sequence decode(const SrpModel& model, const VectorXd& h_last, int steps, const VectorXd* seed) {
  if (steps < 1) throw Error(Errc::ShapeMismatch, "decode horizon must be >= 1");
  if (h_last.size() != model.hidden_size())
    throw Error(Errc::ShapeMismatch, fmt::format("decode: hidden state has {} entries, model uses {}",
                                                 h_last.size(), model.hidden_size()));
  const VectorXd x0 = seed ? *seed : VectorXd::Zero(model.feature_size());
  if (x0.size() != model.feature_size()) throw Error(Errc::ShapeMismatch, "decode: seed width mismatch");
  return decode_traced(model, h_last, steps, x0).outputs;
}

Sequence predict(const SrpModel& model, const Sequence& inputs) {
  if (inputs.rows() != model.sequence_length)
    throw Error(Errc::ShapeMismatch, fmt::format("predict: input window has {} steps, model expects {}",
                                                 inputs.rows(), model.sequence_length));
  const VectorXd seed = inputs.row(inputs.rows() - 1).transpose();
  return decode(model, encode(model, inputs), model.horizon, &seed);
}

std::vector<TrainingPair> make_training_pairs(std::span<const Trajectory> trajectories,
                                              const Normalizer& normalizer, int sequence_length, int horizon,
                                              int stride) {
  std::vector<TrainingPair> pairs;
  const auto window = static_cast<Eigen::Index>(sequence_length + horizon);
  for (const auto& t : trajectories) {
    const Sequence all = feature_sequence(t, normalizer);
    for (Eigen::Index start = 0; start + window <= all.rows(); start += stride)
      pairs.push_back({all.middleRows(start, sequence_length), all.middleRows(start + sequence_length, horizon)});
  }
  return pairs;
}

// ---------------------------------------------------------------------------

namespace {

void check_pair_shape(const SrpModel& model, const TrainingPair& p) {
  if (p.input.rows() != model.sequence_length || p.input.cols() != model.feature_size() ||
      p.target.rows() < 1 || p.target.cols() != model.feature_size())
    throw Error(Errc::ShapeMismatch,
                fmt::format("training window {}x{} -> {}x{} does not fit a model with L={} D={}", p.input.rows(),
                            p.input.cols(), p.target.rows(), p.target.cols(), model.sequence_length,
                            model.feature_size()));
}

struct Gradients {
  GruCell encoder, decoder;
  MatrixXd projection;
  VectorXd projection_bias;
};

double accumulate_pair(const SrpModel& model, const TrainingPair& p, Gradients* g) {
  const auto steps = static_cast<int>(p.target.rows());
  std::vector<GruStepCache> enc(static_cast<std::size_t>(p.input.rows()));
  VectorXd h = VectorXd::Zero(model.hidden_size());
  for (Eigen::Index t = 0; t < p.input.rows(); ++t)
    h = gru_step(model.encoder, p.input.row(t).transpose(), h, &enc[static_cast<std::size_t>(t)]);
  const VectorXd seed = p.input.row(p.input.rows() - 1).transpose();
  const DecodeTrace tr = decode_traced(model, h, steps, seed);
  const LossResult lr = soft_dtw_loss(p.target, tr.outputs, model.gamma, model.loss);
  if (!g) return lr.value;

  VectorXd dx_next = VectorXd::Zero(model.feature_size());
  VectorXd dh = VectorXd::Zero(model.hidden_size());
  for (int l = steps - 1; l >= 0; --l) {
    const auto& cache = tr.steps[static_cast<std::size_t>(l)];
    const VectorXd d_out = lr.grad_b.row(l).transpose() + dx_next;
    const VectorXd dy =
        d_out.cwiseProduct((tr.pre_activation[static_cast<std::size_t>(l)].array() > 0.0).cast<double>().matrix());
    g->projection += dy * cache.h.transpose();
    g->projection_bias += dy;
    dh += model.projection.transpose() * dy;
    auto [dx, dh_prev] = gru_step_backward(model.decoder, cache, dh, g->decoder);
    dx_next = std::move(dx);  // the seed of step 0 is data, so its gradient is dropped
    dh = std::move(dh_prev);
  }
  for (auto t = static_cast<std::ptrdiff_t>(enc.size()) - 1; t >= 0; --t) {
    auto [dx, dh_prev] = gru_step_backward(model.encoder, enc[static_cast<std::size_t>(t)], dh, g->encoder);
    dh = std::move(dh_prev);
  }
  return lr.value;
}

}  // namespace

LossGradient loss_and_gradient(const SrpModel& model, std::span<const TrainingPair> data) {
  if (data.empty()) throw Error(Errc::InvalidArgument, "training set is empty");
  Gradients g{GruCell::zeros(model.hidden_size(), model.feature_size()),
              GruCell::zeros(model.hidden_size(), model.feature_size()),
              MatrixXd::Zero(model.projection.rows(), model.projection.cols()),
              VectorXd::Zero(model.projection_bias.size())};
  double total = 0.0;
  for (const auto& p : data) {
    check_pair_shape(model, p);
    total += accumulate_pair(model, p, &g);
  }
  const double inv = 1.0 / static_cast<double>(data.size());
  SrpModel as_model = model;
  as_model.encoder = std::move(g.encoder);
  as_model.decoder = std::move(g.decoder);
  as_model.projection = std::move(g.projection);
  as_model.projection_bias = std::move(g.projection_bias);
  return {total * inv, as_model.parameters() * inv};
}

double dataset_loss(const SrpModel& model, std::span<const TrainingPair> data) {
  if (data.empty()) throw Error(Errc::InvalidArgument, "training set is empty");
  double total = 0.0;
  for (const auto& p : data) {
    check_pair_shape(model, p);
    total += accumulate_pair(model, p, nullptr);
  }
  return total / static_cast<double>(data.size());
}

TrainResult train(SrpModel model, std::span<const TrainingPair> data, int epochs, double learning_rate) {
  model.check();
  if (epochs < 0) throw Error(Errc::InvalidArgument, "epochs must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error(Errc::InvalidArgument, "learning rate must be a positive finite number");
  TrainResult result{model, {}};
  VectorXd theta = model.parameters();
  for (int epoch = 0; epoch <= epochs; ++epoch) {
    const LossGradient lg = loss_and_gradient(result.model, data);
    if (!std::isfinite(lg.loss) || !lg.gradient.allFinite())
      throw Error(Errc::NonFiniteLoss, fmt::format("training diverged at epoch {} (loss {})", epoch, lg.loss));
    result.loss_history.push_back(lg.loss);
    if (epoch == epochs) break;
    theta -= learning_rate * lg.gradient;
    result.model.set_parameters(theta);
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

std::string_view loss_name(LossKind k) { return k == LossKind::SoftDtw ? "softdtw" : "logexp-dtw"; }

template <typename M>
std::string join_values(const M& block) {
  std::string out;
  for (Eigen::Index i = 0; i < block.rows(); ++i)
    for (Eigen::Index j = 0; j < block.cols(); ++j) {
      if (!out.empty()) out += ',';
      out += format_double(block(i, j));
    }
  return out;
}

}  // namespace

void write_checkpoint(std::ostream& out, const SrpModel& model) {
  model.check();
  fmt::print(out, "[srp_model]\nhidden = {}\nfeatures = {}\nsequence_length = {}\nhorizon = {}\ngamma = {}\nloss = {}\n",
             model.hidden_size(), model.feature_size(), model.sequence_length, model.horizon,
             format_double(model.gamma), loss_name(model.loss));
  fmt::print(out, "\n[normalizer]\nmin = {}\nmax = {}\n", join_values(model.normalizer.min),
             join_values(model.normalizer.max));
  auto emit = [&](std::string_view name, const auto& block) {
    fmt::print(out, "\n[block]\nname = {}\nrows = {}\ncols = {}\nvalues = {}\n", name, block.rows(), block.cols(),
               join_values(block));
  };
  auto emit_cell = [&](std::string_view prefix, const GruCell& c) {
    const std::array<const MatrixXd*, 6> mats{&c.W_z, &c.W_r, &c.W_h, &c.U_z, &c.U_r, &c.U_h};
    for (std::size_t k = 0; k < 6; ++k) emit(fmt::format("{}.{}", prefix, kGruBlockNames[k]), *mats[k]);
    const std::array<const VectorXd*, 3> vecs{&c.b_z, &c.b_r, &c.b_h};
    for (std::size_t k = 0; k < 3; ++k) emit(fmt::format("{}.{}", prefix, kGruBlockNames[6 + k]), *vecs[k]);
  };
  emit_cell("encoder", model.encoder);
  emit_cell("decoder", model.decoder);
  emit("projection", model.projection);
  emit("projection_bias", model.projection_bias);
}

SrpModel read_checkpoint(std::istream& in, std::string_view source_name) {
  const auto sections = parse_sections(in, source_name);
  const Section* header = nullptr;
  const Section* norm = nullptr;
  std::map<std::string, const Section*> blocks;
  for (const auto& s : sections) {
    if (s.name == "srp_model") header = &s;
    else if (s.name == "normalizer") norm = &s;
    else if (s.name == "block") blocks[s.require("name").value] = &s;
    else throw Error(Errc::ParseError, fmt::format("{}:{}: unknown section [{}]", source_name, s.line, s.name));
  }
  if (!header || !norm) throw Error(Errc::ParseError, fmt::format("{}: missing [srp_model] or [normalizer]", source_name));

  SrpConfig cfg;
  cfg.hidden = static_cast<int>(parse_int(header->require("hidden")));
  if (parse_int(header->require("features")) != kFeatureCount)
    throw Error(Errc::ShapeMismatch, fmt::format("{}: checkpoint feature count differs from {}", source_name, kFeatureCount));
  cfg.sequence_length = static_cast<int>(parse_int(header->require("sequence_length")));
  cfg.horizon = static_cast<int>(parse_int(header->require("horizon")));
  cfg.gamma = parse_double(header->require("gamma"));
  const auto& loss = header->require("loss");
  if (loss.value == "softdtw") cfg.loss = LossKind::SoftDtw;
  else if (loss.value == "logexp-dtw") cfg.loss = LossKind::LogExpDtw;
  else throw Error(Errc::ParseError, fmt::format("{}:{}: unknown loss '{}'", source_name, loss.line, loss.value));
  if (cfg.hidden < 1) throw Error(Errc::ShapeMismatch, "checkpoint hidden size must be >= 1");

  Normalizer n;
  auto read_vec = [&](const KeyValue& kv) {
    const auto v = parse_double_list(kv.value);
    if (static_cast<Eigen::Index>(v.size()) != kFeatureCount)
      throw Error(Errc::ShapeMismatch, fmt::format("{}:{}: expected {} values", source_name, kv.line, kFeatureCount));
    return VectorXd(Eigen::Map<const VectorXd>(v.data(), kFeatureCount));
  };
  n.min = read_vec(norm->require("min"));
  n.max = read_vec(norm->require("max"));

  SrpModel m = SrpModel::zeros(cfg, n);
  auto load = [&](const std::string& name, auto& block) {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw Error(Errc::ParseError, fmt::format("{}: missing block '{}'", source_name, name));
    const Section& s = *it->second;
    const auto rows = parse_int(s.require("rows"));
    const auto cols = parse_int(s.require("cols"));
    if (rows != block.rows() || cols != block.cols())
      throw Error(Errc::ShapeMismatch, fmt::format("{}:{}: block '{}' is {}x{}, expected {}x{}", source_name, s.line,
                                                   name, rows, cols, block.rows(), block.cols()));
    const auto& kv = s.require("values");
    const auto values = parse_double_list(kv.value);
    if (static_cast<Eigen::Index>(values.size()) != block.size())
      throw Error(Errc::ShapeMismatch, fmt::format("{}:{}: block '{}' has {} values, expected {}", source_name,
                                                   kv.line, name, values.size(), block.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < block.rows(); ++i)
      for (Eigen::Index j = 0; j < block.cols(); ++j) block(i, j) = values[k++];
    blocks.erase(it);
  };
  auto load_cell = [&](const std::string& prefix, GruCell& c) {
    std::size_t k = 0;
    for_each_block(c, [&](auto& b) { load(prefix + "." + kGruBlockNames[k++], b); });
  };
  load_cell("encoder", m.encoder);
  load_cell("decoder", m.decoder);
  load("projection", m.projection);
  load("projection_bias", m.projection_bias);
  if (!blocks.empty())
    throw Error(Errc::ParseError, fmt::format("{}: unexpected block '{}'", source_name, blocks.begin()->first));
  return m;
}

// ---------------------------------------------------------------------------

double similarity(const SrpModel* model, const Normalizer& normalizer, const Trajectory& core,
                  const Trajectory& ordinary, const SimilarityOptions& options) {
  if (core.size() < 2 || ordinary.size() < 2)
    throw Error(Errc::InsufficientHistory,
                fmt::format("similarity needs two samples per trajectory (core {} has {}, vehicle {} has {})",
                            core.vehicle_id(), core.size(), ordinary.vehicle_id(), ordinary.size()));
  const auto L = model ? static_cast<std::size_t>(model->sequence_length) : 0;
  if (model && core.size() >= L && ordinary.size() >= L) {
    // Heading signs are measured against the core, which therefore always reads +1.
    const Sequence core_in = feature_sequence(core, model->normalizer, L, &core);
    const Sequence ord_in = feature_sequence(ordinary, model->normalizer, L, &core);
    const Sequence ord_pred = predict(*model, ord_in);
    const Sequence core_seq =
        options.mode == SimilarityMode::PredictedVsPredicted ? predict(*model, core_in) : core_in;
    return std::exp(-dtw(ord_pred, core_seq).distance);
  }
  const std::size_t w = std::max<std::size_t>(options.history_window, 2);
  const Sequence a = feature_sequence(core, normalizer, w, &core);
  const Sequence b = feature_sequence(ordinary, normalizer, w, &core);
  return std::exp(-dtw(b, a).distance);
}

}  // namespace rcms::srp
