#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "rcms/core_types.hpp"
#include "rcms/srp/dtw.hpp"
#include "rcms/srp/gru.hpp"

namespace rcms::srp {

/// Features per trajectory sample: speed magnitude, acceleration magnitude,
/// heading sign, segment-relative position, traffic index.
inline constexpr Eigen::Index kFeatureCount = 5;

/// Per-feature affine map of [min, max] onto [0, 1], clamped, so every target
/// lies in the range of the ReLU outputs.
struct Normalizer {
  VectorXd min = VectorXd::Zero(kFeatureCount);
  VectorXd max = VectorXd::Ones(kFeatureCount);

  /// Ranges derived from the scenario's speed cap and the expected traffic-index span.
  static Normalizer for_scenario(double max_speed, double max_accel = 8.0, double max_tti = 3.0);

  VectorXd apply(const VectorXd& raw) const;
  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

VectorXd raw_features(const VehicleState& state, int heading_sign);

/// Normalised features of the newest `count` samples (all if `count` is 0).
/// With a reference trajectory every sample carries the heading sign of the
/// newest sample against the reference's newest sample, so a trajectory read
/// against itself is all +1; otherwise the stored `heading_sign` is used.
Sequence feature_sequence(const Trajectory& trajectory, const Normalizer& normalizer, std::size_t count = 0,
                          const Trajectory* reference = nullptr);

struct SrpConfig {
  int hidden = 16;
  int sequence_length = 8;
  int horizon = 4;
  double gamma = 0.1;
  LossKind loss = LossKind::SoftDtw;
  double init_scale = 0.0;  // 0 selects 1/sqrt(hidden)
};

/// GRU encoder-decoder. The decoder starts from the encoder's final state and
/// feeds each ReLU-projected output back as its next input.
struct SrpModel {
  GruCell encoder;
  GruCell decoder;
  MatrixXd projection;       // D x H
  VectorXd projection_bias;  // D
  int sequence_length = 8;
  int horizon = 4;
  double gamma = 0.1;
  LossKind loss = LossKind::SoftDtw;
  Normalizer normalizer;

  static SrpModel zeros(const SrpConfig& config, Normalizer normalizer = {});
  static SrpModel random(const SrpConfig& config, std::uint64_t seed, Normalizer normalizer = {});

  Eigen::Index hidden_size() const { return encoder.hidden_size(); }
  Eigen::Index feature_size() const { return encoder.input_size(); }
  /// Throws ShapeMismatch on inconsistent blocks or sequence_length < 2.
  void check() const;

  /// Row-major flattening in the order: encoder W_z W_r W_h U_z U_r U_h b_z b_r b_h,
  /// decoder (same), projection, projection_bias.
  VectorXd parameters() const;
  void set_parameters(const VectorXd& flat);
  Eigen::Index parameter_count() const;
};

/// Folds gru_step over the rows of `inputs` from a zero state.
VectorXd encode(const SrpModel& model, const Sequence& inputs);

/// Generates `steps` outputs from `h_last`. The first decoder input is `seed`
/// (zero vector when null); every later input is the previous output.
Sequence decode(const SrpModel& model, const VectorXd& h_last, int steps, const VectorXd* seed = nullptr);

/// Forecast of `model.horizon` steps; `inputs` must hold `sequence_length` rows.
/// The newest observation seeds the decoder.
Sequence predict(const SrpModel& model, const Sequence& inputs);

struct TrainingPair {
  Sequence input;   // sequence_length x D
  Sequence target;  // horizon x D
};

/// Sliding windows of `sequence_length + horizon` consecutive samples.
std::vector<TrainingPair> make_training_pairs(std::span<const Trajectory> trajectories,
                                              const Normalizer& normalizer, int sequence_length,
                                              int horizon, int stride = 1);

struct LossGradient {
  double loss = 0.0;
  VectorXd gradient;  // same layout as SrpModel::parameters()
};

/// Mean loss over `data` between targets and forecasts, with its exact gradient.
LossGradient loss_and_gradient(const SrpModel& model, std::span<const TrainingPair> data);
double dataset_loss(const SrpModel& model, std::span<const TrainingPair> data);

struct TrainResult {
  SrpModel model;
  std::vector<double> loss_history;  // entry k: mean loss after k epochs
};

/// Full-batch gradient descent. Throws NonFiniteLoss on divergence and
/// ShapeMismatch for windows of the wrong length.
TrainResult train(SrpModel model, std::span<const TrainingPair> data, int epochs, double learning_rate);

void write_checkpoint(std::ostream& out, const SrpModel& model);
SrpModel read_checkpoint(std::istream& in, std::string_view source_name = "<checkpoint>");

enum class SimilarityMode { PredictedVsPredicted, PredictedVsRecorded };

struct SimilarityOptions {
  SimilarityMode mode = SimilarityMode::PredictedVsPredicted;
  std::size_t history_window = 8;  // samples compared in fallback mode
};

/// Trajectory resemblance exp(-dtw) in (0, 1]. Uses forecasts when `model` is
/// given and both trajectories cover its input window; otherwise compares the
/// recorded histories. Throws InsufficientHistory below two samples.
double similarity(const SrpModel* model, const Normalizer& normalizer, const Trajectory& core,
                  const Trajectory& ordinary, const SimilarityOptions& options = {});

}  // namespace rcms::srp
