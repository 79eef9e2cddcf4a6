#pragma once

// Fully connected network u = NN(t, x) trained by mini-batch Adam on the
// mean squared control error over a dataset of (t, x, u) tuples.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ivps/control_core.hpp"

namespace ivps::nn {

enum class Activation { kTanh, kRelu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct MlpSpec {
  int input_dim = 1;
  std::vector<int> hidden{128, 128};
  int output_dim = 1;
  /// One entry per hidden layer; empty means tanh everywhere.
  std::vector<Activation> activations;

  void validate() const;
  int layers() const { return static_cast<int>(hidden.size()) + 1; }
  Activation activation(int hidden_layer) const;
  /// Width of layer boundaries: input, hidden..., output.
  std::vector<int> widths() const;
};

struct Layer {
  Mat W;  // out x in
  Vec b;
};

struct MlpParams {
  std::vector<Layer> layers;

  long size() const;
  /// Flat view in layer order, W column-major then b.
  Vec flat() const;
  void set_flat(const Vec& theta);
  bool all_finite() const;

  /// Xavier-uniform for tanh layers and the linear output layer, He-normal for ReLU; zero biases.
  static MlpParams init(const MlpSpec& spec, std::uint64_t seed);
  static MlpParams zeros(const MlpSpec& spec);
};

/// Affine per-feature standardisation of inputs z = (t, x) and outputs u.
struct Normalization {
  Vec in_mean, in_scale, out_mean, out_scale;

  static Normalization identity(int input_dim, int output_dim);
  /// Mean and standard deviation per feature; constant features get scale 1.
  static Normalization fit(const Dataset& data);
  Vec input(double t, const Vec& x) const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 256;
  int epochs = 500;
  std::uint64_t seed = 0;
  double holdout = 0.0;  // fraction of points kept out of training for the validation curve

  void validate() const;
};

struct AdamState {
  Vec m;
  Vec v;
  long step = 0;

  static AdamState zeros(long size);
};

/// Raw network output on an already-normalised input.
Vec forward(const MlpSpec& spec, const MlpParams& params, const Vec& z);
/// Columns of Z are inputs; returns output columns.
Mat forward_batch(const MlpSpec& spec, const MlpParams& params, const Mat& Z);

struct LossGrad {
  double loss = 0.0;
  Vec grad;
};

/// mean_k |Y_k - (out_mean + out_scale * NN(Z_k))|^2 and its gradient
/// with respect to the flat parameters.
LossGrad loss_and_grad(const MlpSpec& spec, const MlpParams& params, const Mat& Z, const Mat& Y,
                       const Vec& out_mean, const Vec& out_scale);
/// Same loss on data points, with inputs and outputs mapped through norm.
LossGrad loss_and_grad(const MlpSpec& spec, const MlpParams& params, const Normalization& norm,
                       const std::vector<DataPoint>& batch);

/// One Adam update with bias correction.
void adam_step(Vec& theta, AdamState& state, const Vec& grad, const TrainConfig& cfg);

class MlpController final : public ClosedLoopController {
 public:
  MlpController(MlpSpec spec, MlpParams params, Normalization norm);

  Vec evaluate(double t, const Vec& x) const override;

  const MlpSpec& spec() const { return spec_; }
  const MlpParams& params() const { return params_; }
  const Normalization& normalization() const { return norm_; }

  void save(std::ostream& os) const;
  static MlpController load(std::istream& is);
  void save_file(const std::string& path) const;
  static MlpController load_file(const std::string& path);

 private:
  MlpSpec spec_;
  MlpParams params_;
  Normalization norm_;
};

struct TrainResult {
  std::shared_ptr<const MlpController> controller;
  std::vector<double> loss_curve;        // mean training loss per epoch
  std::vector<double> validation_curve;  // holdout loss per epoch, empty without a holdout
};

/// Shuffled mini-batch Adam for cfg.epochs passes. The normalisation is fitted
/// on the data unless given; initial parameters come from cfg.seed unless given.
TrainResult train(const Dataset& data, const MlpSpec& spec, const TrainConfig& cfg,
                  const std::optional<Normalization>& norm = std::nullopt,
                  const MlpParams* init = nullptr);

}  // namespace ivps::nn
