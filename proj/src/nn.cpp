#include "ivps/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "ivps/errors.hpp"

namespace ivps::nn {

namespace {

constexpr int kFormatVersion = 1;

Mat activate(const Mat& a, Activation act) {
  if (act == Activation::kTanh) return a.array().tanh().matrix();
  return a.cwiseMax(0.0);
}

// Derivative of the activation expressed through its output h.
Mat activation_slope(const Mat& h, Activation act) {
  if (act == Activation::kTanh) return (1.0 - h.array().square()).matrix();
  return (h.array() > 0.0).cast<double>().matrix();
}

nlohmann::json to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vec_from_json(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw DomainError("unknown activation: " + name);
}

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

void MlpSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0) throw DomainError("network dimensions must be positive");
  for (int w : hidden)
    if (w <= 0) throw DomainError("hidden widths must be positive");
  if (!activations.empty() && activations.size() != hidden.size())
    throw DomainError("need one activation per hidden layer");
}

Activation MlpSpec::activation(int hidden_layer) const {
  return activations.empty() ? Activation::kTanh : activations[static_cast<std::size_t>(hidden_layer)];
}

std::vector<int> MlpSpec::widths() const {
  std::vector<int> w{input_dim};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(output_dim);
  return w;
}

long MlpParams::size() const {
  long n = 0;
  for (const auto& l : layers) n += l.W.size() + l.b.size();
  return n;
}

Vec MlpParams::flat() const {
  Vec theta(size());
  long k = 0;
  for (const auto& l : layers) {
    theta.segment(k, l.W.size()) = Eigen::Map<const Vec>(l.W.data(), l.W.size());
    k += l.W.size();
    theta.segment(k, l.b.size()) = l.b;
    k += l.b.size();
  }
  return theta;
}

void MlpParams::set_flat(const Vec& theta) {
  if (theta.size() != size()) throw DomainError("flat parameter vector has wrong size");
  long k = 0;
  for (auto& l : layers) {
    Eigen::Map<Vec>(l.W.data(), l.W.size()) = theta.segment(k, l.W.size());
    k += l.W.size();
    l.b = theta.segment(k, l.b.size());
    k += l.b.size();
  }
}

bool MlpParams::all_finite() const {
  for (const auto& l : layers)
    if (!l.W.allFinite() || !l.b.allFinite()) return false;
  return true;
}

MlpParams MlpParams::zeros(const MlpSpec& spec) {
  spec.validate();
  const auto w = spec.widths();
  MlpParams p;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) p.layers.push_back({Mat::Zero(w[i + 1], w[i]), Vec::Zero(w[i + 1])});
  return p;
}

MlpParams MlpParams::init(const MlpSpec& spec, std::uint64_t seed) {
  MlpParams p = zeros(spec);
  std::mt19937_64 rng(seed);
  const int last = spec.layers() - 1;
  for (int i = 0; i <= last; ++i) {
    Mat& W = p.layers[static_cast<std::size_t>(i)].W;
    const double fan_in = static_cast<double>(W.cols()), fan_out = static_cast<double>(W.rows());
    if (i < last && spec.activation(i) == Activation::kRelu) {
      std::normal_distribution<double> d(0.0, std::sqrt(2.0 / fan_in));
      for (Eigen::Index c = 0; c < W.cols(); ++c)
        for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = d(rng);
    } else {
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> d(-a, a);
      for (Eigen::Index c = 0; c < W.cols(); ++c)
        for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = d(rng);
    }
  }
  return p;
}

Normalization Normalization::identity(int input_dim, int output_dim) {
  return {Vec::Zero(input_dim), Vec::Ones(input_dim), Vec::Zero(output_dim), Vec::Ones(output_dim)};
}

Normalization Normalization::fit(const Dataset& data) {
  if (data.empty()) throw DomainError("cannot fit a normalisation on empty data");
  const int n = static_cast<int>(data.points.front().x.size());
  const int m = static_cast<int>(data.points.front().u.size());
  Mat Z(1 + n, static_cast<Eigen::Index>(data.size()));
  Mat U(m, static_cast<Eigen::Index>(data.size()));
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto& p = data.points[k];
    Z(0, static_cast<Eigen::Index>(k)) = p.t;
    Z.block(1, static_cast<Eigen::Index>(k), n, 1) = p.x;
    U.col(static_cast<Eigen::Index>(k)) = p.u;
  }
  auto stats = [](const Mat& A, Vec& mean, Vec& scale) {
    mean = A.rowwise().mean();
    const Mat c = A.colwise() - mean;
    scale = (c.array().square().rowwise().sum() / static_cast<double>(A.cols())).sqrt().matrix();
    for (Eigen::Index i = 0; i < scale.size(); ++i)
      if (!(scale[i] > 1e-12 * std::max(1.0, std::abs(mean[i])))) scale[i] = 1.0;
  };
  Normalization nz;
  stats(Z, nz.in_mean, nz.in_scale);
  stats(U, nz.out_mean, nz.out_scale);
  return nz;
}

Vec Normalization::input(double t, const Vec& x) const {
  Vec z(1 + x.size());
  z << t, x;
  return (z - in_mean).cwiseQuotient(in_scale);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0))
    throw DomainError("Adam betas must lie in (0, 1)");
  if (batch_size < 1) throw DomainError("batch size must be at least 1");
  if (epochs < 0) throw DomainError("epochs must be non-negative");
  if (!(holdout >= 0.0 && holdout < 1.0)) throw DomainError("holdout fraction must lie in [0, 1)");
}

AdamState AdamState::zeros(long size) { return {Vec::Zero(size), Vec::Zero(size), 0}; }

Mat forward_batch(const MlpSpec& spec, const MlpParams& params, const Mat& Z) {
  Mat h = Z;
  const int last = spec.layers() - 1;
  for (int i = 0; i <= last; ++i) {
    const auto& l = params.layers[static_cast<std::size_t>(i)];
    Mat a = l.W * h;
    a.colwise() += l.b;
    h = i < last ? activate(a, spec.activation(i)) : a;
  }
  return h;
}

Vec forward(const MlpSpec& spec, const MlpParams& params, const Vec& z) {
  if (z.size() != spec.input_dim) throw DomainError("network input has wrong dimension");
  Vec h = z;
  const int last = spec.layers() - 1;
  for (int i = 0; i <= last; ++i) {
    const auto& l = params.layers[static_cast<std::size_t>(i)];
    Vec a = l.W * h + l.b;
    if (i < last) {
      if (spec.activation(i) == Activation::kTanh) h = a.array().tanh().matrix();
      else h = a.cwiseMax(0.0);
    } else {
      h = std::move(a);
    }
  }
  return h;
}

LossGrad loss_and_grad(const MlpSpec& spec, const MlpParams& params, const Mat& Z, const Mat& Y,
                       const Vec& out_mean, const Vec& out_scale) {
  if (Z.cols() == 0 || Z.cols() != Y.cols()) throw DomainError("batch must be non-empty and aligned");
  const int last = spec.layers() - 1;
  std::vector<Mat> h{Z};
  for (int i = 0; i <= last; ++i) {
    const auto& l = params.layers[static_cast<std::size_t>(i)];
    Mat a = l.W * h.back();
    a.colwise() += l.b;
    h.push_back(i < last ? activate(a, spec.activation(i)) : a);
  }
  const double inv_b = 1.0 / static_cast<double>(Z.cols());
  Mat pred = h.back().array().colwise() * out_scale.array();
  pred.colwise() += out_mean;
  const Mat err = pred - Y;

  LossGrad out;
  out.loss = err.squaredNorm() * inv_b;
  std::vector<Mat> gW(params.layers.size());
  std::vector<Vec> gb(params.layers.size());
  Mat delta = (2.0 * inv_b) * (err.array().colwise() * out_scale.array()).matrix();
  for (int i = last; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    gW[idx] = delta * h[idx].transpose();
    gb[idx] = delta.rowwise().sum();
    if (i > 0) {
      delta = (params.layers[idx].W.transpose() * delta).cwiseProduct(activation_slope(h[idx], spec.activation(i - 1)));
    }
  }
  out.grad.resize(params.size());
  long k = 0;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    out.grad.segment(k, gW[i].size()) = Eigen::Map<const Vec>(gW[i].data(), gW[i].size());
    k += gW[i].size();
    out.grad.segment(k, gb[i].size()) = gb[i];
    k += gb[i].size();
  }
  return out;
}

LossGrad loss_and_grad(const MlpSpec& spec, const MlpParams& params, const Normalization& norm,
                       const std::vector<DataPoint>& batch) {
  if (batch.empty()) throw DomainError("batch must be non-empty");
  Mat Z(spec.input_dim, static_cast<Eigen::Index>(batch.size()));
  Mat Y(spec.output_dim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    Z.col(static_cast<Eigen::Index>(k)) = norm.input(batch[k].t, batch[k].x);
    Y.col(static_cast<Eigen::Index>(k)) = batch[k].u;
  }
  return loss_and_grad(spec, params, Z, Y, norm.out_mean, norm.out_scale);
}

void adam_step(Vec& theta, AdamState& state, const Vec& grad, const TrainConfig& cfg) {
  if (state.m.size() != theta.size() || grad.size() != theta.size())
    throw DomainError("Adam state is not aligned with the parameters");
  state.step += 1;
  state.m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * grad;
  state.v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  const Vec m_hat = state.m / c1;
  const Vec v_hat = state.v / c2;
  theta.array() -= cfg.learning_rate * m_hat.array() / (v_hat.array().sqrt() + cfg.adam_eps);
}

MlpController::MlpController(MlpSpec spec, MlpParams params, Normalization norm)
    : spec_(std::move(spec)), params_(std::move(params)), norm_(std::move(norm)) {
  spec_.validate();
  if (static_cast<int>(params_.layers.size()) != spec_.layers()) throw DomainError("parameters do not match spec");
}

Vec MlpController::evaluate(double t, const Vec& x) const {
  const Vec y = forward(spec_, params_, norm_.input(t, x));
  return norm_.out_mean + norm_.out_scale.cwiseProduct(y);
}

void MlpController::save(std::ostream& os) const {
  nlohmann::json j;
  j["format"] = "ivps-mlp";
  j["version"] = kFormatVersion;
  j["input_dim"] = spec_.input_dim;
  j["output_dim"] = spec_.output_dim;
  j["hidden"] = spec_.hidden;
  std::vector<std::string> acts;
  for (std::size_t i = 0; i < spec_.hidden.size(); ++i) acts.push_back(to_string(spec_.activation(static_cast<int>(i))));
  j["activations"] = acts;
  j["normalization"] = {{"in_mean", to_json(norm_.in_mean)},
                        {"in_scale", to_json(norm_.in_scale)},
                        {"out_mean", to_json(norm_.out_mean)},
                        {"out_scale", to_json(norm_.out_scale)}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params_.layers) {
    layers.push_back({{"rows", l.W.rows()},
                      {"cols", l.W.cols()},
                      {"W", to_json(Eigen::Map<const Vec>(l.W.data(), l.W.size()))},
                      {"b", to_json(l.b)}});
  }
  j["layers"] = layers;
  os << j.dump(1) << '\n';
}

MlpController MlpController::load(std::istream& is) {
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("cannot parse network file: ") + e.what());
  }
  if (j.value("format", "") != "ivps-mlp") throw DomainError("not a network file");
  if (j.value("version", 0) != kFormatVersion) throw DomainError("unsupported network file version");
  MlpSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.output_dim = j.at("output_dim").get<int>();
  spec.hidden = j.at("hidden").get<std::vector<int>>();
  for (const auto& a : j.at("activations")) spec.activations.push_back(parse_activation(a.get<std::string>()));
  Normalization norm;
  const auto& nj = j.at("normalization");
  norm.in_mean = vec_from_json(nj.at("in_mean"));
  norm.in_scale = vec_from_json(nj.at("in_scale"));
  norm.out_mean = vec_from_json(nj.at("out_mean"));
  norm.out_scale = vec_from_json(nj.at("out_scale"));
  MlpParams params;
  for (const auto& lj : j.at("layers")) {
    const auto rows = lj.at("rows").get<Eigen::Index>(), cols = lj.at("cols").get<Eigen::Index>();
    const Vec w = vec_from_json(lj.at("W"));
    if (w.size() != rows * cols) throw DomainError("layer weight array has wrong size");
    params.layers.push_back({Eigen::Map<const Mat>(w.data(), rows, cols), vec_from_json(lj.at("b"))});
  }
  return MlpController(std::move(spec), std::move(params), std::move(norm));
}

void MlpController::save_file(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DomainError("cannot write " + path);
  save(os);
}

MlpController MlpController::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DomainError("cannot read " + path);
  return load(is);
}

TrainResult train(const Dataset& data, const MlpSpec& spec, const TrainConfig& cfg,
                  const std::optional<Normalization>& norm, const MlpParams* init) {
  spec.validate();
  cfg.validate();
  if (data.empty()) throw DomainError("training data is empty");
  const Normalization nz = norm ? *norm : Normalization::fit(data);
  MlpParams params = init ? *init : MlpParams::init(spec, cfg.seed);

  const auto total_points = static_cast<Eigen::Index>(data.size());
  Mat Zall(spec.input_dim, total_points), Yall(spec.output_dim, total_points);
  for (Eigen::Index k = 0; k < total_points; ++k) {
    const auto& p = data.points[static_cast<std::size_t>(k)];
    if (p.x.size() + 1 != spec.input_dim || p.u.size() != spec.output_dim)
      throw DomainError("data point dimensions do not match the network");
    Zall.col(k) = nz.input(p.t, p.x);
    Yall.col(k) = p.u;
  }
  const auto held = static_cast<Eigen::Index>(cfg.holdout * static_cast<double>(total_points));
  if (held > 0 && held == total_points) throw DomainError("holdout leaves no training points");
  Mat Z, Y, Zval, Yval;
  if (held == 0) {
    Z = std::move(Zall);
    Y = std::move(Yall);
  } else {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(total_points));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::mt19937_64 split(cfg.seed ^ 0x5bd1e995ULL);
    std::shuffle(perm.begin(), perm.end(), split);
    Z.resize(spec.input_dim, total_points - held);
    Y.resize(spec.output_dim, total_points - held);
    Zval.resize(spec.input_dim, held);
    Yval.resize(spec.output_dim, held);
    for (Eigen::Index k = 0; k < total_points; ++k) {
      const Eigen::Index src = perm[static_cast<std::size_t>(k)];
      if (k < held) {
        Zval.col(k) = Zall.col(src);
        Yval.col(k) = Yall.col(src);
      } else {
        Z.col(k - held) = Zall.col(src);
        Y.col(k - held) = Yall.col(src);
      }
    }
  }
  const Eigen::Index count = Z.cols();

  TrainResult result;
  Vec theta = params.flat();
  AdamState adam = AdamState::zeros(theta.size());
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, count);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (Eigen::Index start = 0; start < count; start += bs) {
      const Eigen::Index len = std::min(bs, count - start);
      Mat zb(spec.input_dim, len), yb(spec.output_dim, len);
      for (Eigen::Index k = 0; k < len; ++k) {
        zb.col(k) = Z.col(order[static_cast<std::size_t>(start + k)]);
        yb.col(k) = Y.col(order[static_cast<std::size_t>(start + k)]);
      }
      params.set_flat(theta);
      const LossGrad lg = loss_and_grad(spec, params, zb, yb, nz.out_mean, nz.out_scale);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
        throw TrainingDiverged(epoch, "training loss became non-finite at epoch " + std::to_string(epoch));
      total += lg.loss * static_cast<double>(len);
      adam_step(theta, adam, lg.grad, cfg);
    }
    result.loss_curve.push_back(total / static_cast<double>(count));
    if (held > 0) {
      params.set_flat(theta);
      result.validation_curve.push_back(loss_and_grad(spec, params, Zval, Yval, nz.out_mean, nz.out_scale).loss);
    }
  }
  params.set_flat(theta);
  if (!params.all_finite()) throw TrainingDiverged(cfg.epochs, "training produced non-finite parameters");
  result.controller = std::make_shared<MlpController>(spec, std::move(params), nz);
  return result;
}

}  // namespace ivps::nn
