#include "l96/mlp.hpp"

#include <cmath>
#include <random>

namespace l96 {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "' (expected tanh or relu)");
}

void MlpArchitecture::validate() const {
  if (input_dim < 1 || output_dim < 1) throw ConfigError("mlp: input_dim and output_dim must be >= 1");
  if (hidden_layers > 0 && hidden_width < 1) throw ConfigError("mlp: hidden_width must be >= 1");
}

std::vector<std::pair<std::size_t, std::size_t>> MlpArchitecture::layer_shapes() const {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::size_t fan_in = input_dim;
  for (std::size_t l = 0; l < hidden_layers; ++l) {
    shapes.emplace_back(fan_in, hidden_width);
    fan_in = hidden_width;
  }
  shapes.emplace_back(fan_in, output_dim);
  return shapes;
}

std::size_t MlpArchitecture::parameter_count() const {
  std::size_t n = 0;
  for (auto [fi, fo] : layer_shapes()) n += (fi + 1) * fo;
  return n;
}

ClosureParams::ClosureParams(MlpArchitecture a, std::vector<double> f) : arch(a), flat(std::move(f)) {
  arch.validate();
  if (flat.size() != arch.parameter_count()) {
    throw ConfigError("closure params: flat length " + std::to_string(flat.size()) + " does not match architecture (" +
                      std::to_string(arch.parameter_count()) + ")");
  }
}

ClosureParams ClosureParams::zeros(const MlpArchitecture& a) {
  return ClosureParams(a, std::vector<double>(a.parameter_count(), 0.0));
}

ClosureParams ClosureParams::glorot(const MlpArchitecture& a, std::uint64_t seed) {
  ClosureParams p = zeros(a);
  std::mt19937_64 rng(seed);
  std::size_t off = 0;
  for (auto [fi, fo] : a.layer_shapes()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fi + fo));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t i = 0; i < fi * fo; ++i) p.flat[off + i] = u(rng);
    off += (fi + 1) * fo;
  }
  return p;
}

MlpLayers unflatten(const ClosureParams& p) {
  MlpLayers layers;
  std::size_t off = 0;
  for (auto [fi, fo] : p.arch.layer_shapes()) {
    const auto r = static_cast<Eigen::Index>(fi);
    const auto c = static_cast<Eigen::Index>(fo);
    layers.weights.emplace_back(Eigen::Map<const Mat>(p.flat.data() + off, r, c));
    off += fi * fo;
    layers.biases.emplace_back(Eigen::Map<const RowVec>(p.flat.data() + off, c));
    off += fo;
  }
  return layers;
}

ClosureParams flatten(const MlpArchitecture& arch, const MlpLayers& layers) {
  const auto shapes = arch.layer_shapes();
  if (layers.weights.size() != shapes.size() || layers.biases.size() != shapes.size()) {
    throw ConfigError("flatten: layer count does not match architecture");
  }
  std::vector<double> flat;
  flat.reserve(arch.parameter_count());
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const Mat& w = layers.weights[l];
    const RowVec& b = layers.biases[l];
    if (static_cast<std::size_t>(w.rows()) != shapes[l].first || static_cast<std::size_t>(w.cols()) != shapes[l].second ||
        static_cast<std::size_t>(b.size()) != shapes[l].second) {
      throw ConfigError("flatten: layer " + std::to_string(l) + " has the wrong shape");
    }
    flat.insert(flat.end(), w.data(), w.data() + w.size());
    flat.insert(flat.end(), b.data(), b.data() + b.size());
  }
  return ClosureParams(arch, std::move(flat));
}

namespace {

// tanh(|x|) = 1 - 2/(exp(2|x|) + 1) from one vectorised exp; an odd Taylor series below
// 0.1 avoids the cancellation there.
void tanh_inplace(Mat& z) {
  Mat t(z.rows(), z.cols());
  t.array() = 1.0 - 2.0 / ((2.0 * z.array().abs()).exp() + 1.0);
  double* d = z.data();
  const double* big = t.data();
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double a = std::abs(d[i]);
    double m = big[i];
    if (a < 0.1) {
      const double x2 = a * a;
      m = a * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0 + x2 * (62.0 / 2835.0 +
          x2 * (-1382.0 / 155925.0 + x2 * (21844.0 / 6081075.0)))))));
    }
    d[i] = std::copysign(m, d[i]);
  }
}

// Owned (aligned) copies: Eigen picks its vectorised summation order from the operand
// alignment, so products against std::vector storage would round differently from run to run.
struct LayerMaps {
  std::vector<Mat> w;
  std::vector<RowVec> b;
  std::vector<std::size_t> offsets;  // weight offsets in the flat vector
};

LayerMaps map_layers(const ClosureParams& p) {
  LayerMaps m;
  std::size_t off = 0;
  for (auto [fi, fo] : p.arch.layer_shapes()) {
    m.offsets.push_back(off);
    m.w.emplace_back(Eigen::Map<const Mat>(p.flat.data() + off, static_cast<Eigen::Index>(fi), static_cast<Eigen::Index>(fo)));
    off += fi * fo;
    m.b.emplace_back(Eigen::Map<const RowVec>(p.flat.data() + off, static_cast<Eigen::Index>(fo)));
    off += fo;
  }
  return m;
}

}  // namespace

void apply_activation(Activation a, Mat& z) {
  if (a == Activation::Tanh) {
    tanh_inplace(z);
  } else {
    z = z.cwiseMax(0.0);
  }
}

Mat mlp_forward_batch(const ClosureParams& params, const Mat& input, MlpTape* tape) {
  if (static_cast<std::size_t>(input.cols()) != params.arch.input_dim) {
    throw ConfigError("mlp_forward: input has " + std::to_string(input.cols()) + " columns, expected " +
                      std::to_string(params.arch.input_dim));
  }
  if (params.flat.size() != params.arch.parameter_count()) throw ConfigError("mlp_forward: parameter size mismatch");
  const LayerMaps m = map_layers(params);
  const std::size_t n_layers = m.w.size();
  if (tape) {
    tape->activations.resize(n_layers);
    tape->activations[0] = input;
  }
  Mat a = input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    Mat z(a.rows(), m.w[l].cols());
    z.noalias() = a * m.w[l];
    z.rowwise() += m.b[l];
    if (l + 1 < n_layers) {
      apply_activation(params.arch.activation, z);
      if (tape) tape->activations[l + 1] = z;
    }
    a = std::move(z);
  }
  return a;
}

Vec mlp_forward(const ClosureParams& params, std::span<const double> input) {
  Mat in(1, static_cast<Eigen::Index>(input.size()));
  for (std::size_t i = 0; i < input.size(); ++i) in(0, static_cast<Eigen::Index>(i)) = input[i];
  return mlp_forward_batch(params, in).row(0).transpose();
}

void mlp_backward(const ClosureParams& params, const MlpTape& tape, const Mat& d_output, std::span<double> grad,
                  Mat* d_input) {
  if (grad.size() != params.flat.size()) throw ConfigError("mlp_backward: gradient buffer has the wrong size");
  const LayerMaps m = map_layers(params);
  const std::size_t n_layers = m.w.size();
  if (tape.activations.size() != n_layers) throw ConfigError("mlp_backward: tape does not match the network");

  Mat dz = d_output;
  for (std::size_t l = n_layers; l-- > 0;) {
    const Mat& a_in = tape.activations[l];
    const auto fi = m.w[l].rows();
    const auto fo = m.w[l].cols();
    Eigen::Map<Mat> gw(grad.data() + m.offsets[l], fi, fo);
    Eigen::Map<RowVec> gb(grad.data() + m.offsets[l] + static_cast<std::size_t>(fi * fo), fo);
    Mat dw(fi, fo);
    dw.noalias() = a_in.transpose() * dz;
    const RowVec db = dz.colwise().sum();
    gw += dw;
    gb += db;
    if (l == 0 && d_input == nullptr) break;
    Mat da(dz.rows(), fi);
    da.noalias() = dz * m.w[l].transpose();
    if (l == 0) {
      *d_input = std::move(da);
      break;
    }
    if (params.arch.activation == Activation::Tanh) {
      da.array() *= 1.0 - a_in.array().square();
    } else {
      da.array() *= (a_in.array() > 0.0).cast<double>();
    }
    dz = std::move(da);
  }
}

ValueAndGradient grad_through(const Objective& objective, const ClosureParams& params) {
  ValueAndGradient out;
  out.gradient.assign(params.flat.size(), 0.0);
  out.value = objective(params, out.gradient);
  if (!std::isfinite(out.value)) throw GradientError("grad_through: objective value is not finite");
  for (std::size_t i = 0; i < out.gradient.size(); ++i) {
    if (!std::isfinite(out.gradient[i])) {
      throw GradientError("grad_through: gradient component " + std::to_string(i) + " is not finite");
    }
  }
  return out;
}

}  // namespace l96
