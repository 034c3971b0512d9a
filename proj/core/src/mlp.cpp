#include "quiver/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "quiver/error.hpp"
#include "quiver/parallel.hpp"

namespace quiver {

std::string_view to_string(Activation a) noexcept {
  return a == Activation::relu ? "relu" : "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity" || name == "linear") return Activation::identity;
  fail(ErrorCode::InvalidArgument, "unknown activation '" + std::string(name) + "'");
}

std::vector<std::size_t> MlpSpec::layer_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(hidden.size() + 2);
  sizes.push_back(input_dim);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(output_dim);
  return sizes;
}

void MlpSpec::validate() const {
  for (auto n : layer_sizes()) {
    if (n == 0) fail(ErrorCode::InvalidArgument, "every layer needs at least one neuron");
  }
}

std::uint64_t param_count(const MlpSpec& spec) {
  const auto sizes = spec.layer_sizes();
  std::uint64_t total = 0;
  for (std::size_t l = 1; l < sizes.size(); ++l) total += sizes[l] * sizes[l - 1] + sizes[l];
  return total;
}

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const auto sizes = spec_.layer_sizes();
  std::mt19937_64 rng(spec_.init_seed);
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    const double fan_in = static_cast<double>(sizes[l - 1]);
    std::uniform_real_distribution<double> w_dist(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
    std::uniform_real_distribution<double> b_dist(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    DenseLayer layer{Eigen::MatrixXd(sizes[l], sizes[l - 1]), Eigen::VectorXd(sizes[l])};
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = w_dist(rng);
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = b_dist(rng);
    layers_.push_back(std::move(layer));
  }
  round_to_float();
}

Mlp::Mlp(MlpSpec spec, std::vector<DenseLayer> layers) : spec_(std::move(spec)), layers_(std::move(layers)) {
  spec_.validate();
  check_shapes();
}

Mlp Mlp::zeros(MlpSpec spec) {
  spec.validate();
  const auto sizes = spec.layer_sizes();
  std::vector<DenseLayer> layers;
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    layers.push_back({Eigen::MatrixXd::Zero(sizes[l], sizes[l - 1]), Eigen::VectorXd::Zero(sizes[l])});
  }
  return Mlp(std::move(spec), std::move(layers));
}

void Mlp::round_to_float() {
  for (auto& layer : layers_) {
    layer.weight = layer.weight.cast<float>().cast<double>();
    layer.bias = layer.bias.cast<float>().cast<double>();
  }
}

void Mlp::check_shapes() const {
  const auto sizes = spec_.layer_sizes();
  if (layers_.size() != sizes.size() - 1) fail(ErrorCode::ShapeMismatch, "layer count does not match spec");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (static_cast<std::size_t>(layer.weight.rows()) != sizes[l + 1] ||
        static_cast<std::size_t>(layer.weight.cols()) != sizes[l] ||
        static_cast<std::size_t>(layer.bias.size()) != sizes[l + 1]) {
      fail(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " shape does not match spec");
    }
  }
}

Eigen::VectorXd to_vector(std::span<const float> x) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) v(static_cast<Eigen::Index>(i)) = x[i];
  return v;
}

ForwardTrace forward(const Mlp& mlp, const Eigen::VectorXd& x) {
  if (static_cast<std::size_t>(x.size()) != mlp.input_dim()) {
    fail(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.size()) + " features, model expects " +
                                       std::to_string(mlp.input_dim()));
  }
  ForwardTrace trace;
  trace.input = x;
  trace.pre.reserve(mlp.depth());
  trace.post.reserve(mlp.depth());
  const std::size_t last = mlp.depth() - 1;
  for (std::size_t l = 0; l < mlp.depth(); ++l) {
    const auto& layer = mlp.layer(l);
    Eigen::VectorXd p = layer.weight * trace.layer_input(l) + layer.bias;
    Eigen::VectorXd a = (l == last || mlp.activation() == Activation::identity) ? p : p.cwiseMax(0.0);
    trace.pre.push_back(std::move(p));
    trace.post.push_back(std::move(a));
  }
  return trace;
}

ForwardTrace forward(const Mlp& mlp, std::span<const float> x) { return forward(mlp, to_vector(x)); }

std::size_t argmax(const Eigen::VectorXd& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
  }
  return best;
}

double softmax_cross_entropy(const Eigen::VectorXd& logits, std::size_t label) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits(static_cast<Eigen::Index>(label));
}

namespace {

Eigen::VectorXd loss_gradient_at_logits(const Eigen::VectorXd& logits, std::size_t label) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd g = (logits.array() - m).exp();
  g /= g.sum();
  g(static_cast<Eigen::Index>(label)) -= 1.0;
  return g;
}

// Multiplies the upstream gradient by the activation derivative of layer l.
void gate(const Mlp& mlp, const ForwardTrace& trace, std::size_t l, Eigen::VectorXd& delta) {
  if (mlp.activation() != Activation::relu) return;
  const auto& p = trace.pre[l];
  for (Eigen::Index i = 0; i < delta.size(); ++i) {
    if (!(p(i) > 0.0)) delta(i) = 0.0;
  }
}

void check_trace(const Mlp& mlp, const ForwardTrace& trace) {
  if (trace.pre.size() != mlp.depth() || trace.post.size() != mlp.depth() ||
      static_cast<std::size_t>(trace.input.size()) != mlp.input_dim()) {
    fail(ErrorCode::TraceMismatch, "trace was not produced by this network");
  }
  for (std::size_t l = 0; l < mlp.depth(); ++l) {
    if (trace.pre[l].size() != mlp.layer(l).bias.size() || trace.post[l].size() != mlp.layer(l).bias.size()) {
      fail(ErrorCode::TraceMismatch, "trace was not produced by this network");
    }
  }
}

}  // namespace

Gradients backward(const Mlp& mlp, const ForwardTrace& trace, std::size_t label) {
  check_trace(mlp, trace);
  if (label >= mlp.output_dim()) fail(ErrorCode::InvalidArgument, "label out of range");
  Gradients g;
  g.loss = softmax_cross_entropy(trace.logits(), label);
  g.params.resize(mlp.depth());
  Eigen::VectorXd delta = loss_gradient_at_logits(trace.logits(), label);
  for (std::size_t l = mlp.depth(); l-- > 0;) {
    const auto& a_in = trace.layer_input(l);
    g.params[l].weight = delta * a_in.transpose();
    g.params[l].bias = delta;
    Eigen::VectorXd upstream = mlp.layer(l).weight.transpose() * delta;
    if (l > 0) gate(mlp, trace, l - 1, upstream);
    delta = std::move(upstream);
  }
  g.input = std::move(delta);
  return g;
}

Eigen::VectorXd input_gradient(const Mlp& mlp, const ForwardTrace& trace, std::size_t label) {
  check_trace(mlp, trace);
  Eigen::VectorXd delta = loss_gradient_at_logits(trace.logits(), label);
  for (std::size_t l = mlp.depth(); l-- > 0;) {
    Eigen::VectorXd upstream = mlp.layer(l).weight.transpose() * delta;
    if (l > 0) gate(mlp, trace, l - 1, upstream);
    delta = std::move(upstream);
  }
  return delta;
}

Eigen::MatrixXd input_jacobian(const Mlp& mlp, const ForwardTrace& trace) {
  check_trace(mlp, trace);
  // Row i carries d logit_i / d (activations of the current layer).
  Eigen::MatrixXd rows = Eigen::MatrixXd::Identity(mlp.output_dim(), mlp.output_dim());
  for (std::size_t l = mlp.depth(); l-- > 0;) {
    rows = rows * mlp.layer(l).weight;
    if (l > 0 && mlp.activation() == Activation::relu) {
      const auto& p = trace.pre[l - 1];
      for (Eigen::Index c = 0; c < rows.cols(); ++c) {
        if (!(p(c) > 0.0)) rows.col(c).setZero();
      }
    }
  }
  return rows;
}

Eigen::MatrixXd logits_batch(const Mlp& mlp, const Dataset& data, std::span<const std::size_t> indices) {
  if (data.dim != mlp.input_dim()) fail(ErrorCode::ShapeMismatch, "dataset dimension differs from model input");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(data.dim), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t c = 0; c < indices.size(); ++c) {
    const auto img = data.image(indices[c]);
    for (std::size_t r = 0; r < data.dim; ++r) a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = img[r];
  }
  const std::size_t last = mlp.depth() - 1;
  for (std::size_t l = 0; l < mlp.depth(); ++l) {
    Eigen::MatrixXd p = mlp.layer(l).weight * a;
    p.colwise() += mlp.layer(l).bias;
    if (l != last && mlp.activation() == Activation::relu) p = p.cwiseMax(0.0);
    a = std::move(p);
  }
  return a;
}

std::vector<std::size_t> predict_all(const Mlp& mlp, const Dataset& data, std::size_t threads) {
  constexpr std::size_t kBlock = 256;
  std::vector<std::size_t> out(data.size());
  const std::size_t blocks = (data.size() + kBlock - 1) / kBlock;
  parallel_for(blocks, threads, [&](std::size_t b) {
    const std::size_t begin = b * kBlock;
    const std::size_t end = std::min(data.size(), begin + kBlock);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Eigen::MatrixXd logits = logits_batch(mlp, data, idx);
    for (std::size_t i = 0; i < idx.size(); ++i) out[begin + i] = argmax(logits.col(static_cast<Eigen::Index>(i)));
  });
  return out;
}

double accuracy(const Mlp& mlp, const Dataset& data, std::size_t threads) {
  if (data.size() == 0) return 0.0;
  const auto pred = predict_all(mlp, data, threads);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace quiver
