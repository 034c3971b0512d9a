#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "quiver/data_io.hpp"

namespace quiver {

/// Hidden-layer nonlinearity. Input and output neurons always use the identity.
enum class Activation { relu, identity };

std::string_view to_string(Activation a) noexcept;
Activation parse_activation(std::string_view name);

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 0;
  Activation activation = Activation::relu;
  std::uint64_t init_seed = 0;

  /// d, hidden..., k
  std::vector<std::size_t> layer_sizes() const;
  void validate() const;
};

/// Number of weights plus biases: sum over layers of n_l * n_{l-1} + n_l.
std::uint64_t param_count(const MlpSpec& spec);

struct DenseLayer {
  Eigen::MatrixXd weight;  // n_l x n_{l-1}
  Eigen::VectorXd bias;    // n_l
};

/// A chain MLP. Layers are indexed from 0 in storage; layer l maps the
/// activations of layer l-1 (the input for l = 0) to pre-activations p_l.
/// Parameters are held in double precision; checkpoints round them to float.
class Mlp {
 public:
  Mlp() = default;
  /// He-style uniform initialisation from spec.init_seed.
  explicit Mlp(MlpSpec spec);
  Mlp(MlpSpec spec, std::vector<DenseLayer> layers);

  static Mlp zeros(MlpSpec spec);

  const MlpSpec& spec() const noexcept { return spec_; }
  Activation activation() const noexcept { return spec_.activation; }
  std::size_t depth() const noexcept { return layers_.size(); }
  std::size_t input_dim() const noexcept { return spec_.input_dim; }
  std::size_t output_dim() const noexcept { return spec_.output_dim; }

  const DenseLayer& layer(std::size_t l) const { return layers_.at(l); }
  DenseLayer& layer(std::size_t l) { return layers_.at(l); }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  /// Rounds every parameter through float32 (the checkpoint precision).
  void round_to_float();

 private:
  void check_shapes() const;

  MlpSpec spec_;
  std::vector<DenseLayer> layers_;
};

/// Pre-activations and activations of every non-input layer for one input.
struct ForwardTrace {
  Eigen::VectorXd input;
  std::vector<Eigen::VectorXd> pre;   // p_l, l = 0..L-1
  std::vector<Eigen::VectorXd> post;  // a_l = f(p_l); a_{L-1} == p_{L-1}

  const Eigen::VectorXd& logits() const { return post.back(); }
  /// Activations feeding layer l: the input for l == 0, else post[l-1].
  const Eigen::VectorXd& layer_input(std::size_t l) const { return l == 0 ? input : post[l - 1]; }
};

ForwardTrace forward(const Mlp& mlp, const Eigen::VectorXd& x);
ForwardTrace forward(const Mlp& mlp, std::span<const float> x);

Eigen::VectorXd to_vector(std::span<const float> x);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(const Eigen::VectorXd& v);

double softmax_cross_entropy(const Eigen::VectorXd& logits, std::size_t label);

struct Gradients {
  std::vector<DenseLayer> params;
  Eigen::VectorXd input;
  double loss = 0.0;
};

/// Gradients of softmax cross-entropy w.r.t. all parameters and the input.
Gradients backward(const Mlp& mlp, const ForwardTrace& trace, std::size_t label);

/// Input gradient only (skips parameter gradients).
Eigen::VectorXd input_gradient(const Mlp& mlp, const ForwardTrace& trace, std::size_t label);

/// d logits / d x, a k x d matrix.
Eigen::MatrixXd input_jacobian(const Mlp& mlp, const ForwardTrace& trace);

/// Logits for a block of dataset rows; column i belongs to indices[i].
Eigen::MatrixXd logits_batch(const Mlp& mlp, const Dataset& data, std::span<const std::size_t> indices);

/// Predicted class for every dataset row, evaluated in batches.
std::vector<std::size_t> predict_all(const Mlp& mlp, const Dataset& data, std::size_t threads = 1);

double accuracy(const Mlp& mlp, const Dataset& data, std::size_t threads = 1);

}  // namespace quiver
