#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "quiver/mlp.hpp"

namespace quiver {

// Data-dependent linearisation of an MLP.
//
// For an input x the knowledge map replaces every arrow weight W_a by
// W_a * a_s / p_s, where s is the source neuron of the arrow, a_s its
// activation and p_s its pre-activation (inputs use a = x, p = 1; bias
// vertices use a = p = 1). The resulting network is linear with identity
// activations, and contracting its layers gives the induced matrix
//
//   M(x) = [ B_L ... B_1 | sum_l (B_L ... B_{l+1}) b_l ]   (k x (d+1))
//
// with B_1 = W_1 diag(x) and B_l = W_l diag(a_{l-1} / p_{l-1}). The last
// column accumulates every bias vertex, so M(x) * 1 reproduces the logits.

/// Guards the a/p ratio where the pre-activation is numerically zero.
/// For ReLU the ratio is forced to its limit 0; for other activations to
/// `fallback_ratio`. Hits are counted only when the activation is nonzero,
/// i.e. when the substitution changes the network function.
struct RatioPolicy {
  double zero_threshold = 1e-12;
  double fallback_ratio = 0.0;
  std::size_t near_zero_hits = 0;
};

/// Contribution of one affine layer after the knowledge map.
struct LayerContribution {
  std::size_t layer = 0;  // 0-based storage index
  Eigen::MatrixXd block;  // n_l x n_{l-1}
  Eigen::VectorXd bias;   // n_l
};

/// Row sums accumulated column by column, so equal rows give equal sums.
Eigen::VectorXd row_sums(const Eigen::MatrixXd& m);

/// Class region of a matrix: the strict argmax of its row sums (0-based), or
/// nullopt for the tie set M_0.
using ClassRegion = std::optional<std::size_t>;

struct InducedMatrix {
  Eigen::MatrixXd values;  // k x (d+1); the last column carries the biases
  ClassRegion region;

  Eigen::Index rows() const noexcept { return values.rows(); }
  Eigen::Index cols() const noexcept { return values.cols(); }
  /// M * 1, i.e. the row sums.
  Eigen::VectorXd evaluate() const { return row_sums(values); }
};

/// Ratio vector a/p for the activations of storage layer l (hidden only).
Eigen::VectorXd activation_ratios(const Mlp& mlp, const ForwardTrace& trace, std::size_t l, RatioPolicy& policy);

std::vector<LayerContribution> knowledge_map(const Mlp& mlp, const ForwardTrace& trace, RatioPolicy& policy);

/// Composes contributions from the output side inwards, so each step is a
/// (rows x n_l) by (n_l x n_{l-1}) product.
InducedMatrix contract(std::span<const LayerContribution> contributions);

InducedMatrix induced_matrix(const Mlp& mlp, const ForwardTrace& trace, RatioPolicy& policy);
InducedMatrix induced_matrix(const Mlp& mlp, const Eigen::VectorXd& x, RatioPolicy& policy);

/// Matrix of the subnetwork running from layer `first` to layer `last`
/// (1-based, inclusive, 1 <= first <= last <= depth). Its input is the
/// activation vector feeding layer `first`; M * 1 equals the pre-activation of
/// layer `last` recorded in the trace. Shape n_last x (n_{first-1} + 1).
InducedMatrix induced_matrix_range(const Mlp& mlp, const ForwardTrace& trace, std::size_t first, std::size_t last,
                                   RatioPolicy& policy);

ClassRegion region_of(const Eigen::MatrixXd& m);
ClassRegion region_of_sums(const Eigen::VectorXd& row_sums);

/// Per-hidden-neuron rescaling; identity on input and output neurons.
/// scales[l] belongs to hidden layer l (storage index l, l < depth - 1).
struct Isomorphism {
  std::vector<Eigen::VectorXd> scales;

  static Isomorphism identity(const MlpSpec& spec);
};

/// Network V with incoming weights and bias of hidden neuron q multiplied by
/// tau_q and outgoing weights divided by tau_q. For ReLU every tau_q must be
/// positive, otherwise tau f tau^{-1} is not a ReLU.
Mlp apply_isomorphism(const Mlp& mlp, const Isomorphism& iso);

struct MatrixDistances {
  double op_inf = 0.0;  // max absolute row sum of A - B
  double vec1 = 0.0;    // entrywise L1 of A - B
};

MatrixDistances norms(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// ||u - v||_p for p in [1, inf]; pass infinity for the max norm.
double logit_norm(const Eigen::VectorXd& u, const Eigen::VectorXd& v, double p);

/// True iff lambda*A + (1-lambda)*B lies in the common region of A and B.
/// Throws RegionMismatch unless both lie in the same region j != M_0.
bool check_convexity(const InducedMatrix& a, const InducedMatrix& b, double lambda);

}  // namespace quiver
