#include "quiver/induced.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "quiver/error.hpp"

namespace quiver {

namespace {

void check_trace(const Mlp& mlp, const ForwardTrace& trace) {
  if (trace.pre.size() != mlp.depth() || trace.post.size() != mlp.depth() ||
      static_cast<std::size_t>(trace.input.size()) != mlp.input_dim()) {
    fail(ErrorCode::TraceMismatch, "trace layer count or input size differs from the network");
  }
  for (std::size_t l = 0; l < mlp.depth(); ++l) {
    if (trace.pre[l].size() != mlp.layer(l).weight.rows() || trace.post[l].size() != trace.pre[l].size()) {
      fail(ErrorCode::TraceMismatch, "trace layer " + std::to_string(l) + " has the wrong width");
    }
  }
}

// Source scaling for storage layer l of a range starting at `first`: the raw
// activations for the first layer of the range, a/p ratios otherwise.
Eigen::VectorXd source_scaling(const Mlp& mlp, const ForwardTrace& trace, std::size_t l, std::size_t first,
                               RatioPolicy& policy) {
  if (l == first) return trace.layer_input(l);
  return activation_ratios(mlp, trace, l - 1, policy);
}

}  // namespace

Eigen::VectorXd activation_ratios(const Mlp& mlp, const ForwardTrace& trace, std::size_t l, RatioPolicy& policy) {
  if (policy.zero_threshold <= 0.0) fail(ErrorCode::InvalidArgument, "ratio threshold must be positive");
  const auto& p = trace.pre.at(l);
  const auto& a = trace.post.at(l);
  const bool relu = mlp.activation() == Activation::relu;
  Eigen::VectorXd r(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (std::abs(p(i)) <= policy.zero_threshold) {
      if (a(i) != 0.0) ++policy.near_zero_hits;
      r(i) = relu ? 0.0 : policy.fallback_ratio;
    } else if (relu) {
      r(i) = p(i) > 0.0 ? 1.0 : 0.0;
    } else {
      r(i) = a(i) / p(i);
    }
  }
  return r;
}

std::vector<LayerContribution> knowledge_map(const Mlp& mlp, const ForwardTrace& trace, RatioPolicy& policy) {
  check_trace(mlp, trace);
  std::vector<LayerContribution> out;
  out.reserve(mlp.depth());
  for (std::size_t l = 0; l < mlp.depth(); ++l) {
    const Eigen::VectorXd s = source_scaling(mlp, trace, l, 0, policy);
    out.push_back({l, mlp.layer(l).weight * s.asDiagonal(), mlp.layer(l).bias});
  }
  return out;
}

InducedMatrix contract(std::span<const LayerContribution> contributions) {
  if (contributions.empty()) fail(ErrorCode::ShapeMismatch, "nothing to contract");
  for (std::size_t i = 0; i < contributions.size(); ++i) {
    const auto& c = contributions[i];
    if (c.bias.size() != c.block.rows()) fail(ErrorCode::ShapeMismatch, "bias length differs from block rows");
    if (i > 0 && contributions[i - 1].block.rows() != c.block.cols()) {
      fail(ErrorCode::ShapeMismatch, "contribution " + std::to_string(i) + " does not chain");
    }
  }
  const auto& top = contributions.back();
  Eigen::MatrixXd left = Eigen::MatrixXd::Identity(top.block.rows(), top.block.rows());
  Eigen::VectorXd bias = Eigen::VectorXd::Zero(top.block.rows());
  for (std::size_t i = contributions.size(); i-- > 0;) {
    bias.noalias() += left * contributions[i].bias;
    left = left * contributions[i].block;
  }
  InducedMatrix m;
  m.values.resize(left.rows(), left.cols() + 1);
  m.values.leftCols(left.cols()) = left;
  m.values.col(left.cols()) = bias;
  m.region = region_of(m.values);
  return m;
}

InducedMatrix induced_matrix_range(const Mlp& mlp, const ForwardTrace& trace, std::size_t first, std::size_t last,
                                   RatioPolicy& policy) {
  if (first < 1 || first > last || last > mlp.depth()) {
    fail(ErrorCode::BadLayerRange, "need 1 <= first <= last <= " + std::to_string(mlp.depth()));
  }
  check_trace(mlp, trace);
  const std::size_t lo = first - 1;
  const std::size_t hi = last - 1;
  const Eigen::Index rows = mlp.layer(hi).weight.rows();
  // left holds B_hi ... B_{l+1}; starting from the output side keeps every
  // product at `rows` rows, which is the cheap direction when k << d.
  Eigen::MatrixXd left = Eigen::MatrixXd::Identity(rows, rows);
  Eigen::VectorXd bias = Eigen::VectorXd::Zero(rows);
  for (std::size_t l = hi + 1; l-- > lo;) {
    bias.noalias() += left * mlp.layer(l).bias;
    Eigen::MatrixXd next = left * mlp.layer(l).weight;
    next *= source_scaling(mlp, trace, l, lo, policy).asDiagonal();
    left = std::move(next);
  }
  InducedMatrix m;
  m.values.resize(rows, left.cols() + 1);
  m.values.leftCols(left.cols()) = left;
  m.values.col(left.cols()) = bias;
  if (last == mlp.depth()) m.region = region_of(m.values);
  return m;
}

InducedMatrix induced_matrix(const Mlp& mlp, const ForwardTrace& trace, RatioPolicy& policy) {
  return induced_matrix_range(mlp, trace, 1, mlp.depth(), policy);
}

InducedMatrix induced_matrix(const Mlp& mlp, const Eigen::VectorXd& x, RatioPolicy& policy) {
  return induced_matrix(mlp, forward(mlp, x), policy);
}

ClassRegion region_of_sums(const Eigen::VectorXd& s) {
  if (s.size() == 0) return std::nullopt;
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < s.size(); ++i) {
    if (s(i) > s(best)) best = i;
  }
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (i != best && !(s(best) > s(i))) return std::nullopt;
  }
  return static_cast<std::size_t>(best);
}

Eigen::VectorXd row_sums(const Eigen::MatrixXd& m) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(m.rows());
  for (Eigen::Index c = 0; c < m.cols(); ++c) s += m.col(c);
  return s;
}

ClassRegion region_of(const Eigen::MatrixXd& m) { return region_of_sums(row_sums(m)); }

Isomorphism Isomorphism::identity(const MlpSpec& spec) {
  Isomorphism iso;
  for (auto n : spec.hidden) iso.scales.push_back(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)));
  return iso;
}

Mlp apply_isomorphism(const Mlp& mlp, const Isomorphism& iso) {
  const auto& hidden = mlp.spec().hidden;
  if (iso.scales.size() != hidden.size()) fail(ErrorCode::ShapeMismatch, "one scale vector per hidden layer");
  for (std::size_t h = 0; h < hidden.size(); ++h) {
    const auto& tau = iso.scales[h];
    if (static_cast<std::size_t>(tau.size()) != hidden[h]) fail(ErrorCode::ShapeMismatch, "scale vector width");
    for (Eigen::Index i = 0; i < tau.size(); ++i) {
      if (mlp.activation() == Activation::relu && !(tau(i) > 0.0)) {
        fail(ErrorCode::NonPositiveScaleForReLU, "ReLU networks only admit positive rescaling");
      }
      if (!std::isfinite(tau(i)) || tau(i) == 0.0) {
        fail(ErrorCode::InvalidArgument, "isomorphism scales must be finite and nonzero");
      }
    }
  }
  std::vector<DenseLayer> layers = mlp.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l < hidden.size()) {
      layers[l].weight = iso.scales[l].asDiagonal() * layers[l].weight;
      layers[l].bias = layers[l].bias.cwiseProduct(iso.scales[l]);
    }
    if (l > 0) layers[l].weight = layers[l].weight * iso.scales[l - 1].cwiseInverse().asDiagonal();
  }
  return Mlp(mlp.spec(), std::move(layers));
}

MatrixDistances norms(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) fail(ErrorCode::ShapeMismatch, "matrix shapes differ");
  const Eigen::MatrixXd diff = (a - b).cwiseAbs();
  return {diff.rows() == 0 ? 0.0 : diff.rowwise().sum().maxCoeff(), diff.sum()};
}

double logit_norm(const Eigen::VectorXd& u, const Eigen::VectorXd& v, double p) {
  if (u.size() != v.size()) fail(ErrorCode::ShapeMismatch, "vector lengths differ");
  if (!(p >= 1.0)) fail(ErrorCode::InvalidArgument, "p must lie in [1, inf]");
  const Eigen::ArrayXd d = (u - v).array().abs();
  if (d.size() == 0) return 0.0;
  if (std::isinf(p)) return d.maxCoeff();
  if (p == 1.0) return d.sum();
  if (p == 2.0) return std::sqrt(d.square().sum());
  return std::pow(d.pow(p).sum(), 1.0 / p);
}

bool check_convexity(const InducedMatrix& a, const InducedMatrix& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCode::InvalidArgument, "lambda must lie in [0, 1]");
  const ClassRegion ra = region_of(a.values);
  const ClassRegion rb = region_of(b.values);
  if (!ra || !rb || *ra != *rb) fail(ErrorCode::RegionMismatch, "endpoints must share a region other than M_0");
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols()) {
    fail(ErrorCode::ShapeMismatch, "matrix shapes differ");
  }
  const Eigen::MatrixXd mix = lambda * a.values + (1.0 - lambda) * b.values;
  return region_of(mix) == ra;
}

}  // namespace quiver
