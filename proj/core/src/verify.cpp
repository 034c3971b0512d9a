#include "quiver/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "quiver/induced.hpp"
#include "quiver/parallel.hpp"

namespace quiver {

nlohmann::json CheckResult::to_json() const {
  return {{"name", name},           {"trials", trials},       {"violations", violations},
          {"max_violation", max_violation}, {"tolerance", tolerance}, {"seconds", seconds},
          {"passed", passed()}};
}

bool VerifyReport::passed() const noexcept {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed(); });
}

nlohmann::json VerifyReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks) arr.push_back(c.to_json());
  return {{"checks", arr}, {"passed", passed()}};
}

std::string VerifyReport::text() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << (c.passed() ? "PASS " : "FAIL ") << std::left << std::setw(22) << c.name << " trials=" << c.trials
       << " violations=" << c.violations << " max=" << std::scientific << std::setprecision(3) << c.max_violation
       << " tol=" << c.tolerance << std::defaultfloat << " (" << std::fixed << std::setprecision(2) << c.seconds
       << "s)" << std::defaultfloat << '\n';
  }
  return os.str();
}

VerifyOptions VerifyOptions::scaled(std::size_t factor) const {
  VerifyOptions o = *this;
  factor = std::max<std::size_t>(1, factor);
  auto s = [factor](std::size_t n) { return std::max<std::size_t>(1, n / factor); };
  o.factorization_trials = s(o.factorization_trials);
  o.isomorphism_trials = s(o.isomorphism_trials);
  o.convexity_pairs = s(o.convexity_pairs);
  o.norm_trials = s(o.norm_trials);
  o.m0_random = s(o.m0_random);
  o.m0_tied = s(o.m0_tied);
  return o;
}

MlpSpec random_spec(std::uint64_t seed, std::size_t max_hidden, std::size_t max_width, std::size_t max_input,
                    std::size_t max_output) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  MlpSpec s;
  s.input_dim = pick(1, max_input);
  s.output_dim = pick(2, max_output);
  s.hidden.resize(pick(0, max_hidden));
  for (auto& w : s.hidden) w = pick(1, max_width);
  s.activation = Activation::relu;
  s.init_seed = rng();
  return s;
}

Eigen::VectorXd random_input(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd x(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = u(rng);
  return x;
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void record(CheckResult& r, double err) {
  r.max_violation = std::max(r.max_violation, err);
  if (!(err <= r.tolerance)) ++r.violations;
}

double rel_dev(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / (1.0 + b.cwiseAbs().maxCoeff());
}

}  // namespace

CheckResult check_factorization(std::size_t trials, std::uint64_t seed, double tol) {
  const auto t0 = Clock::now();
  CheckResult r{"factorization", trials, 0, 0.0, tol, 0.0};
  for (std::size_t i = 0; i < trials; ++i) {
    const Mlp mlp(random_spec(derive_seed(seed, 1, i)));
    const auto trace = forward(mlp, random_input(mlp.input_dim(), derive_seed(seed, 2, i)));
    RatioPolicy policy;
    const InducedMatrix m = induced_matrix(mlp, trace, policy);
    record(r, rel_dev(m.evaluate(), trace.logits()));
  }
  r.seconds = since(t0);
  return r;
}

CheckResult check_subnetwork(std::size_t trials, std::uint64_t seed, double tol) {
  const auto t0 = Clock::now();
  CheckResult r{"subnetwork", trials, 0, 0.0, tol, 0.0};
  for (std::size_t i = 0; i < trials; ++i) {
    const Mlp mlp(random_spec(derive_seed(seed, 3, i)));
    const auto trace = forward(mlp, random_input(mlp.input_dim(), derive_seed(seed, 4, i)));
    std::mt19937_64 rng(derive_seed(seed, 5, i));
    const std::size_t last = std::uniform_int_distribution<std::size_t>(1, mlp.depth())(rng);
    const std::size_t first = std::uniform_int_distribution<std::size_t>(1, last)(rng);
    RatioPolicy policy;
    const InducedMatrix m = induced_matrix_range(mlp, trace, first, last, policy);
    record(r, rel_dev(m.evaluate(), trace.pre[last - 1]));
  }
  r.seconds = since(t0);
  return r;
}

CheckResult check_isomorphism(std::size_t trials, std::uint64_t seed, double tol, double act_tol) {
  const auto t0 = Clock::now();
  CheckResult r{"isomorphism", trials, 0, 0.0, tol, 0.0};
  for (std::size_t i = 0; i < trials; ++i) {
    MlpSpec spec = random_spec(derive_seed(seed, 6, i));
    if (spec.hidden.empty()) spec.hidden.push_back(4);
    const Mlp w(spec);
    std::mt19937_64 rng(derive_seed(seed, 7, i));
    std::uniform_real_distribution<double> tau(0.1, 10.0);
    Isomorphism iso = Isomorphism::identity(spec);
    for (auto& s : iso.scales) {
      for (Eigen::Index q = 0; q < s.size(); ++q) s(q) = tau(rng);
    }
    const Mlp v = apply_isomorphism(w, iso);
    const Eigen::VectorXd x = random_input(spec.input_dim, derive_seed(seed, 8, i));
    const auto tw = forward(w, x);
    const auto tv = forward(v, x);
    RatioPolicy pw, pv;
    double err = rel_dev(tv.logits(), tw.logits());
    err = std::max(err, rel_dev(induced_matrix(v, tv, pv).values, induced_matrix(w, tw, pw).values));

    // Contributions of V are those of W conjugated by the scalings.
    const auto cw = knowledge_map(w, tw, pw);
    const auto cv = knowledge_map(v, tv, pv);
    for (std::size_t l = 0; l < cw.size(); ++l) {
      Eigen::MatrixXd expect = cw[l].block;
      Eigen::VectorXd bias = cw[l].bias;
      if (l < iso.scales.size()) {
        expect = iso.scales[l].asDiagonal() * expect;
        bias = iso.scales[l].cwiseProduct(bias);
      }
      if (l > 0) expect = expect * iso.scales[l - 1].cwiseInverse().asDiagonal();
      err = std::max(err, rel_dev(cv[l].block, expect));
      err = std::max(err, rel_dev(cv[l].bias, bias));
    }

    // Hidden activations move by exactly tau, up to rounding.
    double act = 0.0;
    for (std::size_t l = 0; l + 1 < w.depth(); ++l) {
      const Eigen::VectorXd expect = iso.scales[l].cwiseProduct(tw.post[l]);
      act = std::max(act, (tv.post[l] - expect).cwiseAbs().maxCoeff() / (1.0 + expect.cwiseAbs().maxCoeff()));
    }
    r.max_violation = std::max(r.max_violation, std::max(err, act));
    if (!(err <= tol) || !(act <= act_tol)) ++r.violations;
  }
  r.seconds = since(t0);
  return r;
}

CheckResult check_convexity_battery(std::size_t pairs, std::size_t lambdas, std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckResult r{"convexity", pairs * lambdas, 0, 0.0, 0.0, 0.0};
  // Matrices come from a handful of random nets; pairs are drawn within one
  // region so the precondition holds.
  constexpr std::size_t kNets = 20;
  constexpr std::size_t kPerNet = 64;
  std::size_t made = 0;
  for (std::size_t n = 0; made < pairs; ++n) {
    MlpSpec spec = random_spec(derive_seed(seed, 9, n), 3, 16, 12, 5);
    const Mlp mlp(spec);
    std::map<std::size_t, std::vector<InducedMatrix>> by_region;
    for (std::size_t s = 0; s < kPerNet; ++s) {
      RatioPolicy p;
      InducedMatrix m = induced_matrix(mlp, random_input(spec.input_dim, derive_seed(seed, 10, n * kPerNet + s)), p);
      if (m.region) by_region[*m.region].push_back(std::move(m));
    }
    std::mt19937_64 rng(derive_seed(seed, 11, n));
    const std::size_t quota = (pairs + kNets - 1) / kNets;
    for (std::size_t q = 0; q < quota && made < pairs; ++q) {
      std::vector<const std::vector<InducedMatrix>*> usable;
      for (const auto& [j, v] : by_region) {
        if (v.size() >= 2) usable.push_back(&v);
      }
      if (usable.empty()) break;
      const auto& group = *usable[std::uniform_int_distribution<std::size_t>(0, usable.size() - 1)(rng)];
      std::uniform_int_distribution<std::size_t> pick(0, group.size() - 1);
      const std::size_t a = pick(rng);
      std::size_t b = pick(rng);
      if (b == a) b = (a + 1) % group.size();
      for (std::size_t k = 0; k < lambdas; ++k) {
        const double lambda = lambdas == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(lambdas - 1);
        if (!check_convexity(group[a], group[b], lambda)) {
          ++r.violations;
          r.max_violation = 1.0;
        }
      }
      ++made;
    }
  }
  r.seconds = since(t0);
  return r;
}

CheckResult check_norm_inequalities(std::size_t trials, std::uint64_t seed, double slack) {
  const auto t0 = Clock::now();
  CheckResult r{"norm_inequalities", trials, 0, 0.0, slack, 0.0};
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trials; ++i) {
    const Mlp mlp(random_spec(derive_seed(seed, 12, i)));
    const auto tx = forward(mlp, random_input(mlp.input_dim(), derive_seed(seed, 13, i)));
    const auto ty = forward(mlp, random_input(mlp.input_dim(), derive_seed(seed, 14, i)));
    RatioPolicy p;
    const auto d = norms(induced_matrix(mlp, ty, p).values, induced_matrix(mlp, tx, p).values);
    double worst = 0.0;
    worst = std::max(worst, logit_norm(ty.logits(), tx.logits(), inf) - d.op_inf);
    for (double q : {1.0, 2.0, inf}) worst = std::max(worst, logit_norm(ty.logits(), tx.logits(), q) - d.vec1);
    r.max_violation = std::max(r.max_violation, worst);
    if (!(worst <= slack)) ++r.violations;
  }
  r.seconds = since(t0);
  return r;
}

CheckResult check_m0(std::size_t random, std::size_t tied, std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckResult r{"tie_region", random + tied, 0, 0.0, 0.0, 0.0};
  std::mt19937_64 rng(derive_seed(seed, 15));
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(10, 8);
  for (std::size_t i = 0; i < random; ++i) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
    if (!region_of(m)) ++r.violations;
  }
  for (std::size_t i = 0; i < tied; ++i) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
    // Copy the top row onto another row so the maximum is shared.
    Eigen::Index top = 0;
    m.rowwise().sum().maxCoeff(&top);
    const Eigen::Index other = (top + 1 + static_cast<Eigen::Index>(i % 9)) % m.rows();
    m.row(other) = m.row(top);
    if (region_of(m)) ++r.violations;
  }
  r.max_violation = static_cast<double>(r.violations);
  r.seconds = since(t0);
  return r;
}

GradientCheck gradient_check(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, double h, double tol) {
  GradientCheck out;
  const Gradients g = backward(mlp, forward(mlp, x), label);
  auto loss = [&](const Mlp& m, const Eigen::VectorXd& in) { return softmax_cross_entropy(forward(m, in).logits(), label); };
  auto compare = [&](double analytic, double numeric) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    const double rel = scale < 1e-12 ? 0.0 : std::abs(analytic - numeric) / scale;
    out.max_rel_error = std::max(out.max_rel_error, rel);
    ++out.checked;
    if (!(rel < tol)) ++out.failures;
  };
  Mlp probe = mlp;
  for (std::size_t l = 0; l < mlp.depth(); ++l) {
    auto& w = probe.layer(l).weight;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double orig = w.data()[k];
      w.data()[k] = orig + h;
      const double up = loss(probe, x);
      w.data()[k] = orig - h;
      const double down = loss(probe, x);
      w.data()[k] = orig;
      compare(g.params[l].weight.data()[k], (up - down) / (2.0 * h));
    }
    auto& b = probe.layer(l).bias;
    for (Eigen::Index k = 0; k < b.size(); ++k) {
      const double orig = b(k);
      b(k) = orig + h;
      const double up = loss(probe, x);
      b(k) = orig - h;
      const double down = loss(probe, x);
      b(k) = orig;
      compare(g.params[l].bias(k), (up - down) / (2.0 * h));
    }
  }
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double up = loss(mlp, xp);
    xp(i) = x(i) - h;
    const double down = loss(mlp, xp);
    xp(i) = x(i);
    compare(g.input(i), (up - down) / (2.0 * h));
  }
  return out;
}

CheckResult check_gradients(std::uint64_t seed, double tol) {
  const auto t0 = Clock::now();
  MlpSpec spec;
  spec.input_dim = 10;
  spec.hidden = {8};
  spec.output_dim = 5;
  spec.init_seed = derive_seed(seed, 16);
  const Mlp mlp(spec);
  const GradientCheck g = gradient_check(mlp, random_input(10, derive_seed(seed, 17)), seed % 5, 1e-4, tol);
  CheckResult r{"gradients", g.checked, g.failures, g.max_rel_error, tol, since(t0)};
  return r;
}

VerifyReport run_verification(const VerifyOptions& o) {
  VerifyReport rep;
  rep.checks.push_back(check_factorization(o.factorization_trials, o.seed, o.factorization_tolerance));
  rep.checks.push_back(check_subnetwork(o.factorization_trials, o.seed));
  rep.checks.push_back(check_isomorphism(o.isomorphism_trials, o.seed));
  rep.checks.push_back(check_convexity_battery(o.convexity_pairs, o.convexity_lambdas, o.seed));
  rep.checks.push_back(check_norm_inequalities(o.norm_trials, o.seed));
  rep.checks.push_back(check_m0(o.m0_random, o.m0_tied, o.seed));
  rep.checks.push_back(check_gradients(o.seed));
  return rep;
}

}  // namespace quiver
