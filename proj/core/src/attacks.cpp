#include "quiver/attacks.hpp"

#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "quiver/archive.hpp"
#include "quiver/error.hpp"
#include "quiver/parallel.hpp"

namespace quiver {

std::string_view attack_name(AttackMethod m) noexcept {
  switch (m) {
    case AttackMethod::gn: return "GN";
    case AttackMethod::fgsm: return "FGSM";
    case AttackMethod::rfgsm: return "RFGSM";
    case AttackMethod::ffgsm: return "FFGSM";
    case AttackMethod::pgd: return "PGD";
    case AttackMethod::pgd_l2: return "PGDL2";
    case AttackMethod::mifgsm: return "MIFGSM";
    case AttackMethod::deepfool: return "DeepFool";
  }
  return "?";
}

AttackMethod parse_attack(std::string_view name) {
  std::string s(name);
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (s == "gn") return AttackMethod::gn;
  if (s == "fgsm") return AttackMethod::fgsm;
  if (s == "rfgsm") return AttackMethod::rfgsm;
  if (s == "ffgsm") return AttackMethod::ffgsm;
  if (s == "pgd") return AttackMethod::pgd;
  if (s == "pgd_l2" || s == "pgdl2" || s == "pgd-l2") return AttackMethod::pgd_l2;
  if (s == "mifgsm") return AttackMethod::mifgsm;
  if (s == "deepfool") return AttackMethod::deepfool;
  fail(ErrorCode::InvalidArgument, "unknown attack '" + std::string(name) + "'");
}

AttackConfig AttackConfig::defaults(AttackMethod m) {
  AttackConfig c;
  c.method = m;
  switch (m) {
    case AttackMethod::gn:
      c.eps = 0.1;
      c.steps = 1;
      break;
    case AttackMethod::fgsm:
      c.steps = 1;
      break;
    case AttackMethod::rfgsm:
      c.alpha = c.eps / 2.0;
      c.steps = 1;
      break;
    case AttackMethod::ffgsm:
      c.alpha = 10.0 / 255.0;
      c.steps = 1;
      break;
    case AttackMethod::pgd:
    case AttackMethod::mifgsm:
      break;
    case AttackMethod::pgd_l2:
      c.eps = 1.0;
      c.alpha = 0.2;
      break;
    case AttackMethod::deepfool:
      c.steps = 50;
      break;
  }
  return c;
}

void AttackConfig::validate() const {
  if (!(eps >= 0.0)) fail(ErrorCode::InvalidArgument, "eps must be >= 0");
  if (!(alpha >= 0.0)) fail(ErrorCode::InvalidArgument, "alpha must be >= 0");
  const bool iterative = method == AttackMethod::pgd || method == AttackMethod::pgd_l2 || method == AttackMethod::mifgsm;
  if (iterative && steps == 0) fail(ErrorCode::InvalidArgument, "iterative attacks need steps >= 1");
}

nlohmann::json AttackConfig::to_json() const {
  return {{"method", attack_name(method)}, {"eps", eps},     {"alpha", alpha},
          {"steps", steps},                {"decay", decay}, {"overshoot", overshoot},
          {"random_start", random_start},  {"seed", seed}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  try {
    AttackConfig c = defaults(parse_attack(j.at("method").get<std::string>()));
    c.eps = j.value("eps", c.eps);
    // RFGSM's alpha follows eps unless given explicitly.
    c.alpha = j.value("alpha", c.method == AttackMethod::rfgsm ? c.eps / 2.0 : c.alpha);
    c.steps = j.value("steps", c.steps);
    c.decay = j.value("decay", c.decay);
    c.overshoot = j.value("overshoot", c.overshoot);
    c.random_start = j.value("random_start", c.random_start);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("bad attack config: ") + e.what());
  }
}

namespace {

Eigen::VectorXd clamp01(const Eigen::VectorXd& v) { return v.cwiseMax(0.0).cwiseMin(1.0); }

Eigen::VectorXd sign(const Eigen::VectorXd& v) {
  return v.unaryExpr([](double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); });
}

// Projects adv onto the L-inf ball of radius eps around x, then onto [0,1].
Eigen::VectorXd project_linf(const Eigen::VectorXd& x, const Eigen::VectorXd& adv, double eps) {
  const Eigen::VectorXd delta = (adv - x).cwiseMax(-eps).cwiseMin(eps);
  return clamp01(x + delta);
}

Eigen::VectorXd project_l2(const Eigen::VectorXd& x, const Eigen::VectorXd& adv, double eps) {
  Eigen::VectorXd delta = adv - x;
  const double n = delta.norm();
  if (n > eps) delta *= eps / n;
  return clamp01(x + delta);
}

Eigen::VectorXd loss_gradient(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label) {
  return input_gradient(mlp, forward(mlp, x), label);
}

Eigen::VectorXd uniform_ball(std::size_t d, double eps, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-eps, eps);
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = eps > 0.0 ? u(rng) : 0.0;
  return v;
}

Eigen::VectorXd gaussian(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = n(rng);
  return v;
}

}  // namespace

Eigen::VectorXd gn(const Eigen::VectorXd& x, const AttackConfig& cfg) {
  if (cfg.eps == 0.0) return x;
  std::mt19937_64 rng(cfg.seed);
  return clamp01(x + cfg.eps * gaussian(static_cast<std::size_t>(x.size()), rng));
}

Eigen::VectorXd fgsm(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg) {
  if (cfg.eps == 0.0) return x;
  return clamp01(x + cfg.eps * sign(loss_gradient(mlp, x, label)));
}

Eigen::VectorXd rfgsm(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg) {
  if (cfg.eps == 0.0) return x;
  std::mt19937_64 rng(cfg.seed);
  const double alpha = std::min(cfg.alpha, cfg.eps);
  Eigen::VectorXd adv = clamp01(x + alpha * sign(gaussian(static_cast<std::size_t>(x.size()), rng)));
  adv += (cfg.eps - alpha) * sign(loss_gradient(mlp, adv, label));
  return project_linf(x, adv, cfg.eps);
}

Eigen::VectorXd ffgsm(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg) {
  if (cfg.eps == 0.0) return x;
  std::mt19937_64 rng(cfg.seed);
  Eigen::VectorXd adv = clamp01(x + uniform_ball(static_cast<std::size_t>(x.size()), cfg.eps, rng));
  adv += cfg.alpha * sign(loss_gradient(mlp, adv, label));
  return project_linf(x, adv, cfg.eps);
}

Eigen::VectorXd pgd(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg) {
  if (cfg.steps == 0) fail(ErrorCode::InvalidArgument, "pgd needs steps >= 1");
  if (cfg.eps == 0.0) return x;
  std::mt19937_64 rng(cfg.seed);
  Eigen::VectorXd adv = x;
  if (cfg.random_start) adv = clamp01(x + uniform_ball(static_cast<std::size_t>(x.size()), cfg.eps, rng));
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    adv += cfg.alpha * sign(loss_gradient(mlp, adv, label));
    adv = project_linf(x, adv, cfg.eps);
  }
  return adv;
}

Eigen::VectorXd pgd_l2(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg) {
  if (cfg.steps == 0) fail(ErrorCode::InvalidArgument, "pgd_l2 needs steps >= 1");
  if (cfg.eps == 0.0) return x;
  constexpr double kTiny = 1e-10;
  std::mt19937_64 rng(cfg.seed);
  Eigen::VectorXd adv = x;
  if (cfg.random_start) {
    Eigen::VectorXd dir = gaussian(static_cast<std::size_t>(x.size()), rng);
    const double radius = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * cfg.eps;
    adv = project_l2(x, x + dir * (radius / (dir.norm() + kTiny)), cfg.eps);
  }
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const Eigen::VectorXd g = loss_gradient(mlp, adv, label);
    adv += cfg.alpha * g / (g.norm() + kTiny);
    adv = project_l2(x, adv, cfg.eps);
  }
  return adv;
}

Eigen::VectorXd mifgsm(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg) {
  if (cfg.steps == 0) fail(ErrorCode::InvalidArgument, "mifgsm needs steps >= 1");
  if (cfg.eps == 0.0) return x;
  Eigen::VectorXd adv = x;
  Eigen::VectorXd momentum = Eigen::VectorXd::Zero(x.size());
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const Eigen::VectorXd g = loss_gradient(mlp, adv, label);
    const double l1 = g.lpNorm<1>();
    momentum = cfg.decay * momentum + (l1 > 0.0 ? Eigen::VectorXd(g / l1) : g);
    adv += cfg.alpha * sign(momentum);
    adv = project_linf(x, adv, cfg.eps);
  }
  return adv;
}

Eigen::VectorXd deepfool(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg) {
  ForwardTrace trace = forward(mlp, x);
  if (argmax(trace.logits()) != label || cfg.steps == 0) return x;
  const auto k = static_cast<Eigen::Index>(mlp.output_dim());
  const auto y = static_cast<Eigen::Index>(label);
  Eigen::VectorXd adv = x;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    if (argmax(trace.logits()) != label) break;
    const Eigen::MatrixXd jac = input_jacobian(mlp, trace);
    const Eigen::VectorXd& f = trace.logits();
    double best = std::numeric_limits<double>::infinity();
    Eigen::VectorXd step;
    for (Eigen::Index c = 0; c < k; ++c) {
      if (c == y) continue;
      const Eigen::VectorXd w = jac.row(c) - jac.row(y);
      const double wn = w.norm();
      if (wn == 0.0) continue;
      const double dist = std::abs(f(c) - f(y)) / wn;
      if (dist < best) {
        best = dist;
        step = (std::abs(f(c) - f(y)) / (wn * wn)) * w;
      }
    }
    if (step.size() == 0) break;
    adv = clamp01(adv + step);
    trace = forward(mlp, adv);
  }
  return clamp01(x + (1.0 + cfg.overshoot) * (adv - x));
}

Eigen::VectorXd perturb(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg) {
  switch (cfg.method) {
    case AttackMethod::gn: return gn(x, cfg);
    case AttackMethod::fgsm: return fgsm(mlp, x, label, cfg);
    case AttackMethod::rfgsm: return rfgsm(mlp, x, label, cfg);
    case AttackMethod::ffgsm: return ffgsm(mlp, x, label, cfg);
    case AttackMethod::pgd: return pgd(mlp, x, label, cfg);
    case AttackMethod::pgd_l2: return pgd_l2(mlp, x, label, cfg);
    case AttackMethod::mifgsm: return mifgsm(mlp, x, label, cfg);
    case AttackMethod::deepfool: return deepfool(mlp, x, label, cfg);
  }
  return x;
}

std::size_t AdversarialSet::flipped_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : examples) n += e.flipped;
  return n;
}

std::map<std::string, AdversarialSet> run_attack_suite(const Mlp& mlp, const Dataset& data,
                                                       std::span<const AttackConfig> configs, std::uint64_t seed,
                                                       std::size_t threads, std::size_t limit) {
  std::map<std::string, AdversarialSet> out;
  if (configs.empty()) return out;
  const std::size_t rows = limit == 0 ? data.size() : std::min(limit, data.size());
  std::vector<std::size_t> visit(rows);
  std::iota(visit.begin(), visit.end(), std::size_t{0});
  const Dataset visited = rows == data.size() ? Dataset{} : subset(data, visit);
  const Dataset& pool = rows == data.size() ? data : visited;
  const auto clean_pred = predict_all(mlp, pool, threads);
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < rows; ++i) {
    if (clean_pred[i] == data.labels[i]) targets.push_back(i);
  }

  for (std::size_t a = 0; a < configs.size(); ++a) {
    AttackConfig base = configs[a];
    base.validate();
    AdversarialSet set;
    set.config = base;
    set.config.seed = seed;
    set.examples.resize(targets.size());
    parallel_for(targets.size(), threads, [&](std::size_t t) {
      const std::size_t row = targets[t];
      AdversarialExample& ex = set.examples[t];
      ex.index = row;
      ex.original_prediction = clean_pred[row];
      const Eigen::VectorXd x = to_vector(data.image(row));
      AttackConfig cfg = base;
      cfg.seed = derive_seed(seed, static_cast<std::uint64_t>(base.method) * 1000003ULL + a, row);
      Eigen::VectorXd adv;
      try {
        adv = perturb(mlp, x, data.labels[row], cfg);
      } catch (const std::exception&) {
        ex.failed = true;
        adv = x;
      }
      ex.input.resize(static_cast<std::size_t>(adv.size()));
      for (Eigen::Index i = 0; i < adv.size(); ++i) ex.input[static_cast<std::size_t>(i)] = static_cast<float>(adv(i));
      ex.adversarial_prediction = argmax(forward(mlp, std::span<const float>(ex.input)).logits());
      ex.flipped = ex.adversarial_prediction != ex.original_prediction;
    });
    std::string name(attack_name(base.method));
    // Repeated methods (e.g. two eps values) get a numeric suffix.
    if (out.count(name) != 0) name += "_" + std::to_string(a);
    out.emplace(std::move(name), std::move(set));
  }
  return out;
}

void save_adversarial_set(const std::filesystem::path& stem, const AdversarialSet& set, const Dataset& source,
                          const std::string& run_id) {
  MatrixArchive archive(1, source.dim, run_id);
  archive.manifest.meta = {{"kind", "adversarial-inputs"}, {"attack", set.config.to_json()}};
  Eigen::MatrixXd row(1, static_cast<Eigen::Index>(source.dim));
  nlohmann::json book = nlohmann::json::array();
  for (const auto& ex : set.examples) {
    for (std::size_t i = 0; i < ex.input.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = ex.input[i];
    archive.append(row, source.labels[ex.index], static_cast<std::int32_t>(ex.adversarial_prediction));
    book.push_back({{"index", ex.index},
                    {"original_prediction", ex.original_prediction},
                    {"adversarial_prediction", ex.adversarial_prediction},
                    {"flipped", ex.flipped},
                    {"failed", ex.failed}});
  }
  save_archive(stem, archive);
  const nlohmann::json sidecar = {{"run_id", run_id},
                                  {"attack", set.config.to_json()},
                                  {"total_attacked", set.examples.size()},
                                  {"flipped", set.flipped_count()},
                                  {"examples", book}};
  const std::string text = sidecar.dump(1) + "\n";
  write_file(std::filesystem::path(stem.string() + ".attack.json"),
             {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

AdversarialSet load_adversarial_set(const std::filesystem::path& stem) {
  const MatrixArchive archive = load_archive(stem);
  const auto text = read_file(std::filesystem::path(stem.string() + ".attack.json"));
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestMismatch, std::string("bad attack sidecar: ") + e.what());
  }
  const auto& book = sidecar.at("examples");
  if (book.size() != archive.size()) fail(ErrorCode::ManifestMismatch, "sidecar and archive disagree on count");
  AdversarialSet set;
  set.config = AttackConfig::from_json(sidecar.at("attack"));
  for (std::size_t i = 0; i < archive.size(); ++i) {
    AdversarialExample ex;
    ex.index = book[i].at("index").get<std::size_t>();
    ex.original_prediction = book[i].at("original_prediction").get<std::size_t>();
    ex.adversarial_prediction = book[i].at("adversarial_prediction").get<std::size_t>();
    ex.flipped = book[i].at("flipped").get<bool>();
    ex.failed = book[i].value("failed", false);
    const auto begin = archive.payload.begin() + static_cast<std::ptrdiff_t>(i * archive.manifest.cols);
    ex.input.assign(begin, begin + static_cast<std::ptrdiff_t>(archive.manifest.cols));
    set.examples.push_back(std::move(ex));
  }
  return set;
}

}  // namespace quiver
