#include "quiver/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <tuple>

#include "quiver/archive.hpp"
#include "quiver/error.hpp"

namespace quiver {

void ClassStats::round_to_float() {
  auto round = [](Eigen::MatrixXd& m) { m = m.cast<float>().cast<double>(); };
  for (auto& m : mean) round(m);
  for (auto& m : dev) round(m);
}

ClassStats class_stats(std::size_t count, std::span<const std::size_t> classes, std::size_t class_count,
                       const MatrixSource& fetch, StatsOptions options) {
  if (classes.size() != count) fail(ErrorCode::ShapeMismatch, "class list and matrix count differ");
  if (class_count == 0) fail(ErrorCode::TooFewSamples, "no classes");
  ClassStats s;
  s.options = options;
  s.counts.assign(class_count, 0);
  for (std::size_t c : classes) {
    if (c >= class_count) fail(ErrorCode::InvalidArgument, "class index out of range");
    ++s.counts[c];
  }
  for (std::size_t j = 0; j < class_count; ++j) {
    if (s.counts[j] < 2) {
      fail(ErrorCode::TooFewSamples, "class " + std::to_string(j) + " has " + std::to_string(s.counts[j]) +
                                         " samples, need at least 2");
    }
  }

  // The mean is accumulated as an offset from each class's first sample, so
  // identical samples give that sample back exactly and S is exactly zero.
  Eigen::Index rows = 0, cols = 0;
  std::vector<Eigen::MatrixXd> first(class_count), offset(class_count);
  for (std::size_t i = 0; i < count; ++i) {
    const Eigen::MatrixXd m = fetch(i);
    if (i == 0) {
      rows = m.rows();
      cols = m.cols();
    } else if (m.rows() != rows || m.cols() != cols) {
      fail(ErrorCode::ShapeMismatch, "matrices of different shapes");
    }
    const std::size_t j = classes[i];
    if (first[j].size() == 0) {
      first[j] = m;
      offset[j] = Eigen::MatrixXd::Zero(rows, cols);
    }
    offset[j] += m - first[j];
  }
  s.mean.resize(class_count);
  for (std::size_t j = 0; j < class_count; ++j) {
    s.mean[j] = first[j] + offset[j] / static_cast<double>(s.counts[j]);
  }

  s.dev.assign(class_count, Eigen::MatrixXd::Zero(rows, cols));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = classes[i];
    s.dev[j] += (fetch(i) - s.mean[j]).cwiseAbs2();
  }
  for (std::size_t j = 0; j < class_count; ++j) {
    s.dev[j] /= static_cast<double>(s.counts[j] - 1);
    // Eigen's packet sqrt is not correctly rounded on every target.
    if (!options.variance_as_written) s.dev[j] = s.dev[j].unaryExpr([](double v) { return std::sqrt(v); });
  }
  return s;
}

ClassStats class_stats(const std::vector<std::vector<Eigen::MatrixXd>>& groups, StatsOptions options) {
  std::vector<std::size_t> classes;
  std::vector<const Eigen::MatrixXd*> flat;
  for (std::size_t j = 0; j < groups.size(); ++j) {
    for (const auto& m : groups[j]) {
      classes.push_back(j);
      flat.push_back(&m);
    }
  }
  return class_stats(flat.size(), classes, groups.size(), [&](std::size_t i) { return *flat[i]; }, options);
}

std::size_t count_reliable_entries(const Eigen::MatrixXd& m, const ClassStats& stats, std::size_t j, double eps,
                                   bool abs_entries) {
  if (j >= stats.classes()) fail(ErrorCode::InvalidArgument, "class index out of range");
  const Eigen::MatrixXd& s = stats.dev[j];
  if (m.rows() != s.rows() || m.cols() != s.cols()) fail(ErrorCode::ShapeMismatch, "matrix and stats differ in shape");
  if (abs_entries) return static_cast<std::size_t>(((s.array() <= eps) && (m.array().abs() > eps)).count());
  return static_cast<std::size_t>(((s.array() <= eps) && (m.array() > eps)).count());
}

Moments moments(std::span<const std::size_t> counts) {
  if (counts.empty()) fail(ErrorCode::EmptyCalibrationSet, "no calibration counts");
  double sum = 0.0;
  for (std::size_t c : counts) sum += static_cast<double>(c);
  Moments m;
  m.mu = sum / static_cast<double>(counts.size());
  if (counts.size() < 2) return m;
  double sq = 0.0;
  for (std::size_t c : counts) {
    const double d = static_cast<double>(c) - m.mu;
    sq += d * d;
  }
  m.sigma = std::sqrt(sq / static_cast<double>(counts.size() - 1));
  return m;
}

Moments calibrate(const ClassStats& stats, std::span<const Eigen::MatrixXd> matrices,
                  std::span<const ClassRegion> predicted, double eps, bool abs_entries, std::size_t* dropped) {
  if (matrices.size() != predicted.size()) fail(ErrorCode::ShapeMismatch, "matrix and prediction counts differ");
  std::vector<std::size_t> counts;
  counts.reserve(matrices.size());
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    if (!predicted[i]) {
      ++skipped;
      continue;
    }
    counts.push_back(count_reliable_entries(matrices[i], stats, *predicted[i], eps, abs_entries));
  }
  if (dropped != nullptr) *dropped = skipped;
  return moments(counts);
}

void CalibratedDetector::validate() const {
  if (!(eps > 0.0) || !(eps_prime > 0.0)) fail(ErrorCode::InvalidArgument, "eps and eps' must be positive");
  if (!(calibration.sigma >= 0.0)) fail(ErrorCode::InvalidArgument, "sigma must be >= 0");
  if (stats.classes() == 0) fail(ErrorCode::InvalidArgument, "detector without class statistics");
}

std::string_view to_string(TrustRule r) noexcept { return r == TrustRule::at_least ? "at-least" : "at-most"; }

TrustRule parse_trust_rule(std::string_view name) {
  if (name == "at-least" || name == "at_least") return TrustRule::at_least;
  if (name == "at-most" || name == "at_most") return TrustRule::at_most;
  fail(ErrorCode::InvalidArgument, "unknown trust rule '" + std::string(name) + "'");
}

double rejection_level(const Moments& m, double t, TrustRule rule) noexcept {
  return rule == TrustRule::at_least ? m.mu - t * m.sigma : m.mu + t * m.sigma;
}

bool trusts(double count, double threshold, TrustRule rule) noexcept {
  return rule == TrustRule::at_least ? count >= threshold : count <= threshold;
}

DetectionOutcome detect(const CalibratedDetector& detector, const InducedMatrix& m) {
  if (!m.region) fail(ErrorCode::UndefinedRegion, "matrix lies in the tie region");
  DetectionOutcome out;
  out.predicted_class = *m.region;
  out.count = count_reliable_entries(m.values, detector.stats, out.predicted_class, detector.eps_prime,
                                     detector.abs_entries);
  out.threshold = detector.threshold();
  out.decision =
      trusts(static_cast<double>(out.count), out.threshold, detector.rule) ? Decision::trust : Decision::reject;
  return out;
}

namespace {

constexpr const char* kStatsKind = "class-stats";

MatrixArchive stats_archive(const ClassStats& stats) {
  MatrixArchive a(static_cast<std::size_t>(stats.rows()), static_cast<std::size_t>(stats.cols()));
  for (std::size_t j = 0; j < stats.classes(); ++j) {
    a.append(stats.mean[j], static_cast<std::int32_t>(j), kNoLabel);
    a.append(stats.dev[j], static_cast<std::int32_t>(j), kNoLabel);
  }
  a.manifest.meta = {{"kind", kStatsKind},
                     {"layout", "mean then deviation, per class"},
                     {"counts", stats.counts},
                     {"variance_as_written", stats.options.variance_as_written}};
  return a;
}

ClassStats stats_from_archive(const MatrixArchive& a) {
  const auto& meta = a.manifest.meta;
  if (meta.value("kind", std::string{}) != kStatsKind || a.size() % 2 != 0) {
    fail(ErrorCode::ManifestMismatch, "archive does not hold class statistics");
  }
  ClassStats s;
  try {
    s.counts = meta.at("counts").get<std::vector<std::size_t>>();
    s.options.variance_as_written = meta.at("variance_as_written").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestMismatch, std::string("bad class-stats metadata: ") + e.what());
  }
  if (s.counts.size() * 2 != a.size()) fail(ErrorCode::ManifestMismatch, "class count disagrees with payload");
  for (std::size_t j = 0; j < s.counts.size(); ++j) {
    s.mean.push_back(a.matrix(2 * j));
    s.dev.push_back(a.matrix(2 * j + 1));
  }
  return s;
}

}  // namespace

void save_class_stats(const std::filesystem::path& stem, const ClassStats& stats) {
  save_archive(stem, stats_archive(stats));
}

ClassStats load_class_stats(const std::filesystem::path& stem) { return stats_from_archive(load_archive(stem)); }

void save_detector(const std::filesystem::path& stem, const CalibratedDetector& detector) {
  MatrixArchive a = stats_archive(detector.stats);
  a.manifest.meta["detector"] = {{"eps", detector.eps},
                                 {"eps_prime", detector.eps_prime},
                                 {"t", detector.t},
                                 {"mu", detector.calibration.mu},
                                 {"sigma", detector.calibration.sigma},
                                 {"abs_entries", detector.abs_entries},
                                 {"rule", to_string(detector.rule)}};
  save_archive(stem, a);
}

CalibratedDetector load_detector(const std::filesystem::path& stem) {
  const MatrixArchive a = load_archive(stem);
  CalibratedDetector d;
  d.stats = stats_from_archive(a);
  try {
    const auto& p = a.manifest.meta.at("detector");
    d.eps = p.at("eps").get<double>();
    d.eps_prime = p.at("eps_prime").get<double>();
    d.t = p.at("t").get<double>();
    d.calibration.mu = p.at("mu").get<double>();
    d.calibration.sigma = p.at("sigma").get<double>();
    d.abs_entries = p.at("abs_entries").get<bool>();
    d.rule = parse_trust_rule(p.value("rule", std::string("at-least")));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestMismatch, std::string("bad detector metadata: ") + e.what());
  }
  d.validate();
  return d;
}

CountTable::CountTable(std::vector<double> t, bool abs)
    : thresholds(std::move(t)), counts(thresholds.size()), abs_entries(abs) {}

void CountTable::add(const Eigen::MatrixXd& m, ClassRegion region, const ClassStats& stats) {
  regions.push_back(region);
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    const std::size_t n = region ? count_reliable_entries(m, stats, *region, thresholds[t], abs_entries) : 0;
    counts[t].push_back(static_cast<std::uint32_t>(n));
  }
}

std::size_t CountTable::threshold_index(double value) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] == value) return i;
  }
  fail(ErrorCode::InvalidArgument, "threshold " + std::to_string(value) + " was not counted");
}

GridSpec GridSpec::defaults() {
  GridSpec g;
  for (int i = 0; i < 10; ++i) g.eps.push_back(std::pow(10.0, -2.0 + 2.0 * i / 9.0));
  g.eps.back() = 1.0;
  g.eps_prime = g.eps;
  g.t = {1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.25, 0.5, 0.75, 1.0, 1.25};
  return g;
}

void GridSpec::validate() const {
  if (eps.empty() || eps_prime.empty() || t.empty()) fail(ErrorCode::InvalidArgument, "empty grid");
  for (double e : eps) {
    if (!(e > 0.0)) fail(ErrorCode::InvalidArgument, "eps grid values must be positive");
  }
  for (double e : eps_prime) {
    if (!(e > 0.0)) fail(ErrorCode::InvalidArgument, "eps' grid values must be positive");
  }
}

std::vector<GridResult> GridSearchResult::top(std::size_t n) const {
  return {ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(std::min(n, ranked.size()))};
}

namespace {

// Rejected samples among those of a table, at count index ti and threshold.
std::size_t rejected(const CountTable& table, std::size_t ti, double threshold, TrustRule rule) {
  std::size_t n = 0;
  const auto& c = table.counts[ti];
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!table.regions[i] || !trusts(static_cast<double>(c[i]), threshold, rule)) ++n;
  }
  return n;
}

}  // namespace

GridSearchResult grid_search(const GridSpec& grid, const CountTable& calibration, const CleanCounts& clean,
                             std::span<const AttackCounts> attacks, TrustRule rule) {
  grid.validate();
  GridSearchResult out;

  std::vector<Moments> cal(grid.eps.size());
  for (std::size_t e = 0; e < grid.eps.size(); ++e) {
    const std::size_t ti = calibration.threshold_index(grid.eps[e]);
    std::vector<std::size_t> counts;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < calibration.size(); ++i) {
      if (calibration.regions[i]) {
        counts.push_back(calibration.counts[ti][i]);
      } else {
        ++dropped;
      }
    }
    out.dropped_calibration = dropped;
    cal[e] = moments(counts);
  }

  for (std::size_t e = 0; e < grid.eps.size(); ++e) {
    for (double ep : grid.eps_prime) {
      const std::size_t clean_ti = clean.table.threshold_index(ep);
      std::vector<std::size_t> attack_ti;
      for (const auto& a : attacks) attack_ti.push_back(a.table.threshold_index(ep));
      for (double t : grid.t) {
        GridResult r;
        r.eps = grid.eps[e];
        r.eps_prime = ep;
        r.t = t;
        r.calibration = cal[e];
        r.rule = rule;
        const double thr = rejection_level(cal[e], t, rule);
        std::size_t used = 0;
        double sum = 0.0;
        for (std::size_t a = 0; a < attacks.size(); ++a) {
          const std::size_t total = attacks[a].table.size();
          if (total == 0) continue;
          sum += static_cast<double>(rejected(attacks[a].table, attack_ti[a], thr, rule)) / static_cast<double>(total);
          ++used;
        }
        r.defence = used == 0 ? 0.0 : sum / static_cast<double>(used);
        r.wrong_rejection = clean.table.size() == 0
                                ? 0.0
                                : static_cast<double>(rejected(clean.table, clean_ti, thr, rule)) /
                                      static_cast<double>(clean.table.size());
        out.ranked.push_back(r);
      }
    }
  }

  std::sort(out.ranked.begin(), out.ranked.end(), [](const GridResult& a, const GridResult& b) {
    if (a.difference() != b.difference()) return a.difference() > b.difference();
    return std::tie(a.eps, a.eps_prime, a.t) < std::tie(b.eps, b.eps_prime, b.t);
  });
  return out;
}

std::string grid_csv(const GridSearchResult& result) {
  std::ostringstream os;
  os.precision(17);
  os << "eps,eps_prime,t,defence,wrong_rejection,difference\n";
  for (const auto& r : result.ranked) {
    os << r.eps << ',' << r.eps_prime << ',' << r.t << ',' << r.defence << ',' << r.wrong_rejection << ','
       << r.difference() << '\n';
  }
  return os.str();
}

double CleanRow::accuracy_trusted() const noexcept {
  return trusted == 0 ? 0.0 : static_cast<double>(correct_trusted) / static_cast<double>(trusted);
}

double CleanRow::accuracy_whole() const noexcept {
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

bool DetectionEvaluator::trusted(const InducedMatrix& m) const {
  if (!m.region) return false;
  return detect(*detector_, m).decision == Decision::trust;
}

void DetectionEvaluator::ensure_attack(const std::string& method) {
  if (index_.count(method) != 0) return;
  index_[method] = attacks_.size();
  attacks_.push_back({method, 0, 0, 0});
}

void DetectionEvaluator::add_adversarial(const std::string& method, const InducedMatrix& m) {
  ensure_attack(method);
  AttackRow& row = attacks_[index_[method]];
  ++row.total;
  if (trusted(m)) {
    ++row.successful;
  } else {
    ++row.detected;
  }
}

void DetectionEvaluator::add_clean(const InducedMatrix& m, bool correct) {
  ++clean_.total;
  clean_.correct += correct;
  if (trusted(m)) {
    ++clean_.trusted;
    clean_.correct_trusted += correct;
  } else {
    ++clean_.wrongly_rejected;
  }
}

DetectionReport DetectionEvaluator::report() const {
  DetectionReport r;
  r.attacks = attacks_;
  r.clean = clean_;
  r.parameters = {{"eps", detector_->eps},
                  {"eps_prime", detector_->eps_prime},
                  {"t", detector_->t},
                  {"mu", detector_->calibration.mu},
                  {"sigma", detector_->calibration.sigma},
                  {"threshold", detector_->threshold()},
                  {"abs_entries", detector_->abs_entries},
                  {"rule", to_string(detector_->rule)},
                  {"variance_as_written", detector_->stats.options.variance_as_written}};
  return r;
}

std::size_t ood_count(const Eigen::MatrixXd& m, const ClassStats& stats, std::size_t j, double delta) {
  if (j >= stats.classes()) fail(ErrorCode::InvalidArgument, "class index out of range");
  if (!(delta > 0.0)) fail(ErrorCode::InvalidArgument, "delta must be positive");
  const Eigen::MatrixXd& mean = stats.mean[j];
  const Eigen::MatrixXd& dev = stats.dev[j];
  if (m.rows() != mean.rows() || m.cols() != mean.cols()) fail(ErrorCode::ShapeMismatch, "shape mismatch");
  std::size_t n = 0;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const double width = dev(r, c) == 0.0 ? 0.0 : delta * dev(r, c);
      n += (mean(r, c) - width <= m(r, c)) && (m(r, c) <= mean(r, c) + width);
    }
  }
  return n;
}

Decision ood_detect(const Moments& moments, double t, std::size_t count) noexcept {
  const double n = static_cast<double>(count);
  const bool inside = moments.mu - t * moments.sigma <= n && n <= moments.mu + t * moments.sigma;
  return inside ? Decision::trust : Decision::reject;
}

}  // namespace quiver
