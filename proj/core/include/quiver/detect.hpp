#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "quiver/induced.hpp"

namespace quiver {

struct StatsOptions {
  // Keep the deviation matrix as sum of squares / (n-1), without the root.
  bool variance_as_written = false;
};

/// Per-class mean and deviation matrices of the induced matrices of
/// correctly classified training samples.
struct ClassStats {
  std::vector<Eigen::MatrixXd> mean;
  std::vector<Eigen::MatrixXd> dev;
  std::vector<std::size_t> counts;
  StatsOptions options;

  std::size_t classes() const noexcept { return mean.size(); }
  Eigen::Index rows() const noexcept { return mean.empty() ? 0 : mean.front().rows(); }
  Eigen::Index cols() const noexcept { return mean.empty() ? 0 : mean.front().cols(); }
  void round_to_float();
};

/// Fetches matrix i of a set; lets statistics run over archives on disk.
using MatrixSource = std::function<Eigen::MatrixXd(std::size_t)>;

/// Two passes (sum, then squared deviations) in sample order. classes[i] is
/// the class of matrix i. Throws TooFewSamples if a class has < 2 members.
ClassStats class_stats(std::size_t count, std::span<const std::size_t> classes, std::size_t class_count,
                       const MatrixSource& fetch, StatsOptions options = {});
ClassStats class_stats(const std::vector<std::vector<Eigen::MatrixXd>>& groups, StatsOptions options = {});

/// #{(i1,i2) : S^j <= eps and M > eps}; with abs_entries the second test is |M| > eps.
std::size_t count_reliable_entries(const Eigen::MatrixXd& m, const ClassStats& stats, std::size_t j, double eps,
                                   bool abs_entries = false);

struct Moments {
  double mu = 0.0;
  double sigma = 0.0;
};

/// Mean and (n-1) standard deviation; sigma is 0 for a single value.
/// Throws EmptyCalibrationSet on empty input.
Moments moments(std::span<const std::size_t> counts);

/// Pools the counts of every calibration matrix, each evaluated against the
/// statistics of its predicted class. Matrices in the tie region are skipped
/// and reported through `dropped`.
Moments calibrate(const ClassStats& stats, std::span<const Eigen::MatrixXd> matrices,
                  std::span<const ClassRegion> predicted, double eps, bool abs_entries = false,
                  std::size_t* dropped = nullptr);

/// at_least is the default rule: trust iff n >= mu - t sigma. at_most
/// mirrors it (trust iff n <= mu + t sigma) for inputs whose attacks add
/// reliable entries rather than remove them.
enum class TrustRule { at_least, at_most };
std::string_view to_string(TrustRule r) noexcept;
TrustRule parse_trust_rule(std::string_view name);

double rejection_level(const Moments& m, double t, TrustRule rule) noexcept;

struct CalibratedDetector {
  double eps = 0.0;
  double eps_prime = 0.0;
  double t = 0.0;
  Moments calibration;
  bool abs_entries = false;
  TrustRule rule = TrustRule::at_least;
  ClassStats stats;

  double threshold() const noexcept { return rejection_level(calibration, t, rule); }
  void validate() const;
};

enum class Decision { trust, reject };

struct DetectionOutcome {
  Decision decision = Decision::reject;
  std::size_t count = 0;
  double threshold = 0.0;
  std::size_t predicted_class = 0;
};

/// Trust iff the eps'-count reaches mu - t*sigma (inclusive), or stays at or
/// below mu + t*sigma under TrustRule::at_most.
/// Throws UndefinedRegion when the matrix lies in the tie region.
DetectionOutcome detect(const CalibratedDetector& detector, const InducedMatrix& m);
bool trusts(double count, double threshold, TrustRule rule = TrustRule::at_least) noexcept;

/// Stores the statistics as `<stem>` (means then deviations, class by class)
/// and the detector parameters in the manifest metadata.
void save_class_stats(const std::filesystem::path& stem, const ClassStats& stats);
ClassStats load_class_stats(const std::filesystem::path& stem);
void save_detector(const std::filesystem::path& stem, const CalibratedDetector& detector);
CalibratedDetector load_detector(const std::filesystem::path& stem);

// Grid search works on precomputed counts: for every sample and every
// threshold of a grid, the reliable-entry count against its predicted class.
// Matrices can be discarded once counted.
struct CountTable {
  std::vector<double> thresholds;
  std::vector<std::vector<std::uint32_t>> counts;  // [threshold][sample]
  std::vector<ClassRegion> regions;
  bool abs_entries = false;

  CountTable() = default;
  CountTable(std::vector<double> thresholds, bool abs_entries);
  void add(const Eigen::MatrixXd& m, ClassRegion region, const ClassStats& stats);
  std::size_t size() const noexcept { return regions.size(); }
  std::size_t threshold_index(double value) const;
};

/// Counts of one clean test set: `correct[i]` says whether the model got
/// sample i right.
struct CleanCounts {
  CountTable table;
  std::vector<bool> correct;
};

/// Counts of the prediction-flipping adversarial inputs of one attack.
struct AttackCounts {
  std::string method;
  CountTable table;
};

struct GridSpec {
  std::vector<double> eps;
  std::vector<double> eps_prime;
  std::vector<double> t;

  static GridSpec defaults();
  void validate() const;
};

struct GridResult {
  double eps = 0.0;
  double eps_prime = 0.0;
  double t = 0.0;
  Moments calibration;
  TrustRule rule = TrustRule::at_least;
  double defence = 0.0;
  double wrong_rejection = 0.0;
  double difference() const noexcept { return defence - wrong_rejection; }
};

struct GridSearchResult {
  std::vector<GridResult> ranked;  // best first
  std::size_t dropped_calibration = 0;

  std::vector<GridResult> top(std::size_t n) const;
};

/// Evaluates every (eps, eps', t) triple. Defence is the mean over attacks
/// with a nonzero total of detected/total; wrong rejection is the rejected
/// fraction of the clean set. Ranked by defence - wrong_rejection, ties by
/// (eps, eps', t) ascending.
GridSearchResult grid_search(const GridSpec& grid, const CountTable& calibration, const CleanCounts& clean,
                             std::span<const AttackCounts> attacks, TrustRule rule = TrustRule::at_least);

std::string grid_csv(const GridSearchResult& result);

struct AttackRow {
  std::string method;
  std::size_t detected = 0;
  std::size_t successful = 0;
  std::size_t total = 0;
};

struct CleanRow {
  std::size_t trusted = 0;
  std::size_t wrongly_rejected = 0;
  std::size_t total = 0;
  std::size_t correct_trusted = 0;
  std::size_t correct = 0;

  double accuracy_trusted() const noexcept;
  double accuracy_whole() const noexcept;
};

struct DetectionReport {
  std::vector<AttackRow> attacks;
  CleanRow clean;
  nlohmann::json parameters = nlohmann::json::object();
};

/// Accumulates Algorithm-1 decisions into report rows. Inputs in the tie
/// region cannot be trusted and are counted as rejected.
class DetectionEvaluator {
 public:
  explicit DetectionEvaluator(const CalibratedDetector& detector) : detector_(&detector) {}

  /// Only prediction-flipping adversarial inputs should be passed here.
  void add_adversarial(const std::string& method, const InducedMatrix& m);
  void add_clean(const InducedMatrix& m, bool correct);
  void ensure_attack(const std::string& method);
  DetectionReport report() const;

 private:
  bool trusted(const InducedMatrix& m) const;

  const CalibratedDetector* detector_;
  std::vector<AttackRow> attacks_;
  std::map<std::string, std::size_t> index_;
  CleanRow clean_;
};

/// #{(i1,i2) : M^j - delta S^j <= M <= M^j + delta S^j}. A zero deviation
/// entry admits only exact equality, also for infinite delta.
std::size_t ood_count(const Eigen::MatrixXd& m, const ClassStats& stats, std::size_t j, double delta);
/// Two-sided band: trust iff mu - t sigma <= n <= mu + t sigma.
Decision ood_detect(const Moments& moments, double t, std::size_t count) noexcept;

}  // namespace quiver
