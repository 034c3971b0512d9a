#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "quiver/archive.hpp"
#include "quiver/attacks.hpp"
#include "quiver/data_io.hpp"
#include "quiver/detect.hpp"
#include "quiver/induced.hpp"
#include "quiver/mlp.hpp"

namespace quiver {

// Stream tags for derive_seed, shared by the CLI and the in-memory pipeline
// so both draw the same samples from one run seed.
namespace streams {
inline constexpr std::uint64_t stats = 0x5354;
inline constexpr std::uint64_t calibration = 0x43414c;
inline constexpr std::uint64_t attack = 0x41544b;
}  // namespace streams

/// Supplies input i of a batch as a float span that stays valid during the call.
using InputSource = std::function<std::span<const float>(std::size_t)>;
/// Receives matrices strictly in input order.
using MatrixSink = std::function<void(std::size_t, const InducedMatrix&)>;

/// Induced matrices of `count` inputs, computed in parallel chunks and handed
/// to `sink` in order. Values are rounded to float32 (the archive precision);
/// the region comes from the unrounded matrix. Returns the near-zero ratio hits.
std::size_t for_each_matrix(const Mlp& mlp, std::size_t count, const InputSource& input, std::size_t threads,
                            double ratio_threshold, const MatrixSink& sink);

InputSource dataset_rows(const Dataset& data, std::span<const std::size_t> rows);
InputSource adversarial_inputs(const AdversarialSet& set, bool flipped_only, std::vector<std::size_t>* picked = nullptr);

/// n_per_class samples per class, drawn only among training rows the model
/// classifies correctly.
SampleSet sample_correct_per_class(const Mlp& mlp, const Dataset& data, std::size_t n_per_class, std::uint64_t seed,
                                   std::size_t threads);

struct StatsBuild {
  ClassStats stats;
  std::size_t region_mismatches = 0;  // matrices whose region differs from their class
  std::size_t near_zero_hits = 0;
};

/// Builds the per-class statistics from the sampled rows; matrices are kept
/// in `archive` when given (class label = true label, predicted = region).
StatsBuild build_class_stats(const Mlp& mlp, const Dataset& data, const SampleSet& samples, std::size_t threads,
                             double ratio_threshold, StatsOptions options, MatrixArchive* archive = nullptr);

std::int32_t region_label(const ClassRegion& r) noexcept;
ClassRegion label_region(std::int32_t label) noexcept;

/// Counts every matrix of an archive on disk against `stats`.
CountTable count_archive(const std::filesystem::path& stem, const ClassStats& stats, std::vector<double> thresholds,
                         bool abs_entries);

/// Report rows for one grid triple, read off precomputed count tables.
DetectionReport evaluate_counts(const GridResult& triple, const CleanCounts& clean,
                                std::span<const AttackCounts> attacks);

struct ExperimentConfig {
  std::size_t per_class = 1000;
  std::size_t calibration = 10000;
  std::size_t test_limit = 0;  // 0 = whole test set
  std::vector<AttackConfig> attacks;
  GridSpec grid = GridSpec::defaults();
  StatsOptions stats_options;
  bool abs_entries = false;
  TrustRule rule = TrustRule::at_least;
  double ratio_threshold = 1e-12;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ExperimentResult {
  StatsBuild stats;
  GridSearchResult grid;
  DetectionReport best;  // rows for the top-ranked triple
  std::map<std::string, std::size_t> attacked;  // correctly classified samples attacked per method
  double test_accuracy = 0.0;
  std::map<std::string, double> seconds;  // wall time per stage
};

using ProgressFn = std::function<void(const std::string&)>;

/// Statistics, calibration counts, attack suite, clean counts and grid search
/// on a trained model, entirely in memory.
ExperimentResult run_detection_experiment(const Mlp& mlp, const Dataset& train, const Dataset& test,
                                          const ExperimentConfig& cfg, const ProgressFn& progress = {});

/// Union of the grid's eps and eps' values, sorted.
std::vector<double> grid_thresholds(const GridSpec& grid);

}  // namespace quiver
