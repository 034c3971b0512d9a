#include "quiver/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <numeric>

#include "quiver/error.hpp"
#include "quiver/parallel.hpp"

namespace quiver {

namespace {

constexpr std::size_t kChunk = 256;

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace

std::size_t for_each_matrix(const Mlp& mlp, std::size_t count, const InputSource& input, std::size_t threads,
                            double ratio_threshold, const MatrixSink& sink) {
  std::vector<InducedMatrix> chunk;
  std::vector<std::size_t> hits;
  std::size_t total_hits = 0;
  for (std::size_t begin = 0; begin < count; begin += kChunk) {
    const std::size_t n = std::min(kChunk, count - begin);
    chunk.assign(n, {});
    hits.assign(n, 0);
    parallel_for(n, threads, [&](std::size_t i) {
      RatioPolicy policy;
      policy.zero_threshold = ratio_threshold;
      InducedMatrix m = induced_matrix(mlp, forward(mlp, input(begin + i)), policy);
      m.values = m.values.cast<float>().cast<double>();
      hits[i] = policy.near_zero_hits;
      chunk[i] = std::move(m);
    });
    for (std::size_t i = 0; i < n; ++i) {
      total_hits += hits[i];
      sink(begin + i, chunk[i]);
    }
  }
  return total_hits;
}

InputSource dataset_rows(const Dataset& data, std::span<const std::size_t> rows) {
  return [&data, rows](std::size_t i) { return data.image(rows[i]); };
}

InputSource adversarial_inputs(const AdversarialSet& set, bool flipped_only, std::vector<std::size_t>* picked) {
  auto order = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t i = 0; i < set.examples.size(); ++i) {
    if (!flipped_only || set.examples[i].flipped) order->push_back(i);
  }
  if (picked != nullptr) *picked = *order;
  return [&set, order](std::size_t i) { return std::span<const float>(set.examples[(*order)[i]].input); };
}

SampleSet sample_correct_per_class(const Mlp& mlp, const Dataset& data, std::size_t n_per_class, std::uint64_t seed,
                                   std::size_t threads) {
  const auto pred = predict_all(mlp, data, threads);
  std::vector<std::size_t> rows;
  Dataset labels_only;
  labels_only.classes = data.classes;
  labels_only.split = data.split;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (pred[i] == data.labels[i]) {
      rows.push_back(i);
      labels_only.labels.push_back(data.labels[i]);
    }
  }
  SampleSet s = sample_per_class(labels_only, n_per_class, seed);
  for (auto& g : s.groups) {
    for (auto& idx : g) idx = rows[idx];
  }
  return s;
}

std::int32_t region_label(const ClassRegion& r) noexcept { return r ? static_cast<std::int32_t>(*r) : kNoLabel; }

ClassRegion label_region(std::int32_t label) noexcept {
  if (label < 0) return std::nullopt;
  return static_cast<std::size_t>(label);
}

StatsBuild build_class_stats(const Mlp& mlp, const Dataset& data, const SampleSet& samples, std::size_t threads,
                             double ratio_threshold, StatsOptions options, MatrixArchive* archive) {
  const std::vector<std::size_t> rows = samples.flatten();
  std::vector<std::size_t> classes;
  for (std::size_t j = 0; j < samples.groups.size(); ++j) classes.insert(classes.end(), samples.groups[j].size(), j);

  MatrixArchive local(mlp.output_dim(), mlp.input_dim() + 1);
  MatrixArchive& store = archive != nullptr ? *archive : local;
  store = MatrixArchive(mlp.output_dim(), mlp.input_dim() + 1, store.manifest.run_id);
  store.manifest.meta = {{"kind", "class-stats-inputs"}, {"seed", samples.seed}};
  StatsBuild out;
  out.near_zero_hits =
      for_each_matrix(mlp, rows.size(), dataset_rows(data, rows), threads, ratio_threshold,
                      [&](std::size_t i, const InducedMatrix& m) {
                        if (m.region != ClassRegion(classes[i])) ++out.region_mismatches;
                        store.append(m.values, static_cast<std::int32_t>(classes[i]), region_label(m.region));
                      });
  out.stats = class_stats(rows.size(), classes, samples.groups.size(),
                          [&](std::size_t i) { return store.matrix(i); }, options);
  out.stats.round_to_float();
  return out;
}

CountTable count_archive(const std::filesystem::path& stem, const ClassStats& stats, std::vector<double> thresholds,
                         bool abs_entries) {
  ArchiveReader reader(stem);
  CountTable table(std::move(thresholds), abs_entries);
  for (std::size_t i = 0; i < reader.size(); ++i) {
    table.add(reader.matrix(i), label_region(reader.manifest().predicted_labels[i]), stats);
  }
  return table;
}

DetectionReport evaluate_counts(const GridResult& triple, const CleanCounts& clean,
                                std::span<const AttackCounts> attacks) {
  const double thr = rejection_level(triple.calibration, triple.t, triple.rule);
  auto trusted = [&](const CountTable& t, std::size_t ti, std::size_t i) {
    return t.regions[i].has_value() && trusts(static_cast<double>(t.counts[ti][i]), thr, triple.rule);
  };
  DetectionReport r;
  for (const auto& a : attacks) {
    const std::size_t ti = a.table.threshold_index(triple.eps_prime);
    AttackRow row{a.method, 0, 0, a.table.size()};
    for (std::size_t i = 0; i < a.table.size(); ++i) (trusted(a.table, ti, i) ? row.successful : row.detected)++;
    r.attacks.push_back(row);
  }
  const std::size_t ti = clean.table.threshold_index(triple.eps_prime);
  for (std::size_t i = 0; i < clean.table.size(); ++i) {
    const bool ok = clean.correct.at(i);
    ++r.clean.total;
    r.clean.correct += ok;
    if (trusted(clean.table, ti, i)) {
      ++r.clean.trusted;
      r.clean.correct_trusted += ok;
    } else {
      ++r.clean.wrongly_rejected;
    }
  }
  r.parameters = {{"eps", triple.eps},
                  {"eps_prime", triple.eps_prime},
                  {"t", triple.t},
                  {"mu", triple.calibration.mu},
                  {"sigma", triple.calibration.sigma},
                  {"threshold", thr},
                  {"rule", to_string(triple.rule)}};
  return r;
}

std::vector<double> grid_thresholds(const GridSpec& grid) {
  std::vector<double> v = grid.eps;
  v.insert(v.end(), grid.eps_prime.begin(), grid.eps_prime.end());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

ExperimentResult run_detection_experiment(const Mlp& mlp, const Dataset& train, const Dataset& test,
                                          const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.grid.validate();
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  ExperimentResult out;
  Stopwatch clock;
  const std::vector<double> thresholds = grid_thresholds(cfg.grid);

  const SampleSet per_class =
      sample_correct_per_class(mlp, train, cfg.per_class, derive_seed(cfg.seed, streams::stats), cfg.threads);
  out.stats = build_class_stats(mlp, train, per_class, cfg.threads, cfg.ratio_threshold, cfg.stats_options);
  const ClassStats& stats = out.stats.stats;
  out.seconds["stats"] = clock.lap();
  say("class statistics: " + std::to_string(per_class.total()) + " matrices, " +
      std::to_string(out.stats.region_mismatches) + " region mismatches");

  const SampleSet cal = sample_uniform(train, cfg.calibration, derive_seed(cfg.seed, streams::calibration));
  const std::vector<std::size_t> cal_rows = cal.flatten();
  CountTable cal_table(thresholds, cfg.abs_entries);
  for_each_matrix(mlp, cal_rows.size(), dataset_rows(train, cal_rows), cfg.threads, cfg.ratio_threshold,
                  [&](std::size_t, const InducedMatrix& m) { cal_table.add(m.values, m.region, stats); });
  out.seconds["calibration"] = clock.lap();
  say("calibration counts: " + std::to_string(cal_table.size()));

  const std::size_t n_test = cfg.test_limit == 0 ? test.size() : std::min(cfg.test_limit, test.size());
  std::vector<std::size_t> test_rows(n_test);
  std::iota(test_rows.begin(), test_rows.end(), std::size_t{0});
  CleanCounts clean{CountTable(thresholds, cfg.abs_entries), {}};
  std::size_t correct = 0;
  for_each_matrix(mlp, n_test, dataset_rows(test, test_rows), cfg.threads, cfg.ratio_threshold,
                  [&](std::size_t i, const InducedMatrix& m) {
                    clean.table.add(m.values, m.region, stats);
                    const bool ok = m.region == ClassRegion(test.labels[i]);
                    clean.correct.push_back(ok);
                    correct += ok;
                  });
  out.test_accuracy = n_test == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n_test);
  out.seconds["clean"] = clock.lap();
  say("clean test counts: " + std::to_string(n_test));

  const auto suite =
      run_attack_suite(mlp, test, cfg.attacks, derive_seed(cfg.seed, streams::attack), cfg.threads, n_test);
  out.seconds["attacks"] = clock.lap();
  std::vector<AttackCounts> attack_counts;
  for (const auto& cfg_a : cfg.attacks) {
    // Keep the configured order; names may carry a suffix for repeats.
    for (const auto& [name, set] : suite) {
      if (set.config.method != cfg_a.method || set.config.eps != cfg_a.eps) continue;
      if (std::any_of(attack_counts.begin(), attack_counts.end(), [&](const AttackCounts& a) { return a.method == name; })) {
        continue;
      }
      AttackCounts ac{name, CountTable(thresholds, cfg.abs_entries)};
      std::vector<std::size_t> picked;
      const InputSource src = adversarial_inputs(set, true, &picked);
      for_each_matrix(mlp, picked.size(), src, cfg.threads, cfg.ratio_threshold,
                      [&](std::size_t, const InducedMatrix& m) { ac.table.add(m.values, m.region, stats); });
      out.attacked[name] = set.examples.size();
      say(name + ": " + std::to_string(picked.size()) + " flipped of " + std::to_string(set.examples.size()));
      attack_counts.push_back(std::move(ac));
      break;
    }
  }
  out.seconds["adversarial_counts"] = clock.lap();

  out.grid = grid_search(cfg.grid, cal_table, clean, attack_counts, cfg.rule);
  if (!out.grid.ranked.empty()) out.best = evaluate_counts(out.grid.ranked.front(), clean, attack_counts);
  out.seconds["grid"] = clock.lap();
  return out;
}

}  // namespace quiver
