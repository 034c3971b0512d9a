#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "quiver/data_io.hpp"
#include "quiver/mlp.hpp"

namespace quiver {

enum class AttackMethod { gn, fgsm, rfgsm, ffgsm, pgd, pgd_l2, mifgsm, deepfool };

/// Report name, e.g. "FGSM", "PGDL2", "DeepFool".
std::string_view attack_name(AttackMethod m) noexcept;
/// Accepts report names and lowercase tags ("pgd_l2", "deepfool", ...).
AttackMethod parse_attack(std::string_view name);

struct AttackConfig {
  AttackMethod method = AttackMethod::fgsm;
  double eps = 8.0 / 255.0;  // L-inf budget; L2 budget for pgd_l2; noise std for gn
  double alpha = 2.0 / 255.0;
  std::size_t steps = 10;
  double decay = 1.0;
  double overshoot = 0.02;
  bool random_start = true;
  std::uint64_t seed = 0;

  /// torchattacks-style defaults for the method.
  static AttackConfig defaults(AttackMethod m);
  void validate() const;
  bool is_l2() const noexcept { return method == AttackMethod::pgd_l2; }

  nlohmann::json to_json() const;
  /// Missing keys fall back to defaults(method).
  static AttackConfig from_json(const nlohmann::json& j);
};

// Every attack takes a clean input in [0,1]^d and returns x' in [0,1]^d.
// Randomised attacks draw from an RNG seeded with cfg.seed, so they are pure
// functions of their arguments.

Eigen::VectorXd gn(const Eigen::VectorXd& x, const AttackConfig& cfg);
Eigen::VectorXd fgsm(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg);
Eigen::VectorXd rfgsm(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg);
Eigen::VectorXd ffgsm(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg);
Eigen::VectorXd pgd(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg);
Eigen::VectorXd pgd_l2(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg);
Eigen::VectorXd mifgsm(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg);
/// Returns x unchanged when the model already mispredicts `label`.
Eigen::VectorXd deepfool(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg);

Eigen::VectorXd perturb(const Mlp& mlp, const Eigen::VectorXd& x, std::size_t label, const AttackConfig& cfg);

struct AdversarialExample {
  std::size_t index = 0;  // row in the source dataset
  std::vector<float> input;
  std::size_t original_prediction = 0;
  std::size_t adversarial_prediction = 0;
  bool flipped = false;
  bool failed = false;  // the attack threw; input holds the clean sample
};

struct AdversarialSet {
  AttackConfig config;
  std::vector<AdversarialExample> examples;

  std::size_t flipped_count() const noexcept;
};

/// Attacks every sample the model classifies correctly. Each (attack, sample)
/// pair gets its own seed derived from `seed`, so results do not depend on the
/// thread count. `limit` caps the number of dataset rows visited (0 = all).
std::map<std::string, AdversarialSet> run_attack_suite(const Mlp& mlp, const Dataset& data,
                                                       std::span<const AttackConfig> configs, std::uint64_t seed,
                                                       std::size_t threads = 1, std::size_t limit = 0);

/// Writes `<stem>` as a matrix archive of 1 x d inputs (class label = true
/// label, predicted label = adversarial prediction) and `<stem>.attack.json`
/// with the per-example bookkeeping.
void save_adversarial_set(const std::filesystem::path& stem, const AdversarialSet& set, const Dataset& source,
                          const std::string& run_id);
AdversarialSet load_adversarial_set(const std::filesystem::path& stem);

}  // namespace quiver
