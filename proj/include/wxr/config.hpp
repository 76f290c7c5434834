#pragma once

// Run configuration: a JSON document whose keys mirror the struct fields
// below, layered as profile defaults <- config file <- dotted overrides.

#include "wxr/data.hpp"
#include "wxr/networks.hpp"
#include "wxr/objectives.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace wxr {

/// Configuration problems: parse errors, unknown keys, invalid values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Profile { desk, paper };
Profile profile_from_string(const std::string& s);

struct EwcConfig {
  std::vector<double> lambdas{700.0, 800.0};  // lambda applied after task 1, task 2, ...
  int64_t fisher_samples = 200;
  std::string scope = "generators";  // "generators" | "all"
  uint64_t fisher_seed = 17;
};

struct DataConfig {
  std::string domain_a;  // degraded images; empty -> synthetic
  std::string domain_b;  // clean images
  std::string synthetic_kind = "haze";
  int64_t synthetic_count = 24;
  std::string eval_manifest;  // optional paired set for held-out evaluation
  int64_t eval_count = 8;     // synthetic held-out pairs when no manifest is given
};

struct ContinualConfig {
  std::vector<std::string> tasks{"haze", "snow", "rain"};
  int64_t iterations_per_task = 150;
  std::vector<double> sweep;  // each value used as lambda1 = lambda2; empty -> ewc.lambdas
};

struct TrainConfig {
  int64_t iterations = 2000;
  double lr_start = 1e-4;
  double lr_end = 5e-5;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int64_t batch_size = 1;
  int64_t crop = 64;
  int64_t pool_size = 50;
  uint64_t seed = 1;
  uint64_t data_seed = 2;
  int64_t log_every = 1;
  int64_t checkpoint_every = 1000;
  int64_t threads = 1;
  AdversarialForm adversarial = AdversarialForm::least_squares;

  LossWeights weights{};
  double tau = 0.07;
  int64_t n_locations = 64;
  std::string perceptual_weights;  // empty -> perceptual term disabled

  ModelConfig model{};
  EwcConfig ewc{};
  DataConfig data{};
  ContinualConfig continual{};
  double min_scale = 0.8;
  double max_scale = 1.0;

  AugmentConfig augment() const { return {crop, min_scale, max_scale}; }
  /// Throws ConfigError on violated invariants.
  void validate() const;
};

/// Default document for a profile (every valid key present).
nlohmann::json profile_defaults(Profile p);

/// Dotted names of every valid key, e.g. "train.iterations".
std::vector<std::string> valid_keys();

/// Layers `file` (may be empty) and `overrides` ("a.b=value") over the profile
/// defaults. Unknown keys are rejected with the full valid-key list; parse
/// errors report the line number.
nlohmann::json load_config_document(Profile profile, const std::filesystem::path& file,
                                    const std::vector<std::string>& overrides);

TrainConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const TrainConfig& cfg);

}  // namespace wxr
