#pragma once

#include "wxr/config.hpp"
#include "wxr/continual.hpp"
#include "wxr/data.hpp"
#include "wxr/networks.hpp"
#include "wxr/objectives.hpp"
#include "wxr/quality_metrics.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace wxr {

/// Cosine decay from `start` at t = 0 to `end` at t = total; t > total clamps to `end`.
double lr_at(int64_t t, int64_t total, double start, double end);

/// Raised when training produces a non-finite loss; carries the dump location.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::filesystem::path checkpoint)
      : std::runtime_error(what), checkpoint_(std::move(checkpoint)) {}
  const std::filesystem::path& checkpoint() const { return checkpoint_; }

 private:
  std::filesystem::path checkpoint_;
};

/// History of generated images shown to the discriminators (size 0 disables it).
class ImagePool {
 public:
  explicit ImagePool(int64_t capacity = 50) : capacity_(capacity) {}

  /// While filling, stores and returns the image; afterwards returns either the
  /// image itself or (p = 0.5) a stored one that the new image replaces.
  torch::Tensor query(const torch::Tensor& image, Rng& rng);

  const std::vector<torch::Tensor>& images() const { return images_; }
  void restore(std::vector<torch::Tensor> images) { images_ = std::move(images); }

 private:
  int64_t capacity_;
  std::vector<torch::Tensor> images_;
};

struct StepRecord {
  std::string task_id;
  int64_t iteration = 0;
  double lr = 0.0;
  LossBreakdown generator;
  double ewc = 0.0;
  double generator_total = 0.0;  // task objective + EWC penalty
  double disc_a = 0.0;
  double disc_b = 0.0;

  /// One line of the training log (JSON object, no trailing newline).
  std::string to_json() const;
};

/// One restoration task: unpaired training corpus plus a paired test split.
struct TaskSpec {
  std::string id;
  UnpairedCorpus corpus;
  std::vector<PairedSample> test;
  int64_t iterations = 0;
};

/// Degraded domain from one scene set, clean domain from a disjoint one, and
/// paired held-out pairs from a third.
TaskSpec make_synthetic_task(const std::string& id, DegradationKind kind, int64_t train_count,
                             int64_t test_count, int64_t size, int64_t iterations, uint64_t seed);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  /// One generator update (with the EWC penalty when anchors are active), then
  /// one update of D_A and one of D_B.
  StepRecord train_step(const TrainingPair& pair);

  /// Runs `iterations` steps on `corpus`, drawing pairs with the data rng.
  void train(const UnpairedCorpus& corpus, int64_t iterations,
             const std::function<void(const StepRecord&)>& on_step = {});

  /// Starts a new task: resets the schedule position and the optimizers.
  void begin_task(const std::string& task_id, int64_t iterations);

  /// Generator objective (no EWC) for one unpaired pair; D weights are only read.
  LossBreakdown generator_objective(const torch::Tensor& real_a, const torch::Tensor& real_b, Rng& rng);

  /// Fisher + snapshot of the scoped parameters, appended as an anchor.
  void consolidate(const std::string& task_id, const UnpairedCorpus& corpus, double lambda);

  /// Restores every degraded image with G_A and scores it against the clean one.
  MetricReport evaluate(const std::vector<PairedSample>& test);

  void save_checkpoint(const std::filesystem::path& path);
  void load_checkpoint(const std::filesystem::path& path);

  CycleModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t iteration() const { return iteration_; }
  const std::string& task_id() const { return task_id_; }
  const std::vector<EwcAnchor>& anchors() const { return anchors_; }
  std::vector<EwcAnchor>& anchors() { return anchors_; }
  NamedTensors scoped_parameters();

 private:
  void make_optimizers();
  torch::Tensor contrastive_half(const GeneratorTaps& keys, const GeneratorTaps& queries, Rng& rng);

  TrainConfig cfg_;
  CycleModel model_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_da_, opt_db_;
  std::optional<PerceptualExtractor> perceptual_;
  ImagePool pool_a_, pool_b_;
  Rng rng_;
  Rng data_rng_;
  int64_t iteration_ = 0;
  int64_t task_iterations_ = 0;
  std::string task_id_ = "task1";
  std::vector<EwcAnchor> anchors_;
};

/// Restores one image with a generator: reflect-pads to a multiple of 4,
/// translates, crops back.
Image restore_image(Generator& generator, const Image& degraded);

struct ContinualStage {
  std::string after_task;
  std::vector<MetricReport> reports;  // one per task seen so far
};

struct ContinualResult {
  ForgettingRow row;
  std::vector<ContinualStage> stages;
};

/// Trains the tasks in order; after task i (i < last) estimates the Fisher and
/// anchors with lambdas[i]. Every seen task is evaluated after each task.
ContinualResult run_continual(std::vector<TaskSpec>& tasks, const TrainConfig& cfg,
                              const std::vector<double>& lambdas, const std::string& label,
                              const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace wxr
