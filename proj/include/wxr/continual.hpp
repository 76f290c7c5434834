#pragma once

// Elastic weight consolidation: parameter anchors, diagonal empirical Fisher,
// the accumulated quadratic penalty, and forgetting bookkeeping.

#include "wxr/tensor_archive.hpp"

#include <torch/torch.h>

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace wxr {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;
using ParamFilter = std::function<bool(const std::string&)>;

/// Default EWC scope: both generators (names starting with gA. or gB.).
bool generator_scope(const std::string& name);

struct ParamSnapshot {
  std::string task_id;
  std::map<std::string, torch::Tensor> values;
};

struct FisherDiagonal {
  std::string task_id;
  std::map<std::string, torch::Tensor> importance;
  int64_t sample_count = 0;
};

struct EwcAnchor {
  ParamSnapshot theta;
  FisherDiagonal fisher;
  double lambda = 0.0;
};

/// Detached deep copy of every parameter accepted by `scope`.
ParamSnapshot snapshot_params(const NamedTensors& params, const ParamFilter& scope,
                              const std::string& task_id);

/// Restricts `params` to `scope`; throws if nothing matches.
NamedTensors select_params(const NamedTensors& params, const ParamFilter& scope);

/// Empirical diagonal Fisher: mean over samples of the squared gradient of
/// `loss_fn(i)` with respect to each parameter, i = 0 .. n_samples-1 in order.
/// Parameters the loss does not depend on get zero importance.
FisherDiagonal estimate_fisher(const NamedTensors& params, int64_t n_samples,
                               const std::function<torch::Tensor(int64_t)>& loss_fn,
                               const std::string& task_id);

/// sum over anchors of lambda/2 * sum_i F_i (theta_i - theta*_i)^2, differentiable
/// in the live parameters. Every anchor must cover the same names and shapes as
/// `live`.
torch::Tensor ewc_penalty(const NamedTensors& live, const std::vector<EwcAnchor>& anchors);

/// Anchors persist as ewc.<task>.theta.<param> / ewc.<task>.fisher.<param>;
/// lambdas, sample counts and order are kept in the `ewc.index` text entry.
void save_anchors(const std::vector<EwcAnchor>& anchors, TensorArchive& archive);
std::vector<EwcAnchor> load_anchors(const TensorArchive& archive);

struct Measurement {
  std::string metric;
  double value = 0.0;
};

/// P_end - P_post for the same metric; positive means performance was lost.
double forgetting(const Measurement& end, const Measurement& post);

/// One λ configuration of a three-task run, in the column layout
/// F-PSNR/F-SSIM for (T1->2), (T2->3) and (T1->3).
struct ForgettingRow {
  std::string label;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::vector<std::string> task_ids;  // three entries

  // Task-1 scores measured after tasks 1, 2 and 3; task-2 after tasks 2 and 3;
  // task-3 after task 3.
  double t1_psnr_end = 0, t1_psnr_post2 = 0, t1_psnr_post3 = 0;
  double t1_ssim_end = 0, t1_ssim_post2 = 0, t1_ssim_post3 = 0;
  double t2_psnr_end = 0, t2_psnr_post3 = 0;
  double t2_ssim_end = 0, t2_ssim_post3 = 0;
  double t3_psnr_final = 0, t3_ssim_final = 0;

  double f_psnr_t1_to_2() const;
  double f_ssim_t1_to_2() const;
  double f_psnr_t2_to_3() const;
  double f_ssim_t2_to_3() const;
  double f_psnr_t1_to_3() const;
  double f_ssim_t1_to_3() const;
};

struct ForgettingReport {
  std::vector<ForgettingRow> rows;

  /// Fixed-width table with one line per configuration.
  std::string to_table() const;
  /// JSON with raw scores and every forgetting column per row.
  std::string to_json() const;
  static ForgettingReport from_json(const std::string& text);
};

}  // namespace wxr
