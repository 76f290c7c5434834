#include "wxr/continual.hpp"

#include <json.hpp>

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace wxr {

using json = nlohmann::json;

bool generator_scope(const std::string& name) {
  return name.rfind("gA.", 0) == 0 || name.rfind("gB.", 0) == 0;
}

NamedTensors select_params(const NamedTensors& params, const ParamFilter& scope) {
  NamedTensors out;
  for (const auto& [name, t] : params) {
    if (!scope || scope(name)) out.emplace_back(name, t);
  }
  if (out.empty()) throw std::invalid_argument("EWC scope matches zero parameters");
  return out;
}

ParamSnapshot snapshot_params(const NamedTensors& params, const ParamFilter& scope,
                              const std::string& task_id) {
  ParamSnapshot snap;
  snap.task_id = task_id;
  for (const auto& [name, t] : select_params(params, scope)) {
    snap.values.emplace(name, t.detach().clone());
  }
  return snap;
}

FisherDiagonal estimate_fisher(const NamedTensors& params, int64_t n_samples,
                               const std::function<torch::Tensor(int64_t)>& loss_fn,
                               const std::string& task_id) {
  if (n_samples <= 0) throw std::invalid_argument("estimate_fisher: n_samples must be positive");
  if (params.empty()) throw std::invalid_argument("estimate_fisher: no parameters given");
  std::vector<torch::Tensor> inputs;
  std::vector<torch::Tensor> acc;
  for (const auto& [name, t] : params) {
    inputs.push_back(t);
    acc.push_back(torch::zeros_like(t).detach());
  }
  for (int64_t i = 0; i < n_samples; ++i) {
    auto loss = loss_fn(i);
    auto grads = torch::autograd::grad({loss}, inputs, /*grad_outputs=*/{}, /*retain_graph=*/false,
                                       /*create_graph=*/false, /*allow_unused=*/true);
    torch::NoGradGuard no_grad;
    for (size_t k = 0; k < grads.size(); ++k) {
      if (!grads[k].defined()) continue;
      if (!torch::isfinite(grads[k]).all().item<bool>()) {
        throw std::runtime_error("estimate_fisher: non-finite gradient for '" + params[k].first +
                                 "' at sample " + std::to_string(i));
      }
      acc[k].add_(grads[k].square());
    }
  }
  FisherDiagonal f;
  f.task_id = task_id;
  f.sample_count = n_samples;
  for (size_t k = 0; k < params.size(); ++k) {
    f.importance.emplace(params[k].first, acc[k] / static_cast<double>(n_samples));
  }
  return f;
}

torch::Tensor ewc_penalty(const NamedTensors& live, const std::vector<EwcAnchor>& anchors) {
  torch::Tensor total;
  for (const auto& anchor : anchors) {
    if (anchor.lambda < 0) throw std::invalid_argument("ewc_penalty: lambda must be nonnegative");
    if (anchor.theta.values.size() != live.size() || anchor.fisher.importance.size() != live.size()) {
      throw std::invalid_argument("ewc_penalty: anchor '" + anchor.theta.task_id +
                                  "' covers a different parameter set than the live model");
    }
    torch::Tensor sum;
    for (const auto& [name, theta] : live) {
      auto ts = anchor.theta.values.find(name);
      auto fs = anchor.fisher.importance.find(name);
      if (ts == anchor.theta.values.end() || fs == anchor.fisher.importance.end()) {
        throw std::invalid_argument("ewc_penalty: anchor '" + anchor.theta.task_id +
                                    "' has no entry for '" + name + "'");
      }
      if (ts->second.sizes() != theta.sizes() || fs->second.sizes() != theta.sizes()) {
        throw std::invalid_argument("ewc_penalty: shape mismatch for '" + name + "'");
      }
      // (lambda/2 * F) * d * d keeps exactly representable cases exact.
      const auto delta = theta - ts->second;
      auto term = ((fs->second * (anchor.lambda / 2.0)) * delta * delta).sum();
      sum = sum.defined() ? sum + term : term;
    }
    total = total.defined() ? total + sum : sum;
  }
  if (!total.defined()) {
    return live.empty() ? torch::zeros({}) : torch::zeros({}, live.front().second.options());
  }
  return total;
}

void save_anchors(const std::vector<EwcAnchor>& anchors, TensorArchive& archive) {
  json index = json::array();
  for (const auto& a : anchors) {
    if (a.theta.task_id.find('.') != std::string::npos) {
      throw std::invalid_argument("EWC task id may not contain '.': " + a.theta.task_id);
    }
    const auto base = "ewc." + a.theta.task_id;
    for (const auto& [name, t] : a.theta.values) archive.put(base + ".theta." + name, t);
    for (const auto& [name, t] : a.fisher.importance) archive.put(base + ".fisher." + name, t);
    index.push_back({{"task_id", a.theta.task_id},
                     {"lambda", a.lambda},
                     {"sample_count", a.fisher.sample_count}});
  }
  archive.put_text("ewc.index", index.dump());
}

std::vector<EwcAnchor> load_anchors(const TensorArchive& archive) {
  std::vector<EwcAnchor> out;
  if (!archive.contains("ewc.index")) return out;
  for (const auto& entry : json::parse(archive.get_text("ewc.index"))) {
    EwcAnchor a;
    const auto id = entry.at("task_id").get<std::string>();
    a.lambda = entry.at("lambda").get<double>();
    a.theta.task_id = id;
    a.fisher.task_id = id;
    a.fisher.sample_count = entry.at("sample_count").get<int64_t>();
    a.theta.values = archive.with_prefix("ewc." + id + ".theta.");
    a.fisher.importance = archive.with_prefix("ewc." + id + ".fisher.");
    out.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------

double forgetting(const Measurement& end, const Measurement& post) {
  if (end.metric != post.metric) {
    throw std::invalid_argument("forgetting: metric labels differ ('" + end.metric + "' vs '" +
                                post.metric + "')");
  }
  return end.value - post.value;
}

double ForgettingRow::f_psnr_t1_to_2() const {
  return forgetting({"psnr", t1_psnr_end}, {"psnr", t1_psnr_post2});
}
double ForgettingRow::f_ssim_t1_to_2() const {
  return forgetting({"ssim", t1_ssim_end}, {"ssim", t1_ssim_post2});
}
double ForgettingRow::f_psnr_t2_to_3() const {
  return forgetting({"psnr", t2_psnr_end}, {"psnr", t2_psnr_post3});
}
double ForgettingRow::f_ssim_t2_to_3() const {
  return forgetting({"ssim", t2_ssim_end}, {"ssim", t2_ssim_post3});
}
double ForgettingRow::f_psnr_t1_to_3() const {
  return forgetting({"psnr", t1_psnr_end}, {"psnr", t1_psnr_post3});
}
double ForgettingRow::f_ssim_t1_to_3() const {
  return forgetting({"ssim", t1_ssim_end}, {"ssim", t1_ssim_post3});
}

std::string ForgettingReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(28) << "Configuration" << std::right;
  for (const char* h : {"F-PSNR (T1->2)", "F-SSIM (T1->2)", "F-PSNR (T2->3)", "F-SSIM (T2->3)",
                        "F-PSNR (T1->3)", "F-SSIM (T1->3)", "Final PSNR T3", "Final SSIM T3"}) {
    os << std::setw(16) << h;
  }
  os << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(28) << r.label << std::right << std::fixed;
    os << std::setw(16) << std::setprecision(2) << r.f_psnr_t1_to_2() << std::setw(16)
       << std::setprecision(4) << r.f_ssim_t1_to_2() << std::setw(16) << std::setprecision(2)
       << r.f_psnr_t2_to_3() << std::setw(16) << std::setprecision(4) << r.f_ssim_t2_to_3()
       << std::setw(16) << std::setprecision(2) << r.f_psnr_t1_to_3() << std::setw(16)
       << std::setprecision(4) << r.f_ssim_t1_to_3() << std::setw(16) << std::setprecision(2)
       << r.t3_psnr_final << std::setw(16) << std::setprecision(4) << r.t3_ssim_final << '\n';
  }
  return os.str();
}

std::string ForgettingReport::to_json() const {
  json j;
  j["columns"] = {"f_psnr_t1_to_2", "f_ssim_t1_to_2", "f_psnr_t2_to_3",
                  "f_ssim_t2_to_3", "f_psnr_t1_to_3", "f_ssim_t1_to_3"};
  j["rows"] = json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({
        {"label", r.label},
        {"lambda1", r.lambda1},
        {"lambda2", r.lambda2},
        {"task_ids", r.task_ids},
        {"t1_psnr_end", r.t1_psnr_end},
        {"t1_psnr_post2", r.t1_psnr_post2},
        {"t1_psnr_post3", r.t1_psnr_post3},
        {"t1_ssim_end", r.t1_ssim_end},
        {"t1_ssim_post2", r.t1_ssim_post2},
        {"t1_ssim_post3", r.t1_ssim_post3},
        {"t2_psnr_end", r.t2_psnr_end},
        {"t2_psnr_post3", r.t2_psnr_post3},
        {"t2_ssim_end", r.t2_ssim_end},
        {"t2_ssim_post3", r.t2_ssim_post3},
        {"t3_psnr_final", r.t3_psnr_final},
        {"t3_ssim_final", r.t3_ssim_final},
        {"f_psnr_t1_to_2", r.f_psnr_t1_to_2()},
        {"f_ssim_t1_to_2", r.f_ssim_t1_to_2()},
        {"f_psnr_t2_to_3", r.f_psnr_t2_to_3()},
        {"f_ssim_t2_to_3", r.f_ssim_t2_to_3()},
        {"f_psnr_t1_to_3", r.f_psnr_t1_to_3()},
        {"f_ssim_t1_to_3", r.f_ssim_t1_to_3()},
    });
  }
  return j.dump(2);
}

namespace {

// Two-task runs leave the third-task columns undefined; JSON stores them as null.
double number_or_nan(const json& row, const char* key) {
  const auto& v = row.at(key);
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace

ForgettingReport ForgettingReport::from_json(const std::string& text) {
  ForgettingReport rep;
  const auto doc = json::parse(text);
  for (const auto& r : doc.at("rows")) {
    ForgettingRow row;
    row.label = r.at("label").get<std::string>();
    row.lambda1 = number_or_nan(r, "lambda1");
    row.lambda2 = number_or_nan(r, "lambda2");
    row.task_ids = r.at("task_ids").get<std::vector<std::string>>();
    row.t1_psnr_end = number_or_nan(r, "t1_psnr_end");
    row.t1_psnr_post2 = number_or_nan(r, "t1_psnr_post2");
    row.t1_psnr_post3 = number_or_nan(r, "t1_psnr_post3");
    row.t1_ssim_end = number_or_nan(r, "t1_ssim_end");
    row.t1_ssim_post2 = number_or_nan(r, "t1_ssim_post2");
    row.t1_ssim_post3 = number_or_nan(r, "t1_ssim_post3");
    row.t2_psnr_end = number_or_nan(r, "t2_psnr_end");
    row.t2_psnr_post3 = number_or_nan(r, "t2_psnr_post3");
    row.t2_ssim_end = number_or_nan(r, "t2_ssim_end");
    row.t2_ssim_post3 = number_or_nan(r, "t2_ssim_post3");
    row.t3_psnr_final = number_or_nan(r, "t3_psnr_final");
    row.t3_ssim_final = number_or_nan(r, "t3_ssim_final");
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

}  // namespace wxr
