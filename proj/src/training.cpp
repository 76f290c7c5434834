#include "wxr/training.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <sstream>

namespace wxr {

using json = nlohmann::json;
namespace fs = std::filesystem;

double lr_at(int64_t t, int64_t total, double start, double end) {
  if (total <= 0) throw std::invalid_argument("lr_at: schedule length must be positive");
  if (t <= 0) return start;
  if (t >= total) return end;
  const double progress = static_cast<double>(t) / static_cast<double>(total);
  const double lr = end + (start - end) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
  // Rounded to 12 significant digits so decimal endpoints give decimal midpoints
  // (the raw midpoint of 1e-4 and 5e-5 lands one ulp above 7.5e-5).
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", lr);
  return std::strtod(buf, nullptr);
}

// ---------------------------------------------------------------------------

torch::Tensor ImagePool::query(const torch::Tensor& image, Rng& rng) {
  if (capacity_ == 0) return image;
  auto img = image.detach();
  if (static_cast<int64_t>(images_.size()) < capacity_) {
    images_.push_back(img.clone());
    return img;
  }
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5) {
    const auto idx = std::uniform_int_distribution<size_t>(0, images_.size() - 1)(rng);
    auto old = images_[idx];
    images_[idx] = img.clone();
    return old;
  }
  return img;
}

std::string StepRecord::to_json() const {
  json j{{"task", task_id},
         {"iteration", iteration},
         {"lr", lr},
         {"adversarial", generator.adversarial},
         {"cycle", generator.cycle},
         {"perceptual", generator.perceptual},
         {"contrastive", generator.contrastive},
         {"weighted_total", generator.total_value},
         {"ewc", ewc},
         {"generator_total", generator_total},
         {"disc_a", disc_a},
         {"disc_b", disc_b}};
  return j.dump();
}

TaskSpec make_synthetic_task(const std::string& id, DegradationKind kind, int64_t train_count,
                             int64_t test_count, int64_t size, int64_t iterations, uint64_t seed) {
  Rng rng(seed);
  std::vector<Image> degraded, clean;
  for (int64_t i = 0; i < train_count; ++i) {
    auto scene = synth_scene(size, size, rng);
    degraded.push_back(synth_degrade(scene, random_spec(kind, rng), rng));
  }
  for (int64_t i = 0; i < train_count; ++i) clean.push_back(synth_scene(size, size, rng));
  TaskSpec t;
  t.id = id;
  t.corpus = make_corpus(std::move(degraded), std::move(clean));
  t.test = make_synthetic_pairs(kind, test_count, size, rng);
  t.iterations = iterations;
  return t;
}

// ---------------------------------------------------------------------------

namespace {

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw ArchiveError("corrupt rng state in checkpoint");
}

torch::Tensor pad_to_multiple(const torch::Tensor& x, int64_t m) {
  const auto ph = (m - x.size(2) % m) % m;
  const auto pw = (m - x.size(3) % m) % m;
  if (ph == 0 && pw == 0) return x;
  namespace F = torch::nn::functional;
  return F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReflect));
}

std::vector<std::pair<std::string, torch::Tensor>> with_prefixes(CycleModel& model,
                                                                 std::initializer_list<const char*> prefixes) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (auto& [name, t] : model->named_tensors()) {
    for (const char* p : prefixes) {
      if (name.rfind(p, 0) == 0) {
        out.emplace_back(name, t);
        break;
      }
    }
  }
  return out;
}

void save_adam(const torch::optim::Adam& opt, const NamedTensors& params, const std::string& prefix,
               TensorArchive& ar) {
  auto& state = const_cast<torch::optim::Adam&>(opt).state();
  for (const auto& [name, p] : params) {
    auto it = state.find(p.unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    ar.put(prefix + name + ".exp_avg", s.exp_avg());
    ar.put(prefix + name + ".exp_avg_sq", s.exp_avg_sq());
    ar.put(prefix + name + ".step", torch::tensor({s.step()}, torch::kInt64));
  }
}

void load_adam(torch::optim::Adam& opt, const NamedTensors& params, const std::string& prefix,
               const TensorArchive& ar) {
  auto& state = opt.state();
  state.clear();
  for (const auto& [name, p] : params) {
    if (!ar.contains(prefix + name + ".step")) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(ar.get(prefix + name + ".step").item<int64_t>());
    s->exp_avg(ar.get(prefix + name + ".exp_avg").to(p.dtype()).clone());
    s->exp_avg_sq(ar.get(prefix + name + ".exp_avg_sq").to(p.dtype()).clone());
    state[p.unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg), pool_a_(cfg.pool_size), pool_b_(cfg.pool_size), rng_(cfg.seed), data_rng_(cfg.data_seed) {
  cfg_.validate();
  torch::set_num_threads(static_cast<int>(cfg_.threads));
  auto model_cfg = cfg_.model;
  model_cfg.projection.n_locations = cfg_.n_locations;
  model_ = make_model(model_cfg, cfg_.seed);
  if (!cfg_.perceptual_weights.empty() && cfg_.weights.perceptual > 0) {
    perceptual_.emplace(cfg_.perceptual_weights);
  }
  task_iterations_ = cfg_.iterations;
  make_optimizers();
}

void Trainer::make_optimizers() {
  auto adam = [&](std::vector<torch::Tensor> params) {
    return std::make_unique<torch::optim::Adam>(
        std::move(params),
        torch::optim::AdamOptions(cfg_.lr_start).betas(std::make_tuple(cfg_.beta1, cfg_.beta2)));
  };
  auto g = model_->generator_parameters();
  auto p = model_->projection_parameters();
  g.insert(g.end(), p.begin(), p.end());
  opt_g_ = adam(std::move(g));
  opt_da_ = adam(model_->dA->parameters());
  opt_db_ = adam(model_->dB->parameters());
}

void Trainer::begin_task(const std::string& task_id, int64_t iterations) {
  if (iterations <= 0) throw std::invalid_argument("begin_task: iterations must be positive");
  task_id_ = task_id;
  task_iterations_ = iterations;
  iteration_ = 0;
  pool_a_.restore({});
  pool_b_.restore({});
  make_optimizers();
}

NamedTensors Trainer::scoped_parameters() {
  const ParamFilter scope = cfg_.ewc.scope == "all" ? ParamFilter{} : ParamFilter{generator_scope};
  return select_params(model_->named_tensors(), scope);
}

torch::Tensor Trainer::contrastive_half(const GeneratorTaps& keys, const GeneratorTaps& queries, Rng& rng) {
  const auto k = keys.as_array();
  const auto q = queries.as_array();
  torch::Tensor sum;
  for (size_t i = 0; i < GeneratorTaps::kCount; ++i) {
    auto locs = sample_locations(k[i].size(2), k[i].size(3), cfg_.n_locations, rng);
    auto head = model_->projection(i);
    auto term = ccl_loss(head->forward(q[i], locs), head->forward(k[i], locs), cfg_.tau);
    sum = sum.defined() ? sum + term : term;
  }
  return sum / static_cast<double>(GeneratorTaps::kCount);
}

LossBreakdown Trainer::generator_objective(const torch::Tensor& real_a, const torch::Tensor& real_b, Rng& rng) {
  const bool want_taps = cfg_.weights.contrastive > 0;
  auto fwd_a = model_->gA->forward(real_a, want_taps);   // A -> B
  auto rec_a = model_->gB->forward(fwd_a.image, want_taps);
  auto fwd_b = model_->gB->forward(real_b, want_taps);   // B -> A
  auto rec_b = model_->gA->forward(fwd_b.image, want_taps);

  LossParts parts;
  parts.adversarial = adversarial_loss(model_->dB->forward(fwd_a.image, rng).scores, true, cfg_.adversarial) +
                      adversarial_loss(model_->dA->forward(fwd_b.image, rng).scores, true, cfg_.adversarial);
  parts.cycle = cycle_consistency_loss(real_a, rec_a.image, real_b, rec_b.image);
  if (perceptual_) parts.perceptual = perceptual_loss(real_a, rec_a.image, real_b, rec_b.image, *perceptual_);
  if (want_taps) {
    // Inputs are encoded by the generator that consumed them, outputs by the
    // opposite generator; both halves of both cycles are averaged.
    auto rec_a_taps = model_->gA->encode(rec_a.image);
    auto rec_b_taps = model_->gB->encode(rec_b.image);
    parts.contrastive = (contrastive_half(*fwd_a.taps, *rec_a.taps, rng) +
                         contrastive_half(*rec_a.taps, rec_a_taps, rng) +
                         contrastive_half(*fwd_b.taps, *rec_b.taps, rng) +
                         contrastive_half(*rec_b.taps, rec_b_taps, rng)) /
                        4.0;
  }
  return total_loss(parts, cfg_.weights);
}

StepRecord Trainer::train_step(const TrainingPair& pair) {
  StepRecord rec;
  rec.task_id = task_id_;
  rec.iteration = iteration_ + 1;
  rec.lr = lr_at(iteration_, task_iterations_, cfg_.lr_start, cfg_.lr_end);
  for (auto* opt : {opt_g_.get(), opt_da_.get(), opt_db_.get()}) {
    for (auto& group : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(rec.lr);
  }

  auto real_a = to_network(pair.a);
  auto real_b = to_network(pair.b);
  try {
    // Generators.
    opt_g_->zero_grad();
    rec.generator = generator_objective(real_a, real_b, rng_);
    auto objective = rec.generator.total;
    std::vector<EwcAnchor> active;
    for (const auto& a : anchors_) {
      if (a.lambda > 0) active.push_back(a);
    }
    if (!active.empty()) {
      auto penalty = ewc_penalty(scoped_parameters(), active);
      rec.ewc = penalty.item<double>();
      if (!std::isfinite(rec.ewc)) throw NonFiniteLoss("ewc", rec.ewc);
      objective = objective + penalty;
    }
    rec.generator_total = objective.item<double>();
    objective.backward();
    opt_g_->step();

    // Discriminators, on detached fakes drawn through the history pools.
    torch::Tensor fake_a, fake_b;
    {
      torch::NoGradGuard no_grad;
      fake_b = model_->gA->forward(real_a).image;
      fake_a = model_->gB->forward(real_b).image;
    }
    auto disc_step = [&](Discriminator& d, torch::optim::Adam& opt, ImagePool& pool, const torch::Tensor& real,
                         const torch::Tensor& fake, const char* name) {
      opt.zero_grad();
      auto pooled = pool.query(fake, rng_);
      auto loss = 0.5 * (adversarial_loss(d->forward(real, rng_).scores, true, cfg_.adversarial) +
                         adversarial_loss(d->forward(pooled, rng_).scores, false, cfg_.adversarial));
      const double v = loss.item<double>();
      if (!std::isfinite(v)) throw NonFiniteLoss(name, v);
      loss.backward();
      opt.step();
      return v;
    };
    rec.disc_a = disc_step(model_->dA, *opt_da_, pool_a_, real_a, fake_a, "disc_a");
    rec.disc_b = disc_step(model_->dB, *opt_db_, pool_b_, real_b, fake_b, "disc_b");
  } catch (const std::exception& ex) {
    // Divergence shows up either as a non-finite loss or as a block rejecting
    // a non-finite activation; anything else propagates unchanged.
    if (!dynamic_cast<const NonFiniteLoss*>(&ex) && !dynamic_cast<const NonFiniteInput*>(&ex)) throw;
    const fs::path dump = fs::temp_directory_path() / ("wxr_abort_" + task_id_ + "_" + std::to_string(iteration_) + ".ntar");
    save_checkpoint(dump);
    throw TrainingAborted(std::string(ex.what()) + " at iteration " + std::to_string(rec.iteration), dump);
  }
  ++iteration_;
  return rec;
}

void Trainer::train(const UnpairedCorpus& corpus, int64_t iterations,
                    const std::function<void(const StepRecord&)>& on_step) {
  const auto aug = cfg_.augment();
  for (int64_t i = 0; i < iterations; ++i) {
    auto pair = sample_training_pair(corpus, data_rng_, aug);
    auto rec = train_step(pair);
    if (on_step) on_step(rec);
  }
}

void Trainer::consolidate(const std::string& task_id, const UnpairedCorpus& corpus, double lambda) {
  auto params = scoped_parameters();
  Rng sample_rng(cfg_.ewc.fisher_seed + anchors_.size());
  const auto aug = cfg_.augment();
  auto fisher = estimate_fisher(
      params, cfg_.ewc.fisher_samples,
      [&](int64_t) {
        auto pair = sample_training_pair(corpus, sample_rng, aug);
        return generator_objective(to_network(pair.a), to_network(pair.b), sample_rng).total;
      },
      task_id);
  // Gradients from the Fisher pass must not leak into the next update.
  for (auto& p : model_->parameters()) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  anchors_.push_back({snapshot_params(params, {}, task_id), std::move(fisher), lambda});
}

Image restore_image(Generator& generator, const Image& degraded) {
  torch::NoGradGuard no_grad;
  auto x = to_network(degraded);
  auto y = generator->forward(pad_to_multiple(x, 4)).image;
  y = y.narrow(2, 0, degraded.height()).narrow(3, 0, degraded.width());
  return from_network(y);
}

MetricReport Trainer::evaluate(const std::vector<PairedSample>& test) {
  MetricReport report;
  for (const auto& s : test) report.add(s.name, restore_image(model_->gA, s.degraded), s.clean);
  return report;
}

// ---------------------------------------------------------------------------

void Trainer::save_checkpoint(const fs::path& path) {
  TensorArchive ar;
  model_->save_weights(ar);
  auto g_params = with_prefixes(model_, {"gA.", "gB.", "proj."});
  save_adam(*opt_g_, g_params, "opt.G.", ar);
  save_adam(*opt_da_, with_prefixes(model_, {"dA."}), "opt.DA.", ar);
  save_adam(*opt_db_, with_prefixes(model_, {"dB."}), "opt.DB.", ar);
  for (size_t i = 0; i < pool_a_.images().size(); ++i) ar.put("pool.A." + std::to_string(i), pool_a_.images()[i]);
  for (size_t i = 0; i < pool_b_.images().size(); ++i) ar.put("pool.B." + std::to_string(i), pool_b_.images()[i]);
  save_anchors(anchors_, ar);
  json meta{{"iteration", iteration_},
            {"task_iterations", task_iterations_},
            {"task_id", task_id_},
            {"rng", rng_state(rng_)},
            {"data_rng", rng_state(data_rng_)},
            {"pool_a", pool_a_.images().size()},
            {"pool_b", pool_b_.images().size()},
            {"config", config_to_json(cfg_)}};
  ar.put_text("meta", meta.dump());
  ar.save(path);
}

void Trainer::load_checkpoint(const fs::path& path) {
  auto ar = TensorArchive::load(path);
  model_->load_weights(ar);
  make_optimizers();
  load_adam(*opt_g_, with_prefixes(model_, {"gA.", "gB.", "proj."}), "opt.G.", ar);
  load_adam(*opt_da_, with_prefixes(model_, {"dA."}), "opt.DA.", ar);
  load_adam(*opt_db_, with_prefixes(model_, {"dB."}), "opt.DB.", ar);
  const auto meta = json::parse(ar.get_text("meta"));
  iteration_ = meta.at("iteration").get<int64_t>();
  task_iterations_ = meta.at("task_iterations").get<int64_t>();
  task_id_ = meta.at("task_id").get<std::string>();
  set_rng_state(rng_, meta.at("rng").get<std::string>());
  set_rng_state(data_rng_, meta.at("data_rng").get<std::string>());
  auto read_pool = [&](const char* tag, size_t n) {
    std::vector<torch::Tensor> imgs;
    for (size_t i = 0; i < n; ++i) imgs.push_back(ar.get(std::string("pool.") + tag + "." + std::to_string(i)).clone());
    return imgs;
  };
  pool_a_.restore(read_pool("A", meta.at("pool_a").get<size_t>()));
  pool_b_.restore(read_pool("B", meta.at("pool_b").get<size_t>()));
  anchors_ = load_anchors(ar);
}

// ---------------------------------------------------------------------------

ContinualResult run_continual(std::vector<TaskSpec>& tasks, const TrainConfig& cfg, const std::vector<double>& lambdas,
                              const std::string& label, const std::function<void(const StepRecord&)>& on_step) {
  if (tasks.size() < 2) throw std::invalid_argument("run_continual: need at least 2 tasks to measure forgetting");
  if (tasks.size() > 3) throw std::invalid_argument("run_continual: the forgetting report covers at most 3 tasks");
  if (lambdas.size() < tasks.size() - 1) {
    throw std::invalid_argument("run_continual: need one lambda per anchored task (" + std::to_string(tasks.size() - 1) +
                                ")");
  }
  Trainer trainer(cfg);
  ContinualResult result;
  for (size_t i = 0; i < tasks.size(); ++i) {
    auto& task = tasks[i];
    trainer.begin_task(task.id, task.iterations);
    trainer.train(task.corpus, task.iterations, on_step);
    ContinualStage stage{task.id, {}};
    for (size_t j = 0; j <= i; ++j) stage.reports.push_back(trainer.evaluate(tasks[j].test));
    result.stages.push_back(std::move(stage));
    if (i + 1 < tasks.size()) trainer.consolidate(task.id, task.corpus, lambdas[i]);
  }

  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  auto& r = result.row;
  r.label = label;
  r.lambda1 = lambdas[0];
  r.lambda2 = lambdas.size() > 1 ? lambdas[1] : nan;
  for (const auto& t : tasks) r.task_ids.push_back(t.id);
  const auto& s = result.stages;
  r.t1_psnr_end = s[0].reports[0].mean_psnr();
  r.t1_ssim_end = s[0].reports[0].mean_ssim();
  r.t1_psnr_post2 = s[1].reports[0].mean_psnr();
  r.t1_ssim_post2 = s[1].reports[0].mean_ssim();
  r.t2_psnr_end = s[1].reports[1].mean_psnr();
  r.t2_ssim_end = s[1].reports[1].mean_ssim();
  if (tasks.size() == 3) {
    r.t1_psnr_post3 = s[2].reports[0].mean_psnr();
    r.t1_ssim_post3 = s[2].reports[0].mean_ssim();
    r.t2_psnr_post3 = s[2].reports[1].mean_psnr();
    r.t2_ssim_post3 = s[2].reports[1].mean_ssim();
    r.t3_psnr_final = s[2].reports[2].mean_psnr();
    r.t3_ssim_final = s[2].reports[2].mean_ssim();
  } else {
    r.t1_psnr_post3 = r.t1_ssim_post3 = r.t2_psnr_post3 = r.t2_ssim_post3 = nan;
    r.t3_psnr_final = r.t3_ssim_final = nan;
  }
  return result;
}

}  // namespace wxr
