#include "wxr/commands.hpp"

#include "wxr/config.hpp"
#include "wxr/plots.hpp"
#include "wxr/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace wxr {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Raised for usage problems detected after parsing (missing inputs and such).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string profile = "desk";
  std::optional<uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o, const std::string& default_out) {
  o.out = default_out;
  cmd->add_option("--config", o.config, "JSON config file layered over the profile defaults");
  cmd->add_option("--override", o.overrides, "Dotted override key=value (repeatable)");
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Model/training seed (train.seed)");
  cmd->add_option("--profile", o.profile, "Default profile: desk or paper")->capture_default_str();
}

TrainConfig resolve_config(const CommonOptions& o) {
  auto overrides = o.overrides;
  if (o.seed) overrides.push_back("train.seed=" + std::to_string(*o.seed));
  auto cfg = config_from_json(load_config_document(profile_from_string(o.profile), o.config, overrides));
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (text.empty() || text.back() != '\n') os << '\n';
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

TaskSpec task_from_config(const TrainConfig& cfg, const std::string& id, DegradationKind kind, uint64_t seed,
                          int64_t iterations, std::ostream& err) {
  if (cfg.data.domain_a.empty() != cfg.data.domain_b.empty()) {
    throw ConfigError("data.domain_a and data.domain_b must be given together");
  }
  if (cfg.data.domain_a.empty()) {
    auto task = make_synthetic_task(id, kind, cfg.data.synthetic_count, cfg.data.eval_count, cfg.crop, iterations, seed);
    if (!cfg.data.eval_manifest.empty()) task.test = load_manifest(cfg.data.eval_manifest);
    return task;
  }
  TaskSpec task;
  task.id = id;
  task.iterations = iterations;
  task.corpus = load_corpus(cfg.data.domain_a, cfg.data.domain_b, &err);
  if (!cfg.data.eval_manifest.empty()) task.test = load_manifest(cfg.data.eval_manifest);
  return task;
}

std::string checkpoint_name(int64_t iteration) {
  std::ostringstream os;
  os << "ckpt_" << std::setw(6) << std::setfill('0') << iteration << ".ntar";
  return os.str();
}

// Builds a model whose shapes follow the configuration stored in a checkpoint.
CycleModel model_from_checkpoint(const fs::path& path) {
  auto ar = TensorArchive::load(path);
  if (!ar.contains("meta")) throw ArchiveError(path.string() + ": not a training checkpoint (no meta entry)");
  const auto cfg = config_from_json(json::parse(ar.get_text("meta")).at("config"));
  auto model_cfg = cfg.model;
  model_cfg.projection.n_locations = cfg.n_locations;
  auto model = make_model(model_cfg, cfg.seed);
  model->load_weights(ar);
  model->eval();
  return model;
}

// ---------------------------------------------------------------------------

int cmd_train(const CommonOptions& o, const std::string& resume, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve_config(o);
  const fs::path dir = o.out;
  fs::create_directories(dir / "checkpoints");
  const auto kind = degradation_kind_from_string(cfg.data.synthetic_kind);
  auto task = task_from_config(cfg, "task1", kind, cfg.data_seed, cfg.iterations, err);
  write_text(dir / "config.json", config_to_json(cfg).dump(2));

  Trainer trainer(cfg);
  trainer.begin_task(task.id, cfg.iterations);
  if (!resume.empty()) trainer.load_checkpoint(resume);

  std::ofstream log(dir / "train_log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  StepRecord last;
  int64_t last_saved = -1;
  const auto remaining = cfg.iterations - trainer.iteration();
  trainer.train(task.corpus, std::max<int64_t>(remaining, 0), [&](const StepRecord& rec) {
    last = rec;
    if (rec.iteration % cfg.log_every == 0 || rec.iteration == cfg.iterations) log << rec.to_json() << '\n' << std::flush;
    if (rec.iteration % cfg.checkpoint_every == 0 || rec.iteration == cfg.iterations) {
      trainer.save_checkpoint(dir / "checkpoints" / checkpoint_name(rec.iteration));
      last_saved = rec.iteration;
    }
  });
  if (last_saved < 0) trainer.save_checkpoint(dir / "checkpoints" / checkpoint_name(trainer.iteration()));

  json summary{{"iterations", trainer.iteration()}, {"final_record", json::parse(last.to_json())}};
  if (!task.test.empty()) {
    MetricReport baseline, restored = trainer.evaluate(task.test);
    for (const auto& s : task.test) baseline.add(s.name, s.degraded, s.clean);
    write_text(dir / "eval.txt", restored.to_table());
    write_text(dir / "eval.json", restored.to_json());
    summary["held_out"] = {{"count", restored.count()},
                           {"psnr_degraded", baseline.mean_psnr()},
                           {"psnr_restored", restored.mean_psnr()},
                           {"ssim_degraded", baseline.mean_ssim()},
                           {"ssim_restored", restored.mean_ssim()},
                           {"psnr_gain", restored.mean_psnr() - baseline.mean_psnr()}};
    out << "held-out PSNR " << std::fixed << std::setprecision(2) << baseline.mean_psnr() << " -> "
        << restored.mean_psnr() << " dB over " << restored.count() << " images\n";
  }
  write_text(dir / "summary.json", summary.dump(2));
  out << "trained " << trainer.iteration() << " iterations; final record " << last.to_json() << '\n';
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& manifest,
             const std::string& clean_dir, const std::string& degraded_dir, std::ostream& out) {
  resolve_config(o);  // validates the layered config even though eval needs little of it
  std::vector<PairedSample> pairs;
  if (!manifest.empty()) {
    pairs = load_manifest(manifest);
  } else if (!clean_dir.empty() && !degraded_dir.empty()) {
    pairs = load_paired_folders(clean_dir, degraded_dir);
  } else {
    throw UsageError("eval needs --manifest or both --clean and --degraded");
  }
  MetricReport report;
  if (checkpoint.empty()) {
    for (const auto& s : pairs) report.add(s.name, s.degraded, s.clean);
  } else {
    auto model = model_from_checkpoint(checkpoint);
    for (const auto& s : pairs) report.add(s.name, restore_image(model->gA, s.degraded), s.clean);
  }
  const fs::path dir = o.out;
  write_text(dir / "eval.txt", report.to_table());
  auto j = json::parse(report.to_json());
  j["mode"] = checkpoint.empty() ? "baseline" : "restored";
  j["checkpoint"] = checkpoint;
  write_text(dir / "eval.json", j.dump(2));
  out << report.to_table();
  return 0;
}

void emit_continual_artifacts(const ForgettingReport& report, const fs::path& dir, std::ostream& out) {
  write_text(dir / "forgetting.txt", report.to_table());
  write_text(dir / "forgetting.json", report.to_json());
  Series f12{"F-PSNR T1->2", {}, {}}, f13{"F-PSNR T1->3", {}, {}}, f23{"F-PSNR T2->3", {}, {}};
  Series final3{"Final PSNR T3", {}, {}}, final1{"Final PSNR T1", {}, {}};
  for (const auto& r : report.rows) {
    const double x = r.lambda1;
    f12.x.push_back(x), f12.y.push_back(r.f_psnr_t1_to_2());
    f13.x.push_back(x), f13.y.push_back(r.f_psnr_t1_to_3());
    f23.x.push_back(x), f23.y.push_back(r.f_psnr_t2_to_3());
    final3.x.push_back(x), final3.y.push_back(r.t3_psnr_final);
    final1.x.push_back(x), final1.y.push_back(std::isfinite(r.t1_psnr_post3) ? r.t1_psnr_post3 : r.t1_psnr_post2);
  }
  plot_lines(dir / "forgetting_vs_lambda.png", "Forgetting vs EWC lambda", "lambda", "PSNR forgetting (dB)",
             {f12, f23, f13});
  plot_lines(dir / "final_psnr_vs_lambda.png", "Final PSNR vs EWC lambda", "lambda", "PSNR (dB)", {final1, final3});
  json plots{{"forgetting_vs_lambda.png", {"F-PSNR T1->2", "F-PSNR T2->3", "F-PSNR T1->3"}},
             {"final_psnr_vs_lambda.png", {"Final PSNR T1", "Final PSNR T3"}},
             {"points_per_series", report.rows.size()}};
  write_text(dir / "plots.json", plots.dump(2));
  out << report.to_table();
}

std::vector<double> parse_lambdas(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--lambdas: '" + item + "' is not a number");
    }
  }
  if (v.empty()) throw UsageError("--lambdas: empty list");
  return v;
}

int cmd_continual(const CommonOptions& o, const std::string& lambdas_arg, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve_config(o);
  const fs::path dir = o.out;
  fs::create_directories(dir);

  // Each configuration is a (lambda1, lambda2) pair.
  std::vector<std::pair<double, double>> configs;
  std::vector<double> sweep = lambdas_arg.empty() ? cfg.continual.sweep : parse_lambdas(lambdas_arg);
  for (double l : sweep) configs.emplace_back(l, l);
  if (configs.empty()) {
    const auto& l = cfg.ewc.lambdas;
    configs.emplace_back(l.at(0), l.size() > 1 ? l[1] : l[0]);
  }
  write_text(dir / "config.json", config_to_json(cfg).dump(2));

  ForgettingReport report;
  std::ofstream log(dir / "train_log.jsonl");
  for (const auto& [l1, l2] : configs) {
    std::vector<TaskSpec> tasks;
    for (size_t i = 0; i < cfg.continual.tasks.size(); ++i) {
      const auto& name = cfg.continual.tasks[i];
      tasks.push_back(task_from_config(cfg, name, degradation_kind_from_string(name), cfg.data_seed * 1000 + i,
                                       cfg.continual.iterations_per_task, err));
    }
    std::ostringstream label;
    label << "l1=" << l1 << ",l2=" << l2;
    auto result = run_continual(tasks, cfg, {l1, l2}, label.str(), [&](const StepRecord& rec) {
      if (rec.iteration % cfg.log_every == 0) log << rec.to_json() << '\n';
    });
    report.rows.push_back(result.row);
    err << "finished " << label.str() << '\n';
  }
  emit_continual_artifacts(report, dir, out);
  return 0;
}

int cmd_synth(const CommonOptions& o, const std::string& kind, int64_t count, int64_t size, std::ostream& out) {
  const auto cfg = resolve_config(o);
  const auto manifest = write_synthetic_dataset(o.out, degradation_kind_from_string(kind), count, size,
                                                o.seed ? *o.seed : cfg.data_seed);
  out << "wrote " << count << " pairs; manifest " << manifest.string() << '\n';
  return 0;
}

Image side_by_side(const std::vector<Image>& panels) {
  std::vector<torch::Tensor> t;
  for (const auto& p : panels) t.push_back(p.pixels);
  return make_image(torch::cat(t, 2));
}

int cmd_restore(const CommonOptions& o, const std::string& checkpoint, const std::string& input, bool triptych,
                std::ostream& out, std::ostream& err) {
  resolve_config(o);
  if (!fs::is_directory(input)) throw UsageError("--input '" + input + "' is not a directory");
  auto model = model_from_checkpoint(checkpoint);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".PNG" || ext == ".JPG")) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  const fs::path dir = o.out;
  fs::create_directories(dir);
  json listing = json::array();
  for (const auto& f : files) {
    Image img;
    try {
      img = load_image(f);
    } catch (const std::exception& ex) {
      err << "skipping " << f.string() << ": " << ex.what() << '\n';
      continue;
    }
    auto restored = restore_image(model->gA, img);
    save_image(dir / f.filename().replace_extension(".png"), restored);
    if (triptych) {
      auto diff = make_image(((restored.pixels - img.pixels).abs() * 4).clamp(0, 1));
      save_image(dir / "triptych" / f.filename().replace_extension(".png"), side_by_side({img, restored, diff}));
    }
    listing.push_back({{"input", f.string()}, {"height", img.height()}, {"width", img.width()}});
  }
  write_text(dir / "restore.json", json{{"checkpoint", checkpoint}, {"images", listing}}.dump(2));
  out << "restored " << listing.size() << " images into " << dir.string() << '\n';
  return 0;
}

int cmd_report(const CommonOptions& o, const std::string& input, std::ostream& out) {
  const auto text = read_text(input);
  const auto doc = json::parse(text);
  const fs::path dir = o.out;
  if (doc.contains("rows")) {
    const auto report = ForgettingReport::from_json(text);
    // Every forgetting column must equal the difference of the raw scores it names.
    const auto rows = doc.at("rows");
    for (size_t i = 0; i < report.rows.size(); ++i) {
      const auto& r = report.rows[i];
      const std::pair<const char*, double> expect[] = {
          {"f_psnr_t1_to_2", r.t1_psnr_end - r.t1_psnr_post2}, {"f_ssim_t1_to_2", r.t1_ssim_end - r.t1_ssim_post2},
          {"f_psnr_t2_to_3", r.t2_psnr_end - r.t2_psnr_post3}, {"f_ssim_t2_to_3", r.t2_ssim_end - r.t2_ssim_post3},
          {"f_psnr_t1_to_3", r.t1_psnr_end - r.t1_psnr_post3}, {"f_ssim_t1_to_3", r.t1_ssim_end - r.t1_ssim_post3}};
      for (const auto& [key, want] : expect) {
        const auto& v = rows[i].at(key);
        if (v.is_null() && std::isnan(want)) continue;
        if (v.is_null() || std::abs(v.get<double>() - want) > 1e-9) {
          throw std::runtime_error(std::string("report: row ") + std::to_string(i) + " column " + key +
                                   " disagrees with its raw scores");
        }
      }
    }
    emit_continual_artifacts(report, dir, out);
    out << "consistency check passed for " << report.rows.size() << " rows\n";
    return 0;
  }
  if (doc.contains("images") && doc.contains("psnr")) {
    MetricReport report;
    for (const auto& im : doc.at("images")) {
      report.rows.push_back({im.at("name").get<std::string>(), im.at("psnr").get<double>(), im.at("ssim").get<double>(),
                             im.at("exact_match").get<bool>()});
    }
    write_text(dir / "eval.txt", report.to_table());
    out << report.to_table();
    return 0;
  }
  throw UsageError("report: '" + input + "' is neither a forgetting report nor a metric report");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unpaired weather-removal training and evaluation"};
  app.require_subcommand(1);

  CommonOptions o;
  std::string resume, checkpoint, manifest, clean_dir, degraded_dir, lambdas, input, kind = "haze";
  int64_t count = 16, size = 64;
  bool triptych = false;

  auto* train = app.add_subcommand("train", "Train a model; writes checkpoints and a loss log");
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint (or the degraded input) on paired data");
  auto* cont = app.add_subcommand("continual-run", "Three-task continual run with EWC; forgetting report and plots");
  auto* synth = app.add_subcommand("synth-data", "Write a paired synthetic dataset with a manifest");
  auto* restore = app.add_subcommand("restore", "Restore every image of a folder with a checkpoint");
  auto* report = app.add_subcommand("report", "Re-render and check a forgetting or metric report");

  add_common(train, o, "runs/train");
  train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  add_common(eval, o, "runs/eval");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint; omitted -> degraded input is scored");
  eval->add_option("--manifest", manifest, "Paired manifest written by synth-data");
  eval->add_option("--clean", clean_dir, "Folder of clean references");
  eval->add_option("--degraded", degraded_dir, "Folder of degraded images with matching names");
  add_common(cont, o, "runs/continual");
  cont->add_option("--lambdas", lambdas, "Comma-separated sweep; each value used as lambda1 = lambda2");
  add_common(synth, o, "runs/synth");
  synth->add_option("--kind", kind, "haze, rain or snow")->capture_default_str();
  synth->add_option("--count", count, "Number of pairs")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Square image side")->capture_default_str()->check(CLI::PositiveNumber);
  add_common(restore, o, "runs/restore");
  restore->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  restore->add_option("--input", input, "Folder of degraded images")->required();
  restore->add_flag("--triptych", triptych, "Also write input | restored | difference panels");
  add_common(report, o, "runs/report");
  report->add_option("--input", input, "forgetting.json or eval.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "usage error: " << ex.what() << '\n';
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(o, resume, out, err);
    if (eval->parsed()) return cmd_eval(o, checkpoint, manifest, clean_dir, degraded_dir, out);
    if (cont->parsed()) return cmd_continual(o, lambdas, out, err);
    if (synth->parsed()) return cmd_synth(o, kind, count, size, out);
    if (restore->parsed()) return cmd_restore(o, checkpoint, input, triptych, out, err);
    if (report->parsed()) return cmd_report(o, input, out);
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return 2;
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << '\n';
    return 2;
  } catch (const TrainingAborted& ex) {
    err << "training aborted: " << ex.what() << "; state dumped to " << ex.checkpoint().string() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"wxr"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace wxr
