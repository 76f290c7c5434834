#include "wxr/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace wxr {

using json = nlohmann::json;

Profile profile_from_string(const std::string& s) {
  if (s == "desk") return Profile::desk;
  if (s == "paper") return Profile::paper;
  throw ConfigError("unknown profile '" + s + "' (expected desk or paper)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
  if (iterations <= 0) fail("train.iterations must be > 0");
  if (!(lr_start > 0) || !(lr_end > 0) || lr_end > lr_start) fail("need 0 < train.lr_end <= train.lr_start");
  if (batch_size != 1) fail("train.batch_size must be 1");
  if (crop <= 0 || crop % 4 != 0) fail("train.crop must be a positive multiple of 4");
  if (crop < model.discriminator.patch_size) fail("train.crop must be >= model.patch_size");
  if (pool_size < 0) fail("train.pool_size must be >= 0");
  if (!(min_scale > 0) || max_scale > 1.0 || min_scale > max_scale) fail("need 0 < train.min_scale <= train.max_scale <= 1");
  if (weights.gan < 0 || weights.cycle < 0 || weights.perceptual < 0 || weights.contrastive < 0)
    fail("loss weights must be >= 0");
  if (!(tau > 0)) fail("loss.tau must be > 0");
  for (double l : ewc.lambdas) {
    if (l < 0) fail("ewc.lambdas must be >= 0");
  }
  for (double l : continual.sweep) {
    if (l < 0) fail("continual.sweep values must be >= 0");
  }
  if (ewc.fisher_samples <= 0) fail("ewc.fisher_samples must be > 0");
  if (ewc.scope != "generators" && ewc.scope != "all") fail("ewc.scope must be 'generators' or 'all'");
  if (continual.iterations_per_task <= 0) fail("continual.iterations_per_task must be > 0");
  if (threads < 1) fail("train.threads must be >= 1");
}

json config_to_json(const TrainConfig& c) {
  const auto& g = c.model.generator;
  const auto& d = c.model.discriminator;
  return json{
      {"train",
       {{"iterations", c.iterations},
        {"lr_start", c.lr_start},
        {"lr_end", c.lr_end},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"batch_size", c.batch_size},
        {"crop", c.crop},
        {"min_scale", c.min_scale},
        {"max_scale", c.max_scale},
        {"pool_size", c.pool_size},
        {"seed", c.seed},
        {"data_seed", c.data_seed},
        {"log_every", c.log_every},
        {"checkpoint_every", c.checkpoint_every},
        {"threads", c.threads},
        {"adversarial", c.adversarial == AdversarialForm::log ? "log" : "least_squares"}}},
      {"loss",
       {{"gan", c.weights.gan},
        {"cycle", c.weights.cycle},
        {"perceptual", c.weights.perceptual},
        {"contrastive", c.weights.contrastive},
        {"tau", c.tau},
        {"n_locations", c.n_locations}}},
      {"perceptual", {{"weights", c.perceptual_weights}}},
      {"model",
       {{"base_width", g.base_width},
        {"n_fa_blocks", g.n_fa_blocks},
        {"n_dfe", g.n_dfe},
        {"ca_reduction", g.attention.ca_reduction},
        {"pa_reduction", g.attention.pa_reduction},
        {"pa_dilation", g.attention.pa_dilation},
        {"sk_reduction", g.attention.sk_reduction},
        {"sk_min_hidden", g.attention.sk_min_hidden},
        {"dcn_kernel", g.attention.dcn_kernel},
        {"disc_width", d.base_width},
        {"patch_size", d.patch_size},
        {"n_patches", d.n_patches},
        {"proj_hidden", c.model.projection.hidden},
        {"proj_out", c.model.projection.out}}},
      {"ewc",
       {{"lambdas", c.ewc.lambdas},
        {"fisher_samples", c.ewc.fisher_samples},
        {"scope", c.ewc.scope},
        {"fisher_seed", c.ewc.fisher_seed}}},
      {"data",
       {{"domain_a", c.data.domain_a},
        {"domain_b", c.data.domain_b},
        {"synthetic_kind", c.data.synthetic_kind},
        {"synthetic_count", c.data.synthetic_count},
        {"eval_manifest", c.data.eval_manifest},
        {"eval_count", c.data.eval_count}}},
      {"continual",
       {{"tasks", c.continual.tasks},
        {"iterations_per_task", c.continual.iterations_per_task},
        {"sweep", c.continual.sweep}}},
  };
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  try {
    const auto& t = j.at("train");
    c.iterations = t.at("iterations").get<int64_t>();
    c.lr_start = t.at("lr_start").get<double>();
    c.lr_end = t.at("lr_end").get<double>();
    c.beta1 = t.at("beta1").get<double>();
    c.beta2 = t.at("beta2").get<double>();
    c.batch_size = t.at("batch_size").get<int64_t>();
    c.crop = t.at("crop").get<int64_t>();
    c.min_scale = t.at("min_scale").get<double>();
    c.max_scale = t.at("max_scale").get<double>();
    c.pool_size = t.at("pool_size").get<int64_t>();
    c.seed = t.at("seed").get<uint64_t>();
    c.data_seed = t.at("data_seed").get<uint64_t>();
    c.log_every = t.at("log_every").get<int64_t>();
    c.checkpoint_every = t.at("checkpoint_every").get<int64_t>();
    c.threads = t.at("threads").get<int64_t>();
    const auto adv = t.at("adversarial").get<std::string>();
    if (adv == "least_squares") c.adversarial = AdversarialForm::least_squares;
    else if (adv == "log") c.adversarial = AdversarialForm::log;
    else throw ConfigError("train.adversarial must be 'least_squares' or 'log'");

    const auto& l = j.at("loss");
    c.weights = {l.at("gan").get<double>(), l.at("cycle").get<double>(), l.at("perceptual").get<double>(),
                 l.at("contrastive").get<double>()};
    c.tau = l.at("tau").get<double>();
    c.n_locations = l.at("n_locations").get<int64_t>();
    c.perceptual_weights = j.at("perceptual").at("weights").get<std::string>();

    const auto& m = j.at("model");
    auto& g = c.model.generator;
    g.base_width = m.at("base_width").get<int64_t>();
    g.n_fa_blocks = m.at("n_fa_blocks").get<int64_t>();
    g.n_dfe = m.at("n_dfe").get<int64_t>();
    g.attention.ca_reduction = m.at("ca_reduction").get<int64_t>();
    g.attention.pa_reduction = m.at("pa_reduction").get<int64_t>();
    g.attention.pa_dilation = m.at("pa_dilation").get<int64_t>();
    g.attention.sk_reduction = m.at("sk_reduction").get<int64_t>();
    g.attention.sk_min_hidden = m.at("sk_min_hidden").get<int64_t>();
    g.attention.dcn_kernel = m.at("dcn_kernel").get<int64_t>();
    c.model.discriminator.base_width = m.at("disc_width").get<int64_t>();
    c.model.discriminator.patch_size = m.at("patch_size").get<int64_t>();
    c.model.discriminator.n_patches = m.at("n_patches").get<int64_t>();
    c.model.projection.hidden = m.at("proj_hidden").get<int64_t>();
    c.model.projection.out = m.at("proj_out").get<int64_t>();
    c.model.projection.n_locations = c.n_locations;

    const auto& e = j.at("ewc");
    c.ewc.lambdas = e.at("lambdas").get<std::vector<double>>();
    c.ewc.fisher_samples = e.at("fisher_samples").get<int64_t>();
    c.ewc.scope = e.at("scope").get<std::string>();
    c.ewc.fisher_seed = e.at("fisher_seed").get<uint64_t>();

    const auto& d = j.at("data");
    c.data.domain_a = d.at("domain_a").get<std::string>();
    c.data.domain_b = d.at("domain_b").get<std::string>();
    c.data.synthetic_kind = d.at("synthetic_kind").get<std::string>();
    c.data.synthetic_count = d.at("synthetic_count").get<int64_t>();
    c.data.eval_manifest = d.at("eval_manifest").get<std::string>();
    c.data.eval_count = d.at("eval_count").get<int64_t>();

    const auto& k = j.at("continual");
    c.continual.tasks = k.at("tasks").get<std::vector<std::string>>();
    c.continual.iterations_per_task = k.at("iterations_per_task").get<int64_t>();
    c.continual.sweep = k.at("sweep").get<std::vector<double>>();
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("invalid config value: ") + ex.what());
  }
  c.validate();
  return c;
}

json profile_defaults(Profile p) {
  TrainConfig c;  // desk defaults
  c.model.generator.base_width = 16;
  c.model.discriminator.base_width = 16;
  c.model.projection.hidden = 64;
  c.model.projection.out = 64;
  if (p == Profile::paper) {
    c.iterations = 60000;
    c.crop = 256;
    c.checkpoint_every = 5000;
    c.log_every = 50;
    c.model.generator.base_width = 64;
    c.model.discriminator.base_width = 64;
    c.model.projection.hidden = 256;
    c.model.projection.out = 256;
    c.perceptual_weights = "weights/vgg16.ntar";
    c.continual.iterations_per_task = 60000;
    c.continual.sweep.clear();
  }
  return config_to_json(c);
}

namespace {

// Objects are walked; arrays and scalars are leaves.
void flatten_into(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) flatten_into(*it, key, out);
    else out.emplace_back(key, *it);
  }
}

std::string key_list() {
  std::string s;
  for (const auto& k : valid_keys()) s += "\n  " + k;
  return s;
}

json* locate(json& doc, const std::string& dotted) {
  json* cur = &doc;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!cur->is_object() || !cur->contains(part)) return nullptr;
    cur = &(*cur)[part];
  }
  return cur;
}

void assign(json& doc, const std::string& key, const json& value, const std::string& origin) {
  json* slot = locate(doc, key);
  if (!slot || slot->is_object()) {
    throw ConfigError(origin + ": unknown key '" + key + "'; valid keys are:" + key_list());
  }
  const bool numeric_ok = slot->is_number() && value.is_number();
  if (slot->type() != value.type() && !numeric_ok) {
    throw ConfigError(origin + ": key '" + key + "' expects a " + slot->type_name() + ", got " + value.type_name());
  }
  *slot = value;
}

}  // namespace

std::vector<std::string> valid_keys() {
  std::vector<std::pair<std::string, json>> flat;
  flatten_into(profile_defaults(Profile::desk), "", flat);
  std::vector<std::string> keys;
  for (const auto& [k, v] : flat) keys.push_back(k);
  return keys;
}

json load_config_document(Profile profile, const std::filesystem::path& file,
                          const std::vector<std::string>& overrides) {
  auto doc = profile_defaults(profile);
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot open config file '" + file.string() + "'");
    const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    json user;
    try {
      user = json::parse(text);
    } catch (const json::parse_error& ex) {
      const auto upto = std::min<size_t>(ex.byte, text.size());
      const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
      throw ConfigError(file.string() + ":" + std::to_string(line) + ": parse error: " + ex.what());
    }
    if (!user.is_object()) throw ConfigError(file.string() + ": top level must be an object");
    std::vector<std::pair<std::string, json>> flat;
    flatten_into(user, "", flat);
    for (const auto& [k, v] : flat) assign(doc, k, v, file.string());
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "' must look like key=value");
    const auto key = ov.substr(0, eq);
    const auto raw = ov.substr(eq + 1);
    json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (const json* slot = locate(doc, key); value.is_discarded() || (slot && slot->is_string())) value = raw;
    assign(doc, key, value, "--override");
  }
  return doc;
}

}  // namespace wxr
