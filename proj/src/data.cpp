#include "wxr/data.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace wxr {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string> kImageExtensions{".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"};

cv::Mat to_mat(const Image& img) {
  auto hwc = img.pixels.permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(img.height()), static_cast<int>(img.width()), CV_32FC3, hwc.data_ptr<float>());
  return rgb.clone();
}

Image from_mat(const cv::Mat& rgb32) {
  auto t = torch::from_blob(rgb32.data, {rgb32.rows, rgb32.cols, 3}, torch::kFloat32)
               .clone()
               .permute({2, 0, 1})
               .contiguous();
  return Image{t};
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && kImageExtensions.count(e.path().extension().string())) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

Image make_image(const torch::Tensor& pixels) {
  if (pixels.dim() != 3 || pixels.size(0) != 3 || pixels.size(1) < 1 || pixels.size(2) < 1) {
    throw std::invalid_argument("image must be 3 x H x W with H, W >= 1");
  }
  auto p = pixels.detach().to(torch::kFloat32).contiguous();
  if (!torch::isfinite(p).all().item<bool>() || p.min().item<float>() < 0.f || p.max().item<float>() > 1.f) {
    throw std::invalid_argument("image values must lie in [0, 1]");
  }
  return Image{p};
}

torch::Tensor to_network(const Image& img) { return (img.pixels * 2 - 1).unsqueeze(0); }

Image from_network(const torch::Tensor& t) {
  auto x = t.dim() == 4 ? t.squeeze(0) : t;
  return Image{((x.detach().to(torch::kFloat32) + 1) / 2).clamp(0, 1).contiguous()};
}

Image load_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR | cv::IMREAD_ANYDEPTH);
  if (bgr.empty()) throw std::runtime_error("cannot decode image " + path.string());
  cv::Mat rgb, f32;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  const double scale = rgb.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  rgb.convertTo(f32, CV_32FC3, scale);
  return from_mat(f32);
}

void save_image(const fs::path& path, const Image& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat rgb = to_mat(img), bgr, u8;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(u8, CV_8UC3, 255.0);
  if (!cv::imwrite(path.string(), u8)) throw std::runtime_error("cannot write image " + path.string());
}

Image resize_bilinear(const Image& img, int64_t height, int64_t width) {
  if (height == img.height() && width == img.width()) return img;
  namespace F = torch::nn::functional;
  auto out = F::interpolate(img.pixels.unsqueeze(0),
                            F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{height, width})
                                .mode(torch::kBilinear)
                                .align_corners(false));
  return Image{out.squeeze(0).contiguous()};
}

Image crop(const Image& img, int64_t y, int64_t x, int64_t height, int64_t width) {
  return Image{img.pixels.narrow(1, y, height).narrow(2, x, width).contiguous()};
}

Image ImageRef::fetch() const { return image ? *image : load_image(path); }

UnpairedCorpus load_corpus(const fs::path& root_a, const fs::path& root_b, std::ostream* warn) {
  UnpairedCorpus c;
  auto collect = [&](const fs::path& root, std::vector<ImageRef>& out) {
    for (const auto& f : list_images(root)) {
      cv::Mat probe = cv::imread(f.string(), cv::IMREAD_COLOR);
      if (probe.empty()) {
        ++c.skipped;
        c.warnings.push_back("skipping unreadable image " + f.string());
        if (warn) *warn << "warning: " << c.warnings.back() << '\n';
        continue;
      }
      out.push_back(ImageRef{f, nullptr});
    }
    if (out.empty()) throw std::invalid_argument("no readable images in " + root.string());
  };
  collect(root_a, c.domain_a);
  collect(root_b, c.domain_b);
  return c;
}

UnpairedCorpus make_corpus(std::vector<Image> domain_a, std::vector<Image> domain_b) {
  if (domain_a.empty() || domain_b.empty()) throw std::invalid_argument("corpus domains must be non-empty");
  UnpairedCorpus c;
  for (auto& img : domain_a) c.domain_a.push_back({{}, std::make_shared<const Image>(std::move(img))});
  for (auto& img : domain_b) c.domain_b.push_back({{}, std::make_shared<const Image>(std::move(img))});
  return c;
}

Image augment(const Image& img, Rng& rng, const AugmentConfig& cfg) {
  Image src = img;
  const auto short_side = std::min(src.height(), src.width());
  if (short_side < cfg.out_size) {
    const double s = static_cast<double>(cfg.out_size) / static_cast<double>(short_side);
    src = resize_bilinear(src, std::max<int64_t>(cfg.out_size, std::llround(src.height() * s)),
                          std::max<int64_t>(cfg.out_size, std::llround(src.width() * s)));
  }
  const auto base = std::min(src.height(), src.width());
  const double scale = cfg.min_scale == cfg.max_scale ? cfg.min_scale : uniform(rng, cfg.min_scale, cfg.max_scale);
  const auto side = std::clamp<int64_t>(std::llround(scale * static_cast<double>(base)), 1, base);
  const auto y = uniform_int(rng, 0, src.height() - side);
  const auto x = uniform_int(rng, 0, src.width() - side);
  return resize_bilinear(crop(src, y, x, side, side), cfg.out_size, cfg.out_size);
}

TrainingPair sample_training_pair(const UnpairedCorpus& corpus, Rng& rng, const AugmentConfig& cfg) {
  if (corpus.domain_a.empty() || corpus.domain_b.empty()) throw std::invalid_argument("empty corpus");
  TrainingPair p;
  p.index_a = static_cast<size_t>(uniform_int(rng, 0, static_cast<int64_t>(corpus.domain_a.size()) - 1));
  p.index_b = static_cast<size_t>(uniform_int(rng, 0, static_cast<int64_t>(corpus.domain_b.size()) - 1));
  p.a = augment(corpus.domain_a[p.index_a].fetch(), rng, cfg);
  p.b = augment(corpus.domain_b[p.index_b].fetch(), rng, cfg);
  return p;
}

// ---------------------------------------------------------------------------

std::string to_string(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::haze: return "haze";
    case DegradationKind::rain: return "rain";
    case DegradationKind::snow: return "snow";
  }
  return "?";
}

DegradationKind degradation_kind_from_string(const std::string& s) {
  if (s == "haze") return DegradationKind::haze;
  if (s == "rain") return DegradationKind::rain;
  if (s == "snow") return DegradationKind::snow;
  throw std::invalid_argument("unknown degradation kind '" + s + "' (expected haze, rain or snow)");
}

void DegradationSpec::validate() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  switch (kind) {
    case DegradationKind::haze:
      if (std::isnan(haze.beta) || haze.beta < 0) throw std::invalid_argument("haze beta must be >= 0");
      for (double a : haze.airlight) {
        if (!in01(a)) throw std::invalid_argument("haze airlight must lie in [0, 1]");
      }
      break;
    case DegradationKind::rain:
      if (rain.streaks < 0) throw std::invalid_argument("rain streak count must be >= 0");
      if (!(rain.length > 0 && rain.length <= 1000)) throw std::invalid_argument("rain length must be in (0, 1000]");
      if (!(rain.angle_deg >= 0 && rain.angle_deg <= 180)) throw std::invalid_argument("rain angle must be in [0, 180]");
      if (!in01(rain.intensity)) throw std::invalid_argument("rain intensity must lie in [0, 1]");
      break;
    case DegradationKind::snow:
      if (snow.flakes < 0) throw std::invalid_argument("snow flake count must be >= 0");
      if (!(snow.radius > 0 && snow.radius <= 100)) throw std::invalid_argument("snow radius must be in (0, 100]");
      if (!in01(snow.opacity)) throw std::invalid_argument("snow opacity must lie in [0, 1]");
      break;
  }
}

std::string DegradationSpec::to_json() const {
  json j{{"kind", to_string(kind)}};
  switch (kind) {
    case DegradationKind::haze:
      j["beta"] = haze.beta;
      j["airlight"] = haze.airlight;
      j["depth_seed"] = haze.depth_seed;
      break;
    case DegradationKind::rain:
      j["streaks"] = rain.streaks;
      j["length"] = rain.length;
      j["angle_deg"] = rain.angle_deg;
      j["intensity"] = rain.intensity;
      break;
    case DegradationKind::snow:
      j["flakes"] = snow.flakes;
      j["radius"] = snow.radius;
      j["opacity"] = snow.opacity;
      break;
  }
  return j.dump();
}

DegradationSpec DegradationSpec::from_json(const std::string& text) {
  auto j = json::parse(text);
  DegradationSpec s;
  s.kind = degradation_kind_from_string(j.at("kind").get<std::string>());
  switch (s.kind) {
    case DegradationKind::haze:
      s.haze.beta = j.at("beta").get<double>();
      s.haze.airlight = j.at("airlight").get<std::array<double, 3>>();
      s.haze.depth_seed = j.at("depth_seed").get<uint64_t>();
      break;
    case DegradationKind::rain:
      s.rain.streaks = j.at("streaks").get<int64_t>();
      s.rain.length = j.at("length").get<double>();
      s.rain.angle_deg = j.at("angle_deg").get<double>();
      s.rain.intensity = j.at("intensity").get<double>();
      break;
    case DegradationKind::snow:
      s.snow.flakes = j.at("flakes").get<int64_t>();
      s.snow.radius = j.at("radius").get<double>();
      s.snow.opacity = j.at("opacity").get<double>();
      break;
  }
  s.validate();
  return s;
}

torch::Tensor depth_field(int64_t height, int64_t width, uint64_t seed) {
  Rng rng(seed);
  constexpr int64_t kGrid = 4;
  auto coarse = torch::empty({1, 1, kGrid, kGrid}, torch::kFloat32);
  auto acc = coarse.accessor<float, 4>();
  for (int64_t i = 0; i < kGrid; ++i) {
    for (int64_t j = 0; j < kGrid; ++j) acc[0][0][i][j] = static_cast<float>(uniform(rng, 0.0, 1.0));
  }
  namespace F = torch::nn::functional;
  auto d = F::interpolate(coarse, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{height, width})
                                      .mode(torch::kBicubic)
                                      .align_corners(true))
               .squeeze();
  d = d.reshape({height, width}).clamp(0, 1);
  return 0.1f + 0.9f * d;
}

Image apply_haze(const Image& clean, const torch::Tensor& transmission, const std::array<double, 3>& airlight) {
  auto t = transmission.to(torch::kFloat32).view({1, clean.height(), clean.width()});
  auto a = torch::tensor({airlight[0], airlight[1], airlight[2]}, torch::kFloat32).view({3, 1, 1});
  return Image{(clean.pixels * t + a * (1 - t)).clamp(0, 1).contiguous()};
}

Image synth_degrade(const Image& clean, const DegradationSpec& spec, Rng& rng) {
  spec.validate();
  const auto h = clean.height(), w = clean.width();
  switch (spec.kind) {
    case DegradationKind::haze: {
      auto t = torch::exp(-spec.haze.beta * depth_field(h, w, spec.haze.depth_seed));
      return apply_haze(clean, t, spec.haze.airlight);
    }
    case DegradationKind::rain: {
      cv::Mat layer = cv::Mat::zeros(static_cast<int>(h), static_cast<int>(w), CV_32FC1);
      const double rad = spec.rain.angle_deg * std::numbers::pi / 180.0;
      for (int64_t i = 0; i < spec.rain.streaks; ++i) {
        const double x0 = uniform(rng, -0.2 * w, 1.2 * w), y0 = uniform(rng, -0.2 * h, 1.2 * h);
        const double len = spec.rain.length * uniform(rng, 0.6, 1.4);
        const double amp = spec.rain.intensity * uniform(rng, 0.6, 1.0);
        cv::Point p0(static_cast<int>(x0), static_cast<int>(y0));
        cv::Point p1(static_cast<int>(x0 + len * std::cos(rad)), static_cast<int>(y0 + len * std::sin(rad)));
        cv::line(layer, p0, p1, cv::Scalar(amp), 1, cv::LINE_AA);
      }
      auto streaks = torch::from_blob(layer.data, {1, h, w}, torch::kFloat32).clone();
      return Image{(clean.pixels + streaks).clamp(0, 1).contiguous()};
    }
    case DegradationKind::snow: {
      cv::Mat alpha = cv::Mat::zeros(static_cast<int>(h), static_cast<int>(w), CV_32FC1);
      for (int64_t i = 0; i < spec.snow.flakes; ++i) {
        cv::Point c(static_cast<int>(uniform_int(rng, 0, w - 1)), static_cast<int>(uniform_int(rng, 0, h - 1)));
        const int r = std::max(1, static_cast<int>(std::lround(spec.snow.radius * uniform(rng, 0.5, 1.5))));
        cv::circle(alpha, c, r, cv::Scalar(spec.snow.opacity * uniform(rng, 0.7, 1.0)), cv::FILLED, cv::LINE_AA);
      }
      auto a = torch::from_blob(alpha.data, {1, h, w}, torch::kFloat32).clone().clamp(0, 1);
      return Image{(clean.pixels * (1 - a) + a).clamp(0, 1).contiguous()};
    }
  }
  throw std::logic_error("unhandled degradation kind");
}

DegradationSpec random_spec(DegradationKind kind, Rng& rng) {
  DegradationSpec s;
  s.kind = kind;
  switch (kind) {
    case DegradationKind::haze: {
      s.haze.beta = uniform(rng, 1.2, 2.5);
      const double a = uniform(rng, 0.75, 0.95);
      s.haze.airlight = {a, a, std::min(1.0, a + uniform(rng, 0.0, 0.05))};
      s.haze.depth_seed = rng();
      break;
    }
    case DegradationKind::rain:
      s.rain.streaks = uniform_int(rng, 60, 120);
      s.rain.length = uniform(rng, 6.0, 14.0);
      s.rain.angle_deg = uniform(rng, 60.0, 80.0);
      s.rain.intensity = uniform(rng, 0.5, 0.8);
      break;
    case DegradationKind::snow:
      s.snow.flakes = uniform_int(rng, 40, 90);
      s.snow.radius = uniform(rng, 1.0, 2.5);
      s.snow.opacity = uniform(rng, 0.7, 1.0);
      break;
  }
  return s;
}

Image synth_scene(int64_t height, int64_t width, Rng& rng) {
  const int h = static_cast<int>(height), w = static_cast<int>(width);
  cv::Mat img(h, w, CV_32FC3);
  cv::Vec3f c0(static_cast<float>(uniform(rng, 0.1, 0.9)), static_cast<float>(uniform(rng, 0.1, 0.9)),
               static_cast<float>(uniform(rng, 0.1, 0.9)));
  cv::Vec3f c1(static_cast<float>(uniform(rng, 0.1, 0.9)), static_cast<float>(uniform(rng, 0.1, 0.9)),
               static_cast<float>(uniform(rng, 0.1, 0.9)));
  const double ang = uniform(rng, 0.0, 2 * std::numbers::pi);
  const double ca = std::cos(ang), sa = std::sin(ang);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = ((x - w / 2.0) * ca + (y - h / 2.0) * sa) / std::max(w, h) + 0.5;
      s = std::clamp(s, 0.0, 1.0);
      img.at<cv::Vec3f>(y, x) = c0 * static_cast<float>(1 - s) + c1 * static_cast<float>(s);
    }
  }
  auto colour = [&] {
    return cv::Scalar(uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0));
  };
  const auto shapes = uniform_int(rng, 3, 7);
  for (int64_t i = 0; i < shapes; ++i) {
    const int kind = static_cast<int>(uniform_int(rng, 0, 2));
    cv::Point p(static_cast<int>(uniform_int(rng, 0, w - 1)), static_cast<int>(uniform_int(rng, 0, h - 1)));
    const int size = static_cast<int>(uniform_int(rng, std::max(2, w / 10), std::max(3, w / 3)));
    if (kind == 0) {
      cv::rectangle(img, p, p + cv::Point(size, size * 2 / 3), colour(), cv::FILLED, cv::LINE_AA);
    } else if (kind == 1) {
      cv::circle(img, p, size / 2, colour(), cv::FILLED, cv::LINE_AA);
    } else {
      cv::Point q(static_cast<int>(uniform_int(rng, 0, w - 1)), static_cast<int>(uniform_int(rng, 0, h - 1)));
      cv::line(img, p, q, colour(), std::max(1, w / 32), cv::LINE_AA);
    }
  }
  cv::Mat clipped;
  cv::min(cv::max(img, 0.0), 1.0, clipped);
  return from_mat(clipped);
}

// ---------------------------------------------------------------------------

fs::path write_synthetic_dataset(const fs::path& out, DegradationKind kind, int64_t count, int64_t size,
                                 uint64_t seed) {
  if (count <= 0 || size < 1) throw std::invalid_argument("synthetic dataset needs count > 0 and size >= 1");
  Rng rng(seed);
  json manifest{{"kind", to_string(kind)}, {"size", size}, {"seed", seed}, {"pairs", json::array()}};
  for (int64_t i = 0; i < count; ++i) {
    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << i << ".png";
    auto clean = synth_scene(size, size, rng);
    auto spec = random_spec(kind, rng);
    auto degraded = synth_degrade(clean, spec, rng);
    save_image(out / "clean" / name.str(), clean);
    save_image(out / "degraded" / name.str(), degraded);
    manifest["pairs"].push_back({{"name", name.str()},
                                 {"clean", "clean/" + name.str()},
                                 {"degraded", "degraded/" + name.str()},
                                 {"spec", json::parse(spec.to_json())}});
  }
  const auto path = out / "manifest.json";
  std::ofstream(path) << manifest.dump(2) << '\n';
  return path;
}

std::vector<PairedSample> load_manifest(const fs::path& manifest) {
  std::ifstream is(manifest);
  if (!is) throw std::runtime_error("cannot open manifest " + manifest.string());
  const auto j = json::parse(is);
  const auto root = manifest.parent_path();
  std::vector<PairedSample> out;
  for (const auto& p : j.at("pairs")) {
    auto resolve = [&](const std::string& rel) {
      fs::path q(rel);
      return q.is_absolute() ? q : root / q;
    };
    out.push_back({p.at("name").get<std::string>(), load_image(resolve(p.at("clean").get<std::string>())),
                   load_image(resolve(p.at("degraded").get<std::string>()))});
  }
  return out;
}

std::vector<PairedSample> load_paired_folders(const fs::path& clean_dir, const fs::path& degraded_dir) {
  std::vector<PairedSample> out;
  for (const auto& f : list_images(degraded_dir)) {
    auto clean = clean_dir / f.filename();
    if (!fs::exists(clean)) throw std::runtime_error("no clean counterpart for " + f.string());
    out.push_back({f.filename().string(), load_image(clean), load_image(f)});
  }
  if (out.empty()) throw std::invalid_argument("no images in " + degraded_dir.string());
  return out;
}

std::vector<PairedSample> make_synthetic_pairs(DegradationKind kind, int64_t count, int64_t size, Rng& rng) {
  std::vector<PairedSample> out;
  for (int64_t i = 0; i < count; ++i) {
    auto clean = synth_scene(size, size, rng);
    auto degraded = synth_degrade(clean, random_spec(kind, rng), rng);
    out.push_back({"synth_" + std::to_string(i), std::move(clean), std::move(degraded)});
  }
  return out;
}

}  // namespace wxr
