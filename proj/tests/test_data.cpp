#include "fixtures.hpp"

#include "wxr/data.hpp"
#include "wxr/quality_metrics.hpp"

#include "doctest_torch.hpp"

#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace wxr;
using namespace wxr::testing;

namespace {

Image random_image(int64_t h, int64_t w, uint64_t seed) {
  torch::manual_seed(seed);
  return make_image(torch::rand({3, h, w}));
}

void write_images(const fs::path& dir, int n, uint64_t seed) {
  fs::create_directories(dir);
  for (int i = 0; i < n; ++i) save_image(dir / ("img" + std::to_string(i) + ".png"), random_image(20, 24, seed + i));
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("images are validated on construction") {
    CHECK_THROWS_AS(make_image(torch::rand({4, 5, 5})), std::invalid_argument);
    CHECK_THROWS_AS(make_image(torch::full({3, 2, 2}, 1.5)), std::invalid_argument);
    CHECK_THROWS_AS(make_image(torch::full({3, 2, 2}, -0.1)), std::invalid_argument);
    CHECK(make_image(torch::ones({3, 1, 1}, torch::kFloat64)).pixels.dtype() == torch::kFloat32);
  }

  TEST_CASE("domain conversion round trip is exact to 1e-7") {
    auto img = random_image(17, 9, 1);
    auto net = to_network(img);
    CHECK(net.sizes() == torch::IntArrayRef{1, 3, 17, 9});
    CHECK(net.min().item<double>() >= -1.0);
    CHECK(net.max().item<double>() <= 1.0);
    CHECK((from_network(net).pixels - img.pixels).abs().max().item<double>() <= 1e-7);
  }

  TEST_CASE("corpus loading: sizes, ordering and corrupt files") {
    const auto root = scratch_dir("corpus");
    write_images(root / "a", 3, 10);
    write_images(root / "b", 3, 20);
    auto c1 = load_corpus(root / "a", root / "b");
    CHECK(c1.domain_a.size() == 3);
    CHECK(c1.domain_b.size() == 3);
    auto c2 = load_corpus(root / "a", root / "b");
    for (size_t i = 0; i < 3; ++i) CHECK(c1.domain_a[i].path == c2.domain_a[i].path);
    CHECK(std::is_sorted(c1.domain_a.begin(), c1.domain_a.end(),
                         [](const ImageRef& x, const ImageRef& y) { return x.path < y.path; }));

    write_images(root / "c", 3, 30);
    std::ofstream(root / "c" / "broken.png") << "definitely not a png";
    std::ostringstream warn;
    auto c3 = load_corpus(root / "c", root / "b", &warn);
    CHECK(c3.domain_a.size() == 3);
    CHECK(c3.skipped == 1);
    CHECK(c3.warnings.size() == 1);
    CHECK(warn.str().find("broken.png") != std::string::npos);

    fs::create_directories(root / "empty");
    CHECK_THROWS_AS(load_corpus(root / "empty", root / "b"), std::invalid_argument);
  }

  TEST_CASE("image files round trip through PNG at 8-bit precision") {
    const auto root = scratch_dir("png");
    auto img = random_image(7, 5, 3);
    save_image(root / "x.png", img);
    auto back = load_image(root / "x.png");
    CHECK(back.pixels.sizes() == img.pixels.sizes());
    CHECK((back.pixels - img.pixels).abs().max().item<double>() <= 0.5 / 255 + 1e-6);
  }

  TEST_CASE("training pairs are seeded-reproducible and uniform over the domain") {
    std::vector<Image> a, b;
    for (int i = 0; i < 5; ++i) a.push_back(random_image(16, 16, 100 + i));
    b.push_back(random_image(16, 16, 200));
    auto corpus = make_corpus(a, b);
    const AugmentConfig cfg{16, 0.8, 1.0};
    Rng r1(4), r2(4);
    for (int i = 0; i < 20; ++i) {
      auto p = sample_training_pair(corpus, r1, cfg), q = sample_training_pair(corpus, r2, cfg);
      CHECK(p.index_a == q.index_a);
      CHECK(torch::equal(p.a.pixels, q.a.pixels));
      CHECK(p.index_b == 0);
    }
    // Frequencies within 5 sigma of the binomial mean.
    const int n = 10000;
    std::vector<int> counts(5, 0);
    Rng rng(5);
    for (int i = 0; i < n; ++i) ++counts[sample_training_pair(corpus, rng, cfg).index_a];
    const double mean = n / 5.0, sigma = std::sqrt(n * 0.2 * 0.8);
    for (int c : counts) CHECK(std::abs(c - mean) < 5 * sigma);
  }

  TEST_CASE("augment contracts") {
    Rng rng(6);
    auto img = random_image(256, 256, 7);
    auto same = augment(img, rng, {256, 1.0, 1.0});
    CHECK(torch::equal(same.pixels, img.pixels));
    auto constant = make_image(torch::full({3, 50, 70}, 0.37));
    auto out = augment(constant, rng, {64, 0.8, 1.0});
    CHECK(out.pixels.sizes() == torch::IntArrayRef{3, 64, 64});
    CHECK((out.pixels - 0.37).abs().max().item<double>() < 1e-6);
    for (int i = 0; i < 20; ++i) {
      auto src = random_image(40 + i, 90 - i, 50 + i);
      auto o = augment(src, rng, {64, 0.8, 1.0});
      CHECK(o.pixels.sizes() == torch::IntArrayRef{3, 64, 64});
      CHECK(o.pixels.min().item<double>() >= src.pixels.min().item<double>() - 1e-6);
      CHECK(o.pixels.max().item<double>() <= src.pixels.max().item<double>() + 1e-6);
    }
  }

  TEST_CASE("haze arithmetic pins") {
    Rng rng(1);
    auto clean = random_image(32, 32, 8);
    DegradationSpec spec;
    spec.haze.beta = 0.0;
    CHECK(torch::equal(synth_degrade(clean, spec, rng).pixels, clean.pixels));
    spec.haze.beta = std::numeric_limits<double>::infinity();
    spec.haze.airlight = {0.7, 0.8, 0.9};
    auto fog = synth_degrade(clean, spec, rng).pixels;
    for (int c = 0; c < 3; ++c) CHECK((fog[c] - spec.haze.airlight[c]).abs().max().item<double>() < 1e-6);
    auto j = make_image(torch::full({3, 4, 4}, 0.2));
    auto blended = apply_haze(j, torch::full({4, 4}, 0.5), {1.0, 1.0, 1.0});
    CHECK((blended.pixels - 0.6).abs().max().item<double>() < 1e-7);
  }

  TEST_CASE("PSNR strictly decreases as haze thickens on a fixed depth field") {
    Rng rng(2);
    auto clean = synth_scene(48, 48, rng);
    double prev = 1e9;
    for (double beta : {0.5, 1.0, 2.0}) {
      DegradationSpec spec;
      spec.haze.beta = beta;
      spec.haze.depth_seed = 99;
      const double p = psnr(synth_degrade(clean, spec, rng), clean).db;
      CHECK(p < prev);
      prev = p;
    }
  }

  TEST_CASE("every degradation stays in [0, 1] and is deterministic") {
    Rng rng(3);
    auto clean = synth_scene(24, 24, rng);
    int bad = 0;
    for (int i = 0; i < 1000; ++i) {
      const auto kind = static_cast<DegradationKind>(i % 3);
      auto spec = random_spec(kind, rng);
      Rng r(i);
      auto out = synth_degrade(clean, spec, r).pixels;
      if (out.min().item<double>() < 0 || out.max().item<double>() > 1) ++bad;
    }
    CHECK(bad == 0);
    for (auto kind : {DegradationKind::haze, DegradationKind::rain, DegradationKind::snow}) {
      auto spec = random_spec(kind, rng);
      Rng r1(7), r2(7);
      CHECK(torch::equal(synth_degrade(clean, spec, r1).pixels, synth_degrade(clean, spec, r2).pixels));
      auto back = DegradationSpec::from_json(spec.to_json());
      CHECK(back.to_json() == spec.to_json());
    }
  }

  TEST_CASE("out-of-range specs are rejected") {
    DegradationSpec s;
    s.haze.beta = -1;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = {};
    s.haze.airlight = {0.5, 1.2, 0.5};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = {};
    s.kind = DegradationKind::rain;
    s.rain.intensity = 2;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = {};
    s.kind = DegradationKind::snow;
    s.snow.opacity = -0.5;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    Rng rng(1);
    CHECK_THROWS_AS(synth_degrade(random_image(8, 8, 1), s, rng), std::invalid_argument);
    CHECK_THROWS_AS(degradation_kind_from_string("fog"), std::invalid_argument);
  }

  TEST_CASE("depth field is smooth, seeded and within [0, 1]") {
    auto d1 = depth_field(40, 30, 5), d2 = depth_field(40, 30, 5), d3 = depth_field(40, 30, 6);
    CHECK(torch::equal(d1, d2));
    CHECK_FALSE(torch::equal(d1, d3));
    CHECK(d1.min().item<double>() >= 0);
    CHECK(d1.max().item<double>() <= 1);
  }

  TEST_CASE("synthetic datasets round trip through the manifest") {
    const auto root = scratch_dir("synth");
    const auto manifest = write_synthetic_dataset(root, DegradationKind::snow, 4, 32, 11);
    auto pairs = load_manifest(manifest);
    REQUIRE(pairs.size() == 4);
    CHECK(pairs[0].clean.pixels.sizes() == torch::IntArrayRef{3, 32, 32});
    CHECK_FALSE(torch::equal(pairs[0].clean.pixels, pairs[0].degraded.pixels));
    auto folders = load_paired_folders(root / "clean", root / "degraded");
    CHECK(folders.size() == 4);
    const auto again = scratch_dir("synth2");
    auto pairs2 = load_manifest(write_synthetic_dataset(again, DegradationKind::snow, 4, 32, 11));
    CHECK(torch::equal(pairs[3].degraded.pixels, pairs2[3].degraded.pixels));
  }
}
