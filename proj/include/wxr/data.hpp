#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace wxr {

using Rng = std::mt19937_64;

/// RGB raster in the [0, 1] storage domain, held as a 3 x H x W float tensor.
struct Image {
  torch::Tensor pixels;

  int64_t height() const { return pixels.size(1); }
  int64_t width() const { return pixels.size(2); }
};

/// Validates shape (3 x H x W, H, W >= 1) and range, returning a float32 image.
Image make_image(const torch::Tensor& pixels);

/// [0, 1] image -> 1 x 3 x H x W tensor in [-1, 1].
torch::Tensor to_network(const Image& img);
/// Inverse of to_network (batch of one), clamped into [0, 1].
Image from_network(const torch::Tensor& t);

/// Decodes PNG/JPEG; throws std::runtime_error if unreadable.
Image load_image(const std::filesystem::path& path);
/// Writes an 8-bit PNG (or whatever the extension selects).
void save_image(const std::filesystem::path& path, const Image& img);

Image resize_bilinear(const Image& img, int64_t height, int64_t width);
Image crop(const Image& img, int64_t y, int64_t x, int64_t height, int64_t width);

/// A corpus entry: a file on disk or an in-memory image.
struct ImageRef {
  std::filesystem::path path;
  std::shared_ptr<const Image> image;

  Image fetch() const;
};

/// Degraded (A) and clean (B) images with no pairing between them.
struct UnpairedCorpus {
  std::vector<ImageRef> domain_a;
  std::vector<ImageRef> domain_b;
  size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// Lexicographically ordered image files of two directories. Unreadable files
/// are skipped with a warning (also written to `warn` when given); an empty
/// domain is an error.
UnpairedCorpus load_corpus(const std::filesystem::path& root_a, const std::filesystem::path& root_b,
                           std::ostream* warn = nullptr);

UnpairedCorpus make_corpus(std::vector<Image> domain_a, std::vector<Image> domain_b);

struct AugmentConfig {
  int64_t out_size = 256;
  double min_scale = 0.8;
  double max_scale = 1.0;
};

/// Random square crop with side uniform in [min_scale, max_scale] x min(H, W),
/// bilinearly resized to out_size. Inputs smaller than out_size are upscaled first.
Image augment(const Image& img, Rng& rng, const AugmentConfig& cfg = {});

struct TrainingPair {
  Image a;
  Image b;
  size_t index_a = 0;
  size_t index_b = 0;
};

/// Independent uniform draws from each domain, both augmented.
TrainingPair sample_training_pair(const UnpairedCorpus& corpus, Rng& rng, const AugmentConfig& cfg = {});

// ---------------------------------------------------------------------------
// Synthetic degradations

enum class DegradationKind { haze, rain, snow };

std::string to_string(DegradationKind kind);
DegradationKind degradation_kind_from_string(const std::string& s);

struct HazeParams {
  double beta = 1.0;                          // scattering coefficient, >= 0 (inf allowed)
  std::array<double, 3> airlight{0.9, 0.9, 0.9};  // each in [0, 1]
  uint64_t depth_seed = 0;
};

struct RainParams {
  int64_t streaks = 200;
  double length = 10.0;      // px
  double angle_deg = 75.0;   // from the horizontal
  double intensity = 0.4;    // additive brightness, [0, 1]
};

struct SnowParams {
  int64_t flakes = 150;
  double radius = 1.5;   // px
  double opacity = 0.8;  // [0, 1]
};

struct DegradationSpec {
  DegradationKind kind = DegradationKind::haze;
  HazeParams haze{};
  RainParams rain{};
  SnowParams snow{};

  /// Throws std::invalid_argument when a parameter is out of range.
  void validate() const;
  std::string to_json() const;
  static DegradationSpec from_json(const std::string& text);
};

/// Smooth value-noise depth field in [0.1, 1], H x W, deterministic in seed.
torch::Tensor depth_field(int64_t height, int64_t width, uint64_t seed);

/// I = J t + A (1 - t) with an H x W transmission map.
Image apply_haze(const Image& clean, const torch::Tensor& transmission,
                 const std::array<double, 3>& airlight);

/// Degrades a clean image. Haze uses t = exp(-beta d) over depth_field; rain adds
/// oriented bright streaks; snow alpha-composites bright discs. Output is clipped to [0, 1].
Image synth_degrade(const Image& clean, const DegradationSpec& spec, Rng& rng);

/// Random spec of the given kind with moderate-to-strong severity.
DegradationSpec random_spec(DegradationKind kind, Rng& rng);

/// Procedural clean scene: smooth background, coloured shapes and stripes.
Image synth_scene(int64_t height, int64_t width, Rng& rng);

// ---------------------------------------------------------------------------
// Paired evaluation data

struct PairedSample {
  std::string name;
  Image clean;
  Image degraded;
};

/// Writes <out>/clean/NNNN.png, <out>/degraded/NNNN.png and <out>/manifest.json
/// recording every spec. Returns the manifest path.
std::filesystem::path write_synthetic_dataset(const std::filesystem::path& out, DegradationKind kind,
                                              int64_t count, int64_t size, uint64_t seed);

/// Reads a manifest; relative paths resolve against the manifest's directory.
std::vector<PairedSample> load_manifest(const std::filesystem::path& manifest);

/// Pairs same-named files of two directories.
std::vector<PairedSample> load_paired_folders(const std::filesystem::path& clean_dir,
                                              const std::filesystem::path& degraded_dir);

/// In-memory paired set: `count` scenes degraded with random specs of `kind`.
std::vector<PairedSample> make_synthetic_pairs(DegradationKind kind, int64_t count, int64_t size,
                                               Rng& rng);

}  // namespace wxr
