#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "simpgan/pairs.hpp"
#include "simpgan/rng.hpp"
#include "simpgan/tensor.hpp"

namespace simpgan {

enum class Domain { source, target };

const char* domain_name(Domain d);
Domain domain_from_name(const std::string& name);

/// Global appearance transform that separates the two camera domains:
/// background palette, brightness, color cast, blur and sensor noise.
/// All parameters act on the [0,1] pixel scale. palette_seed == 0 keeps
/// the flat neutral background of the base render.
struct DomainStyle {
  double brightness = 0.0;
  std::array<double, 3> color_cast{1.0, 1.0, 1.0};
  double noise_std = 0.0;
  int blur_radius = 0;
  std::uint64_t palette_seed = 0;
};

/// Named presets: "null", "bright" (source-like), "dark" (target-like).
DomainStyle style_preset(const std::string& name);

/// Parses either a preset name or a parameter list such as
/// "brightness=-0.3,cast=0.7:0.8:1.2,noise=0.08,blur=1,palette=3".
DomainStyle parse_style(const std::string& text);

/// Stable per-identity appearance: clothing colors and body proportions.
/// Views of one identity share this vector; only pose jitter varies.
struct IdentityAppearance {
  std::array<double, 3> torso_rgb;
  std::array<double, 3> legs_rgb;
  std::array<double, 3> skin_rgb;
  double torso_width;   // fraction of image width
  double torso_height;  // fraction of image height
  double leg_length;    // fraction of image height
  double head_radius;   // fraction of image height
};

IdentityAppearance identity_appearance(std::uint64_t seed, int identity);

/// Style-independent render of one identity view: sprite over a flat
/// neutral background, plus the sprite coverage mask.
struct BaseRender {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;         // H*W*3 in [0,1]
  std::vector<std::uint8_t> mask; // H*W, 1 where the sprite covers the pixel
};

BaseRender render_base(std::uint64_t seed, int identity, int view, int height, int width);

/// Applies a DomainStyle to a base render and quantizes to 8 bits.
/// `style_rng` supplies the background pick and the noise draws.
std::vector<std::uint8_t> apply_style(const BaseRender& base, const DomainStyle& style,
                                      Rng style_rng);

struct ImageSample {
  std::vector<std::uint8_t> pixels;  // H*W*3 row-major RGB
  int identity = 0;
  Domain domain = Domain::source;
  int view = 0;
};

/// In-memory dataset. Identity labels sit behind an access flag: while
/// labels are locked (the unsupervised-training contract for the target
/// domain) any identity read throws.
class Dataset {
 public:
  Dataset() = default;
  Dataset(int height, int width) : height_(height), width_(width) {}

  int height() const { return height_; }
  int width() const { return width_; }
  int size() const { return static_cast<int>(samples_.size()); }
  int num_identities() const { return num_identities_; }

  void add(ImageSample sample);

  const std::vector<std::uint8_t>& pixels(int i) const { return samples_.at(i).pixels; }
  Domain domain(int i) const { return samples_.at(i).domain; }
  int view(int i) const { return samples_.at(i).view; }
  int identity(int i) const;

  bool labels_locked() const { return labels_locked_; }
  void lock_labels() { labels_locked_ = true; }
  void unlock_labels() { labels_locked_ = false; }

  /// [1,3,H,W] tensor in [-1,1].
  Tensor<float> image_tensor(int i) const;

 private:
  int height_ = 64;
  int width_ = 32;
  int num_identities_ = 0;
  bool labels_locked_ = false;
  std::vector<ImageSample> samples_;
};

/// Re-locks a dataset's labels for a scope.
class LabelLockGuard {
 public:
  explicit LabelLockGuard(Dataset& ds) : ds_(ds), was_locked_(ds.labels_locked()) {
    ds_.lock_labels();
  }
  ~LabelLockGuard() {
    if (!was_locked_) ds_.unlock_labels();
  }
  LabelLockGuard(const LabelLockGuard&) = delete;
  LabelLockGuard& operator=(const LabelLockGuard&) = delete;

 private:
  Dataset& ds_;
  bool was_locked_;
};

struct GenSpec {
  int num_identities = 20;
  int views_per_identity = 8;
  DomainStyle style;
  std::uint64_t seed = 1;
  Domain domain = Domain::source;
  int height = 64;
  int width = 32;
};

Dataset generate_dataset(const GenSpec& spec);

/// One labeled pair of source images.
struct SourcePair {
  Tensor<float> img1, img2;
  PairLabel label;
  int idx1 = -1, idx2 = -1;
};

/// Four-image training unit: a labeled source pair plus an unlabeled
/// target pair.
struct PairBatch {
  SourcePair source;
  Tensor<float> target1, target2;
  int tidx1 = -1, tidx2 = -1;
};

SourcePair sample_source_pair(const Dataset& source, double positive_ratio, Rng& rng);
PairBatch sample_pair_batch(const Dataset& source, const Dataset& target, double positive_ratio,
                            Rng& rng);

// On-disk format: binary PPM (P6, maxval 255) per sample plus a CSV manifest
// `manifest.csv` with header `file,identity,domain,view`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void write_ppm(const std::filesystem::path& path, int width, int height,
               const std::vector<std::uint8_t>& rgb);
std::vector<std::uint8_t> read_ppm(const std::filesystem::path& path, int& width, int& height);

}  // namespace simpgan
