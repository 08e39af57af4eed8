#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>

#include "capsfield/lightfield/labels.hpp"
#include "capsfield/lightfield/light_field.hpp"
#include "capsfield/numerics/tensor.hpp"

namespace capsfield::lightfield {

enum class Occluder { random, eye_hand, mouth_hand, glasses, sunglasses, mask, hat };
enum class FacialAction { random, closed_eyes, open_mouth };

/// Everything the synthetic renderer needs for one light-field sample.
/// Randomness not pinned here (background layout, occluder placement,
/// pose direction, illumination jitter, noise) comes from the seed passed
/// to synth_generate.
struct SceneSpec {
  int subject = 1;
  std::uint64_t appearance_seed = 0;
  /// Foreground translation in pixels per view step, along columns (h) and rows (v).
  double disparity_h = 1.0;
  double disparity_v = 1.0;
  std::size_t views = 7;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  double noise_sigma = 0.0;

  Expression expression = Expression::neutral;
  Environment environment = Environment::indoor;
  Distance distance = Distance::close;
  Pose pose = Pose::frontal;
  /// -1 looking up, +1 looking down.
  int pitch = 0;
  /// Profile direction: +1 right, -1 left, 0 drawn from the seed.
  int yaw = 0;
  bool occlusion = false;
  Occluder occluder = Occluder::random;
  bool action = false;
  FacialAction action_kind = FacialAction::random;
  DatasetTag dataset = DatasetTag::wild;
  Variation variation = Variation::neutral_frontal;
  /// Extra global gain on top of the environment's lighting.
  double illumination = 1.0;

  /// Throws ConfigError for malformed specs or a foreground that cannot be
  /// placed in the image.
  void validate() const;
};

/// Deterministic renderer for one (spec, seed) pair.
class SceneRenderer {
 public:
  SceneRenderer(const SceneSpec& spec, std::uint64_t seed);

  /// View (row, col): the foreground is translated by
  /// (disparity_v * (row - m), disparity_h * (col - m)), m = (views - 1) / 2.
  SubApertureImage render_view(std::size_t row, std::size_t col) const;
  /// Fractional foreground coverage per pixel, [H, W].
  numerics::Tensor foreground_mask(std::size_t row, std::size_t col) const;
  SAArray render() const;

  const SceneSpec& spec() const noexcept { return spec_; }

 private:
  struct Paint {
    double tone;
    int tint;
  };
  struct Layout;

  bool paint_foreground(double y, double x, Paint& paint) const;
  double background(double y, double x) const;
  std::size_t check_view(std::size_t row, std::size_t col) const;

  SceneSpec spec_;
  std::uint64_t seed_;
  std::shared_ptr<const Layout> layout_;
};

/// Renders the whole grid. Metadata carries the spec's tags; sample_id is empty.
SAArray synth_generate(const SceneSpec& spec, std::uint64_t seed);

}  // namespace capsfield::lightfield
