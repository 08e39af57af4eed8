#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "capsfield/lightfield/labels.hpp"
#include "capsfield/numerics/tensor.hpp"

namespace capsfield::lightfield {

inline constexpr std::size_t kMinImageSide = 8;

/// One view of the light field. Pixels are stored channel-major
/// ([C, H, W]) as floats in [0, 1].
class SubApertureImage {
 public:
  SubApertureImage(std::size_t height, std::size_t width, std::size_t channels,
                   std::vector<float> pixels);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::span<const float> pixels() const noexcept { return pixels_; }
  float at(std::size_t channel, std::size_t y, std::size_t x) const {
    return pixels_[(channel * height_ + y) * width_ + x];
  }

  /// [C, H, W] tensor of the pixel values.
  numerics::Tensor to_tensor() const;
  static SubApertureImage from_tensor(const numerics::Tensor& chw);

  friend bool operator==(const SubApertureImage&, const SubApertureImage&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t channels_;
  std::vector<float> pixels_;
};

struct SampleMetadata {
  std::string sample_id;
  int subject = 0;
  Expression expression = Expression::neutral;
  Environment environment = Environment::indoor;
  Distance distance = Distance::close;
  Pose pose = Pose::frontal;
  bool occlusion = false;
  bool action = false;
  DatasetTag dataset = DatasetTag::wild;
  Variation variation = Variation::neutral_frontal;

  friend bool operator==(const SampleMetadata&, const SampleMetadata&) = default;
};

/// One light-field sample: a side x side grid of views, side odd.
class SAArray {
 public:
  /// `views` in row-major grid order. Throws ConfigError on an even or zero
  /// side, a wrong view count, or views with differing dimensions.
  SAArray(std::size_t side, std::vector<SubApertureImage> views, SampleMetadata metadata);

  std::size_t side() const noexcept { return side_; }
  std::size_t center() const noexcept { return (side_ - 1) / 2; }
  const SubApertureImage& view(std::size_t row, std::size_t col) const;
  const std::vector<SubApertureImage>& views() const noexcept { return views_; }
  const SampleMetadata& metadata() const noexcept { return metadata_; }

  friend bool operator==(const SAArray&, const SAArray&) = default;

 private:
  std::size_t side_;
  std::vector<SubApertureImage> views_;
  SampleMetadata metadata_;
};

struct ViewSequence {
  Axis axis;
  std::vector<SubApertureImage> views;
};

/// Horizontal: middle row, columns left to right. Vertical: middle column,
/// rows top to bottom.
ViewSequence extract_sequence(const SAArray& lf, Axis axis);

/// Stacks a sequence into a [V, C, H, W] tensor.
numerics::Tensor to_tensor(const ViewSequence& seq);

}  // namespace capsfield::lightfield
