#include "capsfield/lightfield/light_field.hpp"

#include <string>

#include "capsfield/errors.hpp"

namespace capsfield::lightfield {

SubApertureImage::SubApertureImage(std::size_t height, std::size_t width, std::size_t channels,
                                   std::vector<float> pixels)
    : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
  if (height_ < kMinImageSide || width_ < kMinImageSide)
    throw ConfigError("sub-aperture image must be at least 8x8, got " + std::to_string(height_) +
                      "x" + std::to_string(width_));
  if (channels_ != 1 && channels_ != 3)
    throw ConfigError("sub-aperture image must have 1 or 3 channels");
  if (pixels_.size() != height_ * width_ * channels_)
    throw ConfigError("pixel buffer does not match image dimensions");
  for (float p : pixels_)
    if (!(p >= 0.0f && p <= 1.0f)) throw ConfigError("pixel value outside [0, 1]");
}

numerics::Tensor SubApertureImage::to_tensor() const {
  return numerics::Tensor({channels_, height_, width_},
                          std::vector<double>(pixels_.begin(), pixels_.end()));
}

SubApertureImage SubApertureImage::from_tensor(const numerics::Tensor& chw) {
  if (chw.rank() != 3) throw FormatError("view tensor must be [C, H, W], got " + numerics::to_string(chw.shape()));
  std::vector<float> pixels(chw.size());
  for (std::size_t i = 0; i < chw.size(); ++i) pixels[i] = static_cast<float>(chw[i]);
  return SubApertureImage(chw.dim(1), chw.dim(2), chw.dim(0), std::move(pixels));
}

SAArray::SAArray(std::size_t side, std::vector<SubApertureImage> views, SampleMetadata metadata)
    : side_(side), views_(std::move(views)), metadata_(std::move(metadata)) {
  if (side_ == 0 || side_ % 2 == 0)
    throw ConfigError("light-field grid side must be odd, got " + std::to_string(side_));
  if (views_.size() != side_ * side_)
    throw ConfigError("expected " + std::to_string(side_ * side_) + " views, got " +
                      std::to_string(views_.size()));
  const auto& first = views_.front();
  for (const auto& v : views_) {
    if (v.height() != first.height() || v.width() != first.width() ||
        v.channels() != first.channels())
      throw ConfigError("all views of a light field must share dimensions");
  }
}

const SubApertureImage& SAArray::view(std::size_t row, std::size_t col) const {
  if (row >= side_ || col >= side_) throw ConfigError("view index out of range");
  return views_[row * side_ + col];
}

ViewSequence extract_sequence(const SAArray& lf, Axis axis) {
  ViewSequence seq{axis, {}};
  seq.views.reserve(lf.side());
  const std::size_t mid = lf.center();
  for (std::size_t i = 0; i < lf.side(); ++i)
    seq.views.push_back(axis == Axis::horizontal ? lf.view(mid, i) : lf.view(i, mid));
  return seq;
}

numerics::Tensor to_tensor(const ViewSequence& seq) {
  if (seq.views.empty()) throw ConfigError("empty view sequence");
  const auto& f = seq.views.front();
  const std::size_t per_view = f.channels() * f.height() * f.width();
  numerics::Tensor out({seq.views.size(), f.channels(), f.height(), f.width()}, 0.0);
  for (std::size_t v = 0; v < seq.views.size(); ++v) {
    const auto& view = seq.views[v];
    if (view.pixels().size() != per_view)
      throw ShapeError("views of a sequence must share dimensions");
    for (std::size_t i = 0; i < per_view; ++i) out[v * per_view + i] = view.pixels()[i];
  }
  return out;
}

}  // namespace capsfield::lightfield
