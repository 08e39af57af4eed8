#include "capsfield/lightfield/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "capsfield/errors.hpp"
#include "capsfield/numerics/rng.hpp"

namespace capsfield::lightfield {

namespace {

enum Tint : int { kSkin, kHair, kEye, kMouth, kOccluder, kBackground, kTintCount };

constexpr int kSupersample = 2;

double distance_scale(Distance d) {
  switch (d) {
    case Distance::close: return 1.0;
    case Distance::moderate: return 0.85;
    case Distance::far: return 0.7;
  }
  return 1.0;
}

double sq(double v) { return v * v; }

struct Blob {
  double y, x, r, tone;
};

}  // namespace

struct SceneRenderer::Layout {
  // Face centre in the central view.
  double cy = 0, cx = 0;
  double rx = 0, ry = 0;
  double skin = 0, hair = 0, hairline = 0;
  double tex_amp = 0, tex_freq = 0, tex_phase = 0;

  // Facial features, in face-local coordinates before the pose shift.
  double feat_dx = 0, feat_dy = 0;
  double eye_dx = 0, eye_y = 0, eye_r = 0, eye_tone = 0, eye_scale = 1;
  int hidden_eye = 0;  // side (-1/+1) not visible in full profile
  double far_eye_scale = 1;
  bool closed_eyes = false;
  double brow_lift = 0, brow_drop = 0, brow_tone = 0;
  double nose_tone = 0;
  double mouth_y = 0, mouth_w = 0, mouth_t = 0, mouth_curv = 0, mouth_tilt = 0, mouth_tone = 0;
  bool mouth_open = false;
  double open_rx = 0, open_ry = 0;
  bool has_mark = false;
  double mark_y = 0, mark_x = 0, mark_r = 0, mark_tone = 0;

  bool has_occluder = false;
  bool occluder_follows_features = false;
  double oc_y0 = 0, oc_y1 = 0, oc_x0 = 0, oc_x1 = 0, oc_tone = 0;

  double gain = 1;
  bool shadow = false;
  double shadow_factor = 1;
  int shadow_side = 1;

  double bg_base = 0, bg_gy = 0, bg_gx = 0, bg_tex = 0;
  std::vector<Blob> blobs;
  std::array<std::array<double, 3>, kTintCount> tints{};
};

void SceneSpec::validate() const {
  if (views == 0 || views % 2 == 0)
    throw ConfigError("scene views per side must be odd, got " + std::to_string(views));
  if (height < kMinImageSide || width < kMinImageSide)
    throw ConfigError("image too small: minimum side is 8 pixels");
  if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  if (!std::isfinite(disparity_h) || !std::isfinite(disparity_v))
    throw ConfigError("disparity must be finite");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ConfigError("noise sigma must be non-negative");
  if (!(illumination > 0.0) || !std::isfinite(illumination))
    throw ConfigError("illumination gain must be positive");
  if (pitch < -1 || pitch > 1) throw ConfigError("pitch must be -1, 0 or +1");
  if (yaw < -1 || yaw > 1) throw ConfigError("yaw must be -1, 0 or +1");
  const double half = static_cast<double>(views - 1) / 2.0;
  const double max_dx = std::abs(disparity_h) * half;
  const double max_dy = std::abs(disparity_v) * half;
  if (max_dx > static_cast<double>(width) / 2.0 - 2.0 ||
      max_dy > static_cast<double>(height) / 2.0 - 2.0) {
    throw ConfigError("image too small to place foreground: parallax of " +
                      std::to_string(std::max(max_dx, max_dy)) + " px exceeds the frame");
  }
}

SceneRenderer::SceneRenderer(const SceneSpec& spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
  spec_.validate();
  auto layout = std::make_shared<Layout>();
  Layout& L = *layout;

  const double side = static_cast<double>(std::min(spec_.height, spec_.width));
  const double k = distance_scale(spec_.distance);

  // Subject identity: a function of the appearance seed only.
  numerics::Rng who(spec_.appearance_seed, "appearance");
  const double rx0 = who.uniform(0.24, 0.32);
  const double aspect = who.uniform(1.15, 1.35);
  L.skin = who.uniform(0.45, 0.85);
  L.hair = who.uniform(0.05, 0.30);
  const double hairline = who.uniform(0.35, 0.65);
  L.tex_amp = who.uniform(0.0, 0.08);
  L.tex_freq = who.uniform(0.3, 1.0);
  L.tex_phase = who.uniform(0.0, 6.283185307179586);
  const double eye_dx = who.uniform(0.30, 0.45);
  const double eye_y = who.uniform(0.05, 0.25);
  const double eye_r = who.uniform(0.09, 0.15);
  L.eye_tone = who.uniform(0.0, 0.2);
  L.brow_lift = who.uniform(0.0, 0.4);
  const double mouth_y = who.uniform(0.35, 0.55);
  const double mouth_w = who.uniform(0.25, 0.45);
  const double mouth_t = who.uniform(0.07, 0.11);
  L.mouth_tone = who.uniform(0.10, 0.35);
  L.has_mark = who.coin(0.7);
  const double mark_x = who.uniform(-0.6, 0.6);
  const double mark_y = who.uniform(0.0, 0.5);
  const double mark_r = who.uniform(0.06, 0.12);
  L.mark_tone = L.skin * who.uniform(0.3, 0.6);
  const std::array<double, 3> skin_tint{1.0, who.uniform(0.75, 0.9), who.uniform(0.6, 0.8)};

  L.rx = rx0 * side * k;
  L.ry = L.rx * aspect;
  L.hairline = -L.ry * hairline;
  L.tex_freq /= k;
  L.eye_dx = eye_dx * L.rx;
  L.eye_y = -eye_y * L.ry;
  L.eye_r = eye_r * L.rx;
  L.brow_lift *= L.eye_r;
  L.brow_tone = L.hair * 0.8;
  L.nose_tone = L.skin * 0.8;
  L.mouth_y = mouth_y * L.ry;
  L.mouth_w = mouth_w * L.rx;
  L.mouth_t = mouth_t * L.ry;
  L.mark_x = mark_x * L.rx;
  L.mark_y = mark_y * L.ry;
  L.mark_r = mark_r * L.rx;

  // Per-sample randomness.
  numerics::Rng rng(seed, "scene");
  L.cy = static_cast<double>(spec_.height) / 2.0 + rng.uniform(-1.0, 1.0);
  L.cx = static_cast<double>(spec_.width) / 2.0 + rng.uniform(-1.0, 1.0);
  const bool coin_right = rng.coin();
  const int direction = spec_.yaw != 0 ? spec_.yaw : (coin_right ? 1 : -1);

  switch (spec_.pose) {
    case Pose::frontal: break;
    case Pose::half_profile:
      L.feat_dx = direction * 0.3 * L.rx;
      L.rx *= 0.9;
      L.far_eye_scale = 0.75;
      break;
    case Pose::full_profile:
      L.feat_dx = direction * 0.55 * L.rx;
      L.rx *= 0.8;
      L.hidden_eye = -direction;
      L.mouth_w *= 0.6;
      break;
  }
  L.feat_dy = spec_.pitch * 0.2 * L.ry;

  switch (spec_.expression) {
    case Expression::neutral: break;
    case Expression::happiness:
      L.eye_scale = 0.85;
      L.mouth_curv = 0.14 * L.ry;
      L.mouth_w *= 1.1;
      break;
    case Expression::anger:
      L.brow_drop = 1.0;
      L.mouth_w *= 0.7;
      L.mouth_t *= 1.3;
      break;
    case Expression::surprise:
      L.eye_scale = 1.3;
      L.brow_lift += 0.5 * L.eye_r;
      L.mouth_open = true;
      L.open_rx = 0.45 * L.mouth_w;
      L.open_ry = 0.16 * L.ry;
      break;
    case Expression::sadness:
      L.brow_drop = -1.0;
      L.mouth_curv = -0.12 * L.ry;
      break;
    case Expression::disgust:
      L.mouth_tilt = 0.25;
      L.mouth_curv = -0.05 * L.ry;
      L.mouth_w *= 0.9;
      L.brow_drop = 0.5;
      break;
  }

  if (spec_.action) {
    FacialAction kind = spec_.action_kind;
    if (kind == FacialAction::random) kind = rng.coin() ? FacialAction::closed_eyes : FacialAction::open_mouth;
    if (kind == FacialAction::closed_eyes) {
      L.closed_eyes = true;
    } else {
      L.mouth_open = true;
      L.open_rx = 0.6 * L.mouth_w;
      L.open_ry = 0.2 * L.ry;
    }
  }

  if (spec_.occlusion) {
    Occluder kind = spec_.occluder;
    if (kind == Occluder::random) kind = static_cast<Occluder>(1 + rng.index(6));
    L.has_occluder = true;
    L.occluder_follows_features = true;
    const double er = L.eye_r;
    switch (kind) {
      case Occluder::random:
      case Occluder::eye_hand: {
        const double side_x = (rng.coin() ? 1.0 : -1.0) * L.eye_dx;
        L.oc_y0 = L.eye_y - 1.5 * er;
        L.oc_y1 = L.eye_y + 1.5 * er;
        L.oc_x0 = side_x - 1.6 * er;
        L.oc_x1 = side_x + 1.6 * er;
        L.oc_tone = rng.uniform(0.55, 0.85);
        break;
      }
      case Occluder::mouth_hand:
        L.oc_y0 = L.mouth_y - 2.0 * L.mouth_t;
        L.oc_y1 = L.mouth_y + 3.0 * L.mouth_t;
        L.oc_x0 = -1.3 * L.mouth_w;
        L.oc_x1 = 1.3 * L.mouth_w;
        L.oc_tone = rng.uniform(0.55, 0.85);
        break;
      case Occluder::glasses:
      case Occluder::sunglasses:
        L.oc_y0 = L.eye_y - 1.3 * er;
        L.oc_y1 = L.eye_y + 1.3 * er;
        L.oc_x0 = -(L.eye_dx + 1.6 * er);
        L.oc_x1 = L.eye_dx + 1.6 * er;
        L.oc_tone = kind == Occluder::glasses ? 0.35 : 0.05;
        break;
      case Occluder::mask:
        L.occluder_follows_features = false;
        L.oc_y0 = 0.5 * (L.eye_y + L.mouth_y);
        L.oc_y1 = 0.95 * L.ry;
        L.oc_x0 = -0.9 * L.rx;
        L.oc_x1 = 0.9 * L.rx;
        L.oc_tone = 0.9;
        break;
      case Occluder::hat:
        L.occluder_follows_features = false;
        L.oc_y0 = -1.3 * L.ry;
        L.oc_y1 = L.hairline + 0.1 * L.ry;
        L.oc_x0 = -1.15 * L.rx;
        L.oc_x1 = 1.15 * L.rx;
        L.oc_tone = rng.uniform(0.1, 0.5);
        break;
    }
  }

  // Environment: background statistics and global lighting.
  std::array<double, 3> bg_tint{1.0, 1.0, 1.0};
  switch (spec_.dataset == DatasetTag::constrained ? Environment::indoor : spec_.environment) {
    case Environment::indoor:
      if (spec_.dataset == DatasetTag::constrained) {
        L.bg_base = 0.9;
        L.gain = 1.0;
      } else {
        L.bg_base = rng.uniform(0.35, 0.6);
        L.bg_gy = rng.uniform(-0.1, 0.1);
        L.bg_gx = rng.uniform(-0.1, 0.1);
        L.bg_tex = 0.02;
        L.gain = rng.uniform(0.9, 1.05);
      }
      break;
    case Environment::outdoor: {
      L.bg_base = rng.uniform(0.3, 0.7);
      L.bg_gy = rng.uniform(-0.2, 0.2);
      L.bg_gx = rng.uniform(-0.2, 0.2);
      L.bg_tex = 0.05;
      L.gain = rng.uniform(0.8, 1.2);
      const std::size_t n_blobs = 4 + rng.index(5);
      for (std::size_t i = 0; i < n_blobs; ++i) {
        L.blobs.push_back(Blob{rng.uniform(0.0, static_cast<double>(spec_.height)),
                               rng.uniform(0.0, static_cast<double>(spec_.width)),
                               rng.uniform(1.5, side / 5.0), rng.uniform(0.1, 0.9)});
      }
      L.shadow = rng.coin(0.5);
      L.shadow_factor = rng.uniform(0.8, 0.92);
      L.shadow_side = rng.coin() ? 1 : -1;
      for (double& t : bg_tint) t = rng.uniform(0.85, 1.15);
      break;
    }
  }
  L.gain *= spec_.illumination;

  L.tints[kSkin] = skin_tint;
  L.tints[kHair] = {0.9, 0.8, 0.7};
  L.tints[kEye] = {1.0, 1.0, 1.0};
  L.tints[kMouth] = {1.0, 0.6, 0.6};
  L.tints[kOccluder] = {1.0, 0.95, 0.9};
  L.tints[kBackground] = bg_tint;
  layout_ = std::move(layout);
}

bool SceneRenderer::paint_foreground(double u, double w, Paint& paint) const {
  const Layout& L = *layout_;

  // Feature-relative coordinates.
  const double fu = u - L.feat_dy;
  const double fw = w - L.feat_dx;

  if (L.has_occluder) {
    const double ou = L.occluder_follows_features ? fu : u;
    const double ow = L.occluder_follows_features ? fw : w;
    if (ou >= L.oc_y0 && ou <= L.oc_y1 && ow >= L.oc_x0 && ow <= L.oc_x1) {
      paint = {L.oc_tone, kOccluder};
      return true;
    }
  }

  const double head = sq(w / L.rx) + sq(u / L.ry);
  const bool in_cap = u < L.hairline && sq(w / (1.08 * L.rx)) + sq(u / (1.08 * L.ry)) <= 1.0;
  if (head > 1.0 && !in_cap) return false;
  if (u < L.hairline) {
    paint = {L.hair, kHair};
    return true;
  }

  paint = {L.skin + L.tex_amp * std::sin(L.tex_freq * w + L.tex_phase), kSkin};

  if (L.has_mark && sq(fu - L.mark_y) + sq(fw - L.mark_x) <= sq(L.mark_r)) {
    paint = {L.mark_tone, kSkin};
  }

  // Nose.
  if (std::abs(fw - 0.15 * L.feat_dx) <= 0.07 * L.rx && fu > L.eye_y + L.eye_r &&
      fu < L.mouth_y - 0.35 * (L.mouth_y - L.eye_y)) {
    paint = {L.nose_tone, kSkin};
  }

  for (int s : {-1, 1}) {
    if (L.hidden_eye == s) continue;
    const double side_scale = (L.feat_dx != 0.0 && s * L.feat_dx < 0.0) ? L.far_eye_scale : 1.0;
    const double er = L.eye_r * L.eye_scale * side_scale;
    const double du = fu - L.eye_y;
    const double dw = fw - s * L.eye_dx;
    if (L.closed_eyes) {
      if (std::abs(du) <= 0.25 * L.eye_r && std::abs(dw) <= er) paint = {L.eye_tone, kEye};
    } else if (sq(du) + sq(dw) <= sq(er)) {
      paint = {L.eye_tone, kEye};
    }
    // Brow: inner end lowered by brow_drop (anger > 0, sadness < 0).
    const double half_len = 1.3 * L.eye_r * side_scale;
    if (std::abs(dw) <= half_len) {
      const double base = L.eye_y - 1.9 * L.eye_r - L.brow_lift;
      const double centre = base - L.brow_drop * (s * dw) / half_len * 0.6 * L.eye_r;
      if (std::abs(fu - centre) <= 0.3 * L.eye_r) paint = {L.brow_tone, kHair};
    }
  }

  if (L.mouth_open) {
    if (sq((fu - L.mouth_y) / L.open_ry) + sq(fw / L.open_rx) <= 1.0) paint = {L.mouth_tone * 0.5, kMouth};
  } else if (std::abs(fw) <= L.mouth_w) {
    const double t = fw / L.mouth_w;
    const double centre = L.mouth_y - L.mouth_curv * t * t + L.mouth_tilt * fw;
    if (std::abs(fu - centre) <= 0.5 * L.mouth_t) paint = {L.mouth_tone, kMouth};
  }

  if (L.shadow && w * L.shadow_side > 0.0) paint.tone *= L.shadow_factor;
  return true;
}

double SceneRenderer::background(double y, double x) const {
  const Layout& L = *layout_;
  const double h = static_cast<double>(spec_.height), wd = static_cast<double>(spec_.width);
  double v = L.bg_base + L.bg_gy * (y / h - 0.5) + L.bg_gx * (x / wd - 0.5);
  v += L.bg_tex * std::sin(0.9 * x + 0.4 * y) * std::cos(0.5 * x - 0.7 * y);
  for (const Blob& b : L.blobs)
    if (sq(y - b.y) + sq(x - b.x) <= sq(b.r)) v = b.tone;
  return v;
}

std::size_t SceneRenderer::check_view(std::size_t row, std::size_t col) const {
  if (row >= spec_.views || col >= spec_.views) throw ConfigError("view index out of range");
  return row * spec_.views + col;
}

SubApertureImage SceneRenderer::render_view(std::size_t row, std::size_t col) const {
  const std::size_t index = check_view(row, col);
  const Layout& L = *layout_;
  const double m = static_cast<double>(spec_.views - 1) / 2.0;
  const double ty = spec_.disparity_v * (static_cast<double>(row) - m);
  const double tx = spec_.disparity_h * (static_cast<double>(col) - m);
  const std::size_t H = spec_.height, W = spec_.width, C = spec_.channels;

  numerics::Rng noise(numerics::derive_seed(numerics::derive_seed(seed_, "noise"), index));
  std::vector<float> pixels(C * H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      std::array<double, 3> acc{0.0, 0.0, 0.0};
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double py = static_cast<double>(y) + (sy + 0.5) / kSupersample;
          const double px = static_cast<double>(x) + (sx + 0.5) / kSupersample;
          Paint paint{};
          if (paint_foreground(py - L.cy - ty, px - L.cx - tx, paint)) {
            for (std::size_t c = 0; c < C; ++c)
              acc[c] += L.gain * paint.tone * (C == 1 ? 1.0 : L.tints[paint.tint][c]);
          } else {
            const double bg = background(py, px);
            for (std::size_t c = 0; c < C; ++c)
              acc[c] += L.gain * bg * (C == 1 ? 1.0 : L.tints[kBackground][c]);
          }
        }
      }
      for (std::size_t c = 0; c < C; ++c) {
        double v = acc[c] / (kSupersample * kSupersample);
        if (spec_.noise_sigma > 0.0) v += noise.normal(0.0, spec_.noise_sigma);
        pixels[(c * H + y) * W + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return SubApertureImage(H, W, C, std::move(pixels));
}

numerics::Tensor SceneRenderer::foreground_mask(std::size_t row, std::size_t col) const {
  check_view(row, col);
  const Layout& L = *layout_;
  const double m = static_cast<double>(spec_.views - 1) / 2.0;
  const double ty = spec_.disparity_v * (static_cast<double>(row) - m);
  const double tx = spec_.disparity_h * (static_cast<double>(col) - m);
  numerics::Tensor mask({spec_.height, spec_.width}, 0.0);
  for (std::size_t y = 0; y < spec_.height; ++y)
    for (std::size_t x = 0; x < spec_.width; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy)
        for (int sx = 0; sx < kSupersample; ++sx) {
          Paint paint{};
          const double py = static_cast<double>(y) + (sy + 0.5) / kSupersample;
          const double px = static_cast<double>(x) + (sx + 0.5) / kSupersample;
          hits += paint_foreground(py - L.cy - ty, px - L.cx - tx, paint) ? 1 : 0;
        }
      mask.at(y, x) = static_cast<double>(hits) / (kSupersample * kSupersample);
    }
  return mask;
}

SAArray SceneRenderer::render() const {
  std::vector<SubApertureImage> views;
  views.reserve(spec_.views * spec_.views);
  for (std::size_t r = 0; r < spec_.views; ++r)
    for (std::size_t c = 0; c < spec_.views; ++c) views.push_back(render_view(r, c));
  SampleMetadata meta;
  meta.subject = spec_.subject;
  meta.expression = spec_.expression;
  meta.environment = spec_.environment;
  meta.distance = spec_.distance;
  meta.pose = spec_.pose;
  meta.occlusion = spec_.occlusion;
  meta.action = spec_.action;
  meta.dataset = spec_.dataset;
  meta.variation = spec_.variation;
  return SAArray(spec_.views, std::move(views), std::move(meta));
}

SAArray synth_generate(const SceneSpec& spec, std::uint64_t seed) {
  return SceneRenderer(spec, seed).render();
}

}  // namespace capsfield::lightfield
