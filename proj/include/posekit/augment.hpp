#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "posekit/common.hpp"
#include "posekit/errors.hpp"
#include "posekit/geometry.hpp"
#include "posekit/image.hpp"
#include "posekit/losses.hpp"

namespace posekit {

// Maximum random gain per HSV channel.
struct HsvGains {
  double hsv_h = 0.0, hsv_s = 0.0, hsv_v = 0.0;

  void validate() const {
    if (hsv_h < 0 || hsv_s < 0 || hsv_v < 0) throw Error("HsvGains: gains must be >= 0");
  }
};

// One training frame with its full ground truth. The binary mask marks
// object pixels (1) vs background (0), row-major, image-sized.
struct LabeledFrame {
  ImageRGB image;
  std::vector<std::uint8_t> mask;
  Pose pose;
  std::array<Keypoint2D, 9> keypoints{};
  Box2D box;

  void validate() const {
    if (mask.size() != static_cast<size_t>(image.width) * image.height) {
      throw ShapeError("LabeledFrame: mask size does not match image");
    }
  }
};

// Per-image random gains r in [-1,1]^3:
//   H' = (H + r_h * hsv_h) mod 1,  S' = clip(S * (1 + r_s * hsv_s)),
//   V' = clip(V * (1 + r_v * hsv_v)).
// Deterministic given the seed. Zero effective deltas return the input
// bit-exactly (no color-space round trip).
inline ImageRGB hsv_jitter(const ImageRGB& img, const HsvGains& g, std::uint64_t seed) {
  g.validate();
  Rng rng(seed);
  const double rh = rng.uniform(-1.0, 1.0);
  const double rs = rng.uniform(-1.0, 1.0);
  const double rv = rng.uniform(-1.0, 1.0);
  const double dh = rh * g.hsv_h, gs = 1.0 + rs * g.hsv_s, gv = 1.0 + rv * g.hsv_v;
  if (dh == 0.0 && gs == 1.0 && gv == 1.0) return img;

  ImageRGB out = img;
  for (size_t i = 0; i + 2 < out.pixels.size(); i += 3) {
    double h, s, v;
    rgb_to_hsv(out.pixels[i], out.pixels[i + 1], out.pixels[i + 2], h, s, v);
    h = std::fmod(h + dh, 1.0);
    if (h < 0) h += 1.0;
    s = std::clamp(s * gs, 0.0, 1.0);
    v = std::clamp(v * gv, 0.0, 1.0);
    double r, gg, b;
    hsv_to_rgb(h, s, v, r, gg, b);
    out.pixels[i] = static_cast<float>(r);
    out.pixels[i + 1] = static_cast<float>(gg);
    out.pixels[i + 2] = static_cast<float>(b);
  }
  return out;
}

// Replaces pixels outside the object mask with a background image (resized
// to the frame size when needed). Labels are untouched.
inline LabeledFrame background_replace(const LabeledFrame& frame, const ImageRGB& bg) {
  frame.validate();
  const ImageRGB resized = resize_bilinear(bg, frame.image.width, frame.image.height);
  if (!resized.same_size(frame.image)) {
    throw ShapeError("background_replace: background does not match frame size");
  }
  LabeledFrame out = frame;
  for (int y = 0; y < out.image.height; ++y) {
    for (int x = 0; x < out.image.width; ++x) {
      if (frame.mask[static_cast<size_t>(y) * out.image.width + x]) continue;
      for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = resized.at(x, y, c);
    }
  }
  return out;
}

inline Box2D hull_of_keypoints(const std::array<Keypoint2D, 9>& kps) {
  double lo_u = kps[0].u, hi_u = kps[0].u, lo_v = kps[0].v, hi_v = kps[0].v;
  for (const auto& k : kps) {
    lo_u = std::min(lo_u, k.u);
    hi_u = std::max(hi_u, k.u);
    lo_v = std::min(lo_v, k.v);
    hi_v = std::max(hi_v, k.v);
  }
  return Box2D{(lo_u + hi_u) / 2, (lo_v + hi_v) / 2, std::max(hi_u - lo_u, 1e-6),
               std::max(hi_v - lo_v, 1e-6)};
}

// Rotates the frame about the camera principal axis: the image is warped by
// H = K Rz(theta) K^-1 (inverse-mapped, bilinear, black fill; mask nearest),
// the pose becomes (Rz R, Rz t), keypoints map through H, the box is the
// axis-aligned hull of the mapped keypoints, and depth labels are unchanged.
inline LabeledFrame rotate_augment(const LabeledFrame& frame, double theta,
                                   const CameraModel& cam) {
  frame.validate();
  LabeledFrame out = frame;

  const Mat3 h = homography_principal_rotation(cam, theta);
  const Mat3 h_inv = homography_principal_rotation(cam, -theta);

  const int w = frame.image.width, ht = frame.image.height;
  float rgb[3];
  for (int y = 0; y < ht; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vec2 src = apply_homography(h_inv, Vec2(x, y));
      sample_bilinear(frame.image, src.x(), src.y(), rgb);
      for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = rgb[c];
      const int sx = static_cast<int>(std::lround(src.x()));
      const int sy = static_cast<int>(std::lround(src.y()));
      out.mask[static_cast<size_t>(y) * w + x] =
          (sx >= 0 && sy >= 0 && sx < w && sy < ht)
              ? frame.mask[static_cast<size_t>(sy) * w + sx]
              : 0;
    }
  }

  const Rot3 rz = rot_z(theta);
  out.pose.r = rz * frame.pose.r;
  out.pose.t = rz * frame.pose.t;
  for (int i = 0; i < 9; ++i) {
    const Vec2 mapped = apply_homography(h, Vec2(frame.keypoints[static_cast<size_t>(i)].u,
                                                 frame.keypoints[static_cast<size_t>(i)].v));
    out.keypoints[static_cast<size_t>(i)].u = mapped.x();
    out.keypoints[static_cast<size_t>(i)].v = mapped.y();
    out.keypoints[static_cast<size_t>(i)].visible = frame.keypoints[static_cast<size_t>(i)].visible;
  }
  out.box = hull_of_keypoints(out.keypoints);
  return out;
}

}  // namespace posekit
