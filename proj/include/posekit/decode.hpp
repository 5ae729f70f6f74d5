#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "posekit/common.hpp"
#include "posekit/diff.hpp"
#include "posekit/errors.hpp"
#include "posekit/geometry.hpp"
#include "posekit/losses.hpp"

namespace posekit {

// One raw head output slot, before any activation.
struct RawDetection {
  double score_logit = 0;
  std::array<double, 4> box{};   // cx, cy, w, h (pixels)
  std::array<double, 9> rot9{};  // row-major unconstrained matrix
  double depth_logit = 0;
  double ox = 0, oy = 0;  // absolute-pixel projection of the object origin
  struct Kp {
    double u = 0, v = 0, vis_logit = 0;
  };
  std::array<Kp, 9> kps{};
};

struct Detection6D {
  Pose pose;
  double score = 0;
  Box2D box;
  std::array<Keypoint2D, 9> kps{};
};

inline Detection6D decode_one(const RawDetection& raw, const CameraModel& cam) {
  Detection6D det;
  det.score = diff::stable_sigmoid(raw.score_logit);
  const double sigma = diff::stable_sigmoid(raw.depth_logit);
  const double tz = depth_decode(sigma, cam);
  det.pose.t = backproject_center(cam, raw.ox, raw.oy, tz);
  NineD nine;
  nine.v = raw.rot9;
  det.pose.r = svd_project_so3(nine);
  det.box = Box2D{raw.box[0], raw.box[1], raw.box[2], raw.box[3]};
  for (int i = 0; i < 9; ++i) {
    det.kps[static_cast<size_t>(i)] =
        Keypoint2D{raw.kps[static_cast<size_t>(i)].u, raw.kps[static_cast<size_t>(i)].v,
                   diff::stable_sigmoid(raw.kps[static_cast<size_t>(i)].vis_logit) > 0.5};
  }
  return det;
}

// Inverse of decode_one for a known pose (box/keypoints filled from the
// given values): used by round-trip tests and fixture generators.
inline RawDetection encode_detection(const Pose& pose, const CameraModel& cam,
                                     double score = 0.9) {
  RawDetection raw;
  const double sigma = depth_encode(pose.t.z(), cam);
  if (!(sigma > 0.0 && sigma < 1.0)) {
    throw RangeError("encode_detection: depth on the open interval required for a logit");
  }
  raw.depth_logit = std::log(sigma / (1.0 - sigma));
  raw.score_logit = std::log(score / (1.0 - score));
  const PixelDepth center = project_point(cam, pose, Vec3::Zero());
  raw.ox = center.u;
  raw.oy = center.v;
  raw.rot9 = NineD::from_matrix(pose.r.matrix()).v;
  return raw;
}

inline double box_iou(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.cx + a.w / 2, b.cx + b.w / 2) -
                    std::max(a.cx - a.w / 2, b.cx - b.w / 2);
  const double ih = std::min(a.cy + a.h / 2, b.cy + b.h / 2) -
                    std::max(a.cy - a.h / 2, b.cy - b.h / 2);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

namespace detail {
inline bool detection_order(const Detection6D& a, const Detection6D& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
  return a.box.cy < b.box.cy;
}
}  // namespace detail

// Greedy score-descending suppression by 2D box IoU. Ties break by
// (score, box cx, box cy) so the result is deterministic.
inline std::vector<Detection6D> nms(std::vector<Detection6D> dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw RangeError("nms: iou_threshold must be in (0,1)");
  }
  std::sort(dets.begin(), dets.end(), detail::detection_order);
  std::vector<Detection6D> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (box_iou(d.box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct DecodeStats {
  int dropped_low_score = 0;
  int dropped_degenerate = 0;
};

// filter by score -> decode -> NMS; output ordered by descending score.
inline std::vector<Detection6D> batch_decode(const std::vector<RawDetection>& raws,
                                             const CameraModel& cam, double score_threshold,
                                             double iou_threshold,
                                             DecodeStats* stats = nullptr) {
  std::vector<Detection6D> dets;
  DecodeStats local;
  for (const auto& raw : raws) {
    if (diff::stable_sigmoid(raw.score_logit) < score_threshold) {
      ++local.dropped_low_score;
      continue;
    }
    try {
      dets.push_back(decode_one(raw, cam));
    } catch (const DegenerateMatrix&) {
      ++local.dropped_degenerate;
    }
  }
  auto kept = nms(std::move(dets), iou_threshold);
  if (stats) *stats = local;
  return kept;
}

}  // namespace posekit
