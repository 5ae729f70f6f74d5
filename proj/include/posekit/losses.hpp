#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "posekit/common.hpp"
#include "posekit/diff.hpp"
#include "posekit/errors.hpp"
#include "posekit/geometry.hpp"

namespace posekit {

// Weights of the four loss components. Defaults keep the pixel-scale
// keypoint term from dominating the angular/normalized terms.
struct LossWeights {
  double lambda_r = 1.0;
  double lambda_t = 1.0;
  double lambda_kp = 0.1;
  double lambda_bb = 1.0;

  void validate() const {
    if (lambda_r < 0 || lambda_t < 0 || lambda_kp < 0 || lambda_bb < 0) {
      throw Error("LossWeights: lambdas must be nonnegative");
    }
  }
};

// Axis-aligned 2D box in center/size form (pixels).
struct Box2D {
  double cx = 0, cy = 0, w = 1, h = 1;

  void validate() const {
    if (!(w > 0) || !(h > 0)) throw InvalidBox("Box2D: w and h must be positive");
  }
};

inline constexpr int kNumKeypoints = 9;

// Predictions and ground truth for B instances x 9 keypoints.
struct KeypointBatch {
  std::vector<std::array<Vec2, kNumKeypoints>> pred;
  std::vector<std::array<Vec2, kNumKeypoints>> gt;
  std::vector<std::array<std::uint8_t, kNumKeypoints>> vis;

  std::size_t size() const { return pred.size(); }

  void validate() const {
    if (gt.size() != pred.size() || vis.size() != pred.size()) {
      throw ShapeError("KeypointBatch: pred/gt/vis sizes differ");
    }
    for (const auto& inst : vis) {
      for (auto f : inst) {
        if (f > 1) throw Error("KeypointBatch: visibility flags must be 0 or 1");
      }
    }
  }
};

// Scalar loss value with its gradient wrt that loss's own predictions.
struct LossValueGrad {
  double value = 0.0;
  VecX grad;
};

// ---------------------------------------------------------------------------
// Tape builders. These record a loss sub-graph on an existing tape so the
// trainer can chain them after a network forward pass. The standalone loss
// functions below wrap them for direct use.
// ---------------------------------------------------------------------------

// Geodesic distance between the SO(3) projection of a raw 9-vector
// (row-major) and a fixed ground-truth rotation.
inline diff::Tape::NodeId build_rotation_loss(diff::Tape& t, diff::Tape::NodeId pred9,
                                              const Rot3& gt) {
  auto m = t.reshape(pred9, 3, 3);
  auto r = t.svd_project(m);
  auto tr = t.dot(r, t.constant(gt.matrix()));  // trace(R^T R_gt)
  auto arg = t.scale(t.add_const(tr, -1.0), 0.5);
  return t.arccos_clamped(arg);
}

// Geodesic distance between a rotation-valued node and a fixed ground truth.
inline diff::Tape::NodeId build_geodesic_to(diff::Tape& t, diff::Tape::NodeId rot,
                                            const Rot3& gt) {
  auto tr = t.dot(rot, t.constant(gt.matrix()));
  auto arg = t.scale(t.add_const(tr, -1.0), 0.5);
  return t.arccos_clamped(arg);
}

// Smooth L1 (beta = 1) on the normalized depth scale.
inline diff::Tape::NodeId build_translation_loss(diff::Tape& t, diff::Tape::NodeId pred_sigma,
                                                 double gt_sigma, double beta = 1.0) {
  return t.smooth_l1(pred_sigma, t.constant(gt_sigma), beta);
}

// Visibility-masked, count-renormalized keypoint distance for one instance:
// (N_kp / sum_k v_k) * sum_i v_i * |pred_i - gt_i|. Returns -1 when no
// keypoint is visible (the instance contributes nothing).
inline diff::Tape::NodeId build_keypoint_instance_loss(
    diff::Tape& t, const std::array<diff::Tape::NodeId, kNumKeypoints>& pred_uv,
    const std::array<Vec2, kNumKeypoints>& gt,
    const std::array<std::uint8_t, kNumKeypoints>& vis) {
  int n_vis = 0;
  for (auto f : vis) n_vis += f;
  if (n_vis == 0) return -1;
  diff::Tape::NodeId acc = -1;
  for (int i = 0; i < kNumKeypoints; ++i) {
    if (!vis[i]) continue;
    auto d = t.sub(pred_uv[i], t.constant(MatX(gt[i])));
    auto l2 = t.sqrt(t.sum(t.square(d)));
    acc = acc < 0 ? l2 : t.add(acc, l2);
  }
  return t.scale(acc, static_cast<double>(kNumKeypoints) / n_vis);
}

// CIoU between a predicted box (four scalar nodes: cx, cy, w, h) and a fixed
// ground truth: 1 - IoU + rho^2/c^2 + alpha*v. alpha = v / ((1-IoU) + v) is
// treated as a constant (no gradient), the usual convention for this loss.
inline diff::Tape::NodeId build_ciou_loss(diff::Tape& t, diff::Tape::NodeId cx,
                                          diff::Tape::NodeId cy, diff::Tape::NodeId w,
                                          diff::Tape::NodeId h, const Box2D& gt) {
  gt.validate();
  auto half_w = t.scale(w, 0.5), half_h = t.scale(h, 0.5);
  auto x1 = t.sub(cx, half_w), x2 = t.add(cx, half_w);
  auto y1 = t.sub(cy, half_h), y2 = t.add(cy, half_h);
  const double gx1 = gt.cx - gt.w / 2, gx2 = gt.cx + gt.w / 2;
  const double gy1 = gt.cy - gt.h / 2, gy2 = gt.cy + gt.h / 2;

  auto zero = t.constant(0.0);
  auto iw = t.max2(t.sub(t.min2(x2, t.constant(gx2)), t.max2(x1, t.constant(gx1))), zero);
  auto ih = t.max2(t.sub(t.min2(y2, t.constant(gy2)), t.max2(y1, t.constant(gy1))), zero);
  auto inter = t.mul(iw, ih);
  auto area = t.mul(w, h);
  auto uni = t.sub(t.add_const(area, gt.w * gt.h), inter);
  auto iou = t.div(inter, uni);

  auto dx = t.add_const(cx, -gt.cx);
  auto dy = t.add_const(cy, -gt.cy);
  auto rho2 = t.add(t.square(dx), t.square(dy));
  auto cw = t.sub(t.max2(x2, t.constant(gx2)), t.min2(x1, t.constant(gx1)));
  auto ch = t.sub(t.max2(y2, t.constant(gy2)), t.min2(y1, t.constant(gy1)));
  auto c2 = t.add(t.square(cw), t.square(ch));

  const double k = 4.0 / (kPi * kPi);
  auto datan = t.add_const(t.atan(t.div(w, h)), -std::atan2(gt.w, gt.h));
  auto v = t.scale(t.square(datan), k);

  const double v_val = t.value_scalar(v);
  const double s_val = 1.0 - t.value_scalar(iou);
  const double alpha = v_val > 0.0 ? v_val / (s_val + v_val) : 0.0;

  auto loss = t.add_const(t.scale(iou, -1.0), 1.0);
  loss = t.add(loss, t.div(rho2, c2));
  loss = t.add(loss, t.scale(v, alpha));
  return loss;
}

inline diff::Tape::NodeId build_ciou_loss(diff::Tape& t, diff::Tape::NodeId box4,
                                          const Box2D& gt) {
  return build_ciou_loss(t, t.block(box4, 0, 0, 1, 1), t.block(box4, 1, 0, 1, 1),
                         t.block(box4, 2, 0, 1, 1), t.block(box4, 3, 0, 1, 1), gt);
}

// ---------------------------------------------------------------------------
// Standalone per-operation losses (value + gradient wrt predictions).
// ---------------------------------------------------------------------------

inline LossValueGrad rotation_loss(const NineD& pred, const Rot3& gt) {
  diff::Tape t;
  MatX p(9, 1);
  for (int i = 0; i < 9; ++i) p(i, 0) = pred.v[static_cast<size_t>(i)];
  auto leaf = t.leaf(p);
  auto loss = build_rotation_loss(t, leaf, gt);
  t.backward(loss);
  LossValueGrad out;
  out.value = t.value_scalar(loss);
  out.grad = t.grad(leaf).col(0);
  return out;
}

inline LossValueGrad translation_loss(double pred_sigma, double gt_sigma) {
  diff::Tape t;
  auto leaf = t.leaf(pred_sigma);
  auto loss = build_translation_loss(t, leaf, gt_sigma);
  t.backward(loss);
  return LossValueGrad{t.value_scalar(loss), t.grad(leaf).col(0)};
}

// Mean over instances with at least one visible keypoint; instances with
// none contribute 0 and do not count toward the divisor. Gradient layout:
// (u0,v0,...,u8,v8) per instance, concatenated over the batch.
inline LossValueGrad keypoint_loss(const KeypointBatch& batch) {
  batch.validate();
  const std::size_t b = batch.size();
  LossValueGrad out;
  out.grad = VecX::Zero(static_cast<Eigen::Index>(b) * 2 * kNumKeypoints);
  if (b == 0) return out;

  diff::Tape t;
  std::vector<diff::Tape::NodeId> leaves(b);
  diff::Tape::NodeId acc = -1;
  int effective = 0;
  for (std::size_t j = 0; j < b; ++j) {
    MatX p(2 * kNumKeypoints, 1);
    for (int i = 0; i < kNumKeypoints; ++i) {
      p(2 * i, 0) = batch.pred[j][static_cast<size_t>(i)].x();
      p(2 * i + 1, 0) = batch.pred[j][static_cast<size_t>(i)].y();
    }
    leaves[j] = t.leaf(p);
    std::array<diff::Tape::NodeId, kNumKeypoints> uv{};
    for (int i = 0; i < kNumKeypoints; ++i) uv[static_cast<size_t>(i)] = t.block(leaves[j], 2 * i, 0, 2, 1);
    auto inst = build_keypoint_instance_loss(t, uv, batch.gt[j], batch.vis[j]);
    if (inst < 0) continue;
    ++effective;
    acc = acc < 0 ? inst : t.add(acc, inst);
  }
  if (effective == 0) return out;
  auto loss = t.scale(acc, 1.0 / effective);
  t.backward(loss);
  out.value = t.value_scalar(loss);
  for (std::size_t j = 0; j < b; ++j) {
    out.grad.segment(static_cast<Eigen::Index>(j) * 2 * kNumKeypoints, 2 * kNumKeypoints) =
        t.grad(leaves[j]).col(0);
  }
  return out;
}

// Gradient order: (cx, cy, w, h).
inline LossValueGrad ciou_loss(const Box2D& pred, const Box2D& gt) {
  pred.validate();
  diff::Tape t;
  MatX p(4, 1);
  p << pred.cx, pred.cy, pred.w, pred.h;
  auto leaf = t.leaf(p);
  auto loss = build_ciou_loss(t, leaf, gt);
  t.backward(loss);
  return LossValueGrad{t.value_scalar(loss), t.grad(leaf).col(0)};
}

struct LossBreakdown {
  double rotation = 0, translation = 0, keypoint = 0, box = 0;
};

// Weighted sum of the four components; per-component gradients scale by the
// same weights (the total is linear in each component).
inline double total_loss(const LossBreakdown& parts, const LossWeights& w) {
  w.validate();
  return w.lambda_r * parts.rotation + w.lambda_t * parts.translation +
         w.lambda_kp * parts.keypoint + w.lambda_bb * parts.box;
}

inline LossValueGrad total_loss(const LossValueGrad& r, const LossValueGrad& tr,
                                const LossValueGrad& kp, const LossValueGrad& bb,
                                const LossWeights& w) {
  w.validate();
  LossValueGrad out;
  out.value = w.lambda_r * r.value + w.lambda_t * tr.value + w.lambda_kp * kp.value +
              w.lambda_bb * bb.value;
  out.grad = VecX(r.grad.size() + tr.grad.size() + kp.grad.size() + bb.grad.size());
  out.grad << w.lambda_r * r.grad, w.lambda_t * tr.grad, w.lambda_kp * kp.grad,
      w.lambda_bb * bb.grad;
  return out;
}

}  // namespace posekit
