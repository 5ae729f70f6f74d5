#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "posekit/diff.hpp"
#include "posekit/losses.hpp"

namespace posekit::diff {

// Plain-arithmetic loss values used as the finite-difference side of the
// gradient checks. These deliberately avoid the Tape so the comparison is
// analytic-backward vs an independent forward path.
namespace oracle {

inline double rotation_loss_value(const VecX& m9, const Rot3& gt) {
  NineD n;
  for (int i = 0; i < 9; ++i) n.v[static_cast<size_t>(i)] = m9(i);
  return geodesic_distance(svd_project_so3(n), gt);
}

inline double smooth_l1_value(double pred, double gt, double beta = 1.0) {
  const double x = std::abs(pred - gt);
  return x < beta ? 0.5 * x * x / beta : x - 0.5 * beta;
}

inline double keypoint_loss_value(const KeypointBatch& batch) {
  int effective = 0;
  double total = 0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    int n_vis = 0;
    for (auto f : batch.vis[j]) n_vis += f;
    if (n_vis == 0) continue;
    ++effective;
    double inst = 0;
    for (int i = 0; i < kNumKeypoints; ++i) {
      if (!batch.vis[j][static_cast<size_t>(i)]) continue;
      inst += (batch.pred[j][static_cast<size_t>(i)] - batch.gt[j][static_cast<size_t>(i)]).norm();
    }
    total += inst * kNumKeypoints / n_vis;
  }
  return effective == 0 ? 0.0 : total / effective;
}

// CIoU with alpha pinned to a caller-supplied constant. The analytic
// gradient treats alpha as frozen at the evaluation point, so the FD
// oracle must difference the same fixed-alpha function.
inline double ciou_value_fixed_alpha(const Box2D& p, const Box2D& g, double alpha) {
  const double px1 = p.cx - p.w / 2, px2 = p.cx + p.w / 2;
  const double py1 = p.cy - p.h / 2, py2 = p.cy + p.h / 2;
  const double gx1 = g.cx - g.w / 2, gx2 = g.cx + g.w / 2;
  const double gy1 = g.cy - g.h / 2, gy2 = g.cy + g.h / 2;
  const double iw = std::max(0.0, std::min(px2, gx2) - std::max(px1, gx1));
  const double ih = std::max(0.0, std::min(py2, gy2) - std::max(py1, gy1));
  const double inter = iw * ih;
  const double uni = p.w * p.h + g.w * g.h - inter;
  const double iou = inter / uni;
  const double rho2 = (p.cx - g.cx) * (p.cx - g.cx) + (p.cy - g.cy) * (p.cy - g.cy);
  const double cw = std::max(px2, gx2) - std::min(px1, gx1);
  const double ch = std::max(py2, gy2) - std::min(py1, gy1);
  const double c2 = cw * cw + ch * ch;
  const double dat = std::atan2(g.w, g.h) - std::atan(p.w / p.h);
  const double v = 4.0 / (kPi * kPi) * dat * dat;
  return 1.0 - iou + rho2 / c2 + alpha * v;
}

inline double ciou_alpha(const Box2D& p, const Box2D& g) {
  const double px1 = p.cx - p.w / 2, px2 = p.cx + p.w / 2;
  const double py1 = p.cy - p.h / 2, py2 = p.cy + p.h / 2;
  const double gx1 = g.cx - g.w / 2, gx2 = g.cx + g.w / 2;
  const double gy1 = g.cy - g.h / 2, gy2 = g.cy + g.h / 2;
  const double iw = std::max(0.0, std::min(px2, gx2) - std::max(px1, gx1));
  const double ih = std::max(0.0, std::min(py2, gy2) - std::max(py1, gy1));
  const double inter = iw * ih;
  const double iou = inter / (p.w * p.h + g.w * g.h - inter);
  const double dat = std::atan2(g.w, g.h) - std::atan(p.w / p.h);
  const double v = 4.0 / (kPi * kPi) * dat * dat;
  return v > 0.0 ? v / ((1.0 - iou) + v) : 0.0;
}

}  // namespace oracle

namespace detail {

inline Rot3 random_rotation(Rng& rng) {
  Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  while (q.norm() < 1e-3) q = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  return quat_to_rot(q);
}

// Random 3x3 with safe singular-value gaps and a geodesic argument away
// from the arccos clamp.
inline Mat3 well_conditioned_nine(Rng& rng, const Rot3& gt) {
  for (;;) {
    Mat3 m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = rng.normal();
    SvdProjection f;
    try {
      f = svd_project_so3_full(m);
    } catch (const DegenerateMatrix&) {
      continue;
    }
    const Vec3& s = f.sigma;
    const double margin = 5e-2;
    if (f.sign < 0 && (s(0) - s(2) < margin || s(1) - s(2) < margin)) continue;
    if (s(1) + s(2) < margin) continue;
    const double tr = (f.r.matrix().transpose() * gt.matrix()).trace();
    if (std::abs((tr - 1.0) / 2.0) > 0.98) continue;
    return m;
  }
}

}  // namespace detail

inline std::vector<std::string> grad_check_ops() {
  return {"geodesic", "smooth_l1", "keypoint", "ciou", "gso_rot", "quat_rot", "euler_rot"};
}

// Samples random well-conditioned inputs for the named operation and
// compares the tape gradient against central finite differences of an
// independent plain-arithmetic forward.
inline GradCheckReport grad_check(const std::string& op, int trials, std::uint64_t seed) {
  if (trials < 1) throw Error("grad_check: trials must be >= 1");
  Rng rng(seed);
  GradCheckReport rep{op, 0.0, trials, seed};

  for (int trial = 0; trial < trials; ++trial) {
    double err = 0.0;
    if (op == "geodesic") {
      const Rot3 gt = detail::random_rotation(rng);
      const Mat3 m = detail::well_conditioned_nine(rng, gt);
      VecX x(9);
      for (int i = 0; i < 9; ++i) x(i) = m(i / 3, i % 3);
      auto f = [&](const VecX& p) { return oracle::rotation_loss_value(p, gt); };
      auto a = [&](const VecX& p) {
        NineD n;
        for (int i = 0; i < 9; ++i) n.v[static_cast<size_t>(i)] = p(i);
        return rotation_loss(n, gt).grad;
      };
      err = fd_max_rel_err(f, a, x);
    } else if (op == "smooth_l1") {
      double pred = rng.uniform(-3.0, 3.0);
      const double gt = rng.uniform(-3.0, 3.0);
      while (std::abs(std::abs(pred - gt) - 1.0) < 0.05) pred = rng.uniform(-3.0, 3.0);
      VecX x(1);
      x(0) = pred;
      auto f = [&](const VecX& p) { return oracle::smooth_l1_value(p(0), gt); };
      auto a = [&](const VecX& p) { return translation_loss(p(0), gt).grad; };
      err = fd_max_rel_err(f, a, x);
    } else if (op == "keypoint") {
      const int b = 3;
      KeypointBatch batch;
      batch.pred.resize(b);
      batch.gt.resize(b);
      batch.vis.resize(b);
      for (int j = 0; j < b; ++j) {
        int n_vis = 0;
        for (int i = 0; i < kNumKeypoints; ++i) {
          batch.gt[static_cast<size_t>(j)][static_cast<size_t>(i)] =
              Vec2(rng.uniform(0, 640), rng.uniform(0, 480));
          Vec2 offset(rng.normal(0, 5.0), rng.normal(0, 5.0));
          while (offset.norm() < 0.1) offset = Vec2(rng.normal(0, 5.0), rng.normal(0, 5.0));
          batch.pred[static_cast<size_t>(j)][static_cast<size_t>(i)] =
              batch.gt[static_cast<size_t>(j)][static_cast<size_t>(i)] + offset;
          const std::uint8_t v = rng.uniform() < 0.75 ? 1 : 0;
          batch.vis[static_cast<size_t>(j)][static_cast<size_t>(i)] = v;
          n_vis += v;
        }
        if (n_vis == 0) batch.vis[static_cast<size_t>(j)][0] = 1;
      }
      VecX x(b * 2 * kNumKeypoints);
      for (int j = 0; j < b; ++j)
        for (int i = 0; i < kNumKeypoints; ++i) {
          x(2 * (j * kNumKeypoints + i)) = batch.pred[static_cast<size_t>(j)][static_cast<size_t>(i)].x();
          x(2 * (j * kNumKeypoints + i) + 1) = batch.pred[static_cast<size_t>(j)][static_cast<size_t>(i)].y();
        }
      auto unpack = [&](const VecX& p) {
        KeypointBatch bb = batch;
        for (int j = 0; j < b; ++j)
          for (int i = 0; i < kNumKeypoints; ++i) {
            bb.pred[static_cast<size_t>(j)][static_cast<size_t>(i)] =
                Vec2(p(2 * (j * kNumKeypoints + i)), p(2 * (j * kNumKeypoints + i) + 1));
          }
        return bb;
      };
      auto f = [&](const VecX& p) { return oracle::keypoint_loss_value(unpack(p)); };
      auto a = [&](const VecX& p) { return keypoint_loss(unpack(p)).grad; };
      err = fd_max_rel_err(f, a, x);
    } else if (op == "ciou") {
      auto sample_box = [&]() {
        return Box2D{rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(5, 60),
                     rng.uniform(5, 60)};
      };
      Box2D pred = sample_box(), gt = sample_box();
      auto near_kink = [](const Box2D& p, const Box2D& g) {
        const double e[4] = {(p.cx - p.w / 2) - (g.cx - g.w / 2),
                             (p.cx + p.w / 2) - (g.cx + g.w / 2),
                             (p.cy - p.h / 2) - (g.cy - g.h / 2),
                             (p.cy + p.h / 2) - (g.cy + g.h / 2)};
        for (double d : e)
          if (std::abs(d) < 0.1) return true;
        const double iw = std::min(p.cx + p.w / 2, g.cx + g.w / 2) -
                          std::max(p.cx - p.w / 2, g.cx - g.w / 2);
        const double ih = std::min(p.cy + p.h / 2, g.cy + g.h / 2) -
                          std::max(p.cy - p.h / 2, g.cy - g.h / 2);
        return std::abs(iw) < 0.1 || std::abs(ih) < 0.1;
      };
      while (near_kink(pred, gt)) {
        pred = sample_box();
        gt = sample_box();
      }
      const double alpha = oracle::ciou_alpha(pred, gt);
      VecX x(4);
      x << pred.cx, pred.cy, pred.w, pred.h;
      auto f = [&](const VecX& p) {
        return oracle::ciou_value_fixed_alpha(Box2D{p(0), p(1), p(2), p(3)}, gt, alpha);
      };
      auto a = [&](const VecX& p) {
        return ciou_loss(Box2D{p(0), p(1), p(2), p(3)}, gt).grad;
      };
      err = fd_max_rel_err(f, a, x);
    } else if (op == "gso_rot" || op == "quat_rot" || op == "euler_rot") {
      const Rot3 gt = detail::random_rotation(rng);
      int dim = op == "gso_rot" ? 6 : (op == "quat_rot" ? 4 : 3);
      VecX x(dim);
      for (;;) {
        for (int i = 0; i < dim; ++i)
          x(i) = op == "euler_rot" ? rng.uniform(-1.3, 1.3) : rng.normal();
        try {
          Rot3 r = Rot3::identity();
          if (op == "gso_rot") {
            SixD s{Vec3(x.segment<3>(0)), Vec3(x.segment<3>(3))};
            if (s.a.norm() < 0.3 || s.b.norm() < 0.3) continue;
            if (std::abs(s.a.normalized().dot(s.b.normalized())) > 0.95) continue;
            r = gso_to_rot(s);
          } else if (op == "quat_rot") {
            Quat q{x(0), x(1), x(2), x(3)};
            if (q.norm() < 0.3) continue;
            r = quat_to_rot(q);
          } else {
            r = euler_to_rot(x(0), x(1), x(2));
          }
          const double tr = (r.matrix().transpose() * gt.matrix()).trace();
          if (std::abs((tr - 1.0) / 2.0) > 0.98) continue;
          break;
        } catch (const DegenerateInput&) {
          continue;
        }
      }
      auto value = [&](const VecX& p) {
        Rot3 r = Rot3::identity();
        if (op == "gso_rot") {
          r = gso_to_rot(SixD{Vec3(p.segment<3>(0)), Vec3(p.segment<3>(3))});
        } else if (op == "quat_rot") {
          r = quat_to_rot(Quat{p(0), p(1), p(2), p(3)});
        } else {
          r = euler_to_rot(p(0), p(1), p(2));
        }
        return geodesic_distance(r, gt);
      };
      auto analytic = [&](const VecX& p) {
        Tape t;
        auto leaf = t.leaf(MatX(p));
        Tape::NodeId rot;
        if (op == "gso_rot") {
          rot = t.gso_rot(leaf);
        } else if (op == "quat_rot") {
          rot = t.quat_rot(leaf);
        } else {
          rot = t.euler_rot(leaf);
        }
        auto loss = build_geodesic_to(t, rot, gt);
        t.backward(loss);
        return VecX(t.grad(leaf).col(0));
      };
      err = fd_max_rel_err(value, analytic, x);
    } else {
      throw LookupError("grad_check: unknown op '" + op + "'");
    }
    rep.max_rel_err = std::max(rep.max_rel_err, err);
  }
  return rep;
}

}  // namespace posekit::diff
