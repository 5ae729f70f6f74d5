#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "posekit/augment.hpp"
#include "posekit/common.hpp"
#include "posekit/diff.hpp"
#include "posekit/errors.hpp"
#include "posekit/evalkit.hpp"
#include "posekit/geometry.hpp"
#include "posekit/losses.hpp"
#include "posekit/object_model.hpp"

namespace posekit {

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

struct SynthConfig {
  CameraModel cam;
  ObjectModel model;
  int n_frames = 256;
  double noise_px = 0.0;       // iid Gaussian pixel noise on the features
  double occlusion_rate = 0.0; // per-keypoint probability of being zeroed
  std::uint64_t seed = 0;

  void validate() const {
    cam.validate();
    if (noise_px < 0) throw Error("SynthConfig: noise_px must be >= 0");
    if (occlusion_rate < 0 || occlusion_rate > 1) {
      throw Error("SynthConfig: occlusion_rate must be in [0,1]");
    }
    if (n_frames < 1) throw Error("SynthConfig: n_frames must be >= 1");
  }

  // The synthetic rig assumes a centered principal point.
  double image_width() const { return 2.0 * cam.cx; }
  double image_height() const { return 2.0 * cam.cy; }
};

// A 26-point box lattice (corners, edge midpoints, face centers).
inline ObjectModel make_toy_box_model(double hx = 0.06, double hy = 0.045, double hz = 0.03) {
  std::vector<Vec3> pts;
  for (int ix = -1; ix <= 1; ++ix)
    for (int iy = -1; iy <= 1; ++iy)
      for (int iz = -1; iz <= 1; ++iz) {
        if (ix == 0 && iy == 0 && iz == 0) continue;
        pts.push_back(Vec3(ix * hx, iy * hy, iz * hz));
      }
  return ObjectModel::from_points("toybox", std::move(pts));
}

struct SynthSample {
  VecX features;  // 18: (u, v) per keypoint, zeroed when occluded
  Pose pose;
  double sigma = 0;
  Vec2 center = Vec2::Zero();  // projection of the object origin
  std::array<Keypoint2D, 9> keypoints{};
  Box2D box;
};

// Uniform random rotation (normalized Gaussian quaternion), depth uniform in
// [dist_min, dist_max], projected origin uniform in the inner 80% of the
// image. Features are the exact bbox keypoints plus iid pixel noise; each
// keypoint is independently occluded (feature zeroed) with the given rate.
inline std::vector<SynthSample> generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const double w = cfg.image_width(), h = cfg.image_height();
  std::vector<SynthSample> out;
  out.reserve(static_cast<size_t>(cfg.n_frames));
  while (out.size() < static_cast<size_t>(cfg.n_frames)) {
    SynthSample s;
    Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    if (q.norm() < 1e-6) continue;
    s.pose.r = quat_to_rot(q);
    const double tz = rng.uniform(cfg.cam.dist_min, cfg.cam.dist_max);
    const double u = rng.uniform(0.1 * w, 0.9 * w);
    const double v = rng.uniform(0.1 * h, 0.9 * h);
    s.pose.t = backproject_center(cfg.cam, u, v, tz);
    try {
      s.keypoints = bbox9_keypoints(cfg.model, s.pose, cfg.cam);
    } catch (const BehindCamera&) {
      continue;  // resample; possible when the object pokes past dist_min
    }
    s.sigma = depth_encode(tz, cfg.cam);
    s.center = Vec2(u, v);
    s.box = hull_of_keypoints(s.keypoints);
    s.features = VecX::Zero(18);
    for (int i = 0; i < 9; ++i) {
      const bool visible = rng.uniform() >= cfg.occlusion_rate;
      const double nu = rng.normal(0, cfg.noise_px > 0 ? cfg.noise_px : 0.0);
      const double nv = rng.normal(0, cfg.noise_px > 0 ? cfg.noise_px : 0.0);
      s.keypoints[static_cast<size_t>(i)].visible = visible;
      if (visible) {
        s.features(2 * i) = s.keypoints[static_cast<size_t>(i)].u + nu;
        s.features(2 * i + 1) = s.keypoints[static_cast<size_t>(i)].v + nv;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Toy regressor
// ---------------------------------------------------------------------------

enum class RotMode { Svd9, Gso6, Quat, Euler };

inline const char* rot_mode_name(RotMode m) {
  switch (m) {
    case RotMode::Svd9: return "svd9";
    case RotMode::Gso6: return "gso6";
    case RotMode::Quat: return "quat";
    case RotMode::Euler: return "euler";
  }
  return "?";
}

inline RotMode rot_mode_from_name(const std::string& s) {
  if (s == "svd9") return RotMode::Svd9;
  if (s == "gso6") return RotMode::Gso6;
  if (s == "quat") return RotMode::Quat;
  if (s == "euler") return RotMode::Euler;
  throw LookupError("unknown rotation mode '" + s + "'");
}

inline int rot_mode_dim(RotMode m) {
  switch (m) {
    case RotMode::Svd9: return 9;
    case RotMode::Gso6: return 6;
    case RotMode::Quat: return 4;
    case RotMode::Euler: return 3;
  }
  return 0;
}

struct ToyNetConfig {
  std::vector<int> hidden{64, 64};
  RotMode mode = RotMode::Svd9;
  bool kp_head = true;
  std::uint64_t seed = 0;
};

inline constexpr int kFeatureDim = 18;
// Master output rows: 9 rotation + 1 sigma + 2 center + 27 keypoints. Modes
// with smaller rotation heads use a prefix of the rotation rows, so every
// mode consumes identical initialization draws for the shared rows.
inline constexpr int kMasterOut = 39;

struct ToyNet {
  ToyNetConfig cfg;
  std::vector<MatX> weights;
  std::vector<VecX> biases;

  int rot_dim() const { return rot_mode_dim(cfg.mode); }
  int out_dim() const { return rot_dim() + 3 + (cfg.kp_head ? 27 : 0); }
  int sigma_row() const { return rot_dim(); }
  int center_row() const { return rot_dim() + 1; }
  int kp_row() const { return rot_dim() + 3; }

  static ToyNet init(const ToyNetConfig& cfg) {
    ToyNet net;
    net.cfg = cfg;
    std::vector<int> dims;
    dims.push_back(kFeatureDim);
    for (int hd : cfg.hidden) dims.push_back(hd);
    dims.push_back(kMasterOut);
    for (std::size_t layer = 0; layer + 1 < dims.size(); ++layer) {
      Rng rng(cfg.seed ^ (0x9e3779b97f4a7c15ull * (layer + 1)));
      const int fan_in = dims[layer], fan_out = dims[layer + 1];
      const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
      MatX w(fan_out, fan_in);
      for (int r = 0; r < fan_out; ++r)
        for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-k, k);
      VecX b(fan_out);
      for (int r = 0; r < fan_out; ++r) b(r) = rng.uniform(-k, k);
      net.weights.push_back(std::move(w));
      net.biases.push_back(std::move(b));
    }
    // Select the mode's rows out of the master output layer.
    MatX& wout = net.weights.back();
    VecX& bout = net.biases.back();
    std::vector<int> rows;
    for (int i = 0; i < net.rot_dim(); ++i) rows.push_back(i);
    rows.push_back(9);
    rows.push_back(10);
    rows.push_back(11);
    if (cfg.kp_head) {
      for (int i = 12; i < kMasterOut; ++i) rows.push_back(i);
    }
    MatX w2(static_cast<Eigen::Index>(rows.size()), wout.cols());
    VecX b2(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      w2.row(static_cast<Eigen::Index>(i)) = wout.row(rows[i]);
      b2(static_cast<Eigen::Index>(i)) = bout(rows[i]);
    }
    wout = std::move(w2);
    bout = std::move(b2);
    return net;
  }
};

// Stack features (normalized by image size) into an 18 x B matrix.
inline MatX feature_matrix(const std::vector<SynthSample>& data,
                           const std::vector<std::size_t>& idx, const SynthConfig& cfg) {
  MatX x(kFeatureDim, static_cast<Eigen::Index>(idx.size()));
  const double w = cfg.image_width(), h = cfg.image_height();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    for (int i = 0; i < 9; ++i) {
      x(2 * i, static_cast<Eigen::Index>(j)) = data[idx[j]].features(2 * i) / w;
      x(2 * i + 1, static_cast<Eigen::Index>(j)) = data[idx[j]].features(2 * i + 1) / h;
    }
  }
  return x;
}

// Pixel anchor for a residual prediction: the matching input keypoint, or
// the image center when that input slot was zeroed by occlusion.
inline Vec2 residual_anchor(const VecX& features, int kp, const SynthConfig& cfg) {
  const double u = features(2 * kp), v = features(2 * kp + 1);
  if (u == 0.0 && v == 0.0) return Vec2(cfg.image_width() / 2, cfg.image_height() / 2);
  return Vec2(u, v);
}

// Plain (tape-free) forward pass; mirrors the training graph exactly.
// Keypoints and center are residual corrections (in pixels) on top of the
// corresponding input keypoint; the 9th input keypoint anchors the center.
struct NetPrediction {
  Mat3 rot_raw;          // pre-projection 3x3 for svd9 (identity otherwise)
  bool rot_ok = true;    // false when the head output was degenerate
  Rot3 rot;
  double sigma = 0.5;
  Vec2 center_px = Vec2::Zero();
  std::array<Vec2, 9> kps_px{};
};

inline NetPrediction net_predict(const ToyNet& net, const VecX& features,
                                 const SynthConfig& cfg) {
  const double w = cfg.image_width(), h = cfg.image_height();
  VecX x(kFeatureDim);
  for (int i = 0; i < 9; ++i) {
    x(2 * i) = features(2 * i) / w;
    x(2 * i + 1) = features(2 * i + 1) / h;
  }
  for (std::size_t layer = 0; layer + 1 < net.weights.size(); ++layer) {
    x = ((net.weights[layer] * x + net.biases[layer]).array().tanh()).matrix();
  }
  const VecX out = net.weights.back() * x + net.biases.back();

  NetPrediction pred;
  try {
    switch (net.cfg.mode) {
      case RotMode::Svd9: {
        Mat3 m;
        for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = out(i);
        pred.rot_raw = m;
        pred.rot = svd_project_so3(m);
        break;
      }
      case RotMode::Gso6:
        pred.rot = gso_to_rot(SixD{Vec3(out.segment<3>(0)), Vec3(out.segment<3>(3))});
        break;
      case RotMode::Quat:
        pred.rot = quat_to_rot(Quat{out(0), out(1), out(2), out(3)});
        break;
      case RotMode::Euler:
        pred.rot = euler_to_rot(out(0), out(1), out(2));
        break;
    }
  } catch (const Error&) {
    pred.rot_ok = false;
  }
  pred.sigma = diff::stable_sigmoid(out(net.sigma_row()));
  const Vec2 center_anchor = residual_anchor(features, 8, cfg);
  pred.center_px = Vec2(center_anchor.x() + out(net.center_row()),
                        center_anchor.y() + out(net.center_row() + 1));
  if (net.cfg.kp_head) {
    for (int i = 0; i < 9; ++i) {
      const Vec2 anchor = residual_anchor(features, i, cfg);
      pred.kps_px[static_cast<size_t>(i)] =
          Vec2(anchor.x() + out(net.kp_row() + 3 * i), anchor.y() + out(net.kp_row() + 3 * i + 1));
    }
  }
  return pred;
}

inline Pose net_predict_pose(const NetPrediction& p, const CameraModel& cam) {
  Pose pose;
  pose.r = p.rot;
  pose.t = backproject_center(cam, p.center_px.x(), p.center_px.y(),
                              depth_decode(p.sigma, cam));
  return pose;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOptions {
  LossWeights weights;
  int epochs = 200;
  double lr = 1e-2;
  double momentum = 0.9;
  double lr_decay = 1.0;   // multiplicative per epoch
  double grad_clip = 10.0; // global norm
  double holdout_frac = 0.2;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double geodesic_deg = 0;
  double trans_m = 0;
  double loss_r = 0, loss_t = 0, loss_kp = 0, loss_bb = 0, total = 0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  int skipped_samples = 0;  // NearDegenerateSVD / degenerate head outputs
  int clip_events = 0;
};

inline std::string train_log_to_csv(const TrainLog& log) {
  std::string out = "epoch,geodesic_deg,trans_m,loss_r,loss_t,loss_kp,loss_bb,total\n";
  char buf[256];
  for (const auto& e : log.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", e.epoch,
                  e.geodesic_deg, e.trans_m, e.loss_r, e.loss_t, e.loss_kp, e.loss_bb, e.total);
    out += buf;
  }
  return out;
}

namespace traindetail {

struct BatchLoss {
  diff::Tape::NodeId total = -1;
  double loss_r = 0, loss_t = 0, loss_kp = 0, loss_bb = 0;
  int used = 0, skipped = 0;
};

// Records forward + losses for the given samples on the tape. Leaves for
// weights/biases must already be on the tape (passed in w_ids/b_ids).
inline BatchLoss build_batch(diff::Tape& t, const ToyNet& net,
                             const std::vector<diff::Tape::NodeId>& w_ids,
                             const std::vector<diff::Tape::NodeId>& b_ids,
                             const std::vector<SynthSample>& data,
                             const std::vector<std::size_t>& idx, const SynthConfig& cfg,
                             const LossWeights& lw) {
  auto x = t.constant(feature_matrix(data, idx, cfg));
  auto act = x;
  for (std::size_t layer = 0; layer + 1 < w_ids.size(); ++layer) {
    act = t.tanh(t.add_colvec(t.matmul(w_ids[layer], act), b_ids[layer]));
  }
  auto out = t.add_colvec(t.matmul(w_ids.back(), act), b_ids.back());

  BatchLoss bl;
  diff::Tape::NodeId sum_r = -1, sum_t = -1, sum_bb = -1, sum_kp = -1;
  int kp_instances = 0;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const SynthSample& s = data[idx[j]];
    const auto mark = t.checkpoint();
    try {
      const int col = static_cast<int>(j);
      diff::Tape::NodeId rot;
      switch (net.cfg.mode) {
        case RotMode::Svd9:
          rot = t.svd_project(t.reshape(t.block(out, 0, col, 9, 1), 3, 3));
          break;
        case RotMode::Gso6:
          rot = t.gso_rot(t.block(out, 0, col, 6, 1));
          break;
        case RotMode::Quat:
          rot = t.quat_rot(t.block(out, 0, col, 4, 1));
          break;
        case RotMode::Euler:
          rot = t.euler_rot(t.block(out, 0, col, 3, 1));
          break;
      }
      auto loss_r = build_geodesic_to(t, rot, s.pose.r);

      auto sigma = t.sigmoid(t.block(out, net.sigma_row(), col, 1, 1));
      auto loss_t = build_translation_loss(t, sigma, s.sigma);

      const Vec2 center_anchor = residual_anchor(s.features, 8, cfg);
      auto cx = t.add_const(t.block(out, net.center_row(), col, 1, 1), center_anchor.x());
      auto cy = t.add_const(t.block(out, net.center_row() + 1, col, 1, 1), center_anchor.y());
      // The toy head has no box extent outputs; the CIoU term scores a box
      // anchored at the predicted center with the label's extent.
      auto loss_bb = build_ciou_loss(t, cx, cy, t.constant(s.box.w), t.constant(s.box.h), s.box);

      diff::Tape::NodeId loss_kp = -1;
      if (net.cfg.kp_head) {
        std::array<diff::Tape::NodeId, kNumKeypoints> uv{};
        for (int i = 0; i < 9; ++i) {
          const Vec2 anchor = residual_anchor(s.features, i, cfg);
          MatX base(2, 1);
          base << anchor.x(), anchor.y();
          uv[static_cast<size_t>(i)] =
              t.add(t.block(out, net.kp_row() + 3 * i, col, 2, 1), t.constant(base));
        }
        std::array<Vec2, kNumKeypoints> gt;
        std::array<std::uint8_t, kNumKeypoints> vis;
        for (int i = 0; i < 9; ++i) {
          gt[static_cast<size_t>(i)] =
              Vec2(s.keypoints[static_cast<size_t>(i)].u, s.keypoints[static_cast<size_t>(i)].v);
          vis[static_cast<size_t>(i)] = s.keypoints[static_cast<size_t>(i)].visible ? 1 : 0;
        }
        loss_kp = build_keypoint_instance_loss(t, uv, gt, vis);
      }

      sum_r = sum_r < 0 ? loss_r : t.add(sum_r, loss_r);
      sum_t = sum_t < 0 ? loss_t : t.add(sum_t, loss_t);
      sum_bb = sum_bb < 0 ? loss_bb : t.add(sum_bb, loss_bb);
      if (loss_kp >= 0) {
        sum_kp = sum_kp < 0 ? loss_kp : t.add(sum_kp, loss_kp);
        ++kp_instances;
      }
      ++bl.used;
    } catch (const NearDegenerateSVD&) {
      t.rollback(mark);
      ++bl.skipped;
    } catch (const DegenerateInput&) {
      t.rollback(mark);
      ++bl.skipped;
    } catch (const DegenerateMatrix&) {
      t.rollback(mark);
      ++bl.skipped;
    }
  }
  if (bl.used == 0) return bl;

  auto mean_r = t.scale(sum_r, 1.0 / bl.used);
  auto mean_t = t.scale(sum_t, 1.0 / bl.used);
  auto mean_bb = t.scale(sum_bb, 1.0 / bl.used);
  auto total = t.add(t.scale(mean_r, lw.lambda_r), t.scale(mean_t, lw.lambda_t));
  total = t.add(total, t.scale(mean_bb, lw.lambda_bb));
  bl.loss_r = t.value_scalar(mean_r);
  bl.loss_t = t.value_scalar(mean_t);
  bl.loss_bb = t.value_scalar(mean_bb);
  if (sum_kp >= 0) {
    auto mean_kp = t.scale(sum_kp, 1.0 / kp_instances);
    total = t.add(total, t.scale(mean_kp, lw.lambda_kp));
    bl.loss_kp = t.value_scalar(mean_kp);
  }
  bl.total = total;
  return bl;
}

}  // namespace traindetail

// Full-batch gradient descent with momentum; deterministic given the seed.
// Metrics per epoch come from the held-out split (loss components from the
// training batch). Samples whose rotation head output is degenerate are
// skipped and counted.
inline TrainLog train(ToyNet& net, const std::vector<SynthSample>& data, const SynthConfig& cfg,
                      const TrainOptions& opts) {
  if (data.empty()) throw Error("train: dataset is empty");
  opts.weights.validate();

  // Seeded shuffle split. A single sample trains and evaluates on itself.
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(opts.seed ^ 0x5deece66dull);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(split_rng.uniform_int(
                                0, static_cast<int>(i) - 1))]);
  }
  std::size_t n_hold = static_cast<std::size_t>(std::floor(opts.holdout_frac * data.size()));
  if (data.size() == 1) n_hold = 0;
  std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> hold_idx(order.end() - static_cast<std::ptrdiff_t>(n_hold), order.end());
  if (hold_idx.empty()) hold_idx = train_idx;

  std::vector<MatX> velocity_w;
  std::vector<VecX> velocity_b;
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    velocity_w.push_back(MatX::Zero(net.weights[i].rows(), net.weights[i].cols()));
    velocity_b.push_back(VecX::Zero(net.biases[i].size()));
  }

  TrainLog log;
  double lr = opts.lr;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    diff::Tape t;
    std::vector<diff::Tape::NodeId> w_ids, b_ids;
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
      w_ids.push_back(t.leaf(net.weights[i]));
      b_ids.push_back(t.leaf(MatX(net.biases[i])));
    }
    const auto bl = traindetail::build_batch(t, net, w_ids, b_ids, data, train_idx, cfg,
                                             opts.weights);
    log.skipped_samples += bl.skipped;
    if (bl.total >= 0) {
      t.backward(bl.total);
      double norm_sq = 0;
      for (std::size_t i = 0; i < w_ids.size(); ++i) {
        norm_sq += t.grad(w_ids[i]).squaredNorm() + t.grad(b_ids[i]).squaredNorm();
      }
      double scale = 1.0;
      if (opts.grad_clip > 0 && std::sqrt(norm_sq) > opts.grad_clip) {
        scale = opts.grad_clip / std::sqrt(norm_sq);
        ++log.clip_events;
      }
      for (std::size_t i = 0; i < w_ids.size(); ++i) {
        velocity_w[i] = opts.momentum * velocity_w[i] - lr * scale * t.grad(w_ids[i]);
        velocity_b[i] = opts.momentum * velocity_b[i] - lr * scale * VecX(t.grad(b_ids[i]).col(0));
        net.weights[i] += velocity_w[i];
        net.biases[i] += velocity_b[i];
        if (!net.weights[i].allFinite() || !net.biases[i].allFinite()) {
          throw Error("train: non-finite weights at epoch " + std::to_string(epoch));
        }
      }
    }

    EpochStats st;
    st.epoch = epoch;
    st.loss_r = bl.loss_r;
    st.loss_t = bl.loss_t;
    st.loss_kp = bl.loss_kp;
    st.loss_bb = bl.loss_bb;
    st.total = opts.weights.lambda_r * bl.loss_r + opts.weights.lambda_t * bl.loss_t +
               opts.weights.lambda_kp * bl.loss_kp + opts.weights.lambda_bb * bl.loss_bb;
    double geo = 0, trans = 0;
    int n_eval = 0;
    for (std::size_t i : hold_idx) {
      const auto pred = net_predict(net, data[i].features, cfg);
      if (!pred.rot_ok) {
        ++log.skipped_samples;
        continue;
      }
      geo += rad_to_deg(geodesic_distance(pred.rot, data[i].pose.r));
      trans += (net_predict_pose(pred, cfg.cam).t - data[i].pose.t).norm();
      ++n_eval;
    }
    st.geodesic_deg = n_eval ? geo / n_eval : 180.0;
    st.trans_m = n_eval ? trans / n_eval : 1e9;
    log.epochs.push_back(st);
    lr *= opts.lr_decay;
  }
  return log;
}

// Fraction of samples whose ADD is under threshold_factor * diameter, using
// the pose decoded from the network heads.
inline double synth_accuracy_01d(const ToyNet& net, const std::vector<SynthSample>& samples,
                                 const SynthConfig& cfg, double threshold_factor = 0.1) {
  if (samples.empty()) return 0.0;
  int hits = 0;
  for (const auto& s : samples) {
    const auto pred = net_predict(net, s.features, cfg);
    if (!pred.rot_ok) continue;
    const double add = add_metric(cfg.model, s.pose, net_predict_pose(pred, cfg.cam));
    if (add < threshold_factor * cfg.model.diameter) ++hits;
  }
  return 100.0 * hits / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct ComparisonRow {
  std::string mode;
  std::uint64_t seed = 0;
  double final_geodesic_deg = 0;
  double final_trans_m = 0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;  // one per (mode, seed)
  std::map<std::string, std::pair<double, double>> summary;  // mode -> (mean, sd)
};

inline std::string comparison_to_csv(const ComparisonTable& table) {
  std::string out = "mode,seed,final_geodesic_deg,final_trans_m\n";
  char buf[160];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%.4f,%.6f\n", r.mode.c_str(),
                  static_cast<unsigned long long>(r.seed), r.final_geodesic_deg,
                  r.final_trans_m);
    out += buf;
  }
  for (const auto& [mode, ms] : table.summary) {
    std::snprintf(buf, sizeof(buf), "summary_%s,,%.4f,%.4f\n", mode.c_str(), ms.first,
                  ms.second);
    out += buf;
  }
  return out;
}

// Trains identical nets that differ only in the rotation head on identical
// data/init draws; reports the final held-out geodesic error per mode/seed.
inline ComparisonTable compare_representations(SynthConfig cfg, TrainOptions opts,
                                               const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 3) throw Error("compare_representations: need at least 3 seeds");
  const std::array<RotMode, 4> modes{RotMode::Svd9, RotMode::Gso6, RotMode::Quat,
                                     RotMode::Euler};
  struct Job {
    RotMode mode;
    std::uint64_t seed;
    double geo = 0, trans = 0;
  };
  std::vector<Job> jobs;
  for (auto seed : seeds)
    for (auto mode : modes) jobs.push_back({mode, seed});

  auto run = [&](Job& job) {
    SynthConfig c = cfg;
    c.seed = job.seed;
    const auto data = generate_dataset(c);
    ToyNetConfig nc;
    nc.mode = job.mode;
    nc.kp_head = true;
    nc.seed = job.seed;
    ToyNet net = ToyNet::init(nc);
    TrainOptions o = opts;
    o.seed = job.seed;
    const TrainLog log = train(net, data, c, o);
    job.geo = log.epochs.back().geodesic_deg;
    job.trans = log.epochs.back().trans_m;
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  std::size_t next = 0;
  std::mutex mu;
  for (unsigned k = 0; k < std::min<std::size_t>(hw, jobs.size()); ++k) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t mine;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= jobs.size()) return;
          mine = next++;
        }
        run(jobs[mine]);
      }
    });
  }
  for (auto& th : pool) th.join();

  ComparisonTable table;
  for (const auto& j : jobs) {
    table.rows.push_back({rot_mode_name(j.mode), j.seed, j.geo, j.trans});
  }
  for (auto mode : modes) {
    double sum = 0, sum_sq = 0;
    int n = 0;
    for (const auto& j : jobs) {
      if (j.mode != mode) continue;
      sum += j.geo;
      sum_sq += j.geo * j.geo;
      ++n;
    }
    const double mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - mean * mean);
    table.summary[rot_mode_name(mode)] = {mean, std::sqrt(var)};
  }
  return table;
}

struct AblationRow {
  std::string variant;  // with_kp / no_kp
  std::uint64_t seed = 0;
  double accuracy_percent = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  double mean_with_kp = 0;
  double mean_no_kp = 0;
  std::string object;
};

inline std::string ablation_to_csv(const AblationTable& table) {
  std::string out = "variant,seed,accuracy_percent\n";
  char buf[128];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%.2f\n", r.variant.c_str(),
                  static_cast<unsigned long long>(r.seed), r.accuracy_percent);
    out += buf;
  }
  return out;
}

// One row per object (the toy rig has one) plus the Average row.
inline std::string ablation_to_object_csv(const AblationTable& table) {
  char buf[160];
  std::string out = "object,with_kp,no_kp\n";
  std::snprintf(buf, sizeof(buf), "%s,%.2f,%.2f\n", table.object.c_str(), table.mean_with_kp,
                table.mean_no_kp);
  out += buf;
  std::snprintf(buf, sizeof(buf), "Average,%.2f,%.2f\n", table.mean_with_kp, table.mean_no_kp);
  out += buf;
  return out;
}

// Trains with the auxiliary keypoint head (lambda_kp > 0) vs without it
// (head absent, lambda_kp = 0) and scores 0.1d pose accuracy on the held-out
// split of each seed's dataset.
inline AblationTable ablate_keypoint_head(SynthConfig cfg, TrainOptions opts,
                                          const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 3) throw Error("ablate_keypoint_head: need at least 3 seeds");
  if (!(opts.weights.lambda_kp > 0)) {
    throw Error("ablate_keypoint_head: lambda_kp must be positive for the with-kp arm");
  }
  struct Job {
    bool with_kp;
    std::uint64_t seed;
    double acc = 0;
  };
  std::vector<Job> jobs;
  for (auto seed : seeds) {
    jobs.push_back({true, seed});
    jobs.push_back({false, seed});
  }

  auto run = [&](Job& job) {
    SynthConfig c = cfg;
    c.seed = job.seed;
    const auto data = generate_dataset(c);
    ToyNetConfig nc;
    nc.mode = RotMode::Svd9;
    nc.kp_head = job.with_kp;
    nc.seed = job.seed;
    ToyNet net = ToyNet::init(nc);
    TrainOptions o = opts;
    o.seed = job.seed;
    if (!job.with_kp) o.weights.lambda_kp = 0.0;
    train(net, data, c, o);

    // Score on this seed's held-out split (same split rule as train()).
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng(o.seed ^ 0x5deece66dull);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(split_rng.uniform_int(
                                  0, static_cast<int>(i) - 1))]);
    }
    const std::size_t n_hold =
        data.size() == 1 ? 0
                         : static_cast<std::size_t>(std::floor(o.holdout_frac * data.size()));
    std::vector<SynthSample> hold;
    for (auto it = order.end() - static_cast<std::ptrdiff_t>(n_hold); it != order.end(); ++it) {
      hold.push_back(data[*it]);
    }
    if (hold.empty()) hold = data;
    job.acc = synth_accuracy_01d(net, hold, c);
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  std::size_t next = 0;
  std::mutex mu;
  for (unsigned k = 0; k < std::min<std::size_t>(hw, jobs.size()); ++k) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t mine;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= jobs.size()) return;
          mine = next++;
        }
        run(jobs[mine]);
      }
    });
  }
  for (auto& th : pool) th.join();

  AblationTable table;
  table.object = cfg.model.name;
  double sum_with = 0, sum_no = 0;
  int n_with = 0, n_no = 0;
  for (const auto& j : jobs) {
    table.rows.push_back({j.with_kp ? "with_kp" : "no_kp", j.seed, j.acc});
    (j.with_kp ? sum_with : sum_no) += j.acc;
    (j.with_kp ? n_with : n_no) += 1;
  }
  table.mean_with_kp = n_with ? sum_with / n_with : 0;
  table.mean_no_kp = n_no ? sum_no / n_no : 0;
  return table;
}

}  // namespace posekit
