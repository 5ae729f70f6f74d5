#include <catch2/catch_amalgamated.hpp>

#include <posekit/decode.hpp>

#include "test_support.hpp"

using namespace posekit;
using pktest::random_rotation;

namespace {
const CameraModel kCam{572.4, 573.6, 325.3, 242.0, 0.4, 2.0};

Pose random_pose_in_range(Rng& rng) {
  Pose p;
  p.r = random_rotation(rng);
  const double tz = rng.uniform(kCam.dist_min + 1e-3, kCam.dist_max - 1e-3);
  const double u = rng.uniform(0.1 * 2 * kCam.cx, 0.9 * 2 * kCam.cx);
  const double v = rng.uniform(0.1 * 2 * kCam.cy, 0.9 * 2 * kCam.cy);
  p.t = backproject_center(kCam, u, v, tz);
  return p;
}
}  // namespace

TEST_CASE("decode_one basics", "[decode]") {
  RawDetection raw;
  raw.depth_logit = 0.0;  // sigmoid -> 0.5 -> midpoint of the range
  raw.ox = kCam.cx;
  raw.oy = kCam.cy;
  raw.rot9 = NineD::from_matrix(Mat3::Identity()).v;
  raw.score_logit = 0.0;

  const Detection6D det = decode_one(raw, kCam);
  CHECK(det.pose.t.z() == Catch::Approx((kCam.dist_min + kCam.dist_max) / 2).margin(1e-12));
  CHECK(det.pose.t.head<2>().norm() < 1e-12);  // optical axis
  CHECK((det.pose.r.matrix() - Mat3::Identity()).norm() < 1e-12);
  CHECK(det.score == Catch::Approx(0.5));
}

TEST_CASE("decode round trip recovers the pose", "[decode][roundtrip]") {
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const Pose pose = random_pose_in_range(rng);
    const RawDetection raw = encode_detection(pose, kCam);
    const Detection6D det = decode_one(raw, kCam);
    REQUIRE(rotation_angle(det.pose.r, pose.r) < 1e-9);
    REQUIRE((det.pose.t - pose.t).norm() < 1e-9);
  }
}

TEST_CASE("keypoint visibility decodes through a 0.5 sigmoid cut", "[decode]") {
  RawDetection raw;
  raw.rot9 = NineD::from_matrix(Mat3::Identity()).v;
  raw.ox = kCam.cx;
  raw.oy = kCam.cy;
  raw.kps[0] = {10, 20, 3.0};
  raw.kps[1] = {30, 40, -3.0};
  const Detection6D det = decode_one(raw, kCam);
  CHECK(det.kps[0].visible);
  CHECK_FALSE(det.kps[1].visible);
  CHECK(det.kps[0].u == 10);
}

TEST_CASE("nms", "[decode][nms]") {
  auto make = [](double score, double cx, double cy, double w, double h) {
    Detection6D d;
    d.score = score;
    d.box = Box2D{cx, cy, w, h};
    return d;
  };

  SECTION("single detection survives") {
    const auto out = nms({make(0.7, 0, 0, 10, 10)}, 0.5);
    REQUIRE(out.size() == 1);
  }

  SECTION("identical boxes: higher score wins") {
    const auto out = nms({make(0.8, 0, 0, 10, 10), make(0.9, 0, 0, 10, 10)}, 0.5);
    REQUIRE(out.size() == 1);
    CHECK(out[0].score == 0.9);
  }

  SECTION("disjoint boxes both survive, ordered by score") {
    const auto out = nms({make(0.6, 100, 0, 10, 10), make(0.9, 0, 0, 10, 10)}, 0.5);
    REQUIRE(out.size() == 2);
    CHECK(out[0].score == 0.9);
    CHECK(out[1].score == 0.6);
  }

  SECTION("survivors never overlap above the threshold; subset of input") {
    Rng rng(5);
    std::vector<Detection6D> dets;
    for (int i = 0; i < 60; ++i) {
      dets.push_back(make(rng.uniform(), rng.uniform(0, 100), rng.uniform(0, 100),
                          rng.uniform(5, 40), rng.uniform(5, 40)));
    }
    const double thr = 0.45;
    const auto out = nms(dets, thr);
    REQUIRE(out.size() <= dets.size());
    for (size_t i = 0; i < out.size(); ++i) {
      for (size_t j = i + 1; j < out.size(); ++j) {
        REQUIRE(box_iou(out[i].box, out[j].box) <= thr);
      }
      REQUIRE((i == 0 || out[i - 1].score >= out[i].score));
    }
  }

  SECTION("bad threshold rejected") {
    CHECK_THROWS_AS(nms({}, 0.0), RangeError);
    CHECK_THROWS_AS(nms({}, 1.0), RangeError);
  }
}

TEST_CASE("batch_decode composes filter, decode and nms", "[decode][batch]") {
  Rng rng(9);

  SECTION("empty input and all-below-threshold give empty output") {
    CHECK(batch_decode({}, kCam, 0.25, 0.65).empty());
    RawDetection weak = encode_detection(random_pose_in_range(rng), kCam, 0.1);
    CHECK(batch_decode({weak}, kCam, 0.25, 0.65).empty());
  }

  SECTION("equals the stepwise composition") {
    std::vector<RawDetection> raws;
    for (int i = 0; i < 30; ++i) {
      RawDetection raw = encode_detection(random_pose_in_range(rng), kCam,
                                          rng.uniform(0.05, 0.95));
      raw.box = {rng.uniform(0, 400), rng.uniform(0, 300), rng.uniform(10, 80),
                 rng.uniform(10, 80)};
      raws.push_back(raw);
    }
    const double score_thr = 0.25, iou_thr = 0.65;

    std::vector<Detection6D> manual;
    for (const auto& raw : raws) {
      if (diff::stable_sigmoid(raw.score_logit) < score_thr) continue;
      manual.push_back(decode_one(raw, kCam));
    }
    manual = nms(manual, iou_thr);

    DecodeStats stats;
    const auto got = batch_decode(raws, kCam, score_thr, iou_thr, &stats);
    REQUIRE(got.size() == manual.size());
    for (size_t i = 0; i < got.size(); ++i) {
      REQUIRE(got[i].score == manual[i].score);
      REQUIRE((got[i].pose.t - manual[i].pose.t).norm() == 0.0);
    }
    CHECK(stats.dropped_low_score + static_cast<int>(manual.size()) +
              stats.dropped_degenerate ==
          30);
  }

  SECTION("degenerate rotations are dropped and counted") {
    RawDetection bad = encode_detection(random_pose_in_range(rng), kCam, 0.9);
    bad.rot9 = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    DecodeStats stats;
    const auto out = batch_decode({bad}, kCam, 0.25, 0.65, &stats);
    CHECK(out.empty());
    CHECK(stats.dropped_degenerate == 1);
  }

  SECTION("deterministic") {
    std::vector<RawDetection> raws;
    for (int i = 0; i < 10; ++i) {
      raws.push_back(encode_detection(random_pose_in_range(rng), kCam, rng.uniform(0.3, 0.9)));
    }
    const auto a = batch_decode(raws, kCam, 0.25, 0.65);
    const auto b = batch_decode(raws, kCam, 0.25, 0.65);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].score == b[i].score);
  }
}
