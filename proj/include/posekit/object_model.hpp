#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "posekit/common.hpp"
#include "posekit/errors.hpp"

namespace posekit {

// Exact O(m^2) maximum pairwise distance.
inline double max_pairwise_distance(const std::vector<Vec3>& pts) {
  double best_sq = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      best_sq = std::max(best_sq, (pts[i] - pts[j]).squaredNorm());
    }
  }
  return std::sqrt(best_sq);
}

// A rigid object: its 3D model points (meters), diameter, symmetry flag,
// and the eight corners of its axis-aligned model-frame bounding box.
struct ObjectModel {
  std::string name;
  std::vector<Vec3> points;
  double diameter = 0.0;
  bool symmetric = false;
  std::array<Vec3, 8> box_corners{};  // sign order ---,--+,-+-,-++,+--,+-+,++-,+++
  Vec3 centroid = Vec3::Zero();

  static ObjectModel from_points(std::string name, std::vector<Vec3> points,
                                 std::optional<double> diameter = std::nullopt,
                                 bool symmetric = false) {
    if (points.size() < 4) {
      throw Error("ObjectModel '" + name + "': needs at least 4 points, got " +
                  std::to_string(points.size()));
    }
    ObjectModel m;
    m.name = std::move(name);
    m.points = std::move(points);
    m.symmetric = symmetric;

    Vec3 lo = m.points.front(), hi = m.points.front(), sum = Vec3::Zero();
    for (const Vec3& p : m.points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
      sum += p;
    }
    m.centroid = sum / static_cast<double>(m.points.size());
    int k = 0;
    for (int sx = 0; sx < 2; ++sx) {
      for (int sy = 0; sy < 2; ++sy) {
        for (int sz = 0; sz < 2; ++sz) {
          m.box_corners[k++] = Vec3(sx ? hi.x() : lo.x(),
                                    sy ? hi.y() : lo.y(),
                                    sz ? hi.z() : lo.z());
        }
      }
    }

    m.diameter = diameter ? *diameter : max_pairwise_distance(m.points);
    if (!(m.diameter > 0.0)) {
      throw Error("ObjectModel '" + m.name + "': diameter must be positive");
    }
    return m;
  }
};

}  // namespace posekit
