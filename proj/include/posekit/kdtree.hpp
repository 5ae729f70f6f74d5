#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "posekit/common.hpp"
#include "posekit/errors.hpp"

namespace posekit {

// Exact nearest-neighbor search over 3D points (no approximation), so the
// minimum it returns is the identical value a brute-force scan computes.
class KdTree3 {
 public:
  explicit KdTree3(std::vector<Vec3> pts) : pts_(std::move(pts)) {
    if (pts_.empty()) throw Error("KdTree3: empty point set");
    index_.resize(pts_.size());
    std::iota(index_.begin(), index_.end(), 0);
    nodes_.reserve(2 * pts_.size());
    root_ = build(0, pts_.size());
  }

  // Squared distance to the nearest point.
  double nearest_sq(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(root_, q, best);
    return best;
  }

  std::size_t size() const { return pts_.size(); }

 private:
  struct Node {
    int axis = -1;          // -1: leaf
    double split = 0;
    int left = -1, right = -1;
    std::size_t begin = 0, end = 0;  // leaf range into index_
  };

  static constexpr std::size_t kLeafSize = 16;

  int build(std::size_t begin, std::size_t end) {
    Node n;
    if (end - begin <= kLeafSize) {
      n.begin = begin;
      n.end = end;
      nodes_.push_back(n);
      return static_cast<int>(nodes_.size() - 1);
    }
    Vec3 lo = pts_[index_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(pts_[index_[i]]);
      hi = hi.cwiseMax(pts_[index_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(index_.begin() + static_cast<std::ptrdiff_t>(begin),
                     index_.begin() + static_cast<std::ptrdiff_t>(mid),
                     index_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return pts_[a](axis) < pts_[b](axis); });
    n.axis = axis;
    n.split = pts_[index_[mid]](axis);
    nodes_.push_back(n);
    const int id = static_cast<int>(nodes_.size() - 1);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[static_cast<size_t>(id)].left = left;
    nodes_[static_cast<size_t>(id)].right = right;
    return id;
  }

  void search(int id, const Vec3& q, double& best) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        best = std::min(best, (pts_[index_[i]] - q).squaredNorm());
      }
      return;
    }
    const double d = q(n.axis) - n.split;
    const int near = d < 0 ? n.left : n.right;
    const int far = d < 0 ? n.right : n.left;
    search(near, q, best);
    if (d * d < best) search(far, q, best);
  }

  std::vector<Vec3> pts_;
  std::vector<std::size_t> index_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace posekit
