#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "posekit/common.hpp"
#include "posekit/errors.hpp"
#include "posekit/geometry.hpp"

namespace posekit::diff {

// Derivative-path clamp for arccos; the value path clamps to [-1, 1] only.
inline constexpr double kArccosGradMargin = 1e-7;
// Minimum singular-value gap for the SO(3) projection derivative.
inline constexpr double kSvdGapTol = 1e-6;

// Throws when the projection derivative is ill-conditioned. The formula
// divides by sigma_i + sigma_j for pairs on the same side of the reflection
// fix and by sigma_i - sigma_j for pairs straddling it (sign = -1 only).
inline void check_svd_grad_gaps(const SvdProjection& f) {
  const Vec3& s = f.sigma;
  if (f.sign > 0) {
    if (s(1) + s(2) < kSvdGapTol) {
      throw NearDegenerateSVD("svd gradient: sigma2+sigma3 below " +
                              std::to_string(kSvdGapTol));
    }
  } else {
    if (s(0) + s(1) < kSvdGapTol) {
      throw NearDegenerateSVD("svd gradient: sigma1+sigma2 below gap tolerance");
    }
    if (s(0) - s(2) < kSvdGapTol || s(1) - s(2) < kSvdGapTol) {
      throw NearDegenerateSVD(
          "svd gradient: reflection case with sigma_i - sigma3 below gap tolerance");
    }
  }
}

// Exact vector-Jacobian product through R = U diag(1,1,sign) V^T.
// With G = dL/dR and Ghat = U^T G V, the adjoint in the (U,V) basis is
//   W_ij = (Ghat_ij - Ghat_ji) * d / (s_i + s_j)        d_i = d_j = d
//   W_ij = (Ghat_ij + Ghat_ji) / (s_i - s_j)            d_i = 1, d_j = -1
// and dL/dM = U W V^T. W_ii = 0 because R does not depend on the
// singular values themselves.
inline Mat3 svd_project_vjp(const SvdProjection& f, const Mat3& upstream) {
  check_svd_grad_gaps(f);
  const Mat3 ghat = f.u.transpose() * upstream * f.v;
  const Vec3& s = f.sigma;
  const double d[3] = {1.0, 1.0, f.sign};
  Mat3 w = Mat3::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      if (d[i] == d[j]) {
        w(i, j) = d[i] * (ghat(i, j) - ghat(j, i)) / (s(i) + s(j));
      } else if (d[i] > d[j]) {  // d_i = 1, d_j = -1
        w(i, j) = (ghat(i, j) + ghat(j, i)) / (s(i) - s(j));
      } else {  // d_i = -1, d_j = 1
        w(i, j) = (ghat(i, j) + ghat(j, i)) / (s(j) - s(i));
      }
    }
  }
  return f.u * w * f.v.transpose();
}

// Gradient wrt M of <upstream, svd_project_so3(M)>.
inline Mat3 svd_project_backward(const Mat3& m, const Mat3& upstream) {
  return svd_project_vjp(svd_project_so3_full(m), upstream);
}

namespace vjp {

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Backprop through gso_to_rot: G (3x3) -> gradients wrt (a, b).
inline void gso_rot(const Vec3& a, const Vec3& b, const Mat3& g, Vec3& ga, Vec3& gb) {
  const double na = a.norm();
  const Vec3 c1 = a / na;
  const Vec3 u2 = b - b.dot(c1) * c1;
  const double nu = u2.norm();
  const Vec3 c2 = u2 / nu;

  Vec3 g1 = g.col(0), g2 = g.col(1);
  const Vec3 g3 = g.col(2);
  // c3 = c1 x c2
  g1 += c2.cross(g3);
  g2 += g3.cross(c1);
  // c2 = u2/|u2|
  const Vec3 du2 = (g2 - c2 * c2.dot(g2)) / nu;
  // u2 = b - (c1.b) c1
  gb = du2 - c1 * c1.dot(du2);
  Vec3 dc1 = g1 - b * c1.dot(du2) - b.dot(c1) * du2;
  // c1 = a/|a|
  ga = (dc1 - c1 * c1.dot(dc1)) / na;
}

// Backprop through quat_to_rot (with internal normalization): G -> grad wrt q.
inline Eigen::Vector4d quat_rot(const Quat& q, const Mat3& g) {
  const double n = q.norm();
  const double w = q.w / n, x = q.x / n, y = q.y / n, z = q.z / n;
  Mat3 dw, dx, dy, dz;
  dw << 0, -z, y, z, 0, -x, -y, x, 0;
  dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  Eigen::Vector4d gn(2 * dw.cwiseProduct(g).sum(), 2 * dx.cwiseProduct(g).sum(),
                     2 * dy.cwiseProduct(g).sum(), 2 * dz.cwiseProduct(g).sum());
  const Eigen::Vector4d qn(w, x, y, z);
  return (gn - qn * qn.dot(gn)) / n;
}

// Backprop through euler_to_rot (Rz(yaw) Ry(pitch) Rx(roll)).
inline Vec3 euler_rot(double yaw, double pitch, double roll, const Mat3& g) {
  Mat3 dz, dy, dx;
  dz << -std::sin(yaw), -std::cos(yaw), 0, std::cos(yaw), -std::sin(yaw), 0, 0, 0, 0;
  dy << -std::sin(pitch), 0, std::cos(pitch), 0, 0, 0, -std::cos(pitch), 0, -std::sin(pitch);
  dx << 0, 0, 0, 0, -std::sin(roll), -std::cos(roll), 0, std::cos(roll), -std::sin(roll);
  const Mat3 rz = rot_z(yaw).matrix(), ry = rot_y(pitch).matrix(), rx = rot_x(roll).matrix();
  return Vec3((dz * ry * rx).cwiseProduct(g).sum(), (rz * dy * rx).cwiseProduct(g).sum(),
              (rz * ry * dx).cwiseProduct(g).sum());
}

}  // namespace vjp

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Reverse-mode tape over real matrices (scalars are 1x1). Values are
// computed eagerly as nodes are recorded; backward() then walks the tape
// in reverse. Single-threaded during construction; independent tapes may
// run concurrently.
class Tape {
 public:
  using NodeId = int;

  enum class Op {
    Leaf, Const, Add, Sub, Mul, Div, Scale, AddConst, MatMul, Transpose,
    Trace, Dot, Sum, Sqrt, Square, Sigmoid, Tanh, Atan, Min2, Max2,
    ArccosClamped, SvdProject, SmoothL1, GsoRot, QuatRot, EulerRot,
    Block, Reshape, AddColVec,
  };

  NodeId leaf(const MatX& v) { return push(Op::Leaf, v, -1, -1); }
  NodeId leaf(double v) { return leaf(scalar(v)); }
  NodeId constant(const MatX& v) { return push(Op::Const, v, -1, -1); }
  NodeId constant(double v) { return constant(scalar(v)); }

  NodeId add(NodeId a, NodeId b) { return push(Op::Add, val(a) + val(b), a, b); }
  NodeId sub(NodeId a, NodeId b) { return push(Op::Sub, val(a) - val(b), a, b); }
  NodeId mul(NodeId a, NodeId b) {
    return push(Op::Mul, val(a).cwiseProduct(val(b)), a, b);
  }
  NodeId div(NodeId a, NodeId b) {
    return push(Op::Div, val(a).cwiseQuotient(val(b)), a, b);
  }
  NodeId scale(NodeId a, double s) {
    NodeId id = push(Op::Scale, val(a) * s, a, -1);
    nodes_[id].c0 = s;
    return id;
  }
  NodeId add_const(NodeId a, double c) {
    return push(Op::AddConst, (val(a).array() + c).matrix(), a, -1);
  }
  NodeId matmul(NodeId a, NodeId b) { return push(Op::MatMul, val(a) * val(b), a, b); }
  NodeId transpose(NodeId a) { return push(Op::Transpose, val(a).transpose(), a, -1); }
  NodeId trace(NodeId a) { return push(Op::Trace, scalar(val(a).trace()), a, -1); }
  // Frobenius inner product <A, B> = trace(A^T B).
  NodeId dot(NodeId a, NodeId b) {
    return push(Op::Dot, scalar(val(a).cwiseProduct(val(b)).sum()), a, b);
  }
  NodeId sum(NodeId a) { return push(Op::Sum, scalar(val(a).sum()), a, -1); }
  // Elementwise sqrt; subgradient 0 where the input is exactly 0.
  NodeId sqrt(NodeId a) {
    return push(Op::Sqrt, val(a).cwiseMax(0.0).cwiseSqrt(), a, -1);
  }
  NodeId square(NodeId a) {
    return push(Op::Square, val(a).array().square().matrix(), a, -1);
  }
  NodeId sigmoid(NodeId a) {
    return push(Op::Sigmoid, val(a).unaryExpr([](double x) { return stable_sigmoid(x); }),
                a, -1);
  }
  NodeId tanh(NodeId a) {
    return push(Op::Tanh, val(a).array().tanh().matrix(), a, -1);
  }
  NodeId atan(NodeId a) {
    return push(Op::Atan, val(a).array().atan().matrix(), a, -1);
  }
  // Ties route the gradient to the first argument.
  NodeId min2(NodeId a, NodeId b) { return push(Op::Min2, val(a).cwiseMin(val(b)), a, b); }
  NodeId max2(NodeId a, NodeId b) { return push(Op::Max2, val(a).cwiseMax(val(b)), a, b); }

  // Value: arccos(clamp(x, -1, 1)). Derivative is evaluated only inside
  // |x| <= 1 - 1e-7 and is 0 outside, so gradients near perfect/opposite
  // alignment stay bounded and d(R,R) has gradient 0 by convention.
  NodeId arccos_clamped(NodeId a) {
    expect_scalar(a, "arccos_clamped");
    return push(Op::ArccosClamped, scalar(std::acos(std::clamp(val(a)(0, 0), -1.0, 1.0))),
                a, -1);
  }

  // 3x3 -> nearest rotation. Throws NearDegenerateSVD at record time when
  // the backward pass would be ill-conditioned.
  NodeId svd_project(NodeId a) {
    if (val(a).rows() != 3 || val(a).cols() != 3) {
      throw ShapeError("svd_project: input must be 3x3");
    }
    SvdProjection f = svd_project_so3_full(Mat3(val(a)));
    check_svd_grad_gaps(f);
    NodeId id = push(Op::SvdProject, f.r.matrix(), a, -1);
    nodes_[id].svd = static_cast<int>(svd_cache_.size());
    svd_cache_.push_back(f);
    return id;
  }

  // sum_i smoothL1(a_i - b_i; beta)
  NodeId smooth_l1(NodeId a, NodeId b, double beta) {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols()) {
      throw ShapeError("smooth_l1: shape mismatch");
    }
    const MatX d = val(a) - val(b);
    double total = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      const double x = std::abs(d(i));
      total += x < beta ? 0.5 * x * x / beta : x - 0.5 * beta;
    }
    NodeId id = push(Op::SmoothL1, scalar(total), a, b);
    nodes_[id].c0 = beta;
    return id;
  }

  // 6x1 (a;b) -> Gram-Schmidt rotation.
  NodeId gso_rot(NodeId a) {
    expect_shape(a, 6, 1, "gso_rot");
    SixD s{Vec3(val(a).block<3, 1>(0, 0)), Vec3(val(a).block<3, 1>(3, 0))};
    return push(Op::GsoRot, gso_to_rot(s).matrix(), a, -1);
  }

  // 4x1 (w,x,y,z) -> rotation, normalizing internally.
  NodeId quat_rot(NodeId a) {
    expect_shape(a, 4, 1, "quat_rot");
    Quat q{val(a)(0, 0), val(a)(1, 0), val(a)(2, 0), val(a)(3, 0)};
    return push(Op::QuatRot, quat_to_rot(q).matrix(), a, -1);
  }

  // 3x1 (yaw,pitch,roll) -> rotation.
  NodeId euler_rot(NodeId a) {
    expect_shape(a, 3, 1, "euler_rot");
    return push(Op::EulerRot,
                euler_to_rot(val(a)(0, 0), val(a)(1, 0), val(a)(2, 0)).matrix(), a, -1);
  }

  NodeId block(NodeId a, int i0, int j0, int rows, int cols) {
    if (i0 < 0 || j0 < 0 || i0 + rows > val(a).rows() || j0 + cols > val(a).cols()) {
      throw ShapeError("block: out of range");
    }
    NodeId id = push(Op::Block, val(a).block(i0, j0, rows, cols), a, -1);
    nodes_[id].i0 = i0;
    nodes_[id].j0 = j0;
    return id;
  }

  // Row-major reinterpretation to (rows, cols); element count preserved.
  NodeId reshape(NodeId a, int rows, int cols) {
    if (val(a).size() != static_cast<Eigen::Index>(rows) * cols) {
      throw ShapeError("reshape: element count mismatch");
    }
    MatX out(rows, cols);
    const MatX& in = val(a);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < in.rows(); ++r)
      for (Eigen::Index c = 0; c < in.cols(); ++c, ++k)
        out(k / cols, k % cols) = in(r, c);
    return push(Op::Reshape, out, a, -1);
  }

  // A (m x n) + b (m x 1) broadcast over columns.
  NodeId add_colvec(NodeId a, NodeId b) {
    if (val(b).cols() != 1 || val(b).rows() != val(a).rows()) {
      throw ShapeError("add_colvec: bias must be (rows x 1)");
    }
    return push(Op::AddColVec, val(a).colwise() + Eigen::VectorXd(val(b).col(0)), a, b);
  }

  const MatX& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }

  // Restore the tape to a previous size (drop trailing nodes). Used to
  // discard a partially recorded sample after NearDegenerateSVD.
  NodeId checkpoint() const { return static_cast<NodeId>(nodes_.size()); }
  void rollback(NodeId mark) {
    nodes_.resize(static_cast<size_t>(mark));
    grads_.clear();
  }

  // Accumulates d(output)/d(node) for every node at or before `output`.
  void backward(NodeId output) {
    expect_scalar(output, "backward output");
    grads_.assign(static_cast<size_t>(output) + 1, MatX());
    for (NodeId i = 0; i <= output; ++i) {
      grads_[static_cast<size_t>(i)] = MatX::Zero(val(i).rows(), val(i).cols());
    }
    grads_[static_cast<size_t>(output)](0, 0) = 1.0;
    for (NodeId i = output; i >= 0; --i) propagate(i);
  }

  const MatX& grad(NodeId id) const {
    if (static_cast<size_t>(id) >= grads_.size()) {
      throw Error("grad: node not covered by last backward()");
    }
    return grads_[static_cast<size_t>(id)];
  }

  double grad_scalar(NodeId id) const { return grad(id)(0, 0); }
  double value_scalar(NodeId id) const { return value(id)(0, 0); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    int a = -1, b = -1;
    MatX value;
    double c0 = 0;  // scale factor / beta
    int i0 = 0, j0 = 0;
    int svd = -1;
  };

  static MatX scalar(double v) {
    MatX m(1, 1);
    m(0, 0) = v;
    return m;
  }

  const MatX& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }

  void expect_scalar(NodeId id, const char* who) const {
    if (val(id).rows() != 1 || val(id).cols() != 1) {
      throw ShapeError(std::string(who) + ": expected 1x1 scalar node");
    }
  }

  void expect_shape(NodeId id, int r, int c, const char* who) const {
    if (val(id).rows() != r || val(id).cols() != c) {
      throw ShapeError(std::string(who) + ": wrong input shape");
    }
  }

  NodeId push(Op op, MatX value, int a, int b) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  MatX& g(NodeId id) { return grads_[static_cast<size_t>(id)]; }

  void propagate(NodeId i) {
    const Node& n = nodes_[static_cast<size_t>(i)];
    const MatX& gi = grads_[static_cast<size_t>(i)];
    switch (n.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add:
        g(n.a) += gi;
        g(n.b) += gi;
        break;
      case Op::Sub:
        g(n.a) += gi;
        g(n.b) -= gi;
        break;
      case Op::Mul:
        g(n.a) += gi.cwiseProduct(val(n.b));
        g(n.b) += gi.cwiseProduct(val(n.a));
        break;
      case Op::Div:
        g(n.a) += gi.cwiseQuotient(val(n.b));
        g(n.b) -= gi.cwiseProduct(val(n.a)).cwiseQuotient(val(n.b).cwiseProduct(val(n.b)));
        break;
      case Op::Scale:
        g(n.a) += gi * n.c0;
        break;
      case Op::AddConst:
        g(n.a) += gi;
        break;
      case Op::MatMul:
        g(n.a) += gi * val(n.b).transpose();
        g(n.b) += val(n.a).transpose() * gi;
        break;
      case Op::Transpose:
        g(n.a) += gi.transpose();
        break;
      case Op::Trace:
        g(n.a) += gi(0, 0) * MatX::Identity(val(n.a).rows(), val(n.a).cols());
        break;
      case Op::Dot:
        g(n.a) += gi(0, 0) * val(n.b);
        g(n.b) += gi(0, 0) * val(n.a);
        break;
      case Op::Sum:
        g(n.a).array() += gi(0, 0);
        break;
      case Op::Sqrt:
        g(n.a) += gi.binaryExpr(val(n.a), [](double up, double x) {
          return x > 0.0 ? up * 0.5 / std::sqrt(x) : 0.0;
        });
        break;
      case Op::Square:
        g(n.a) += 2.0 * gi.cwiseProduct(val(n.a));
        break;
      case Op::Sigmoid:
        g(n.a) += gi.cwiseProduct(n.value.cwiseProduct(MatX::Ones(n.value.rows(), n.value.cols()) - n.value));
        break;
      case Op::Tanh:
        g(n.a) += gi.cwiseProduct(MatX::Ones(n.value.rows(), n.value.cols()) - n.value.cwiseProduct(n.value));
        break;
      case Op::Atan:
        g(n.a) += gi.binaryExpr(val(n.a), [](double up, double x) {
          return up / (1.0 + x * x);
        });
        break;
      case Op::Min2:
        g(n.a) += gi.binaryExpr(
            MatX(val(n.a) - val(n.b)),
            [](double up, double d) { return d <= 0.0 ? up : 0.0; });
        g(n.b) += gi.binaryExpr(
            MatX(val(n.a) - val(n.b)),
            [](double up, double d) { return d > 0.0 ? up : 0.0; });
        break;
      case Op::Max2:
        g(n.a) += gi.binaryExpr(
            MatX(val(n.a) - val(n.b)),
            [](double up, double d) { return d >= 0.0 ? up : 0.0; });
        g(n.b) += gi.binaryExpr(
            MatX(val(n.a) - val(n.b)),
            [](double up, double d) { return d < 0.0 ? up : 0.0; });
        break;
      case Op::ArccosClamped: {
        const double x = val(n.a)(0, 0);
        if (std::abs(x) <= 1.0 - kArccosGradMargin) {
          g(n.a)(0, 0) += -gi(0, 0) / std::sqrt(1.0 - x * x);
        }
        break;
      }
      case Op::SvdProject:
        g(n.a) += svd_project_vjp(svd_cache_[static_cast<size_t>(n.svd)], Mat3(gi));
        break;
      case Op::SmoothL1: {
        const MatX d = val(n.a) - val(n.b);
        const double beta = n.c0;
        const MatX dg = d.unaryExpr([beta](double x) {
          return std::abs(x) < beta ? x / beta : (x > 0 ? 1.0 : -1.0);
        });
        g(n.a) += gi(0, 0) * dg;
        g(n.b) -= gi(0, 0) * dg;
        break;
      }
      case Op::GsoRot: {
        Vec3 ga, gb;
        vjp::gso_rot(Vec3(val(n.a).block<3, 1>(0, 0)), Vec3(val(n.a).block<3, 1>(3, 0)),
                     Mat3(gi), ga, gb);
        g(n.a).block<3, 1>(0, 0) += ga;
        g(n.a).block<3, 1>(3, 0) += gb;
        break;
      }
      case Op::QuatRot: {
        Quat q{val(n.a)(0, 0), val(n.a)(1, 0), val(n.a)(2, 0), val(n.a)(3, 0)};
        g(n.a) += vjp::quat_rot(q, Mat3(gi));
        break;
      }
      case Op::EulerRot:
        g(n.a) += vjp::euler_rot(val(n.a)(0, 0), val(n.a)(1, 0), val(n.a)(2, 0), Mat3(gi));
        break;
      case Op::Block:
        g(n.a).block(n.i0, n.j0, n.value.rows(), n.value.cols()) += gi;
        break;
      case Op::Reshape: {
        MatX& ga = g(n.a);
        const Eigen::Index cols = n.value.cols();
        Eigen::Index k = 0;
        for (Eigen::Index r = 0; r < ga.rows(); ++r)
          for (Eigen::Index c = 0; c < ga.cols(); ++c, ++k)
            ga(r, c) += gi(k / cols, k % cols);
        break;
      }
      case Op::AddColVec:
        g(n.a) += gi;
        g(n.b) += gi.rowwise().sum();
        break;
    }
  }

  std::vector<Node> nodes_;
  std::vector<SvdProjection> svd_cache_;
  std::vector<MatX> grads_;
};

struct GradCheckReport {
  std::string op;
  double max_rel_err = 0.0;
  int trials = 0;
  std::uint64_t seed = 0;
};

// Central-difference comparison against an analytic gradient.
//   f(x)        -> scalar
//   analytic(x) -> gradient vector
// Relative error per component: |a-n| / max(1e-8, |a|, |n|).
inline double fd_max_rel_err(const std::function<double(const VecX&)>& f,
                             const std::function<VecX(const VecX&)>& analytic,
                             const VecX& x, double h = 1e-5) {
  const VecX a = analytic(x);
  double worst = 0.0;
  VecX xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    const double n = (fp - fm) / (2.0 * h);
    const double denom = std::max({1e-8, std::abs(a(i)), std::abs(n)});
    worst = std::max(worst, std::abs(a(i) - n) / denom);
  }
  return worst;
}

}  // namespace posekit::diff
