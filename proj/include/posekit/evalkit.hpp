#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "posekit/common.hpp"
#include "posekit/errors.hpp"
#include "posekit/geometry.hpp"
#include "posekit/kdtree.hpp"
#include "posekit/object_model.hpp"

namespace posekit {

// One evaluated estimate against its ground truth.
struct EvalRecord {
  std::string object;
  Pose gt;
  Pose pred;
};

enum class NnMode { Brute, Accelerated };

// Community default for LINEMOD-style symmetric objects; per-model sidecars
// can override.
inline const std::set<std::string>& default_symmetric_objects() {
  static const std::set<std::string> s{"eggbox", "glue"};
  return s;
}

// Evaluation meshes above this count are stride-subsampled for metric speed.
inline constexpr std::size_t kMaxMetricPoints = 10000;

inline std::vector<Vec3> metric_points(const ObjectModel& model) {
  if (model.points.size() <= kMaxMetricPoints) return model.points;
  const std::size_t stride = (model.points.size() + kMaxMetricPoints - 1) / kMaxMetricPoints;
  std::vector<Vec3> out;
  out.reserve(model.points.size() / stride + 1);
  for (std::size_t i = 0; i < model.points.size(); i += stride) out.push_back(model.points[i]);
  return out;
}

// Mean distance between matched transformed model points.
inline double add_metric(const ObjectModel& model, const Pose& gt, const Pose& pred) {
  const std::vector<Vec3> pts = metric_points(model);
  double total = 0;
  for (const Vec3& x : pts) {
    total += ((gt.r * x + gt.t) - (pred.r * x + pred.t)).norm();
  }
  return total / static_cast<double>(pts.size());
}

// Mean nearest-neighbor distance from gt-transformed points into the
// pred-transformed set. Both modes compute identical values; Accelerated
// uses an exact kd-tree instead of the O(m^2) scan.
inline double adds_metric(const ObjectModel& model, const Pose& gt, const Pose& pred,
                          NnMode mode = NnMode::Accelerated) {
  const std::vector<Vec3> pts = metric_points(model);
  std::vector<Vec3> gt_pts(pts.size()), pred_pts(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    gt_pts[i] = gt.r * pts[i] + gt.t;
    pred_pts[i] = pred.r * pts[i] + pred.t;
  }
  double total = 0;
  if (mode == NnMode::Brute) {
    for (const Vec3& q : gt_pts) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& p : pred_pts) best = std::min(best, (p - q).squaredNorm());
      total += std::sqrt(best);
    }
  } else {
    const KdTree3 tree(pred_pts);
    for (const Vec3& q : gt_pts) total += std::sqrt(tree.nearest_sq(q));
  }
  return total / static_cast<double>(pts.size());
}

struct ReportRow {
  std::string object;
  int n = 0;
  double accuracy_percent = 0.0;
};

struct Report {
  std::vector<ReportRow> rows;        // sorted by object name
  double average_percent = 0.0;       // unweighted mean over objects
  int total_records = 0;
  std::vector<std::string> notes;     // e.g. subsampling remarks
};

// Fraction of records whose metric is below `threshold_factor` * diameter;
// symmetric objects use ADD-S, the rest ADD. The Average row is the
// unweighted mean over objects.
inline Report accuracy_01d(const std::vector<EvalRecord>& records,
                           const std::map<std::string, ObjectModel>& models,
                           double threshold_factor = 0.1) {
  for (const auto& r : records) {
    if (!models.count(r.object)) {
      throw LookupError("accuracy_01d: no model for object '" + r.object + "'");
    }
  }

  std::vector<std::uint8_t> correct(records.size(), 0);
  const unsigned n_threads =
      std::max(1u, std::min(std::thread::hardware_concurrency(),
                            static_cast<unsigned>((records.size() + 63) / 64)));
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& rec = records[i];
      const ObjectModel& model = models.at(rec.object);
      const double metric = model.symmetric ? adds_metric(model, rec.gt, rec.pred)
                                            : add_metric(model, rec.gt, rec.pred);
      correct[i] = metric < threshold_factor * model.diameter ? 1 : 0;
    }
  };
  if (n_threads <= 1) {
    worker(0, records.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (records.size() + n_threads - 1) / n_threads;
    for (unsigned t = 0; t < n_threads; ++t) {
      const std::size_t b = t * chunk;
      if (b >= records.size()) break;
      pool.emplace_back(worker, b, std::min(records.size(), b + chunk));
    }
    for (auto& th : pool) th.join();
  }

  std::map<std::string, std::pair<int, int>> tally;  // object -> (hits, n)
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& t = tally[records[i].object];
    t.first += correct[i];
    t.second += 1;
  }

  Report rep;
  rep.total_records = static_cast<int>(records.size());
  double sum = 0;
  for (const auto& [name, t] : tally) {
    ReportRow row;
    row.object = name;
    row.n = t.second;
    row.accuracy_percent = t.second > 0 ? 100.0 * t.first / t.second : 0.0;
    sum += row.accuracy_percent;
    rep.rows.push_back(row);
  }
  rep.average_percent = tally.empty() ? 0.0 : sum / static_cast<double>(tally.size());
  for (const auto& [name, model] : models) {
    if (model.points.size() > kMaxMetricPoints && tally.count(name)) {
      rep.notes.push_back(name + ": subsampled " + std::to_string(model.points.size()) +
                          " -> " + std::to_string(metric_points(model).size()) + " points");
    }
  }
  return rep;
}

inline std::string report_to_csv(const Report& rep) {
  char buf[128];
  std::string out = "object,n,accuracy_percent\n";
  for (const auto& row : rep.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.2f\n", row.object.c_str(), row.n,
                  row.accuracy_percent);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "Average,%d,%.2f\n", rep.total_records, rep.average_percent);
  out += buf;
  return out;
}

inline std::string report_to_text(const Report& rep) {
  char buf[128];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-16s %6s %10s\n", "Object", "n", "Acc(%)");
  out += buf;
  for (const auto& row : rep.rows) {
    std::snprintf(buf, sizeof(buf), "%-16s %6d %10.2f\n", row.object.c_str(), row.n,
                  row.accuracy_percent);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-16s %6d %10.2f\n", "Average", rep.total_records,
                rep.average_percent);
  out += buf;
  for (const auto& n : rep.notes) out += "note: " + n + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Timing report (per-stage means plus their total).
// ---------------------------------------------------------------------------

struct StageTiming {
  std::string name;
  std::vector<double> ms;  // one entry per run

  double mean() const {
    return ms.empty() ? 0.0 : std::accumulate(ms.begin(), ms.end(), 0.0) / ms.size();
  }
};

struct TimingReport {
  std::vector<std::pair<std::string, double>> stages;  // (name, mean ms)
  double total_ms = 0.0;
};

inline TimingReport timing_report(const std::vector<StageTiming>& stages) {
  TimingReport rep;
  for (const auto& s : stages) {
    const double m = s.mean();
    rep.stages.emplace_back(s.name, m);
    rep.total_ms += m;
  }
  return rep;
}

inline std::string timing_to_csv(const TimingReport& rep) {
  char buf[128];
  std::string out = "operation,time_ms\n";
  for (const auto& [name, ms] : rep.stages) {
    std::snprintf(buf, sizeof(buf), "%s,%.1f\n", name.c_str(), ms);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "Total,%.1f\n", rep.total_ms);
  out += buf;
  return out;
}

}  // namespace posekit
