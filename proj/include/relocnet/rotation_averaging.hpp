#pragma once

// Rotation averaging on unit quaternions: a chordal L2 mean used as the
// initializer, and the Weiszfeld L1 geodesic median.

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "relocnet/error.hpp"
#include "relocnet/geom.hpp"

namespace relocnet {

struct PowerIterationOptions {
  int max_iterations = 200;
  double residual_tol = 1e-12;
};

/// Maximizer of sum (q . q_i)^2: principal eigenvector of sum q_i q_i^T,
/// found by power iteration.
inline Quat chordal_l2_mean(std::span<const Quat> qs, const PowerIterationOptions& opts = {}) {
  if (qs.empty()) {
    throw Error(ErrorCode::EmptyInput, "chordal_l2_mean needs at least one quaternion");
  }
  Eigen::Matrix4d acc = Eigen::Matrix4d::Zero();
  for (const Quat& q : qs) {
    const Eigen::Vector4d c = q.coeffs();
    acc.noalias() += c * c.transpose();
  }

  // Start from the accumulator column with the largest diagonal entry; it has
  // a nonzero projection onto the dominant eigenvector of a PSD matrix.
  Eigen::Index start = 0;
  acc.diagonal().maxCoeff(&start);
  Eigen::Vector4d v = acc.col(start).normalized();

  for (int it = 0; it < opts.max_iterations; ++it) {
    const Eigen::Vector4d av = acc * v;
    const double lambda = v.dot(av);
    if ((av - lambda * v).norm() <= opts.residual_tol * std::max(1.0, lambda)) {
      break;
    }
    v = av.normalized();
  }
  return Quat::normalized(v[0], v[1], v[2], v[3]);
}

/// Sum of geodesic distances (radians) from `r` to every element of `qs`.
inline double l1_geodesic_cost(const Quat& r, std::span<const Quat> qs) {
  double cost = 0.0;
  for (const Quat& q : qs) {
    cost += quat_angle_rad(r, q);
  }
  return cost;
}

struct WeiszfeldOptions {
  int max_iterations = 100;
  double step_tol_rad = 1e-9;
  double anchor_eps_rad = 1e-12;
  int max_halvings = 30;
  int max_expansions = 8;
};

struct WeiszfeldTrace {
  Quat estimate;
  std::vector<double> costs;  ///< cost at the initializer and after each accepted step
  double last_step_rad = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Weiszfeld iteration for the L1 geodesic median, with the full trace.
///
/// Each step is R <- R exp(delta), delta = (sum v_i/|v_i|) / (sum 1/|v_i|),
/// v_i = log(R^T R_i). Terms with |v_i| below the anchor epsilon are left out
/// of both sums. A step is only accepted if it does not raise the L1 cost;
/// otherwise it is halved, and a full step that helps is extended. The cost is not convex on SO(3) and the iteration
/// crawls toward a minimizer that sits on an input, so input points are also
/// tried as candidates: at the start, at every step (the nearest one), and
/// once more at the end.
inline WeiszfeldTrace l1_geodesic_median_trace(std::span<const Quat> qs,
                                               const WeiszfeldOptions& opts = {}) {
  if (qs.empty()) {
    throw Error(ErrorCode::EmptyInput, "l1_geodesic_median needs at least one quaternion");
  }
  WeiszfeldTrace trace;
  // Jumps to an input must beat the current cost by more than rounding; on a
  // flat cost (e.g. two points) they would otherwise land on noise.
  auto clearly_lower = [](double c, double current) { return c < current - 1e-12 * (1.0 + current); };
  Quat r = chordal_l2_mean(qs);
  double cost = l1_geodesic_cost(r, qs);
  auto best_input = [&]() {
    std::size_t best = 0;
    double best_cost = l1_geodesic_cost(qs[0], qs);
    for (std::size_t i = 1; i < qs.size(); ++i) {
      const double c = l1_geodesic_cost(qs[i], qs);
      if (c < best_cost) {
        best = i;
        best_cost = c;
      }
    }
    return std::pair{qs[best], best_cost};
  };
  if (const auto [q, c] = best_input(); clearly_lower(c, cost)) {
    r = q;
    cost = c;
  }
  trace.costs.push_back(cost);

  for (int it = 0; it < opts.max_iterations; ++it) {
    Vec3 num = Vec3::Zero();
    double den = 0.0;
    int anchors = 0;
    for (const Quat& q : qs) {
      const Vec3 v = quat_mul(r.conj(), q).log();
      const double n = v.norm();
      if (n < opts.anchor_eps_rad) {
        ++anchors;
        continue;
      }
      num += v / n;
      den += 1.0 / n;
    }
    if (den == 0.0) {
      trace.converged = true;  // every input coincides with r
      trace.last_step_rad = 0.0;
      break;
    }
    // Sitting on anchors: r is optimal when the pull of the rest is no
    // stronger than the anchors' combined weight.
    if (anchors > 0 && num.norm() <= static_cast<double>(anchors)) {
      trace.converged = true;
      trace.last_step_rad = 0.0;
      break;
    }
    Vec3 delta = num / den;
    trace.last_step_rad = delta.norm();
    if (trace.last_step_rad < opts.step_tol_rad) {
      trace.converged = true;
      break;
    }

    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h) {
      const Quat candidate = quat_mul(r, Quat::exp(delta));
      if (candidate == r) {
        break;  // halved below rounding; not a step
      }
      const double c = l1_geodesic_cost(candidate, qs);
      if (c <= cost) {
        r = candidate;
        cost = c;
        accepted = true;
        // A full step that helped is extended while the cost keeps dropping;
        // plain Weiszfeld steps shrink geometrically near the minimizer.
        for (int e = 0; h == 0 && e < opts.max_expansions; ++e) {
          const Quat further = quat_mul(r, Quat::exp(delta));
          const double cf = l1_geodesic_cost(further, qs);
          if (!(cf < cost)) {
            break;
          }
          r = further;
          cost = cf;
          delta *= 2.0;
        }
        break;
      }
      delta *= 0.5;
    }
    // Snap to the nearest input when that is better; the anchor test on the next
    // pass then decides whether it is the minimizer. An input the iterate is
    // already crawling onto only needs to be no worse.
    const Quat* nearest = nullptr;
    double nearest_dist = 0.0;
    for (const Quat& q : qs) {
      const double d = quat_angle_rad(r, q);
      if (d >= opts.anchor_eps_rad && (nearest == nullptr || d < nearest_dist)) {
        nearest = &q;
        nearest_dist = d;
      }
    }
    if (nearest != nullptr) {
      const double c = l1_geodesic_cost(*nearest, qs);
      if (clearly_lower(c, cost) || (nearest_dist < 1e-6 && c <= cost)) {
        r = *nearest;
        cost = c;
        accepted = true;
      }
    }
    ++trace.iterations;
    if (!accepted) {
      trace.converged = true;  // no descent along the Weiszfeld direction
      break;
    }
    trace.costs.push_back(cost);
  }
  if (const auto [q, c] = best_input(); clearly_lower(c, cost)) {
    r = q;
    cost = c;
    trace.costs.push_back(cost);
  }
  trace.estimate = r;
  return trace;
}

inline Quat l1_geodesic_median(std::span<const Quat> qs, const WeiszfeldOptions& opts = {}) {
  return l1_geodesic_median_trace(qs, opts).estimate;
}

}  // namespace relocnet
