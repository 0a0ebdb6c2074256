#pragma once

#include <Eigen/Core>

#include "lsgcpd/cloud.hpp"
#include "lsgcpd/estep.hpp"
#include "lsgcpd/model.hpp"
#include "lsgcpd/se3.hpp"

namespace lsgcpd {

inline constexpr double kSigma2Floor = 1e-12;
inline constexpr int kMaxNewtonIterations = 20;
inline constexpr int kMaxDampingTrials = 20;
inline constexpr double kNewtonStepTolerance = 1e-10;

using Gradient6 = Eigen::Matrix<double, 6, 1>;
using Hessian6 = Eigen::Matrix<double, 6, 6>;

struct MStepResult {
  RigidTransform transform;
  double sigma2 = 1.0;
  double q_value = 0.0;
  int newton_iters = 0;
  /// No damped step decreased Q; the input transform was returned unchanged.
  bool damped = false;
  /// Lie-algebra norm of the total update (last accepted transform relative to g0).
  double step_rotation = 0.0;
  double step_translation = 0.0;
};

/// Per-source-point reductions of P that make the quadratic part of Q a
/// function of the transformed source points alone:
///   sum_m P_mn (d^T (I + alpha_m n_m n_m^T) d) = z^T W_n z - 2 b_n^T z + const_n,
/// with z = g(x_n), W_n = p1_n I + sum_m P_mn alpha_m n_m n_m^T and
/// b_n = sum_m P_mn (y_m + alpha_m s_m n_m).
struct MStepStatistics {
  Eigen::VectorXd p1;                                   // N
  Eigen::Matrix3Xd b;                                   // 3 x N
  Eigen::Matrix<double, 6, Eigen::Dynamic> w_aniso;     // packed xx yy zz xy xz yz, 6 x N
  double constant = 0.0;    // sum_mn P_mn (|y_m|^2 + alpha_m s_m^2)
  double log_weight = 0.0;  // sum_mn P_mn log(pi(m) c_m)
  double np = 0.0;

  Eigen::Matrix3d w(Eigen::Index n) const;
};

MStepStatistics accumulate_statistics(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source);

/// Q(g) = -sum_mn P_mn log(pi(m) p(g(x_n) | m)), sigma2 taken from the model.
double objective_q(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                   const RigidTransform& g);

/// Right derivatives E_i^r Q along the six basis generators.
Gradient6 gradient(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                   const RigidTransform& g);
Gradient6 gradient(const MStepStatistics& stats, const GmmModel& model, const PointCloud& source,
                   const RigidTransform& g);

/// H_ij: derivative along E_j of the i-th gradient entry. Not symmetric in general.
Hessian6 hessian(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                 const RigidTransform& g);
Hessian6 hessian(const MStepStatistics& stats, const GmmModel& model, const PointCloud& source,
                 const RigidTransform& g);

/// Damped Newton on SE(3): g <- g exp(delta), delta = -(H_s + mu I)^-1 grad Q
/// with H_s = (H + H^T) / 2. mu starts at 0 and grows x10 until Q strictly decreases.
MStepResult newton_solve(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                         const RigidTransform& g0);

/// Closed-form sigma2 minimizing Q for fixed g; floored at kSigma2Floor, and
/// the model's sigma2 is kept when sum P is zero.
double update_sigma2(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                     const RigidTransform& g);

/// newton_solve followed by update_sigma2 at the new transform.
MStepResult m_step(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                   const RigidTransform& g0);

}  // namespace lsgcpd
