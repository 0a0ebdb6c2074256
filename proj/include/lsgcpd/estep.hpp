#pragma once

#include <filesystem>

#include <Eigen/Core>

#include "lsgcpd/cloud.hpp"
#include "lsgcpd/model.hpp"
#include "lsgcpd/se3.hpp"

namespace lsgcpd {

/// Outlier weights are floored here before forming (1 - w) / w.
inline constexpr double kOutlierWeightFloor = 1e-12;
/// Relative kernel terms are floored at exp(kLogUnderflow), about 1e-300.
inline constexpr double kLogUnderflow = -690.0;

struct CorrespondenceMatrix {
  Eigen::MatrixXd posteriors;         // P, M x N
  Eigen::VectorXd outlier_posterior;  // one per source point
  double np = 0.0;                    // sum of P
};

/// Transform-independent factors of the correspondence kernel.
///
/// The M x N matrices Q and C are rank-structured (an outer sum and an outer
/// product), so only their factors are stored:
///   Q_mn = x_sq(n) + y_sq(m),   C_mn = c_source(n) * c_target(m).
/// c_target carries pi(m), times sqrt(1 + alpha_m) in consistent-normalizer mode.
struct PrecomputedTerms {
  Eigen::ArrayXd s;         // s_m = y_m . n_m
  Eigen::ArrayXd y_sq;      // |y_m|^2
  Eigen::ArrayXd x_sq;      // |x_n|^2
  Eigen::ArrayXd c_target;  // M
  Eigen::ArrayXd c_source;  // (1 - w_n) / w_n, 0 for w_n >= 1
  Eigen::ArrayXd alphas;    // diagonal of D
  // Column arrays of Y and N, laid out for vectorized column sweeps.
  Eigen::ArrayXd yx, yy, yz, nx, ny, nz;

  double q(Eigen::Index m, Eigen::Index n) const { return x_sq(n) + y_sq(m); }
  double c(Eigen::Index m, Eigen::Index n) const { return c_source(n) * c_target(m); }
  Eigen::MatrixXd dense_q() const;
  Eigen::MatrixXd dense_c() const;
};

PrecomputedTerms precompute_terms(const GmmModel& model, const PointCloud& source);

/// Posterior correspondences through the decomposition
///   K = C .* exp(-(D A + B) / (2 sigma2)),  P_mn = K_mn / (sum_m K_mn + gamma),
/// evaluated one source column at a time (columns run in parallel). Each
/// column is shifted by its largest log-term before exponentiation.
CorrespondenceMatrix correspondence(const GmmModel& model, const PointCloud& source, const RigidTransform& g,
                                    const PrecomputedTerms& terms);

/// Direct per-pair evaluation of the posterior with full Mahalanobis forms.
/// Reference only; O(MN) with large constants.
CorrespondenceMatrix naive_correspondence(const GmmModel& model, const PointCloud& source, const RigidTransform& g);

/// gamma = (2 pi sigma2)^(3/2) / V.
double outlier_gamma(const GmmModel& model);

/// Writes P as CSV (M rows, N columns) followed by a final row of outlier posteriors.
void write_correspondence_csv(const CorrespondenceMatrix& p, const std::filesystem::path& path);

}  // namespace lsgcpd
