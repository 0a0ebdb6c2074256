#pragma once

#include <vector>

#include <Eigen/Core>

#include "lsgcpd/cloud.hpp"
#include "lsgcpd/se3.hpp"

namespace lsgcpd {

/// Target-side mixture parameters. Defaults here are the single source of
/// truth for the CLI flags of the same name.
struct ModelConfig {
  /// Upper bound of the point-to-plane penalization coefficient.
  double alpha_max = 50.0;
  /// Sensitivity of alpha to 1/kappa in the sigmoid.
  double lambda = 0.5;
  /// Expected fraction of source points that are outliers, in [0, 1).
  double outlier_ratio = 0.1;
  /// Confidence filtering: reweight priors and outlier weights by sensor confidence.
  bool use_cf = false;
  /// Sensor error model e(z) = error_c0 + error_c1 * z^2 (meters), z = camera depth.
  double error_c0 = 0.0012;
  double error_c1 = 0.0019;
  /// Minimum sensing range; e_min = e(min_range).
  double min_range = 0.5;
  /// Points whose confidence falls below this are truncated (CF only).
  double confidence_truncation_threshold = 0.0;
  /// Include sqrt(1 + alpha_m) in each component normalizer (exact Gaussian).
  /// Off reproduces the literal vectorized formula, which drops that factor.
  bool consistent_normalizer = true;
  /// Working-space margin: each bounding-box extent is inflated by this fraction on both sides.
  double volume_margin = 0.1;
  /// Neighborhood size for normal and surface-variation estimation.
  Eigen::Index neighbors = 20;
  /// Keep normals from the input file instead of recomputing them.
  bool trust_normals = false;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

struct GmmModel {
  Eigen::Matrix3Xd centroids;       // y_m
  Eigen::Matrix3Xd normals;         // n_m
  Eigen::VectorXd alphas;           // alpha_m in [0, alpha_max]
  Eigen::VectorXd priors;           // pi(m), sums to 1
  std::vector<Eigen::Index> component_ids;  // index of each component in the target cloud
  double sigma2 = 1.0;
  double volume = 1.0;              // V; outlier density is 1/V
  double w0 = 0.0;
  double v0 = 1.0;                  // 1 - w0, carried separately so it keeps precision as w0 -> 1
  Eigen::VectorXd outlier_weights;  // w_n, one per source point
  Eigen::VectorXd inlier_weights;   // 1 - w_n
  Eigen::VectorXd source_confidence;  // phi(x_n); 0 marks a truncated source point
  bool consistent_normalizer = true;

  Eigen::Index components() const { return centroids.cols(); }
  Eigen::Index sources() const { return outlier_weights.size(); }

  /// log c_m under the active normalizer mode.
  double log_normalizer(Eigen::Index m) const;
  /// sum_m pi(m) c_m under the active normalizer mode.
  double weighted_normalizer_sum() const;

  GmmModel with_sigma2(double sigma2) const;
  /// New baseline outlier weight; w_n = 1 - (1 - w0) phi(x_n).
  GmmModel with_w0(double w0) const;
  /// Same, parameterized by v0 = 1 - w0 in (0, 1].
  GmmModel with_inlier_weight(double v0) const;
};

/// alpha = alpha_max (1 - exp(lambda (3 - 1/kappa))) / (1 + exp(lambda (3 - 1/kappa))).
/// Throws std::invalid_argument for kappa <= 0.
double alpha_coefficient(double kappa, double lambda, double alpha_max);

/// (alpha n n^T + I) / sigma2.
Eigen::Matrix3d inverse_covariance(const Eigen::Vector3d& normal, double alpha, double sigma2);

/// sqrt(1 + alpha) / (2 pi sigma2)^(3/2).
double component_normalizer(double alpha, double sigma2);
double log_component_normalizer(double alpha, double sigma2);

/// Upper bound w_max of the baseline outlier weight implied by outlier ratio eta.
double estimate_outlier_weight(const GmmModel& model, double eta);
/// 1 - w_max, evaluated without cancellation.
double estimate_inlier_weight(const GmmModel& model, double eta);

/// Bounding-box volume of the target inflated by `margin` per side on each axis.
/// A zero-extent axis is floored at the mean nearest-neighbor spacing.
double working_volume(const PointCloud& target, double margin = 0.1);

/// sigma2_0 = (1 / 3NM) sum_{m,n} |x_n - y_m|^2, evaluated exactly in O(N + M).
double initial_sigma2(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target);

/// Measurement confidence phi = e_min / e(z), clamped to (0, 1].
Eigen::VectorXd confidence_from_error_model(const Eigen::Matrix3Xd& points, const ModelConfig& config);

/// Reweights priors and outlier weights by confidence and truncates points
/// below the threshold: target components are dropped, source points get phi = 0.
GmmModel apply_confidence_filter(const GmmModel& model, const PointCloud& source, const PointCloud& target,
                                 const ModelConfig& config);

/// Builds the mixture for `target` (normals and variations required).
/// `source_transform` positions the source for the sigma2 initialization.
GmmModel build_model(const PointCloud& target, const PointCloud& source, const ModelConfig& config,
                     const RigidTransform& source_transform = RigidTransform::identity());

}  // namespace lsgcpd
