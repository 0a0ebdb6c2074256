#include "lsgcpd/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "lsgcpd/spatial_index.hpp"

namespace lsgcpd {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("ModelConfig: " + what);
}

}  // namespace

void ModelConfig::validate() const {
  require(std::isfinite(alpha_max) && alpha_max >= 0.0, "alpha_max must be >= 0");
  require(std::isfinite(lambda) && lambda > 0.0, "lambda must be > 0");
  require(outlier_ratio >= 0.0 && outlier_ratio < 1.0, "outlier_ratio must be in [0, 1)");
  require(std::isfinite(error_c0) && std::isfinite(error_c1) && error_c0 >= 0.0 && error_c1 >= 0.0,
          "error model coefficients must be >= 0");
  require(error_c0 + error_c1 * min_range * min_range > 0.0, "error model must be positive at min_range");
  require(std::isfinite(min_range) && min_range >= 0.0, "min_range must be >= 0");
  require(confidence_truncation_threshold >= 0.0 && confidence_truncation_threshold <= 1.0,
          "confidence_truncation_threshold must be in [0, 1]");
  require(std::isfinite(volume_margin) && volume_margin >= 0.0, "volume_margin must be >= 0");
  require(neighbors >= 3, "neighbors must be >= 3");
}

double GmmModel::log_normalizer(Eigen::Index m) const {
  const double base = -1.5 * std::log(kTwoPi * sigma2);
  return consistent_normalizer ? base + 0.5 * std::log1p(alphas(m)) : base;
}

double GmmModel::weighted_normalizer_sum() const {
  double sum = 0.0;
  for (Eigen::Index m = 0; m < components(); ++m) sum += priors(m) * std::exp(log_normalizer(m));
  return sum;
}

GmmModel GmmModel::with_sigma2(double s2) const {
  if (!(s2 > 0.0) || !std::isfinite(s2)) throw std::invalid_argument("GmmModel: sigma2 must be positive");
  GmmModel out = *this;
  out.sigma2 = s2;
  return out;
}

GmmModel GmmModel::with_w0(double new_w0) const {
  if (!(new_w0 >= 0.0 && new_w0 < 1.0)) throw std::invalid_argument("GmmModel: w0 must be in [0, 1)");
  return with_inlier_weight(1.0 - new_w0);
}

GmmModel GmmModel::with_inlier_weight(double v0) const {
  if (!(v0 > 0.0 && v0 <= 1.0)) throw std::invalid_argument("GmmModel: 1 - w0 must be in (0, 1]");
  GmmModel out = *this;
  out.v0 = v0;
  out.w0 = 1.0 - v0;
  out.inlier_weights = v0 * source_confidence.array();
  out.outlier_weights = 1.0 - out.inlier_weights.array();
  return out;
}

double alpha_coefficient(double kappa, double lambda, double alpha_max) {
  if (!(kappa > 0.0)) throw std::invalid_argument("alpha_coefficient: kappa must be > 0 (clamp it first)");
  // (1 - e^u) / (1 + e^u) = tanh(-u / 2) with u = lambda (3 - 1/kappa).
  return alpha_max * std::tanh(0.5 * lambda * (1.0 / kappa - 3.0));
}

Eigen::Matrix3d inverse_covariance(const Eigen::Vector3d& normal, double alpha, double sigma2) {
  // n n^T first keeps the result exactly symmetric.
  const Eigen::Matrix3d nnt = normal * normal.transpose();
  return (alpha * nnt + Eigen::Matrix3d::Identity()) / sigma2;
}

double component_normalizer(double alpha, double sigma2) { return std::exp(log_component_normalizer(alpha, sigma2)); }

double log_component_normalizer(double alpha, double sigma2) {
  return 0.5 * std::log1p(alpha) - 1.5 * std::log(kTwoPi * sigma2);
}

double estimate_outlier_weight(const GmmModel& model, double eta) {
  if (!(eta >= 0.0 && eta < 1.0)) throw std::invalid_argument("estimate_outlier_weight: eta must be in [0, 1)");
  const double mass = eta * model.volume * model.weighted_normalizer_sum();
  return mass / ((1.0 - eta) + mass);
}

double estimate_inlier_weight(const GmmModel& model, double eta) {
  if (!(eta >= 0.0 && eta < 1.0)) throw std::invalid_argument("estimate_inlier_weight: eta must be in [0, 1)");
  const double mass = eta * model.volume * model.weighted_normalizer_sum();
  return (1.0 - eta) / ((1.0 - eta) + mass);
}

double working_volume(const PointCloud& target, double margin) {
  if (target.empty()) throw std::invalid_argument("working_volume: empty target");
  if (!(margin >= 0.0)) throw std::invalid_argument("working_volume: margin must be >= 0");
  Eigen::Vector3d extent = target.points().rowwise().maxCoeff() - target.points().rowwise().minCoeff();
  if ((extent.array() <= 0.0).any()) {
    double spacing = 0.0;
    if (target.size() > 1) {
      const KdIndex index(target.points());
      for (Eigen::Index i = 0; i < target.size(); ++i) spacing += index.knn(target.points().col(i), 2)[1].distance;
      spacing /= static_cast<double>(target.size());
    }
    if (!(spacing > 0.0)) throw std::invalid_argument("working_volume: all target points coincide");
    extent = extent.cwiseMax(spacing);
  }
  return (extent * (1.0 + 2.0 * margin)).prod();
}

double initial_sigma2(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target) {
  const auto n = static_cast<double>(source.cols());
  const auto m = static_cast<double>(target.cols());
  if (n == 0 || m == 0) throw std::invalid_argument("initial_sigma2: empty cloud");
  // sum |x - y|^2 = M sum |x - xbar|^2 + N sum |y - ybar|^2 + N M |xbar - ybar|^2
  const Eigen::Vector3d xbar = source.rowwise().mean();
  const Eigen::Vector3d ybar = target.rowwise().mean();
  const double sx = (source.colwise() - xbar).squaredNorm();
  const double sy = (target.colwise() - ybar).squaredNorm();
  const double total = m * sx + n * sy + n * m * (xbar - ybar).squaredNorm();
  return total / (3.0 * n * m);
}

Eigen::VectorXd confidence_from_error_model(const Eigen::Matrix3Xd& points, const ModelConfig& config) {
  const double e_min = config.error_c0 + config.error_c1 * config.min_range * config.min_range;
  Eigen::VectorXd phi(points.cols());
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const double z = points(2, i);
    const double e = config.error_c0 + config.error_c1 * z * z;
    phi(i) = e > 0.0 ? std::clamp(e_min / e, 0.0, 1.0) : 1.0;
  }
  return phi;
}

GmmModel apply_confidence_filter(const GmmModel& model, const PointCloud& source, const PointCloud& target,
                                 const ModelConfig& config) {
  if (source.size() != model.sources()) throw std::invalid_argument("apply_confidence_filter: source size mismatch");
  const Eigen::VectorXd phi_target =
      target.has_confidences() ? target.confidences() : confidence_from_error_model(target.points(), config);
  Eigen::VectorXd phi_source =
      source.has_confidences() ? source.confidences() : confidence_from_error_model(source.points(), config);
  const double threshold = config.confidence_truncation_threshold;

  std::vector<Eigen::Index> keep;
  for (Eigen::Index m = 0; m < model.components(); ++m) {
    const double phi = phi_target(model.component_ids[static_cast<std::size_t>(m)]);
    if (phi > 0.0 && phi >= threshold) keep.push_back(m);
  }
  if (keep.empty()) throw std::invalid_argument("apply_confidence_filter: no target point has usable confidence");

  GmmModel out = model;
  const auto k = static_cast<Eigen::Index>(keep.size());
  out.centroids.resize(3, k);
  out.normals.resize(3, k);
  out.alphas.resize(k);
  out.priors.resize(k);
  out.component_ids.resize(keep.size());
  double total = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index m = keep[static_cast<std::size_t>(j)];
    out.centroids.col(j) = model.centroids.col(m);
    out.normals.col(j) = model.normals.col(m);
    out.alphas(j) = model.alphas(m);
    out.component_ids[static_cast<std::size_t>(j)] = model.component_ids[static_cast<std::size_t>(m)];
    out.priors(j) = phi_target(out.component_ids[static_cast<std::size_t>(j)]);
    total += out.priors(j);
  }
  out.priors /= total;

  for (Eigen::Index n = 0; n < phi_source.size(); ++n) {
    if (phi_source(n) < threshold) phi_source(n) = 0.0;
  }
  if (!(phi_source.maxCoeff() > 0.0)) {
    throw std::invalid_argument("apply_confidence_filter: all source confidences are zero");
  }
  out.source_confidence = phi_source;
  return out.with_inlier_weight(model.v0);
}

GmmModel build_model(const PointCloud& target, const PointCloud& source, const ModelConfig& config,
                     const RigidTransform& source_transform) {
  config.validate();
  if (!target.has_normals() || !target.has_variations()) {
    throw std::invalid_argument("build_model: target needs normals and variations (annotate it first)");
  }
  if (target.empty() || source.empty()) throw std::invalid_argument("build_model: empty cloud");

  const Eigen::Index m_count = target.size();
  GmmModel model;
  model.consistent_normalizer = config.consistent_normalizer;
  model.centroids = target.points();
  model.normals = target.normals();
  model.alphas.resize(m_count);
  for (Eigen::Index m = 0; m < m_count; ++m) {
    const double kappa = std::max(target.variations()(m), 1e-12);
    model.alphas(m) = std::clamp(alpha_coefficient(kappa, config.lambda, config.alpha_max), 0.0, config.alpha_max);
  }
  model.priors = Eigen::VectorXd::Constant(m_count, 1.0 / static_cast<double>(m_count));
  model.component_ids.resize(static_cast<std::size_t>(m_count));
  for (Eigen::Index m = 0; m < m_count; ++m) model.component_ids[static_cast<std::size_t>(m)] = m;
  model.volume = working_volume(target, config.volume_margin);
  model.sigma2 = std::max(initial_sigma2(source_transform.apply(source.points()), target.points()), 1e-12);
  model.source_confidence = Eigen::VectorXd::Ones(source.size());
  model = model.with_inlier_weight(estimate_inlier_weight(model, config.outlier_ratio));
  if (config.use_cf) {
    model = apply_confidence_filter(model, source, target, config);
    model = model.with_inlier_weight(estimate_inlier_weight(model, config.outlier_ratio));
  }
  return model;
}

}  // namespace lsgcpd
