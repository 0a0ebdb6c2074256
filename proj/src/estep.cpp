#include "lsgcpd/estep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <stdexcept>

#include "lsgcpd/error.hpp"

namespace lsgcpd {

namespace {

void check_shapes(const GmmModel& model, const PointCloud& source) {
  if (model.sources() != source.size()) {
    throw std::invalid_argument("correspondence: model has " + std::to_string(model.sources()) +
                                " outlier weights but source has " + std::to_string(source.size()) + " points");
  }
}

double sum_of(const Eigen::MatrixXd& p) {
  // Column sums first, then across columns: fixed order independent of threading.
  return p.colwise().sum().sum();
}

}  // namespace

Eigen::MatrixXd PrecomputedTerms::dense_q() const {
  return (y_sq.matrix().replicate(1, x_sq.size()).rowwise() + x_sq.matrix().transpose());
}

Eigen::MatrixXd PrecomputedTerms::dense_c() const { return c_target.matrix() * c_source.matrix().transpose(); }

double outlier_gamma(const GmmModel& model) {
  return std::pow(2.0 * std::numbers::pi * model.sigma2, 1.5) / model.volume;
}

PrecomputedTerms precompute_terms(const GmmModel& model, const PointCloud& source) {
  check_shapes(model, source);
  const Eigen::Index m_count = model.components();
  PrecomputedTerms t;
  t.s = (model.centroids.array() * model.normals.array()).colwise().sum().transpose();
  t.y_sq = model.centroids.colwise().squaredNorm().transpose().array();
  t.x_sq = source.points().colwise().squaredNorm().transpose().array();
  t.alphas = model.alphas.array();
  t.c_target = model.priors.array();
  if (model.consistent_normalizer) t.c_target *= (1.0 + t.alphas).sqrt();
  t.c_source.resize(source.size());
  for (Eigen::Index n = 0; n < source.size(); ++n) {
    const double v = model.inlier_weights(n);
    t.c_source(n) = v <= 0.0 ? 0.0 : v / std::max(model.outlier_weights(n), kOutlierWeightFloor);
  }
  t.yx = model.centroids.row(0).transpose().array();
  t.yy = model.centroids.row(1).transpose().array();
  t.yz = model.centroids.row(2).transpose().array();
  t.nx = model.normals.row(0).transpose().array();
  t.ny = model.normals.row(1).transpose().array();
  t.nz = model.normals.row(2).transpose().array();
  if (t.s.size() != m_count) throw std::logic_error("precompute_terms: inconsistent model");
  return t;
}

CorrespondenceMatrix correspondence(const GmmModel& model, const PointCloud& source, const RigidTransform& g,
                                    const PrecomputedTerms& terms) {
  check_shapes(model, source);
  const Eigen::Index m_count = model.components();
  const Eigen::Index n_count = source.size();
  if (terms.s.size() != m_count || terms.c_source.size() != n_count) {
    throw std::invalid_argument("correspondence: precomputed terms do not match the model");
  }

  const Eigen::Matrix3d& r = g.rotation();
  const Eigen::Vector3d& t = g.translation();
  const double inv_two_sigma2 = 0.5 / model.sigma2;
  const double log_gamma = std::log(outlier_gamma(model));
  const double t_sq = t.squaredNorm();

  // Row terms folded with -1/(2 sigma2): e_m = base_m + ky . Rx - k_alpha a_m^2 - k b_col.
  const Eigen::ArrayXd a_row = terms.nx * t.x() + terms.ny * t.y() + terms.nz * t.z() - terms.s;
  const Eigen::ArrayXd b_row = terms.y_sq - 2.0 * (terms.yx * t.x() + terms.yy * t.y() + terms.yz * t.z());
  const Eigen::ArrayXd base = terms.c_target.log() - b_row * inv_two_sigma2;
  const Eigen::ArrayXd kyx = 2.0 * inv_two_sigma2 * terms.yx;
  const Eigen::ArrayXd kyy = 2.0 * inv_two_sigma2 * terms.yy;
  const Eigen::ArrayXd kyz = 2.0 * inv_two_sigma2 * terms.yz;
  const Eigen::ArrayXd k_alpha = inv_two_sigma2 * terms.alphas;

  CorrespondenceMatrix out;
  out.posteriors.resize(m_count, n_count);
  out.outlier_posterior.resize(n_count);
  bool non_finite = false;

#pragma omp parallel for schedule(static) reduction(|| : non_finite)
  for (Eigen::Index n = 0; n < n_count; ++n) {
    auto e = out.posteriors.col(n).array();
    if (terms.c_source(n) == 0.0) {
      e.setZero();
      out.outlier_posterior(n) = 1.0;
      continue;
    }
    const Eigen::Vector3d rx = r * source.points().col(n);
    const double b_col = (terms.x_sq(n) + t_sq + 2.0 * t.dot(rx)) * inv_two_sigma2;
    // D A: alpha_m (n_m^T R x_n + n_m^T t - s_m)^2
    // B_mn = Q_mn + t^T t + 2 (t^T R x_n - y_m^T R x_n - y_m^T t)
    e = base + kyx * rx.x() + kyy * rx.y() + kyz * rx.z() -
        k_alpha * (terms.nx * rx.x() + terms.ny * rx.y() + terms.nz * rx.z() + a_row).square() - b_col;
    const double log_outlier = log_gamma - std::log(terms.c_source(n));
    const double shift = std::max(e.maxCoeff(), log_outlier);
    if (!std::isfinite(shift)) {
      non_finite = true;
      continue;
    }
    // Clamping keeps every term normal; subnormal arithmetic is an order of magnitude slower.
    e = (e - shift).max(kLogUnderflow).exp();
    const double outlier = std::exp(log_outlier - shift);
    const double denom = e.sum() + outlier;
    if (!std::isfinite(denom)) {
      non_finite = true;
      continue;
    }
    e *= 1.0 / denom;
    out.outlier_posterior(n) = outlier / denom;
  }
  if (non_finite) throw RegistrationError("correspondence: non-finite kernel value after stabilization");
  out.np = sum_of(out.posteriors);
  return out;
}

CorrespondenceMatrix naive_correspondence(const GmmModel& model, const PointCloud& source, const RigidTransform& g) {
  check_shapes(model, source);
  const Eigen::Index m_count = model.components();
  const Eigen::Index n_count = source.size();
  CorrespondenceMatrix out;
  out.posteriors.resize(m_count, n_count);
  out.outlier_posterior.resize(n_count);
  const double log_outlier_density = -std::log(model.volume);

  Eigen::VectorXd log_terms(m_count);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const double w = model.outlier_weights(n);
    const double v = model.inlier_weights(n);
    if (v <= 0.0) {
      out.posteriors.col(n).setZero();
      out.outlier_posterior(n) = 1.0;
      continue;
    }
    const double w_eff = std::max(w, kOutlierWeightFloor);
    const Eigen::Vector3d x = g.apply(Eigen::Vector3d(source.points().col(n)));
    for (Eigen::Index m = 0; m < m_count; ++m) {
      const Eigen::Matrix3d info = inverse_covariance(model.normals.col(m), model.alphas(m), model.sigma2);
      const Eigen::Vector3d d = x - model.centroids.col(m);
      const double log_density = model.log_normalizer(m) - 0.5 * d.dot(info * d);
      log_terms(m) = std::log(v) + std::log(model.priors(m)) + log_density;
    }
    const double log_outlier = std::log(w_eff) + log_outlier_density;
    const double shift = std::max(log_terms.maxCoeff(), log_outlier);
    double denom = std::exp(log_outlier - shift);
    for (Eigen::Index m = 0; m < m_count; ++m) denom += std::exp(log_terms(m) - shift);
    for (Eigen::Index m = 0; m < m_count; ++m) out.posteriors(m, n) = std::exp(log_terms(m) - shift) / denom;
    out.outlier_posterior(n) = std::exp(log_outlier - shift) / denom;
  }
  out.np = sum_of(out.posteriors);
  return out;
}

void write_correspondence_csv(const CorrespondenceMatrix& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << std::setprecision(17);
  auto write_row = [&](const auto& row) {
    for (Eigen::Index n = 0; n < row.size(); ++n) out << (n ? "," : "") << row(n);
    out << '\n';
  };
  for (Eigen::Index m = 0; m < p.posteriors.rows(); ++m) write_row(p.posteriors.row(m));
  write_row(p.outlier_posterior.transpose());
  if (!out) throw DataError(path.string() + ": write failed");
}

}  // namespace lsgcpd
