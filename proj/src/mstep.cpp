#include "lsgcpd/mstep.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

namespace lsgcpd {

namespace {

constexpr Eigen::Index kReductionBlock = 64;

// Sums per-point terms in fixed blocks, then combines the block partials in a
// pairwise tree. The result does not depend on the number of threads.
template <typename T, typename Fn>
T blocked_reduce(Eigen::Index count, const T& zero, Fn&& term) {
  const Eigen::Index blocks = (count + kReductionBlock - 1) / kReductionBlock;
  std::vector<T> partial(static_cast<std::size_t>(std::max<Eigen::Index>(blocks, 1)), zero);
#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < blocks; ++b) {
    T acc = zero;
    const Eigen::Index end = std::min(count, (b + 1) * kReductionBlock);
    for (Eigen::Index i = b * kReductionBlock; i < end; ++i) term(i, acc);
    partial[static_cast<std::size_t>(b)] = acc;
  }
  for (std::size_t stride = 1; stride < partial.size(); stride *= 2) {
    for (std::size_t i = 0; i + stride < partial.size(); i += 2 * stride) partial[i] += partial[i + stride];
  }
  return partial.front();
}

void check_shapes(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source) {
  if (p.posteriors.rows() != model.components() || p.posteriors.cols() != source.size() ||
      model.sources() != source.size()) {
    throw std::invalid_argument("m-step: correspondence matrix, model and source sizes disagree");
  }
}

// Contiguous component arrays for column sweeps.
struct ComponentArrays {
  Eigen::ArrayXd yx, yy, yz, nx, ny, nz, alpha;
  explicit ComponentArrays(const GmmModel& model)
      : yx(model.centroids.row(0).transpose().array()),
        yy(model.centroids.row(1).transpose().array()),
        yz(model.centroids.row(2).transpose().array()),
        nx(model.normals.row(0).transpose().array()),
        ny(model.normals.row(1).transpose().array()),
        nz(model.normals.row(2).transpose().array()),
        alpha(model.alphas.array()) {}
};

// r_n(m) = sum_m P_mn (|d_mn|^2 + alpha_m (n_m . d_mn)^2), d_mn = g(x_n) - y_m.
Eigen::VectorXd weighted_residuals(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                                   const RigidTransform& g) {
  const ComponentArrays c(model);
  const Eigen::Index m_count = model.components();
  Eigen::VectorXd out(source.size());
#pragma omp parallel
  {
    Eigen::ArrayXd dx(m_count), dy(m_count), dz(m_count), dn(m_count);
#pragma omp for schedule(static)
    for (Eigen::Index n = 0; n < source.size(); ++n) {
      const Eigen::Vector3d z = g.apply(Eigen::Vector3d(source.points().col(n)));
      dx = z.x() - c.yx;
      dy = z.y() - c.yy;
      dz = z.z() - c.yz;
      dn = c.nx * dx + c.ny * dy + c.nz * dz;
      out(n) = (p.posteriors.col(n).array() * (dx.square() + dy.square() + dz.square() + c.alpha * dn.square())).sum();
    }
  }
  return out;
}

double log_weight_term(const CorrespondenceMatrix& p, const GmmModel& model) {
  const Eigen::VectorXd pt1 = p.posteriors.rowwise().sum();
  double acc = 0.0;
  for (Eigen::Index m = 0; m < model.components(); ++m) {
    if (pt1(m) != 0.0) acc += pt1(m) * (std::log(model.priors(m)) + model.log_normalizer(m));
  }
  return acc;
}

struct PointTerms {
  Eigen::Vector3d rho;  // R^T (W z - b)
  Eigen::Matrix3d w_body;  // R^T W R
};

PointTerms point_terms(const MStepStatistics& stats, const PointCloud& source, const RigidTransform& g,
                       Eigen::Index n) {
  const Eigen::Matrix3d& r = g.rotation();
  const Eigen::Matrix3d w = stats.w(n);
  const Eigen::Vector3d z = g.apply(Eigen::Vector3d(source.points().col(n)));
  return {r.transpose() * (w * z - stats.b.col(n)), r.transpose() * w * r};
}

// Change in the quadratic part of Q (times sigma2) when moving from g to g_new.
double quadratic_change(const MStepStatistics& stats, const PointCloud& source, const RigidTransform& g,
                        const RigidTransform& g_new) {
  return blocked_reduce(source.size(), 0.0, [&](Eigen::Index n, double& acc) {
    const Eigen::Vector3d x = source.points().col(n);
    const Eigen::Vector3d z = g.apply(x);
    const Eigen::Vector3d dz = g_new.apply(x) - z;
    const Eigen::Matrix3d w = stats.w(n);
    acc += dz.dot(w * z - stats.b.col(n)) + 0.5 * dz.dot(w * dz);
  });
}

double next_damping(double mu, const Hessian6& hs) {
  if (mu > 0.0) return 10.0 * mu;
  const double scale = hs.diagonal().cwiseAbs().maxCoeff();
  return 1e-6 * (scale > 0.0 ? scale : 1.0);
}

}  // namespace

Eigen::Matrix3d MStepStatistics::w(Eigen::Index n) const {
  const auto a = w_aniso.col(n);
  Eigen::Matrix3d out;
  out << a(0), a(3), a(4),
         a(3), a(1), a(5),
         a(4), a(5), a(2);
  out.diagonal().array() += p1(n);
  return out;
}

MStepStatistics accumulate_statistics(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source) {
  check_shapes(p, model, source);
  const Eigen::Index m_count = model.components();
  const Eigen::Index n_count = source.size();

  // Columns: 1 | y + alpha s n (3) | alpha n n^T packed (6)
  Eigen::MatrixXd g(m_count, 10);
  Eigen::VectorXd per_component_const(m_count);
  for (Eigen::Index m = 0; m < m_count; ++m) {
    const Eigen::Vector3d y = model.centroids.col(m);
    const Eigen::Vector3d nrm = model.normals.col(m);
    const double a = model.alphas(m);
    const double s = y.dot(nrm);
    g(m, 0) = 1.0;
    g.block<1, 3>(m, 1) = (y + a * s * nrm).transpose();
    g(m, 4) = a * nrm.x() * nrm.x();
    g(m, 5) = a * nrm.y() * nrm.y();
    g(m, 6) = a * nrm.z() * nrm.z();
    g(m, 7) = a * nrm.x() * nrm.y();
    g(m, 8) = a * nrm.x() * nrm.z();
    g(m, 9) = a * nrm.y() * nrm.z();
    per_component_const(m) = y.squaredNorm() + a * s * s;
  }

  Eigen::MatrixXd reduced(n_count, 10);
  const Eigen::Index chunk = 256;
  const Eigen::Index chunks = (n_count + chunk - 1) / chunk;
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index begin = c * chunk;
    const Eigen::Index len = std::min(chunk, n_count - begin);
    reduced.middleRows(begin, len).noalias() = p.posteriors.middleCols(begin, len).transpose() * g;
  }

  MStepStatistics stats;
  stats.p1 = reduced.col(0);
  stats.b = reduced.middleCols(1, 3).transpose();
  stats.w_aniso = reduced.middleCols(4, 6).transpose();
  const Eigen::VectorXd pt1 = p.posteriors.rowwise().sum();
  stats.constant = pt1.dot(per_component_const);
  stats.log_weight = log_weight_term(p, model);
  stats.np = p.np;
  return stats;
}

double objective_q(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                   const RigidTransform& g) {
  check_shapes(p, model, source);
  const double residual = weighted_residuals(p, model, source, g).sum();
  return 0.5 * residual / model.sigma2 - log_weight_term(p, model);
}

Gradient6 gradient(const MStepStatistics& stats, const GmmModel& model, const PointCloud& source,
                   const RigidTransform& g) {
  const Gradient6 zero = Gradient6::Zero();
  const Gradient6 sum = blocked_reduce(source.size(), zero, [&](Eigen::Index n, Gradient6& acc) {
    const Eigen::Vector3d x = source.points().col(n);
    const PointTerms pt = point_terms(stats, source, g, n);
    // J = R [-[x]_x, I]; J^T r = [x cross rho; rho]
    acc.head<3>() += x.cross(pt.rho);
    acc.tail<3>() += pt.rho;
  });
  return sum / model.sigma2;
}

Gradient6 gradient(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                   const RigidTransform& g) {
  return gradient(accumulate_statistics(p, model, source), model, source, g);
}

Hessian6 hessian(const MStepStatistics& stats, const GmmModel& model, const PointCloud& source,
                 const RigidTransform& g) {
  const Hessian6 zero = Hessian6::Zero();
  const Hessian6 sum = blocked_reduce(source.size(), zero, [&](Eigen::Index n, Hessian6& acc) {
    const Eigen::Vector3d x = source.points().col(n);
    const PointTerms pt = point_terms(stats, source, g, n);
    Eigen::Matrix<double, 3, 6> jb;
    jb.leftCols<3>() = -skew(x);
    jb.rightCols<3>().setIdentity();
    acc.noalias() += jb.transpose() * pt.w_body * jb;
    // Second-order term (g E_j E_i x)^T Sigma^-1 (g x - y): nonzero only for
    // rotational j. Rows i rotational: rho x^T - (x . rho) I; rows i translational: [rho]_x.
    acc.topLeftCorner<3, 3>() += pt.rho * x.transpose() - x.dot(pt.rho) * Eigen::Matrix3d::Identity();
    acc.bottomLeftCorner<3, 3>() += skew(pt.rho);
  });
  return sum / model.sigma2;
}

Hessian6 hessian(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                 const RigidTransform& g) {
  return hessian(accumulate_statistics(p, model, source), model, source, g);
}

MStepResult newton_solve(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                         const RigidTransform& g0) {
  const MStepStatistics stats = accumulate_statistics(p, model, source);
  MStepResult result;
  result.transform = g0;
  result.sigma2 = model.sigma2;

  RigidTransform g = g0;
  for (int iter = 0; iter < kMaxNewtonIterations; ++iter) {
    const Gradient6 grad = gradient(stats, model, source, g);
    const Hessian6 h = hessian(stats, model, source, g);
    const Hessian6 hs = 0.5 * (h + h.transpose());

    bool accepted = false;
    bool converged = false;
    double mu = 0.0;
    for (int trial = 0; trial < kMaxDampingTrials; ++trial, mu = next_damping(mu, hs)) {
      const Eigen::LLT<Hessian6> llt(hs + mu * Hessian6::Identity());
      if (llt.info() != Eigen::Success) continue;
      const Twist delta = -llt.solve(grad);
      if (!delta.allFinite()) continue;
      if (delta.norm() < kNewtonStepTolerance) {
        converged = true;
        break;
      }
      const RigidTransform candidate = compose(g, exp_twist(delta));
      if (quadratic_change(stats, source, g, candidate) < 0.0) {
        g = candidate;
        accepted = true;
        break;
      }
    }
    if (converged) break;
    if (!accepted) {
      result.damped = result.newton_iters == 0;
      break;
    }
    ++result.newton_iters;
  }

  result.transform = g;
  const RigidTransform step = compose(g0.inverse(), g);
  result.step_rotation = rotation_angle(step.rotation());
  result.step_translation = step.translation().norm();
  result.q_value = objective_q(p, model, source, g);
  return result;
}

double update_sigma2(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                     const RigidTransform& g) {
  check_shapes(p, model, source);
  if (!(p.np > 0.0)) return model.sigma2;
  const double residual = weighted_residuals(p, model, source, g).sum();
  return std::max(residual / (3.0 * p.np), kSigma2Floor);
}

MStepResult m_step(const CorrespondenceMatrix& p, const GmmModel& model, const PointCloud& source,
                   const RigidTransform& g0) {
  MStepResult result = newton_solve(p, model, source, g0);
  result.sigma2 = update_sigma2(p, model, source, result.transform);
  return result;
}

}  // namespace lsgcpd
