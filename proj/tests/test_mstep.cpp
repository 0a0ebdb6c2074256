#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "fixtures.hpp"
#include "lsgcpd/mstep.hpp"

using namespace lsgcpd;
namespace fx = lsgcpd::testing;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

CorrespondenceMatrix e_step(const fx::RandomInstance& inst) {
  return correspondence(inst.model, inst.source, inst.g, precompute_terms(inst.model, inst.source));
}

CorrespondenceMatrix from_posteriors(Eigen::MatrixXd posteriors) {
  CorrespondenceMatrix p;
  p.outlier_posterior = (1.0 - posteriors.colwise().sum().array()).matrix().transpose();
  p.np = posteriors.sum();
  p.posteriors = std::move(posteriors);
  return p;
}

// Q summed pair by pair in extended precision.
long double q_oracle(const CorrespondenceMatrix& p, const GmmModel& m, const PointCloud& x, const RigidTransform& g,
                     long double sigma2) {
  long double q = 0.0L;
  for (Eigen::Index n = 0; n < x.size(); ++n) {
    const Eigen::Vector3d gx = g.apply(x.point(n));
    for (Eigen::Index i = 0; i < m.components(); ++i) {
      const double pmn = p.posteriors(i, n);
      if (pmn == 0.0) continue;
      const Eigen::Vector3d d = gx - m.centroids.col(i);
      const long double maha = d.squaredNorm() + m.alphas(i) * std::pow(m.normals.col(i).dot(d), 2);
      long double log_c = -1.5L * std::log(static_cast<long double>(kTwoPi) * sigma2);
      if (m.consistent_normalizer) log_c += 0.5L * std::log1p(static_cast<long double>(m.alphas(i)));
      q += pmn * (0.5L * maha / sigma2 - std::log(static_cast<long double>(m.priors(i))) - log_c);
    }
  }
  return q;
}

RigidTransform perturb(const RigidTransform& g, int axis, double h) {
  Twist xi = Twist::Zero();
  xi(axis) = h;
  return compose(g, exp_twist(xi));
}

Gradient6 fd_gradient(const CorrespondenceMatrix& p, const GmmModel& m, const PointCloud& x, const RigidTransform& g,
                      double h) {
  Gradient6 out;
  for (int i = 0; i < 6; ++i) {
    out(i) = (objective_q(p, m, x, perturb(g, i, h)) - objective_q(p, m, x, perturb(g, i, -h))) / (2.0 * h);
  }
  return out;
}

Hessian6 fd_hessian(const CorrespondenceMatrix& p, const GmmModel& m, const PointCloud& x, const RigidTransform& g,
                    double h) {
  Hessian6 out;
  for (int j = 0; j < 6; ++j) {
    out.col(j) = (gradient(p, m, x, perturb(g, j, h)) - gradient(p, m, x, perturb(g, j, -h))) / (2.0 * h);
  }
  return out;
}

// Single pair: grad_i = p/s2 d^T A u_i, H_ij = p/s2 (u_j^T A u_i + d^T A (g E_j E_i x)), u_i = (g E_i x).
void single_pair_oracle(double pmn, const Eigen::Vector3d& y, const Eigen::Vector3d& nrm, double alpha, double s2,
                        const Eigen::Vector3d& x, const RigidTransform& g, Gradient6& grad, Hessian6& hess) {
  const Eigen::Matrix4d gm = g.matrix();
  const Eigen::Vector4d xh(x.x(), x.y(), x.z(), 1.0);
  const Eigen::Matrix3d a = alpha * nrm * nrm.transpose() + Eigen::Matrix3d::Identity();
  const Eigen::Vector3d d = (gm * xh).head<3>() - y;
  Eigen::Matrix<double, 3, 6> u;
  for (int i = 0; i < 6; ++i) u.col(i) = (gm * basis(i + 1) * xh).head<3>();
  for (int i = 0; i < 6; ++i) {
    grad(i) = pmn / s2 * d.dot(a * u.col(i));
    for (int j = 0; j < 6; ++j) {
      const Eigen::Vector3d second = (gm * basis(j + 1) * basis(i + 1) * xh).head<3>();
      hess(i, j) = pmn / s2 * (u.col(j).dot(a * u.col(i)) + d.dot(a * second));
    }
  }
}

GmmModel grid_plane_model(int side, double alpha, double sigma2) {
  GmmModel m;
  m.centroids.resize(3, side * side);
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) m.centroids.col(i * side + j) = Eigen::Vector3d(0.1 * i, 0.1 * j, 0.0);
  m.normals = Eigen::Vector3d::UnitZ().replicate(1, side * side);
  m.alphas = Eigen::VectorXd::Constant(side * side, alpha);
  m.priors = Eigen::VectorXd::Constant(side * side, 1.0 / (side * side));
  for (int i = 0; i < side * side; ++i) m.component_ids.push_back(i);
  m.sigma2 = sigma2;
  m.volume = 1.0;
  m.source_confidence = Eigen::VectorXd::Ones(side * side);
  return m.with_w0(0.1);
}

}  // namespace

TEST(ObjectiveQ, ZeroPosteriorsGiveZero) {
  std::mt19937_64 rng(1);
  fx::RandomInstance inst = fx::random_instance(rng, 8, 9, true);
  const CorrespondenceMatrix p = from_posteriors(Eigen::MatrixXd::Zero(8, 9));
  EXPECT_EQ(objective_q(p, inst.model, inst.source, inst.g), 0.0);
}

TEST(ObjectiveQ, CoincidentPairIsNegLogWeight) {
  GmmModel m = grid_plane_model(1, 0.0, 0.3);
  const PointCloud x(m.centroids);
  const CorrespondenceMatrix p = from_posteriors(Eigen::MatrixXd::Ones(1, 1));
  EXPECT_NEAR(objective_q(p, m, x, RigidTransform()), -std::log(1.0 * component_normalizer(0.0, 0.3)), 1e-14);
}

TEST(ObjectiveQ, MatchesPairLoop) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    fx::RandomInstance inst = fx::random_instance(rng, 30, 25, trial % 2 == 0);
    const CorrespondenceMatrix p = e_step(inst);
    const auto want = static_cast<double>(q_oracle(p, inst.model, inst.source, inst.g, inst.model.sigma2));
    EXPECT_NEAR(objective_q(p, inst.model, inst.source, inst.g), want, 1e-10 * std::max(1.0, std::abs(want)));
  }
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    fx::RandomInstance inst = fx::random_instance(rng, 25, 30, trial % 2 == 0);
    const CorrespondenceMatrix p = e_step(inst);
    const Gradient6 fd = fd_gradient(p, inst.model, inst.source, inst.g, 1e-6);
    const Gradient6 an = gradient(p, inst.model, inst.source, inst.g);
    EXPECT_LT((an - fd).norm() / fd.norm(), 1e-5) << "trial " << trial;
  }
}

TEST(Gradient, VanishesAtNoiseFreeOptimum) {
  const GmmModel m = grid_plane_model(5, 50.0, 0.01);
  const PointCloud x(m.centroids);
  const CorrespondenceMatrix p = from_posteriors(Eigen::MatrixXd::Identity(25, 25));
  EXPECT_LT(gradient(p, m, x, RigidTransform()).norm(), 1e-8);
}

TEST(Gradient, SinglePairMatchesHandExpansion) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    fx::RandomInstance inst = fx::random_instance(rng, 4, 3, true);
    Eigen::MatrixXd post = Eigen::MatrixXd::Zero(4, 3);
    post(2, 1) = 0.7;
    const CorrespondenceMatrix p = from_posteriors(post);
    const GmmModel& m = inst.model;
    Gradient6 want;
    Hessian6 want_h;
    single_pair_oracle(0.7, m.centroids.col(2), m.normals.col(2), m.alphas(2), m.sigma2, inst.source.point(1), inst.g,
                       want, want_h);
    EXPECT_LT((gradient(p, m, inst.source, inst.g) - want).norm(), 1e-9 * (1.0 + want.norm()));
    EXPECT_LT((hessian(p, m, inst.source, inst.g) - want_h).norm(), 1e-9 * (1.0 + want_h.norm()));
  }
}

TEST(Hessian, MatchesFiniteDifferencesOfGradient) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    fx::RandomInstance inst = fx::random_instance(rng, 25, 30, trial % 2 == 0);
    const CorrespondenceMatrix p = e_step(inst);
    const Hessian6 fd = fd_hessian(p, inst.model, inst.source, inst.g, 1e-6);
    const Hessian6 an = hessian(p, inst.model, inst.source, inst.g);
    EXPECT_LT((an - fd).norm() / fd.norm(), 1e-4) << "trial " << trial;
  }
}

TEST(Hessian, SymmetricPartIsPsdAtIsotropicOptimum) {
  GmmModel m = grid_plane_model(4, 0.0, 0.02);
  m.centroids.row(2) = Eigen::RowVectorXd::LinSpaced(16, -0.1, 0.2);  // non-planar, full rank
  const PointCloud x(m.centroids);
  const CorrespondenceMatrix p = from_posteriors(Eigen::MatrixXd::Identity(16, 16));
  const Hessian6 h = hessian(p, m, x, RigidTransform());
  const Eigen::SelfAdjointEigenSolver<Hessian6> eig(0.5 * (h + h.transpose()));
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-9 * eig.eigenvalues().maxCoeff());
}

TEST(Hessian, IsGenerallyAsymmetric) {
  std::mt19937_64 rng(6);
  fx::RandomInstance inst = fx::random_instance(rng, 20, 20, true, 0.3);
  const Hessian6 h = hessian(e_step(inst), inst.model, inst.source, inst.g);
  EXPECT_GT((h - h.transpose()).norm(), 1e-6 * h.norm());
}

TEST(NewtonSolve, StationaryStartIsUnchanged) {
  const GmmModel m = grid_plane_model(5, 50.0, 0.01);
  const PointCloud x(m.centroids);
  const CorrespondenceMatrix p = from_posteriors(Eigen::MatrixXd::Identity(25, 25));
  const MStepResult r = newton_solve(p, m, x, RigidTransform());
  EXPECT_LE(r.newton_iters, 1);
  EXPECT_LT((r.transform.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
}

void expect_translation_recovered(const Eigen::Vector3d& offset, int max_iters) {
  GmmModel m = grid_plane_model(6, 50.0, 0.01);
  m.centroids.colwise() -= Eigen::Vector3d(m.centroids.rowwise().mean());
  const PointCloud x(Eigen::Matrix3Xd(m.centroids.colwise() - offset));
  const CorrespondenceMatrix p = from_posteriors(Eigen::MatrixXd::Identity(36, 36));
  const MStepResult r = newton_solve(p, m, x, RigidTransform());
  EXPECT_LE(r.newton_iters, max_iters);
  EXPECT_LT((r.transform.translation() - offset).norm(), 1e-9);
  EXPECT_LT(rotation_angle(r.transform.rotation()), 1e-9);
}

TEST(NewtonSolve, RecoversSmallPlaneTranslationQuickly) {
  // Sub-centimeter offsets keep the rotation/translation coupling of the exact
  // Hessian (which grows with alpha |d|) small: the problem is nearly quadratic.
  expect_translation_recovered(Eigen::Vector3d(0.003, -0.002, 0.005), 3);
}

TEST(NewtonSolve, RecoversLargePlaneTranslation) {
  expect_translation_recovered(Eigen::Vector3d(0.03, -0.02, 0.05), kMaxNewtonIterations);
}

TEST(NewtonSolve, NeverIncreasesQ) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    fx::RandomInstance inst = fx::random_instance(rng, 30, 30, trial % 2 == 0, 0.2);
    const CorrespondenceMatrix p = e_step(inst);
    const double q0 = objective_q(p, inst.model, inst.source, inst.g);
    const MStepResult r = newton_solve(p, inst.model, inst.source, inst.g);
    EXPECT_LE(r.q_value, q0);
    EXPECT_NEAR(r.q_value, objective_q(p, inst.model, inst.source, r.transform), 1e-12 * std::abs(q0));
  }
}

TEST(NewtonSolve, MatchesSvdClosedFormAtZeroAlpha) {
  // Weighted Procrustes: argmin sum P_mn |y_m - R x_n - t|^2.
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    fx::RandomInstance inst = fx::random_instance(rng, 40, 35, true);
    GmmModel& m = inst.model;
    m.alphas.setZero();
    m.priors.setConstant(1.0 / 40.0);
    const CorrespondenceMatrix p = correspondence(m, inst.source, inst.g, precompute_terms(m, inst.source));
    const Eigen::Matrix3Xd& x = inst.source.points();
    const Eigen::Matrix3Xd& y = m.centroids;
    const Eigen::VectorXd px = p.posteriors.colwise().sum().transpose();
    const Eigen::VectorXd py = p.posteriors.rowwise().sum();
    const Eigen::Vector3d mx = x * px / p.np, my = y * py / p.np;
    const Eigen::Matrix3d a = (y.colwise() - my) * p.posteriors * (x.colwise() - mx).transpose();
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d c = Eigen::Matrix3d::Identity();
    c(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant();
    const Eigen::Matrix3d r = svd.matrixU() * c * svd.matrixV().transpose();
    const Eigen::Vector3d t = my - r * mx;

    const MStepResult got = newton_solve(p, m, inst.source, inst.g);
    EXPECT_LT((got.transform.rotation() - r).cwiseAbs().maxCoeff(), 1e-6) << "trial " << trial;
    EXPECT_LT((got.transform.translation() - t).cwiseAbs().maxCoeff(), 1e-6) << "trial " << trial;
  }
}

TEST(UpdateSigma2, PerfectAlignmentHitsFloor) {
  const GmmModel m = grid_plane_model(3, 50.0, 0.1);
  const PointCloud x(m.centroids);
  EXPECT_EQ(update_sigma2(from_posteriors(Eigen::MatrixXd::Identity(9, 9)), m, x, RigidTransform()), kSigma2Floor);
}

TEST(UpdateSigma2, SinglePairClosedForm) {
  const GmmModel m = grid_plane_model(1, 0.0, 0.1);
  const PointCloud x(Eigen::Matrix3Xd(Eigen::Vector3d(1.0, 1.0, 1.0)));
  EXPECT_DOUBLE_EQ(update_sigma2(from_posteriors(Eigen::MatrixXd::Ones(1, 1)), m, x, RigidTransform()), 1.0);
}

TEST(UpdateSigma2, ZeroMassKeepsPrevious) {
  const GmmModel m = grid_plane_model(2, 10.0, 0.37);
  const PointCloud x(m.centroids);
  EXPECT_EQ(update_sigma2(from_posteriors(Eigen::MatrixXd::Zero(4, 4)), m, x, RigidTransform()), 0.37);
}

TEST(UpdateSigma2, MatchesGoldenSectionMinimizer) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    fx::RandomInstance inst = fx::random_instance(rng, 20, 25, trial % 2 == 0);
    const CorrespondenceMatrix p = e_step(inst);
    const double got = update_sigma2(p, inst.model, inst.source, inst.g);
    auto f = [&](long double s2) { return q_oracle(p, inst.model, inst.source, inst.g, s2); };
    // Golden section over log sigma2; Q is unimodal in sigma2.
    const long double phi = (std::sqrt(5.0L) - 1.0L) / 2.0L;
    long double lo = std::log(1e-6L), hi = std::log(10.0L);
    long double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
    long double fa = f(std::exp(a)), fb = f(std::exp(b));
    for (int it = 0; it < 200 && hi - lo > 1e-12L; ++it) {
      if (fa < fb) {
        hi = b, b = a, fb = fa, a = hi - phi * (hi - lo), fa = f(std::exp(a));
      } else {
        lo = a, a = b, fa = fb, b = lo + phi * (hi - lo), fb = f(std::exp(b));
      }
    }
    const auto want = static_cast<double>(std::exp(0.5L * (lo + hi)));
    EXPECT_NEAR(got / want, 1.0, 1e-8) << "trial " << trial;
    // Stationary with positive curvature.
    const double h = 1e-4 * got;
    const auto f0 = f(got), fp = f(got + h), fm = f(got - h);
    EXPECT_GT(fp + fm - 2.0L * f0, 0.0L);
  }
}

TEST(MStep, CombinesNewtonAndSigma2) {
  std::mt19937_64 rng(10);
  fx::RandomInstance inst = fx::random_instance(rng, 30, 30, true);
  const CorrespondenceMatrix p = e_step(inst);
  const MStepResult r = m_step(p, inst.model, inst.source, inst.g);
  EXPECT_EQ(r.sigma2, update_sigma2(p, inst.model, inst.source, r.transform));
  EXPECT_GT(r.sigma2, 0.0);
  EXPECT_TRUE(std::isfinite(r.q_value));
}

TEST(MStep, ShapeMismatchThrows) {
  std::mt19937_64 rng(11);
  fx::RandomInstance inst = fx::random_instance(rng, 5, 6, true);
  EXPECT_THROW(objective_q(from_posteriors(Eigen::MatrixXd::Zero(6, 6)), inst.model, inst.source, inst.g),
               std::invalid_argument);
}
