#include "lsgcpd/driver.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "lsgcpd/error.hpp"
#include "lsgcpd/mstep.hpp"
#include "lsgcpd/surface.hpp"

namespace lsgcpd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

constexpr double kEmptyMass = 1e-10;
constexpr int kEmptyMassLimit = 3;
const double kLogMinNormal = std::log(std::numeric_limits<double>::min());

void require_non_collinear(const PointCloud& target) {
  const Eigen::Vector3d mean = target.points().rowwise().mean();
  const Eigen::Matrix3Xd centered = target.points().colwise() - mean;
  const Eigen::Matrix3d scatter = centered * centered.transpose();
  const Eigen::Vector3d lambda = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(scatter).eigenvalues();
  if (!(lambda(1) > 1e-12 * lambda(2))) {
    throw RegistrationError("register: target points are collinear (or coincident)");
  }
}

}  // namespace

void EmConfig::validate() const {
  if (max_iterations < 1) throw std::invalid_argument("EmConfig: max_iterations must be >= 1");
  if (!(tol_nll > 0.0) || !(tol_rotation > 0.0) || !(tol_translation > 0.0)) {
    throw std::invalid_argument("EmConfig: tolerances must be positive");
  }
}

double negative_log_likelihood(const GmmModel& model, const PointCloud& source, const RigidTransform& g) {
  if (model.sources() != source.size()) throw std::invalid_argument("negative_log_likelihood: size mismatch");
  const Eigen::Index m_count = model.components();
  const Eigen::ArrayXd yx = model.centroids.row(0).transpose().array();
  const Eigen::ArrayXd yy = model.centroids.row(1).transpose().array();
  const Eigen::ArrayXd yz = model.centroids.row(2).transpose().array();
  const Eigen::ArrayXd nx = model.normals.row(0).transpose().array();
  const Eigen::ArrayXd ny = model.normals.row(1).transpose().array();
  const Eigen::ArrayXd nz = model.normals.row(2).transpose().array();
  Eigen::ArrayXd log_weight(m_count);
  for (Eigen::Index m = 0; m < m_count; ++m) log_weight(m) = std::log(model.priors(m)) + model.log_normalizer(m);
  const double inv_two_sigma2 = 0.5 / model.sigma2;
  const double log_outlier_density = -std::log(model.volume);

  Eigen::VectorXd per_point(source.size());
  bool zero_density = false;
#pragma omp parallel
  {
    Eigen::ArrayXd dx(m_count), dy(m_count), dz(m_count), e(m_count);
#pragma omp for schedule(static)
    for (Eigen::Index n = 0; n < source.size(); ++n) {
      const double w = model.outlier_weights(n);
      const double v = model.inlier_weights(n);
      const double log_out = w > 0.0 ? std::log(w) + log_outlier_density : -std::numeric_limits<double>::infinity();
      if (v <= 0.0) {
        per_point(n) = -log_out;
        continue;
      }
      const Eigen::Vector3d z = g.apply(Eigen::Vector3d(source.points().col(n)));
      dx = z.x() - yx;
      dy = z.y() - yy;
      dz = z.z() - yz;
      const Eigen::ArrayXd dn = nx * dx + ny * dy + nz * dz;
      e = std::log(v) + log_weight -
          (dx.square() + dy.square() + dz.square() + model.alphas.array() * dn.square()) * inv_two_sigma2;
      const double shift = std::max(e.maxCoeff(), log_out);
      // Without an outlier term, a density below the smallest normal double counts as zero.
      if (!std::isfinite(shift) || shift < kLogMinNormal) {
        zero_density = true;
        continue;
      }
      e = (e - shift).max(kLogUnderflow);
      const double mass = e.exp().sum() + std::exp(log_out - shift);
      per_point(n) = -(shift + std::log(mass));
    }
  }
  if (zero_density) {
    throw RegistrationError("negative_log_likelihood: a source point has zero density (w_n = 0, outside all components)");
  }
  return per_point.sum();
}

RegistrationReport register_clouds(const PointCloud& source, const PointCloud& target, const ModelConfig& model_cfg,
                                   const EmConfig& em_cfg, const RegisterOptions& options) {
  const auto start = Clock::now();
  model_cfg.validate();
  em_cfg.validate();
  if (source.size() < 3 || target.size() < 3) throw std::invalid_argument("register: clouds need at least 3 points");
  require_non_collinear(target);

  const PointCloud annotated = (target.has_normals() && target.has_variations())
                                   ? target
                                   : annotate_cloud(target, model_cfg.neighbors, model_cfg.trust_normals);
  GmmModel model = build_model(annotated, source, model_cfg, options.initial);

  RegistrationReport report;
  RigidTransform g = options.initial;
  int empty_iterations = 0;
  CorrespondenceMatrix last;
  for (int iter = 0; iter < em_cfg.max_iterations; ++iter) {
    if (em_cfg.recompute_w0) model = model.with_inlier_weight(estimate_inlier_weight(model, model_cfg.outlier_ratio));
    const double nll_before = negative_log_likelihood(model, source, g);

    const auto e_start = Clock::now();
    const PrecomputedTerms terms = precompute_terms(model, source);
    CorrespondenceMatrix p = correspondence(model, source, g, terms);
    report.e_step_time += seconds_since(e_start);

    if (p.np < kEmptyMass) {
      if (++empty_iterations >= kEmptyMassLimit) {
        throw RegistrationError("register: correspondence mass vanished for " + std::to_string(kEmptyMassLimit) +
                                " consecutive iterations (sum P = " + std::to_string(p.np) + ")");
      }
    } else {
      empty_iterations = 0;
    }

    const auto m_start = Clock::now();
    const MStepResult m = m_step(p, model, source, g);
    report.m_step_time += seconds_since(m_start);

    const GmmModel updated = model.with_sigma2(m.sigma2);
    const double nll_after = negative_log_likelihood(updated, source, m.transform);
    report.nll_trace.push_back(nll_before);
    report.nll_post_trace.push_back(nll_after);
    report.sigma2_trace.push_back(m.sigma2);
    report.w0_trace.push_back(model.w0);
    report.iterations = iter + 1;

    g = m.transform;
    model = updated;
    last = std::move(p);

    if (options.on_iteration && options.on_iteration(iter, g)) {
      report.stopped_early = true;
      break;
    }
    const double rel_change = std::abs(nll_before - nll_after) / std::max(std::abs(nll_before), 1e-300);
    const bool small_step =
        !m.damped && m.step_rotation < em_cfg.tol_rotation && m.step_translation < em_cfg.tol_translation;
    if (rel_change < em_cfg.tol_nll || small_step) {
      report.converged = true;
      break;
    }
  }

  if (options.on_final_correspondence) options.on_final_correspondence(last);
  report.transform = g;
  report.final_sigma2 = model.sigma2;
  report.wall_time = seconds_since(start);
  return report;
}

std::string report_to_json(const RegistrationReport& report) {
  nlohmann::ordered_json j;
  j["converged"] = report.converged;
  j["stopped_early"] = report.stopped_early;
  j["iterations"] = report.iterations;
  j["final_sigma2"] = report.final_sigma2;
  j["wall_time_s"] = report.wall_time;
  j["e_step_time_s"] = report.e_step_time;
  j["m_step_time_s"] = report.m_step_time;
  j["nll_trace"] = report.nll_trace;
  j["nll_post_trace"] = report.nll_post_trace;
  j["sigma2_trace"] = report.sigma2_trace;
  j["w0_trace"] = report.w0_trace;
  const Eigen::Matrix4d m = report.transform.matrix();
  auto rows = nlohmann::ordered_json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  j["transform"] = rows;
  return j.dump(2) + "\n";
}

void save_report(const RegistrationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << report_to_json(report);
  if (!out) throw DataError(path.string() + ": write failed");
}

}  // namespace lsgcpd
