#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lsgcpd/cloud.hpp"
#include "lsgcpd/estep.hpp"
#include "lsgcpd/model.hpp"
#include "lsgcpd/se3.hpp"

namespace lsgcpd {

struct EmConfig {
  int max_iterations = 100;
  /// Relative change of the negative log-likelihood across one E+M pair.
  double tol_nll = 1e-7;
  /// Newton update below both thresholds ends the loop.
  double tol_rotation = 1e-7;     // radians
  double tol_translation = 1e-7;  // meters
  std::uint64_t seed = 0;
  /// Recompute w0 = w_max from the current sigma2 every iteration. Off keeps
  /// the value from the initial sigma2: w_max grows like sigma^-3, and tracking
  /// it lets the outlier component absorb all mass at a wrong pose.
  bool recompute_w0 = false;

  void validate() const;
};

struct RegistrationReport {
  RigidTransform transform;
  /// L at the start of each iteration (current w0 and sigma2).
  std::vector<double> nll_trace;
  /// L after that iteration's M-step, evaluated with the same w0.
  std::vector<double> nll_post_trace;
  std::vector<double> sigma2_trace;
  std::vector<double> w0_trace;
  int iterations = 0;
  bool converged = false;
  /// Set when the harness stop rule ended the run.
  bool stopped_early = false;
  double wall_time = 0.0;
  double e_step_time = 0.0;
  double m_step_time = 0.0;
  double final_sigma2 = 0.0;
};

/// Optional per-iteration hook; returning true stops the loop.
using IterationCallback = std::function<bool(int iteration, const RigidTransform& current)>;

struct RegisterOptions {
  RigidTransform initial;
  IterationCallback on_iteration;
  /// Receives the last correspondence matrix (debug dumps).
  std::function<void(const CorrespondenceMatrix&)> on_final_correspondence;
};

/// L(g) = -sum_n log(w_n / V + (1 - w_n) sum_m pi(m) p(g(x_n) | m)).
/// The outlier density 1/V applies everywhere; throws RegistrationError if a
/// point has zero density (w_n = 0 and every component underflows).
double negative_log_likelihood(const GmmModel& model, const PointCloud& source, const RigidTransform& g);

/// EM registration of `source` onto `target`. Missing target normals or
/// variations are estimated with `model_cfg.neighbors` neighbors.
RegistrationReport register_clouds(const PointCloud& source, const PointCloud& target, const ModelConfig& model_cfg,
                                   const EmConfig& em_cfg, const RegisterOptions& options = {});

/// Flat JSON document: scalars, traces and the 4x4 transform rows.
std::string report_to_json(const RegistrationReport& report);
void save_report(const RegistrationReport& report, const std::filesystem::path& path);

}  // namespace lsgcpd
