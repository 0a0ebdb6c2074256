#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lsgcpd/cloud.hpp"
#include "lsgcpd/driver.hpp"
#include "lsgcpd/model.hpp"
#include "lsgcpd/se3.hpp"

namespace lsgcpd {

struct CorruptionSpec {
  /// Outliers appended, as a fraction of the input point count.
  double outlier_ratio = 0.0;
  /// Std of iid Gaussian noise added to every original point (meters).
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  /// Outlier spread relative to the per-axis std of the cloud.
  double outlier_scale = 1.0;
};

struct MetricRow {
  int run_id = 0;
  CorruptionSpec spec;
  double error_m = 0.0;
  double rot_err_deg = 0.0;
  double trans_err_m = 0.0;
  int iterations = 0;
  double wall_s = 0.0;
  bool converged = false;
};

/// How ground-truth poses are drawn in a sweep.
struct PerturbationSpec {
  enum class Mode {
    RandomAxis,  // fixed angle about a uniformly random axis
    Uniform,     // independent uniform rotation (rad) and translation (m) per axis
  };
  Mode mode = Mode::RandomAxis;
  double angle_deg = 50.0;
  double max_rotation = 0.05;
  double max_translation = 0.01;
};

struct SweepOptions {
  int repeats = 1;
  std::uint64_t seed = 0;
  PerturbationSpec perturbation;
  /// Stop a run once rotation error < early_stop_rot_deg and translation
  /// error < early_stop_trans_m against the ground truth.
  bool early_stop = false;
  /// Sets the model outlier ratio to the injected fraction r / (1 + r).
  bool outlier_ratio_from_truth = false;
  double early_stop_rot_deg = 8.0;
  double early_stop_trans_m = 0.01;
};

inline constexpr const char* kSweepCsvHeader = "run_id,outlier_ratio,noise_std,error_m,rot_err_deg,trans_err_m,iters,wall_s";

/// Appends floor(ratio * N) Gaussian outliers (centroid mean, per-axis std
/// times outlier_scale) after perturbing every original point with noise.
/// Channels other than positions are dropped.
PointCloud corrupt(const PointCloud& cloud, const CorruptionSpec& spec);

/// Mean distance between the images of the source under g and g_gt.
double error_metric(const PointCloud& source, const RigidTransform& g, const RigidTransform& g_gt);

/// Angle of the relative rotation R_gt^T R, in degrees.
double rotation_error(const RigidTransform& g, const RigidTransform& g_gt);
double translation_error(const RigidTransform& g, const RigidTransform& g_gt);

/// A ground-truth pose drawn per the perturbation spec.
RigidTransform sample_perturbation(const PerturbationSpec& spec, std::uint64_t seed);

/// Deterministic per-row seed derived from the master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// For each spec and repeat: corrupt both clouds, move the source by the
/// inverse of a sampled ground truth, register, and record the metrics.
/// Rows are appended to `csv_path` (if given) as they complete.
std::vector<MetricRow> run_sweep(const PointCloud& source, const PointCloud& target,
                                 const std::vector<CorruptionSpec>& specs, const SweepOptions& options,
                                 const ModelConfig& model_cfg, const EmConfig& em_cfg,
                                 const std::optional<std::filesystem::path>& csv_path = std::nullopt);

std::string format_metric_row(const MetricRow& row);

}  // namespace lsgcpd
