#include "lsgcpd/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "lsgcpd/error.hpp"

namespace lsgcpd {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void validate(const CorruptionSpec& spec) {
  if (!(spec.outlier_ratio >= 0.0) || !(spec.noise_std >= 0.0) || !(spec.outlier_scale >= 0.0)) {
    throw std::invalid_argument("CorruptionSpec: fields must be non-negative");
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 finalizer over a stream-offset state
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

PointCloud corrupt(const PointCloud& cloud, const CorruptionSpec& spec) {
  validate(spec);
  const Eigen::Index n = cloud.size();
  const auto n_out = static_cast<Eigen::Index>(std::floor(spec.outlier_ratio * static_cast<double>(n)));
  if (n_out == 0 && spec.noise_std == 0.0) return cloud;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Eigen::Matrix3Xd pts(3, n + n_out);
  // Noise first, then outliers, so the original points do not depend on the ratio.
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) pts(a, i) = cloud.points()(a, i) + spec.noise_std * unit(rng);
  }
  if (n_out > 0) {
    if (n == 0) throw std::invalid_argument("corrupt: cannot fit outliers to an empty cloud");
    const Eigen::Vector3d mean = cloud.points().rowwise().mean();
    const Eigen::Vector3d std_dev =
        ((cloud.points().colwise() - mean).array().square().rowwise().sum() / static_cast<double>(n)).sqrt();
    for (Eigen::Index i = n; i < n + n_out; ++i) {
      for (int a = 0; a < 3; ++a) pts(a, i) = mean(a) + spec.outlier_scale * std_dev(a) * unit(rng);
    }
  }
  return PointCloud(std::move(pts));
}

double error_metric(const PointCloud& source, const RigidTransform& g, const RigidTransform& g_gt) {
  if (source.empty()) return 0.0;
  const Eigen::Matrix3Xd a = g.apply(source.points());
  const Eigen::Matrix3Xd b = g_gt.apply(source.points());
  return (a - b).colwise().norm().mean();
}

double rotation_error(const RigidTransform& g, const RigidTransform& g_gt) {
  const Eigen::Matrix3d rel = g_gt.rotation().transpose() * g.rotation();
  // Same angle as arccos((tr - 1) / 2), but well conditioned near 0 and 180 degrees.
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double s = 0.5 * Eigen::Vector3d(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1)).norm();
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

double translation_error(const RigidTransform& g, const RigidTransform& g_gt) {
  return (g.translation() - g_gt.translation()).norm();
}

RigidTransform sample_perturbation(const PerturbationSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  if (spec.mode == PerturbationSpec::Mode::RandomAxis) {
    std::normal_distribution<double> unit(0.0, 1.0);
    Eigen::Vector3d axis;
    do {
      axis = Eigen::Vector3d(unit(rng), unit(rng), unit(rng));
    } while (axis.norm() < 1e-12);
    return RigidTransform::from_axis_angle(axis.normalized(), spec.angle_deg * std::numbers::pi / 180.0);
  }
  std::uniform_real_distribution<double> rot(-spec.max_rotation, spec.max_rotation);
  std::uniform_real_distribution<double> trans(-spec.max_translation, spec.max_translation);
  Twist xi;
  for (int i = 0; i < 3; ++i) xi(i) = rot(rng);
  for (int i = 3; i < 6; ++i) xi(i) = trans(rng);
  return exp_twist(xi);
}

std::string format_metric_row(const MetricRow& row) {
  std::string s = std::to_string(row.run_id);
  for (double v : {row.spec.outlier_ratio, row.spec.noise_std, row.error_m, row.rot_err_deg, row.trans_err_m}) {
    s += ',' + shortest(v);
  }
  s += ',' + std::to_string(row.iterations);
  s += ',' + shortest(row.wall_s);
  return s;
}

std::vector<MetricRow> run_sweep(const PointCloud& source, const PointCloud& target,
                                 const std::vector<CorruptionSpec>& specs, const SweepOptions& options,
                                 const ModelConfig& model_cfg, const EmConfig& em_cfg,
                                 const std::optional<std::filesystem::path>& csv_path) {
  if (options.repeats < 1) throw std::invalid_argument("run_sweep: repeats must be >= 1");
  for (const auto& spec : specs) validate(spec);

  std::ofstream csv;
  if (csv_path) {
    csv.open(*csv_path);
    if (!csv) throw DataError(csv_path->string() + ": cannot open for writing");
    csv << kSweepCsvHeader << '\n' << std::flush;
  }

  // Ground-truth rotations pivot about the target centroid.
  const Eigen::Vector3d pivot = target.points().rowwise().mean();
  const RigidTransform to_pivot = RigidTransform::from_translation(pivot);
  const RigidTransform from_pivot = RigidTransform::from_translation(-pivot);

  std::vector<MetricRow> rows;
  int run_id = 0;
  for (const auto& base : specs) {
    for (int rep = 0; rep < options.repeats; ++rep, ++run_id) {
      const auto id = static_cast<std::uint64_t>(run_id);
      const std::uint64_t row_seed = derive_seed(options.seed, id);

      CorruptionSpec src_spec = base;
      src_spec.seed = derive_seed(row_seed, 0);
      CorruptionSpec tgt_spec = base;
      tgt_spec.seed = derive_seed(row_seed, 1);
      const RigidTransform g_gt =
          compose(compose(to_pivot, sample_perturbation(options.perturbation, derive_seed(row_seed, 2))), from_pivot);

      // The source is moved by g_gt^-1, so g_gt registers it back onto the target.
      const RigidTransform g_inv = g_gt.inverse();
      const PointCloud clean_moved(g_inv.apply(source.points()));
      const PointCloud noisy_source = corrupt(source, src_spec);
      const PointCloud moved(g_inv.apply(noisy_source.points()));
      const PointCloud noisy_target = corrupt(target, tgt_spec);

      ModelConfig cfg = model_cfg;
      if (options.outlier_ratio_from_truth) cfg.outlier_ratio = base.outlier_ratio / (1.0 + base.outlier_ratio);

      RegisterOptions ropts;
      if (options.early_stop) {
        ropts.on_iteration = [&](int, const RigidTransform& g) {
          return rotation_error(g, g_gt) < options.early_stop_rot_deg &&
                 translation_error(g, g_gt) < options.early_stop_trans_m;
        };
      }
      const RegistrationReport report = register_clouds(moved, noisy_target, cfg, em_cfg, ropts);

      MetricRow row;
      row.run_id = run_id;
      row.spec = src_spec;
      row.error_m = error_metric(clean_moved, report.transform, g_gt);
      row.rot_err_deg = rotation_error(report.transform, g_gt);
      row.trans_err_m = translation_error(report.transform, g_gt);
      row.iterations = report.iterations;
      row.wall_s = report.wall_time;
      row.converged = report.converged || report.stopped_early;
      if (csv_path) {
        csv << format_metric_row(row) << '\n' << std::flush;
        if (!csv) throw DataError(csv_path->string() + ": write failed");
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace lsgcpd
