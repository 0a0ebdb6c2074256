#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unistd.h>

#include <Eigen/Geometry>

namespace lsgcpd::testing {

PointCloud plane_hemisphere(Eigen::Index count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // A long strip with the dome near one end: yaw about the dome axis must be
  // pinned by the strip, which a wide plate does poorly under high alpha.
  const double half_x = 0.6, half_y = 0.15;
  const double radius = 0.12;
  const Eigen::Vector3d center(0.4, 0.0, 0.0);
  const double plane_area = 4.0 * half_x * half_y - std::numbers::pi * radius * radius;
  const double dome_area = 2.0 * std::numbers::pi * radius * radius;
  const double p_dome = dome_area / (plane_area + dome_area);

  Eigen::Matrix3Xd pts(3, count);
  for (Eigen::Index i = 0; i < count; ++i) {
    if (u(rng) < p_dome) {
      // Uniform on the upper hemisphere: z uniform in [0, r].
      const double z = radius * u(rng);
      const double phi = 2.0 * std::numbers::pi * u(rng);
      const double rho = std::sqrt(radius * radius - z * z);
      pts.col(i) = center + Eigen::Vector3d(rho * std::cos(phi), rho * std::sin(phi), z);
    } else {
      Eigen::Vector3d p;
      do {
        p = Eigen::Vector3d((2.0 * u(rng) - 1.0) * half_x, (2.0 * u(rng) - 1.0) * half_y, 0.0);
      } while ((p - center).head<2>().norm() < radius);
      pts.col(i) = p;
    }
  }
  pts.colwise() -= Eigen::Vector3d(pts.rowwise().mean());
  return PointCloud(std::move(pts));
}

PointCloud noisy_plane(Eigen::Index count, double extent, double noise_std, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5 * extent, 0.5 * extent);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Matrix3Xd pts(3, count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const double x = u(rng), y = u(rng);
    pts.col(i) = Eigen::Vector3d(x, y, noise_std * g(rng));
  }
  return PointCloud(std::move(pts));
}

RigidTransform random_transform(std::mt19937_64& rng, double t_max) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-t_max, t_max);
  const Eigen::Quaterniond q = Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized();
  return RigidTransform(q.toRotationMatrix(), Eigen::Vector3d(u(rng), u(rng), u(rng)));
}

RandomInstance random_instance(std::mt19937_64& rng, Eigen::Index m, Eigen::Index n, bool consistent_normalizer,
                               double spread) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Matrix3Xd y(3, m), normals(3, m);
  Eigen::VectorXd kappa(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    y.col(i) = Eigen::Vector3d(u(rng), u(rng), u(rng));
    normals.col(i) = Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized();
    kappa(i) = 1e-3 + (1.0 / 3.0 - 1e-3) * u(rng);
  }
  Eigen::Matrix3Xd x(3, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index k = static_cast<Eigen::Index>(u(rng) * static_cast<double>(m)) % m;
    x.col(j) = y.col(k) + spread * Eigen::Vector3d(g(rng), g(rng), g(rng));
  }
  RandomInstance inst{PointCloud(std::move(x)), PointCloud(std::move(y), std::move(normals), std::move(kappa)), {},
                      {}};
  ModelConfig cfg;
  cfg.consistent_normalizer = consistent_normalizer;
  cfg.outlier_ratio = 0.05 + 0.4 * u(rng);
  inst.model = build_model(inst.target, inst.source, cfg);
  inst.model = inst.model.with_sigma2(std::pow(10.0, -3.0 + 2.0 * u(rng)));
  inst.model = inst.model.with_inlier_weight(estimate_inlier_weight(inst.model, cfg.outlier_ratio));
  // Non-uniform priors exercise the pi(m) factor.
  Eigen::VectorXd priors(m);
  for (Eigen::Index i = 0; i < m; ++i) priors(i) = 0.2 + u(rng);
  inst.model.priors = priors / priors.sum();
  // Small motions keep most mass away from the outlier component.
  const Eigen::Vector3d axis = Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized();
  inst.g = RigidTransform::from_axis_angle(axis, 0.2 * u(rng),
                                           0.05 * Eigen::Vector3d(g(rng), g(rng), g(rng)));
  return inst;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("lsgcpd_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace lsgcpd::testing
