#include "lsgcpd/surface.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

namespace lsgcpd {

LocalSurface estimate_local_surface(const Eigen::Matrix3Xd& points, const KdIndex& index, Eigen::Index point_id,
                                    Eigen::Index k) {
  if (k < 3) throw std::invalid_argument("estimate_local_surface: k must be at least 3, got " + std::to_string(k));
  if (point_id < 0 || point_id >= points.cols()) throw std::out_of_range("estimate_local_surface: bad point id");

  const auto neighbors = index.knn(points.col(point_id), k);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& nb : neighbors) mean += index.points().col(nb.id);
  mean /= static_cast<double>(neighbors.size());

  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& nb : neighbors) {
    const Eigen::Vector3d d = index.points().col(nb.id) - mean;
    scatter.noalias() += d * d.transpose();
  }
  scatter /= static_cast<double>(neighbors.size());

  LocalSurface out;
  out.neighborhood_size = static_cast<Eigen::Index>(neighbors.size());
  const double trace = scatter.trace();
  if (!(trace > 0.0)) {
    out.degenerate = true;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  const Eigen::Vector3d lambda = eig.eigenvalues().cwiseMax(0.0);
  out.normal = eig.eigenvectors().col(0).normalized();
  out.variation = std::clamp(lambda(0) / lambda.sum(), kVariationFloor, PointCloud::kMaxVariation);
  return out;
}

PointCloud annotate_cloud(const PointCloud& cloud, Eigen::Index k, bool trust_normals) {
  if (cloud.empty()) throw std::invalid_argument("annotate_cloud: empty cloud");
  const Eigen::Index n = cloud.size();
  const Eigen::Index kk = std::min(k, n);
  const KdIndex index(cloud.points());
  const bool keep_normals = trust_normals && cloud.has_normals();

  Eigen::Matrix3Xd normals(3, n);
  Eigen::VectorXd variations(n);
  std::string failure;

#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    try {
      const LocalSurface s = estimate_local_surface(cloud.points(), index, i, kk);
      Eigen::Vector3d nrm = s.normal;
      if (keep_normals) {
        nrm = cloud.normals().col(i);
      } else if (cloud.has_normals()) {
        if (nrm.dot(cloud.normals().col(i)) < 0.0) nrm = -nrm;
      } else if (nrm.dot(-cloud.points().col(i)) < 0.0) {
        nrm = -nrm;
      }
      normals.col(i) = nrm;
      variations(i) = s.variation;
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (!failure.empty()) throw std::invalid_argument(failure);
  return cloud.with_surface(std::move(normals), std::move(variations));
}

}  // namespace lsgcpd
