#pragma once

#include <Eigen/Core>

#include "lsgcpd/cloud.hpp"
#include "lsgcpd/spatial_index.hpp"

namespace lsgcpd {

/// Floor applied to the surface variation so that 1/kappa stays finite.
inline constexpr double kVariationFloor = 1e-12;
inline constexpr Eigen::Index kDefaultNeighbors = 20;

struct LocalSurface {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  /// lambda_min / trace of the neighborhood scatter, clamped to [kVariationFloor, 1/3].
  double variation = PointCloud::kMaxVariation;
  Eigen::Index neighborhood_size = 0;
  /// All neighbors coincide; normal is (0,0,1) and variation is 1/3.
  bool degenerate = false;
};

/// PCA of the k nearest neighbors of `point_id` (the point itself included).
/// The returned normal has no sign convention; callers orient it.
LocalSurface estimate_local_surface(const Eigen::Matrix3Xd& points, const KdIndex& index, Eigen::Index point_id,
                                    Eigen::Index k);

/// Normals and variations for every point.
///
/// Normals are oriented to agree with file-provided normals when the cloud has
/// them, otherwise toward the origin. With `trust_normals`, existing normals
/// are kept as-is and only variations are computed. k is capped at the cloud size.
PointCloud annotate_cloud(const PointCloud& cloud, Eigen::Index k = kDefaultNeighbors, bool trust_normals = false);

}  // namespace lsgcpd
