#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace lsgcpd {

/// Ordered point set with optional per-point channels.
///
/// Positions are stored column-wise (3 x N). Optional channels, when present,
/// always have one entry per point. Instances are immutable; the `with_*`
/// helpers return modified copies.
class PointCloud {
 public:
  static constexpr double kNormalTolerance = 1e-9;
  static constexpr double kMaxVariation = 1.0 / 3.0;

  PointCloud() = default;
  explicit PointCloud(Eigen::Matrix3Xd points,
                      std::optional<Eigen::Matrix3Xd> normals = std::nullopt,
                      std::optional<Eigen::VectorXd> variations = std::nullopt,
                      std::optional<Eigen::VectorXd> confidences = std::nullopt);

  Eigen::Index size() const { return points_.cols(); }
  bool empty() const { return points_.cols() == 0; }

  const Eigen::Matrix3Xd& points() const { return points_; }
  Eigen::Vector3d point(Eigen::Index i) const { return points_.col(i); }

  bool has_normals() const { return normals_.has_value(); }
  bool has_variations() const { return variations_.has_value(); }
  bool has_confidences() const { return confidences_.has_value(); }

  // Throw std::logic_error when the channel is absent.
  const Eigen::Matrix3Xd& normals() const;
  const Eigen::VectorXd& variations() const;
  const Eigen::VectorXd& confidences() const;

  PointCloud with_normals(Eigen::Matrix3Xd normals) const;
  PointCloud with_surface(Eigen::Matrix3Xd normals, Eigen::VectorXd variations) const;
  PointCloud with_confidences(Eigen::VectorXd confidences) const;
  PointCloud without_normals() const;

  /// Keeps the points whose index appears in `ids` (in the given order), with all channels.
  PointCloud subset(const std::vector<Eigen::Index>& ids) const;

 private:
  Eigen::Matrix3Xd points_;
  std::optional<Eigen::Matrix3Xd> normals_;
  std::optional<Eigen::VectorXd> variations_;
  std::optional<Eigen::VectorXd> confidences_;
};

enum class CloudFormat { PlyAscii, XyzText };

/// Picks a format from the file extension (".ply" or ".xyz"/".txt"); throws DataError otherwise.
CloudFormat format_from_extension(const std::filesystem::path& path);

/// Reads a cloud. Normals present in the file are renormalized; a zero-length
/// normal or any malformed line raises DataError naming the line number.
PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format);
PointCloud load_cloud(const std::filesystem::path& path);

/// Writes positions (and normals, if present) with round-trip precision. PLY
/// also carries optional "variation" and "confidence" vertex properties.
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);

/// One output point per occupied voxel, at the centroid of its members.
/// The grid is anchored at the bounding-box minimum unless `origin` is given.
/// Output is ordered by voxel index (x, then y, then z).
PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size,
                            std::optional<Eigen::Vector3d> origin = std::nullopt);

/// Axis-aligned bounding-box diagonal length.
double cloud_diameter(const PointCloud& cloud);

}  // namespace lsgcpd
