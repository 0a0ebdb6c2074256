#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <Eigen/Core>

namespace lsgcpd {

/// Twist coordinates in the se(3) basis E1..E6.
///
/// Convention: entries 0..2 are the rotational part omega (generators about
/// x, y, z), entries 3..5 the translational part v (unit translations along
/// x, y, z). hat(xi) = [[omega]_x, v; 0, 0].
using Twist = Eigen::Matrix<double, 6, 1>;

/// Element of SE(3): x -> R x + t.
class RigidTransform {
 public:
  static constexpr double kOrthonormalTolerance = 1e-9;
  static constexpr int kReorthonormalizeAfter = 100;

  RigidTransform() = default;
  /// Throws std::invalid_argument if R is not a rotation within kOrthonormalTolerance.
  RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static RigidTransform identity() { return {}; }
  /// Accepts a homogeneous matrix whose bottom row is (0, 0, 0, 1).
  static RigidTransform from_matrix(const Eigen::Matrix4d& m);
  static RigidTransform from_translation(const Eigen::Vector3d& t);
  static RigidTransform from_axis_angle(const Eigen::Vector3d& axis, double angle,
                                        const Eigen::Vector3d& translation = Eigen::Vector3d::Zero());

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix4d matrix() const;

  RigidTransform inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }
  Eigen::Matrix3Xd apply(const Eigen::Matrix3Xd& points) const;

  /// Number of compositions since the rotation was last re-orthonormalized.
  int chain_length() const { return chain_; }

  friend RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

 private:
  Eigen::Matrix3d rotation_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
  int chain_ = 0;
};

/// Group product a * b (apply b first).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
inline Eigen::Vector3d apply(const RigidTransform& g, const Eigen::Vector3d& p) { return g.apply(p); }

/// Basis generator E_i for i in 1..6; throws std::out_of_range otherwise.
Eigen::Matrix4d basis(int i);

Eigen::Matrix3d skew(const Eigen::Vector3d& w);
Eigen::Matrix4d hat(const Twist& xi);

/// Closed-form exponential (Rodrigues rotation plus the left Jacobian for the
/// translation). Below kSmallAngle a Taylor expansion is used.
RigidTransform exp_twist(const Twist& xi);
inline constexpr double kSmallAngle = 1e-8;

namespace detail {
struct ExpCoefficients {
  double a, b, c;
};
ExpCoefficients exp_coefficients_taylor(double theta);
ExpCoefficients exp_coefficients_closed(double theta);
RigidTransform exp_with(const Twist& xi, const ExpCoefficients& k);
}  // namespace detail

/// Rotation angle of R in radians, in [0, pi].
double rotation_angle(const Eigen::Matrix3d& rotation);

/// Nearest rotation in the Frobenius sense (SVD projection, det = +1).
Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& m);

// 4x4 row-major homogeneous matrix as 16 whitespace-separated numbers.
std::string format_transform(const RigidTransform& g);
RigidTransform parse_transform(const std::string& text);
void save_transform(const RigidTransform& g, const std::filesystem::path& path);
RigidTransform load_transform(const std::filesystem::path& path);

}  // namespace lsgcpd
