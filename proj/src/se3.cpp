#include "lsgcpd/se3.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "lsgcpd/error.hpp"

namespace lsgcpd {

namespace detail {

// R = I + a W + b W^2 and V = I + b W + c W^2.
ExpCoefficients exp_coefficients_taylor(double theta) {
  const double t2 = theta * theta;
  return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
}

ExpCoefficients exp_coefficients_closed(double theta) {
  const double t2 = theta * theta;
  const double s = std::sin(theta);
  const double half = std::sin(0.5 * theta);
  return {s / theta, 2.0 * half * half / t2, (theta - s) / (t2 * theta)};
}

RigidTransform exp_with(const Twist& xi, const ExpCoefficients& k) {
  const Eigen::Matrix3d w = skew(xi.head<3>());
  const Eigen::Matrix3d w2 = w * w;
  const Eigen::Matrix3d r = Eigen::Matrix3d::Identity() + k.a * w + k.b * w2;
  const Eigen::Matrix3d v = Eigen::Matrix3d::Identity() + k.b * w + k.c * w2;
  return RigidTransform(r, v * xi.tail<3>());
}

}  // namespace detail

RigidTransform::RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation_.allFinite() || !translation_.allFinite()) {
    throw std::invalid_argument("RigidTransform: non-finite entries");
  }
  const double err = (rotation_.transpose() * rotation_ - Eigen::Matrix3d::Identity()).norm();
  if (err > kOrthonormalTolerance || rotation_.determinant() <= 0.0) {
    throw std::invalid_argument("RigidTransform: rotation is not orthonormal with det +1");
  }
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
  if (m.row(3).head<3>().cwiseAbs().maxCoeff() > 1e-12 || std::abs(m(3, 3) - 1.0) > 1e-12) {
    throw std::invalid_argument("RigidTransform: bottom row must be (0, 0, 0, 1)");
  }
  return RigidTransform(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
}

RigidTransform RigidTransform::from_translation(const Eigen::Vector3d& t) {
  return RigidTransform(Eigen::Matrix3d::Identity(), t);
}

RigidTransform RigidTransform::from_axis_angle(const Eigen::Vector3d& axis, double angle,
                                               const Eigen::Vector3d& translation) {
  const Eigen::Matrix3d r = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  return RigidTransform(project_to_rotation(r), translation);
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(out.rotation_ * translation_);
  out.chain_ = chain_;
  return out;
}

Eigen::Matrix3Xd RigidTransform::apply(const Eigen::Matrix3Xd& points) const {
  return (rotation_ * points).colwise() + translation_;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation_ = a.rotation_ * b.rotation_;
  out.translation_ = a.rotation_ * b.translation_ + a.translation_;
  out.chain_ = std::max(a.chain_, b.chain_) + 1;
  if (out.chain_ > RigidTransform::kReorthonormalizeAfter) {
    out.rotation_ = project_to_rotation(out.rotation_);
    out.chain_ = 0;
  }
  return out;
}

Eigen::Matrix4d basis(int i) {
  if (i < 1 || i > 6) throw std::out_of_range("se(3) basis index must be in 1..6");
  Twist e = Twist::Zero();
  e(i - 1) = 1.0;
  return hat(e);
}

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d s;
  s << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
      -w.y(), w.x(), 0.0;
  return s;
}

Eigen::Matrix4d hat(const Twist& xi) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<3, 3>() = skew(xi.head<3>());
  m.topRightCorner<3, 1>() = xi.tail<3>();
  return m;
}

RigidTransform exp_twist(const Twist& xi) {
  if (!xi.allFinite()) throw std::invalid_argument("exp_twist: non-finite twist");
  const double theta = xi.head<3>().norm();
  return detail::exp_with(xi, theta < kSmallAngle ? detail::exp_coefficients_taylor(theta)
                                                  : detail::exp_coefficients_closed(theta));
}

double rotation_angle(const Eigen::Matrix3d& rotation) {
  const Eigen::Vector3d axis_sin(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
                                 rotation(1, 0) - rotation(0, 1));
  const double cos_part = 0.5 * (rotation.trace() - 1.0);
  return std::atan2(0.5 * axis_sin.norm(), cos_part);
}

Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

std::string format_transform(const RigidTransform& g) {
  const Eigen::Matrix4d m = g.matrix();
  std::ostringstream out;
  out << std::setprecision(17);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out << m(r, c) << (c == 3 ? '\n' : ' ');
  }
  return out.str();
}

RigidTransform parse_transform(const std::string& text) {
  std::istringstream in(text);
  Eigen::Matrix4d m;
  for (int k = 0; k < 16; ++k) {
    std::string token;
    if (!(in >> token)) throw DataError("transform: expected 16 numbers, got " + std::to_string(k));
    try {
      std::size_t used = 0;
      m(k / 4, k % 4) = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw DataError("transform: non-numeric token '" + token + "'");
    }
  }
  std::string extra;
  if (in >> extra) throw DataError("transform: trailing content after 16 numbers");
  Eigen::Matrix4d fixed = m;
  // Text fixtures are usually printed with limited precision; snap to SO(3).
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  if ((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() > 1e-4 || r.determinant() <= 0.0) {
    throw DataError("transform: upper-left block is not a rotation");
  }
  if ((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() > 1e-12) {
    fixed.topLeftCorner<3, 3>() = project_to_rotation(r);
  }
  try {
    return RigidTransform::from_matrix(fixed);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("transform: ") + e.what());
  }
}

void save_transform(const RigidTransform& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << format_transform(g);
  if (!out) throw DataError(path.string() + ": write failed");
}

RigidTransform load_transform(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open for reading");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_transform(buf.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace lsgcpd
