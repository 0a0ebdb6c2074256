#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Core>

#include "lsgcpd/cloud.hpp"
#include "lsgcpd/model.hpp"
#include "lsgcpd/se3.hpp"

namespace lsgcpd::testing {

/// 1.2 x 0.3 strip (z = 0) with a radius 0.12 hemisphere bump near one end;
/// no rotational symmetry. `count` points sampled uniformly by area, centered
/// at the origin.
PointCloud plane_hemisphere(Eigen::Index count, std::uint64_t seed);

/// Noisy square plane patch of side `extent` with iid z-noise.
PointCloud noisy_plane(Eigen::Index count, double extent, double noise_std, std::uint64_t seed);

/// Uniform random rotation and translation in [-t_max, t_max]^3.
RigidTransform random_transform(std::mt19937_64& rng, double t_max = 0.5);

/// Annotated random target plus a random source near it.
struct RandomInstance {
  PointCloud source;
  PointCloud target;
  GmmModel model;
  RigidTransform g;
};

/// Random normals, variations in (0, 1/3], random sigma2 and w0; both clouds
/// inside the unit cube. `spread` scales the source offset from the target.
RandomInstance random_instance(std::mt19937_64& rng, Eigen::Index m, Eigen::Index n, bool consistent_normalizer,
                               double spread = 0.1);

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace lsgcpd::testing
