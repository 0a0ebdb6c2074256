#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace lsgcpd {

struct Neighbor {
  Eigen::Index id;
  double distance;
};

/// Exact kd-tree over an immutable point set.
///
/// Nodes split at the median of the widest axis; leaves hold at most
/// `kLeafSize` points. Results are exact, and equal distances are ordered by
/// lower point id, so queries are deterministic.
class KdIndex {
 public:
  static constexpr Eigen::Index kLeafSize = 16;

  explicit KdIndex(Eigen::Matrix3Xd points);

  Eigen::Index size() const { return points_.cols(); }
  const Eigen::Matrix3Xd& points() const { return points_; }

  /// The k nearest points to `query`, sorted by (distance, id).
  /// Throws std::invalid_argument unless 1 <= k <= size().
  std::vector<Neighbor> knn(const Eigen::Vector3d& query, Eigen::Index k) const;

 private:
  struct Node {
    // Leaf when `left < 0`; then [begin, end) indexes `order_`.
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t axis = 0;
    double split = 0.0;
    Eigen::Index begin = 0;
    Eigen::Index end = 0;
    Eigen::Vector3d lo, hi;
  };

  std::int32_t build(Eigen::Index begin, Eigen::Index end);

  Eigen::Matrix3Xd points_;
  std::vector<Eigen::Index> order_;
  std::vector<Node> nodes_;
};

/// Builds an index; throws std::invalid_argument on an empty point set.
KdIndex build_index(const Eigen::Matrix3Xd& points);

}  // namespace lsgcpd
