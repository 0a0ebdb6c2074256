#include "lsgcpd/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>

namespace lsgcpd {

namespace {

struct Candidate {
  double d2;
  Eigen::Index id;
};

// Max-heap on (d2, id): the top is the worst of the current k best.
struct WorseFirst {
  bool operator()(const Candidate& a, const Candidate& b) const {
    return a.d2 < b.d2 || (a.d2 == b.d2 && a.id < b.id);
  }
};

double box_distance2(const Eigen::Vector3d& q, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    double d = 0.0;
    if (q[a] < lo[a]) d = lo[a] - q[a];
    else if (q[a] > hi[a]) d = q[a] - hi[a];
    d2 += d * d;
  }
  return d2;
}

}  // namespace

KdIndex::KdIndex(Eigen::Matrix3Xd points) : points_(std::move(points)) {
  if (points_.cols() == 0) throw std::invalid_argument("KdIndex: empty point set");
  if (!points_.allFinite()) throw std::invalid_argument("KdIndex: non-finite point");
  order_.resize(static_cast<std::size_t>(points_.cols()));
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  nodes_.reserve(static_cast<std::size_t>(2 * points_.cols() / kLeafSize + 1));
  build(0, points_.cols());
}

std::int32_t KdIndex::build(Eigen::Index begin, Eigen::Index end) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  for (Eigen::Index i = begin; i < end; ++i) {
    const auto p = points_.col(order_[static_cast<std::size_t>(i)]);
    node.lo = node.lo.cwiseMin(p);
    node.hi = node.hi.cwiseMax(p);
  }
  const auto self = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(node);

  Eigen::Vector3d extent = node.hi - node.lo;
  Eigen::Index axis = 0;
  const double widest = extent.maxCoeff(&axis);
  if (end - begin <= kLeafSize || widest <= 0.0) return self;

  const Eigen::Index mid = begin + (end - begin) / 2;
  auto first = order_.begin() + begin;
  auto nth = order_.begin() + mid;
  auto last = order_.begin() + end;
  std::nth_element(first, nth, last, [&](Eigen::Index a, Eigen::Index b) {
    const double ca = points_(axis, a), cb = points_(axis, b);
    return ca < cb || (ca == cb && a < b);
  });

  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& n = nodes_[static_cast<std::size_t>(self)];
  n.left = left;
  n.right = right;
  n.axis = static_cast<std::int32_t>(axis);
  n.split = points_(axis, *nth);
  return self;
}

std::vector<Neighbor> KdIndex::knn(const Eigen::Vector3d& query, Eigen::Index k) const {
  if (k < 1 || k > size()) {
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " outside [1, " + std::to_string(size()) + "]");
  }
  std::priority_queue<Candidate, std::vector<Candidate>, WorseFirst> best;
  const WorseFirst worse;

  auto visit = [&](auto&& self, std::int32_t idx) -> void {
    const Node& node = nodes_[static_cast<std::size_t>(idx)];
    if (static_cast<Eigen::Index>(best.size()) == k && box_distance2(query, node.lo, node.hi) > best.top().d2) return;
    if (node.left < 0) {
      for (Eigen::Index i = node.begin; i < node.end; ++i) {
        const Eigen::Index id = order_[static_cast<std::size_t>(i)];
        const Candidate c{(points_.col(id) - query).squaredNorm(), id};
        if (static_cast<Eigen::Index>(best.size()) < k) {
          best.push(c);
        } else if (worse(c, best.top())) {
          best.pop();
          best.push(c);
        }
      }
      return;
    }
    const bool go_left = query[node.axis] <= node.split;
    self(self, go_left ? node.left : node.right);
    self(self, go_left ? node.right : node.left);
  };
  visit(visit, 0);

  std::vector<Neighbor> out(best.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = Neighbor{best.top().id, std::sqrt(best.top().d2)};
    best.pop();
  }
  return out;
}

KdIndex build_index(const Eigen::Matrix3Xd& points) { return KdIndex(points); }

}  // namespace lsgcpd
