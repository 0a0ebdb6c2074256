#include "lsgcpd/cloud.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "lsgcpd/error.hpp"

namespace lsgcpd {

namespace {

void check_channel_length(Eigen::Index expected, Eigen::Index actual, const char* name) {
  if (expected != actual) {
    throw std::invalid_argument(std::string("PointCloud: channel '") + name + "' has " +
                                std::to_string(actual) + " entries, expected " +
                                std::to_string(expected));
  }
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

double parse_number(std::string_view token, std::size_t line_no, const std::filesystem::path& path) {
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-numeric token '" +
                    std::string(token) + "'");
  }
  return value;
}

Eigen::Vector3d unit_normal(const Eigen::Vector3d& n, std::size_t line_no,
                            const std::filesystem::path& path) {
  double norm = n.norm();
  if (!(norm > 0.0)) {
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": zero-length normal");
  }
  return n / norm;
}

struct Columns {
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector3d> normals;
  std::vector<double> variations;
  std::vector<double> confidences;
};

std::optional<Eigen::VectorXd> to_vector(const std::vector<double>& v, bool present) {
  if (!present) return std::nullopt;
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

PointCloud assemble(const Columns& cols, bool with_normals, bool with_variations = false,
                    bool with_confidences = false) {
  Eigen::Matrix3Xd points(3, static_cast<Eigen::Index>(cols.points.size()));
  for (std::size_t i = 0; i < cols.points.size(); ++i) points.col(static_cast<Eigen::Index>(i)) = cols.points[i];
  std::optional<Eigen::Matrix3Xd> normals;
  if (with_normals) {
    normals.emplace(3, static_cast<Eigen::Index>(cols.normals.size()));
    for (std::size_t i = 0; i < cols.normals.size(); ++i) normals->col(static_cast<Eigen::Index>(i)) = cols.normals[i];
  }
  return PointCloud(std::move(points), std::move(normals), to_vector(cols.variations, with_variations),
                    to_vector(cols.confidences, with_confidences));
}

PointCloud load_xyz(std::istream& in, const std::filesystem::path& path) {
  Columns cols;
  std::optional<bool> with_normals;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = split_ws(line);
    if (tokens.empty() || tokens.front().front() == '#') continue;
    if (tokens.size() != 3 && tokens.size() != 6) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 or 6 values, got " +
                      std::to_string(tokens.size()));
    }
    bool has_n = tokens.size() == 6;
    if (with_normals && *with_normals != has_n) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": inconsistent column count");
    }
    with_normals = has_n;
    double v[6];
    for (std::size_t k = 0; k < tokens.size(); ++k) v[k] = parse_number(tokens[k], line_no, path);
    cols.points.emplace_back(v[0], v[1], v[2]);
    if (has_n) cols.normals.push_back(unit_normal(Eigen::Vector3d(v[3], v[4], v[5]), line_no, path));
  }
  return assemble(cols, with_normals.value_or(false));
}

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<std::string> properties;
  bool has_list = false;
};

PointCloud load_ply(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  std::size_t line_no = 0;
  auto header_error = [&](const std::string& what) {
    return DataError(path.string() + ":" + std::to_string(line_no) + ": malformed PLY header: " + what);
  };

  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  ++line_no;
  if (split_ws(line) != std::vector<std::string_view>{"ply"}) throw header_error("missing 'ply' magic");

  std::vector<PlyElement> elements;
  bool format_seen = false;
  bool end_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens[0] == "comment" || tokens[0] == "obj_info") continue;
    if (tokens[0] == "format") {
      if (tokens.size() != 3 || tokens[1] != "ascii") throw header_error("only 'format ascii 1.0' is supported");
      format_seen = true;
    } else if (tokens[0] == "element") {
      if (tokens.size() != 3) throw header_error("bad element line");
      PlyElement e;
      e.name = std::string(tokens[1]);
      double count = parse_number(tokens[2], line_no, path);
      if (count < 0 || count != std::floor(count)) throw header_error("bad element count");
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (tokens[0] == "property") {
      if (elements.empty()) throw header_error("property before element");
      if (tokens.size() >= 2 && tokens[1] == "list") {
        if (tokens.size() != 5) throw header_error("bad list property");
        elements.back().has_list = true;
        elements.back().properties.emplace_back(tokens[4]);
      } else {
        if (tokens.size() != 3) throw header_error("bad property line");
        elements.back().properties.emplace_back(tokens[2]);
      }
    } else if (tokens[0] == "end_header") {
      end_seen = true;
      break;
    } else {
      throw header_error("unknown keyword '" + std::string(tokens[0]) + "'");
    }
  }
  if (!format_seen) throw header_error("missing format line");
  if (!end_seen) throw header_error("missing end_header");

  auto vertex = std::find_if(elements.begin(), elements.end(), [](const PlyElement& e) { return e.name == "vertex"; });
  if (vertex == elements.end()) throw header_error("no vertex element");
  if (vertex->has_list) throw header_error("list property on vertex element");

  auto index_of = [&](const char* name) -> std::ptrdiff_t {
    auto it = std::find(vertex->properties.begin(), vertex->properties.end(), name);
    return it == vertex->properties.end() ? -1 : it - vertex->properties.begin();
  };
  const std::ptrdiff_t ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  const std::ptrdiff_t inx = index_of("nx"), iny = index_of("ny"), inz = index_of("nz");
  if (ix < 0 || iy < 0 || iz < 0) throw header_error("vertex element lacks x/y/z");
  const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;
  const std::ptrdiff_t ivar = index_of("variation"), iconf = index_of("confidence");

  Columns cols;
  cols.points.reserve(vertex->count);
  for (const auto& element : elements) {
    for (std::size_t row = 0; row < element.count; ++row) {
      if (!std::getline(in, line)) {
        throw DataError(path.string() + ":" + std::to_string(line_no + 1) + ": unexpected end of file in element '" +
                        element.name + "'");
      }
      ++line_no;
      if (&element != &*vertex) continue;
      auto tokens = split_ws(line);
      if (tokens.size() != element.properties.size()) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(element.properties.size()) + " values, got " + std::to_string(tokens.size()));
      }
      std::vector<double> v(tokens.size());
      for (std::size_t k = 0; k < tokens.size(); ++k) v[k] = parse_number(tokens[k], line_no, path);
      cols.points.emplace_back(v[ix], v[iy], v[iz]);
      if (with_normals) cols.normals.push_back(unit_normal(Eigen::Vector3d(v[inx], v[iny], v[inz]), line_no, path));
      if (ivar >= 0) cols.variations.push_back(v[ivar]);
      if (iconf >= 0) cols.confidences.push_back(v[iconf]);
    }
    if (&element == &*vertex) break;
  }
  try {
    return assemble(cols, with_normals, ivar >= 0, iconf >= 0);
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

}  // namespace

PointCloud::PointCloud(Eigen::Matrix3Xd points, std::optional<Eigen::Matrix3Xd> normals,
                       std::optional<Eigen::VectorXd> variations, std::optional<Eigen::VectorXd> confidences)
    : points_(std::move(points)),
      normals_(std::move(normals)),
      variations_(std::move(variations)),
      confidences_(std::move(confidences)) {
  const Eigen::Index n = points_.cols();
  if (!points_.allFinite()) throw std::invalid_argument("PointCloud: non-finite position");
  if (normals_) {
    check_channel_length(n, normals_->cols(), "normals");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(normals_->col(i).norm() - 1.0) > kNormalTolerance) {
        throw std::invalid_argument("PointCloud: normal " + std::to_string(i) + " is not unit length");
      }
    }
  }
  if (variations_) {
    check_channel_length(n, variations_->size(), "variations");
    for (Eigen::Index i = 0; i < n; ++i) {
      double v = (*variations_)(i);
      if (!(v >= 0.0 && v <= kMaxVariation)) {
        throw std::invalid_argument("PointCloud: variation " + std::to_string(i) + " outside [0, 1/3]");
      }
    }
  }
  if (confidences_) {
    check_channel_length(n, confidences_->size(), "confidences");
    for (Eigen::Index i = 0; i < n; ++i) {
      double c = (*confidences_)(i);
      if (!(c > 0.0 && c <= 1.0)) {
        throw std::invalid_argument("PointCloud: confidence " + std::to_string(i) + " outside (0, 1]");
      }
    }
  }
}

const Eigen::Matrix3Xd& PointCloud::normals() const {
  if (!normals_) throw std::logic_error("PointCloud has no normals");
  return *normals_;
}

const Eigen::VectorXd& PointCloud::variations() const {
  if (!variations_) throw std::logic_error("PointCloud has no variations");
  return *variations_;
}

const Eigen::VectorXd& PointCloud::confidences() const {
  if (!confidences_) throw std::logic_error("PointCloud has no confidences");
  return *confidences_;
}

PointCloud PointCloud::with_normals(Eigen::Matrix3Xd normals) const {
  return PointCloud(points_, std::move(normals), variations_, confidences_);
}

PointCloud PointCloud::with_surface(Eigen::Matrix3Xd normals, Eigen::VectorXd variations) const {
  return PointCloud(points_, std::move(normals), std::move(variations), confidences_);
}

PointCloud PointCloud::with_confidences(Eigen::VectorXd confidences) const {
  return PointCloud(points_, normals_, variations_, std::move(confidences));
}

PointCloud PointCloud::without_normals() const { return PointCloud(points_, std::nullopt, std::nullopt, confidences_); }

PointCloud PointCloud::subset(const std::vector<Eigen::Index>& ids) const {
  const auto k = static_cast<Eigen::Index>(ids.size());
  Eigen::Matrix3Xd p(3, k);
  std::optional<Eigen::Matrix3Xd> n;
  std::optional<Eigen::VectorXd> v, c;
  if (normals_) n.emplace(3, k);
  if (variations_) v.emplace(k);
  if (confidences_) c.emplace(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index i = ids[static_cast<std::size_t>(j)];
    if (i < 0 || i >= size()) throw std::out_of_range("PointCloud::subset: index out of range");
    p.col(j) = points_.col(i);
    if (n) n->col(j) = normals_->col(i);
    if (v) (*v)(j) = (*variations_)(i);
    if (c) (*c)(j) = (*confidences_)(i);
  }
  return PointCloud(std::move(p), std::move(n), std::move(v), std::move(c));
}

CloudFormat format_from_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (ext == ".ply") return CloudFormat::PlyAscii;
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::XyzText;
  throw DataError(path.string() + ": cannot infer cloud format from extension '" + ext + "'");
}

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open for reading");
  return format == CloudFormat::PlyAscii ? load_ply(in, path) : load_xyz(in, path);
}

PointCloud load_cloud(const std::filesystem::path& path) { return load_cloud(path, format_from_extension(path)); }

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  const bool with_normals = cloud.has_normals();
  const bool ply_extras = format == CloudFormat::PlyAscii;
  if (format == CloudFormat::PlyAscii) {
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n"
        << "property double x\nproperty double y\nproperty double z\n";
    if (with_normals) out << "property double nx\nproperty double ny\nproperty double nz\n";
    if (ply_extras && cloud.has_variations()) out << "property double variation\n";
    if (ply_extras && cloud.has_confidences()) out << "property double confidence\n";
    out << "end_header\n";
  }
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.points().col(i);
    out << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z());
    if (with_normals) {
      const auto n = cloud.normals().col(i);
      out << ' ' << format_double(n.x()) << ' ' << format_double(n.y()) << ' ' << format_double(n.z());
    }
    if (ply_extras && cloud.has_variations()) out << ' ' << format_double(cloud.variations()(i));
    if (ply_extras && cloud.has_confidences()) out << ' ' << format_double(cloud.confidences()(i));
    out << '\n';
  }
  out.flush();
  if (!out) throw DataError(path.string() + ": write failed");
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  save_cloud(cloud, path, format_from_extension(path));
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size, std::optional<Eigen::Vector3d> origin) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw std::invalid_argument("voxel_downsample: voxel size must be positive");
  }
  const Eigen::Index n = cloud.size();
  if (n == 0) return cloud;
  const Eigen::Vector3d anchor = origin ? *origin : Eigen::Vector3d(cloud.points().rowwise().minCoeff());

  using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
  std::vector<std::pair<Key, Eigen::Index>> keyed(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d rel = (cloud.points().col(i) - anchor) / voxel_size;
    keyed[static_cast<std::size_t>(i)] = {Key{static_cast<std::int64_t>(std::floor(rel.x())),
                                              static_cast<std::int64_t>(std::floor(rel.y())),
                                              static_cast<std::int64_t>(std::floor(rel.z()))},
                                          i};
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < keyed.size();) {
    std::size_t j = i + 1;
    while (j < keyed.size() && keyed[j].first == keyed[i].first) ++j;
    runs.emplace_back(i, j);
    i = j;
  }

  const auto k = static_cast<Eigen::Index>(runs.size());
  Eigen::Matrix3Xd points(3, k);
  std::optional<Eigen::Matrix3Xd> normals;
  std::optional<Eigen::VectorXd> variations, confidences;
  if (cloud.has_normals()) normals.emplace(3, k);
  if (cloud.has_variations()) variations.emplace(k);
  if (cloud.has_confidences()) confidences.emplace(k);

  for (Eigen::Index r = 0; r < k; ++r) {
    const auto [begin, end] = runs[static_cast<std::size_t>(r)];
    const double count = static_cast<double>(end - begin);
    Eigen::Vector3d p = Eigen::Vector3d::Zero(), nsum = Eigen::Vector3d::Zero();
    double vsum = 0.0, csum = 0.0;
    for (std::size_t m = begin; m < end; ++m) {
      const Eigen::Index i = keyed[m].second;
      p += cloud.points().col(i);
      if (normals) nsum += cloud.normals().col(i);
      if (variations) vsum += cloud.variations()(i);
      if (confidences) csum += cloud.confidences()(i);
    }
    points.col(r) = p / count;
    if (normals) {
      // Opposing normals can cancel; fall back to the first member's normal.
      const double len = nsum.norm();
      normals->col(r) = len > 1e-12 ? Eigen::Vector3d(nsum / len)
                                    : Eigen::Vector3d(cloud.normals().col(keyed[begin].second));
    }
    if (variations) (*variations)(r) = std::clamp(vsum / count, 0.0, PointCloud::kMaxVariation);
    if (confidences) (*confidences)(r) = std::clamp(csum / count, std::numeric_limits<double>::min(), 1.0);
  }
  return PointCloud(std::move(points), std::move(normals), std::move(variations), std::move(confidences));
}

double cloud_diameter(const PointCloud& cloud) {
  if (cloud.empty()) return 0.0;
  return (cloud.points().rowwise().maxCoeff() - cloud.points().rowwise().minCoeff()).norm();
}

}  // namespace lsgcpd
