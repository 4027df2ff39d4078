#include "dmcf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace dmcf {

NeighborList::NeighborList(double radius, std::vector<std::size_t> offsets,
                           std::vector<std::uint32_t> indices)
    : radius_(radius), offsets_(std::move(offsets)), indices_(std::move(indices)) {
  if (offsets_.empty() || offsets_.back() != indices_.size())
    throw InputError("neighbor list offsets do not match its indices");
}

namespace {

using CellKey = std::array<std::int64_t, 3>;

CellKey cell_of(std::span<const double> p, double cell, std::span<const double> origin) {
  CellKey key{0, 0, 0};
  for (std::size_t a = 0; a < p.size(); ++a) {
    const double o = origin.empty() ? 0.0 : origin[a];
    key[a] = static_cast<std::int64_t>(std::floor((p[a] - o) / cell));
  }
  return key;
}

void check_points(const Matrix& points) {
  if (points.rows() > 0 && (points.cols() < 1 || points.cols() > 3))
    throw InputError("point sets must have dimension 1, 2 or 3");
  if (!points.all_finite()) throw InputError("point coordinates must be finite");
}

}  // namespace

NeighborList fixed_radius_neighbors(const Matrix& data, const Matrix& query,
                                    double radius) {
  if (!(radius > 0.0)) throw InputError("search radius must be positive");
  if (data.rows() > 0 && query.rows() > 0 && data.cols() != query.cols())
    throw InputError("data and query point sets differ in dimension");
  check_points(data);
  check_points(query);
  if (data.rows() > std::numeric_limits<std::uint32_t>::max())
    throw InputError("too many data points");

  const std::size_t dim = std::max(data.cols(), query.cols());
  const double r2 = radius * radius;

  // Data indices bucketed by cell; stable sort keeps indices ascending per cell.
  std::vector<CellKey> keys(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) keys[i] = cell_of(data.row(i), radius, {});
  std::vector<std::uint32_t> order(data.rows());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });
  std::vector<CellKey> sorted_keys(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) sorted_keys[i] = keys[order[i]];

  std::vector<std::size_t> offsets(query.rows() + 1, 0);
  std::vector<std::uint32_t> indices;
  std::vector<std::uint32_t> found;
  const int span = 1;
  const int stencil = dim == 1 ? 3 : dim == 2 ? 9 : 27;

  for (std::size_t q = 0; q < query.rows(); ++q) {
    found.clear();
    const auto qp = query.row(q);
    const CellKey base = cell_of(qp, radius, {});
    for (int s = 0; s < stencil; ++s) {
      CellKey key = base;
      int rem = s;
      for (std::size_t a = 0; a < dim; ++a) {
        key[a] += (rem % 3) - span;
        rem /= 3;
      }
      auto [lo, hi] = std::equal_range(sorted_keys.begin(), sorted_keys.end(), key);
      for (auto it = lo; it != hi; ++it) {
        const std::uint32_t k = order[static_cast<std::size_t>(it - sorted_keys.begin())];
        const auto dp = data.row(k);
        double d2 = 0.0;
        for (std::size_t a = 0; a < dim; ++a) {
          const double diff = dp[a] - qp[a];
          d2 += diff * diff;
        }
        if (d2 <= r2) found.push_back(k);
      }
    }
    std::sort(found.begin(), found.end());
    indices.insert(indices.end(), found.begin(), found.end());
    offsets[q + 1] = indices.size();
  }
  return NeighborList(radius, std::move(offsets), std::move(indices));
}

std::vector<std::vector<std::int64_t>> occupied_voxels(const Matrix& points,
                                                       double voxel_size,
                                                       std::span<const double> origin) {
  if (!(voxel_size > 0.0)) throw InputError("voxel size must be positive");
  check_points(points);
  if (!origin.empty() && origin.size() != points.cols())
    throw InputError("voxel origin dimension mismatch");
  std::vector<CellKey> keys(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i)
    keys[i] = cell_of(points.row(i), voxel_size, origin);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::vector<std::vector<std::int64_t>> cells;
  cells.reserve(keys.size());
  for (const auto& k : keys) cells.emplace_back(k.begin(), k.begin() + points.cols());
  return cells;
}

Matrix voxel_sample(const Matrix& points, double voxel_size, std::span<const double> origin) {
  const auto cells = occupied_voxels(points, voxel_size, origin);
  Matrix centers(cells.size(), points.cols());
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (std::size_t a = 0; a < points.cols(); ++a) {
      const double o = origin.empty() ? 0.0 : origin[a];
      centers(i, a) = o + (static_cast<double>(cells[i][a]) + 0.5) * voxel_size;
    }
  return centers;
}

std::vector<std::size_t> farthest_point_indices(const Matrix& points, std::size_t count,
                                                std::size_t start) {
  const std::size_t n = points.rows();
  if (count < 1 || count > n) throw InputError("sample count must lie in [1, N]");
  if (start >= n) throw InputError("start index out of range");
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> picked;
  picked.reserve(count);
  std::size_t current = start;
  for (std::size_t s = 0; s < count; ++s) {
    picked.push_back(current);
    const auto cp = points.row(current);
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      const auto p = points.row(i);
      for (std::size_t a = 0; a < points.cols(); ++a) d2 += (p[a] - cp[a]) * (p[a] - cp[a]);
      dist[i] = std::min(dist[i], d2);
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

Matrix farthest_point_sample(const Matrix& points, std::size_t count, std::uint64_t seed) {
  if (points.rows() == 0) throw InputError("cannot sample an empty point set");
  std::mt19937_64 rng(seed);
  const std::size_t start =
      std::uniform_int_distribution<std::size_t>(0, points.rows() - 1)(rng);
  const auto idx = farthest_point_indices(points, count, start);
  Matrix out(idx.size(), points.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(points.row(idx[i]).data(), points.cols(), out.row(i).data());
  return out;
}

double poly6_window(double q) {
  if (q < 0.0) throw InputError("window argument must be non-negative");
  if (q >= 1.0) return 0.0;
  const double t = 1.0 - q * q;
  return t * t * t;
}

double peak_window(double q) {
  if (q < 0.0) throw InputError("window argument must be non-negative");
  if (q >= 1.0) return 0.0;
  const double t = 1.0 - q;
  return t * t * t;
}

double window_value(Window w, double q) {
  return w == Window::poly6 ? poly6_window(q) : peak_window(q);
}

double window_derivative(Window w, double q) {
  if (q >= 1.0 || q < 0.0) return 0.0;
  if (w == Window::poly6) {
    const double t = 1.0 - q * q;
    return -6.0 * q * t * t;
  }
  const double t = 1.0 - q;
  return -3.0 * t * t;
}

std::vector<double> kernel_coords(std::span<const double> offset, double radius,
                                  int grid_size) {
  if (grid_size < 2) throw ConfigError("kernel grid needs at least 2 cells per axis");
  if (!(radius > 0.0)) throw InputError("kernel radius must be positive");
  std::vector<double> c(offset.size());
  for (std::size_t a = 0; a < offset.size(); ++a)
    c[a] = kernel_coord(offset[a], radius, grid_size);
  return c;
}

GravityFrame::GravityFrame(std::span<const double> gravity)
    : dim_(static_cast<int>(gravity.size())) {
  if (dim_ < 1 || dim_ > 3) throw InputError("gravity must have 1 to 3 components");
  double norm2 = 0.0;
  for (double g : gravity) norm2 += g * g;
  const double norm = std::sqrt(norm2);
  rot_.fill(0.0);
  for (int a = 0; a < dim_; ++a) rot_[a * dim_ + a] = 1.0;
  identity_ = true;
  if (norm < 1e-12) return;

  if (dim_ == 1) {
    if (gravity[0] > 0.0) {
      rot_[0] = -1.0;
      identity_ = false;
    }
    return;
  }
  if (dim_ == 2) {
    const double gx = gravity[0] / norm, gy = gravity[1] / norm;
    const double c = -gy, s = -gx;
    rot_ = {c, -s, s, c, 0, 0, 0, 0, 0};
    identity_ = (c == 1.0 && s == 0.0);
    return;
  }
  const double g[3] = {gravity[0] / norm, gravity[1] / norm, gravity[2] / norm};
  // Axis k = g x t with t = (0, -1, 0).
  const double k[3] = {g[2], 0.0, -g[0]};
  const double c = -g[1];
  const double s2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
  if (s2 < 1e-24) {
    if (c < 0.0) {
      rot_ = {1, 0, 0, 0, -1, 0, 0, 0, -1};
      identity_ = false;
    }
    return;
  }
  const double K[9] = {0, -k[2], k[1], k[2], 0, -k[0], -k[1], k[0], 0};
  const double f = (1.0 - c) / s2;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double kk = 0.0;
      for (int m = 0; m < 3; ++m) kk += K[i * 3 + m] * K[m * 3 + j];
      rot_[i * 3 + j] = (i == j ? 1.0 : 0.0) + K[i * 3 + j] + f * kk;
    }
  identity_ = false;
}

namespace {

Matrix apply_rotation(const std::array<double, 9>& rot, int dim, const Matrix& v,
                      bool transpose) {
  if (v.rows() > 0 && static_cast<int>(v.cols()) != dim)
    throw InputError("vector dimension does not match the gravity frame");
  Matrix out(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (int i = 0; i < dim; ++i) {
      double acc = 0.0;
      for (int j = 0; j < dim; ++j)
        acc += (transpose ? rot[j * dim + i] : rot[i * dim + j]) * v(r, j);
      out(r, i) = acc;
    }
  return out;
}

}  // namespace

Matrix GravityFrame::to_canonical(const Matrix& vectors) const {
  if (identity_) return vectors;
  return apply_rotation(rot_, dim_, vectors, false);
}

Matrix GravityFrame::from_canonical(const Matrix& vectors) const {
  if (identity_) return vectors;
  return apply_rotation(rot_, dim_, vectors, true);
}

}  // namespace dmcf
