#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dmcf/matrix.hpp"

namespace dmcf {

/// Per-query neighbor indices in compressed-row form. Within each query row
/// the data indices are sorted ascending.
class NeighborList {
 public:
  NeighborList() = default;
  NeighborList(double radius, std::vector<std::size_t> offsets,
               std::vector<std::uint32_t> indices);

  double radius() const noexcept { return radius_; }
  std::size_t query_count() const noexcept {
    return offsets_.empty() ? 0 : offsets_.size() - 1;
  }
  std::size_t pair_count() const noexcept { return indices_.size(); }
  std::span<const std::uint32_t> of(std::size_t query) const {
    return {indices_.data() + offsets_[query],
            offsets_[query + 1] - offsets_[query]};
  }

 private:
  double radius_ = 0.0;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> indices_;
};

/// All data points within Euclidean distance <= radius of each query point,
/// found through a uniform grid with cell size equal to the radius.
NeighborList fixed_radius_neighbors(const Matrix& data, const Matrix& query,
                                    double radius);

/// Integer cell coordinates of every occupied voxel, lexicographically sorted.
/// Cells are anchored at `origin` (the coordinate origin when empty).
std::vector<std::vector<std::int64_t>> occupied_voxels(
    const Matrix& points, double voxel_size, std::span<const double> origin = {});

/// Centers of the occupied voxels, in lexicographic cell order.
Matrix voxel_sample(const Matrix& points, double voxel_size,
                    std::span<const double> origin = {});

/// Greedy max-min subset of `count` indices beginning at `start`. Ties are
/// broken towards the lowest index.
std::vector<std::size_t> farthest_point_indices(const Matrix& points,
                                                std::size_t count,
                                                std::size_t start);

/// Farthest-point subsample whose first point is drawn from `seed`.
Matrix farthest_point_sample(const Matrix& points, std::size_t count,
                             std::uint64_t seed);

enum class Window { poly6, peak };

double poly6_window(double q);
double peak_window(double q);
double window_value(Window w, double q);
/// d w / d q, zero outside the support.
double window_derivative(Window w, double q);

/// Continuous grid coordinate of one offset component inside a K-node grid
/// spanning [-radius, radius]. Negating the offset maps c to (K-1) - c
/// exactly in floating point.
template <typename T>
T kernel_coord(T offset, T radius, int grid_size) {
  const T last = static_cast<T>(grid_size - 1);
  const T half = static_cast<T>(0.5) * last;
  const T u = offset / radius;
  T a = half + std::abs(u) * half;
  if (a > last) a = last;
  return u >= T(0) ? a : last - a;
}

std::vector<double> kernel_coords(std::span<const double> offset, double radius,
                                  int grid_size);

/// Rotation that maps the gravity direction onto the canonical down axis
/// (-y for d >= 2, -x for d == 1). Identity for vanishing gravity.
class GravityFrame {
 public:
  GravityFrame() = default;
  explicit GravityFrame(std::span<const double> gravity);

  int dim() const noexcept { return dim_; }
  /// Row-major d x d rotation R; canonical = R * v.
  const std::array<double, 9>& rotation() const noexcept { return rot_; }
  bool is_identity() const noexcept { return identity_; }

  /// Rotates every row of `vectors` into the canonical frame.
  Matrix to_canonical(const Matrix& vectors) const;
  /// Inverse of to_canonical.
  Matrix from_canonical(const Matrix& vectors) const;

 private:
  int dim_ = 0;
  bool identity_ = true;
  std::array<double, 9> rot_{};
};

}  // namespace dmcf
