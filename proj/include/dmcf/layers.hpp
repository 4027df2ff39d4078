#pragma once

#include <memory>
#include <span>

#include "dmcf/autodiff.hpp"
#include "dmcf/geometry.hpp"
#include "dmcf/matrix.hpp"

namespace dmcf {

/// Shape and support of a grid kernel. Weights are stored as a
/// (cells * c_in) x c_out matrix; cell index = sum_a idx_a * size^a.
struct KernelSpec {
  int dim = 2;
  int size = 8;
  int c_in = 1;
  int c_out = 1;
  Window window = Window::poly6;
  double radius = 1.0;

  std::size_t cells() const;
  std::size_t rows() const { return cells() * static_cast<std::size_t>(c_in); }
  void validate() const;
};

struct KernelGrid {
  KernelSpec spec;
  Matrix values;  // rows() x c_out
  Matrix bias;    // 1 x c_out, or empty for no bias
};

/// Free parameters of an antisymmetric kernel: every cell whose index along
/// the mirror axis is below size/2, in linear cell order.
struct AntisymmetricKernel {
  KernelSpec spec;
  int mirror_axis = 0;
  Matrix half_values;  // half_cells * c_in x c_out
};

/// Canonical y axis for d >= 2, x in 1D.
int default_mirror_axis(int dim);
std::size_t half_cell_count(const KernelSpec& spec);

/// Full grid: free half copied, the rest set to the negated value at the
/// point-reflected cell (every axis reflected).
Matrix materialize_antisymmetric(const AntisymmetricKernel& kernel);
/// Folds a full-grid gradient back onto the free half.
Matrix fold_antisymmetric_gradient(const KernelSpec& spec, int mirror_axis,
                                   const Matrix& full_grad);

/// Multilinearly interpolated kernel at `offset` as a c_in x c_out matrix
/// (the window is not applied).
Matrix interpolate_kernel(const KernelSpec& spec, const Matrix& values,
                          std::span<const double> offset);

/// Inputs of a forward call, kept for the matching backward call.
struct ConvCache {
  Matrix features;
  Matrix data;
  Matrix query;
  Matrix kernel;  // full grid (materialized for ASCC)
  KernelSpec spec;
  int mirror_axis = -1;  // >= 0 marks an ASCC cache
  bool has_bias = false;
  std::shared_ptr<const NeighborList> neighbors;
};

Matrix cconv_forward(const Matrix& features, const Matrix& data, const Matrix& query,
                     const KernelGrid& kernel, const NeighborList& neighbors,
                     ConvCache* cache = nullptr);

struct CConvGrads {
  Matrix features;
  Matrix data_positions;
  Matrix query_positions;
  Matrix kernel;
  Matrix bias;
};
CConvGrads cconv_backward(const Matrix& grad_out, const ConvCache& cache);

Matrix ascc_forward(const Matrix& features, const Matrix& points,
                    const AntisymmetricKernel& kernel, const NeighborList& neighbors,
                    ConvCache* cache = nullptr);
/// Same as above but with the data and query sets passed separately; they
/// must coincide.
Matrix ascc_forward(const Matrix& features, const Matrix& data, const Matrix& query,
                    const AntisymmetricKernel& kernel, const NeighborList& neighbors,
                    ConvCache* cache = nullptr);
/// Single-precision evaluation of the same sum.
MatrixF ascc_forward(const MatrixF& features, const MatrixF& points,
                     const AntisymmetricKernel& kernel, const NeighborList& neighbors);

struct ASCCGrads {
  Matrix features;
  Matrix positions;
  Matrix half_values;
};
ASCCGrads ascc_backward(const Matrix& grad_out, const ConvCache& cache);

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& grad_out);

namespace ad {

/// CConv on the tape. `bias` may be an invalid Var for a bias-free layer.
Var cconv(Tape& t, Var features, Var data, Var query, Var kernel, Var bias,
          const KernelSpec& spec, std::shared_ptr<const NeighborList> neighbors);

/// ASCC on the tape; gradients reach the free half of the kernel.
Var ascc(Tape& t, Var features, Var points, Var half_values, const KernelSpec& spec,
         int mirror_axis, std::shared_ptr<const NeighborList> neighbors);

}  // namespace ad

namespace testing {
/// Skips the negation of mirrored cells so the invariant checker has
/// something to catch.
void set_corrupt_mirror(bool corrupt);
}  // namespace testing

}  // namespace dmcf
