#include "dmcf/layers.hpp"

#include <array>
#include <atomic>
#include <cmath>

namespace dmcf {

namespace {

std::atomic<bool> g_corrupt_mirror{false};

std::size_t ipow(int base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= static_cast<std::size_t>(base);
  return r;
}

/// Grid cells touched by one offset, with their interpolation weights and
/// the weights' derivatives with respect to the offset.
template <typename T>
struct Corners {
  int count = 0;
  std::array<std::size_t, 8> cell{};
  std::array<T, 8> weight{};
  std::array<std::array<T, 3>, 8> dweight{};
};

template <typename T>
void interpolation_corners(const T* offset, const KernelSpec& spec, Corners<T>& out,
                           bool with_derivative) {
  const int dim = spec.dim;
  const int k = spec.size;
  const T radius = static_cast<T>(spec.radius);
  const T half = static_cast<T>(0.5) * static_cast<T>(k - 1);
  std::array<T, 3> w0{}, w1{}, dc{};
  std::array<std::size_t, 3> base{};
  for (int a = 0; a < dim; ++a) {
    const T c = kernel_coord<T>(offset[a], radius, k);
    int i = static_cast<int>(std::floor(c));
    if (i > k - 2) i = k - 2;
    if (i < 0) i = 0;
    const T t = c - static_cast<T>(i);
    w0[a] = T(1) - t;
    w1[a] = t;
    base[a] = static_cast<std::size_t>(i);
    dc[a] = std::abs(offset[a]) < radius ? half / radius : T(0);
  }
  out.count = 1 << dim;
  for (int b = 0; b < out.count; ++b) {
    std::size_t cell = 0;
    std::size_t stride = 1;
    T w = T(1);
    for (int a = 0; a < dim; ++a) {
      const bool hi = (b >> a) & 1;
      w *= hi ? w1[a] : w0[a];
      cell += (base[a] + (hi ? 1 : 0)) * stride;
      stride *= static_cast<std::size_t>(k);
    }
    out.cell[b] = cell;
    out.weight[b] = w;
    if (with_derivative) {
      for (int a = 0; a < dim; ++a) {
        T d = ((b >> a) & 1) ? dc[a] : -dc[a];
        for (int o = 0; o < dim; ++o)
          if (o != a) d *= ((b >> o) & 1) ? w1[o] : w0[o];
        out.dweight[b][a] = d;
      }
    }
  }
}

template <typename T>
T window_t(Window w, T q) {
  if (q >= T(1)) return T(0);
  if (w == Window::poly6) {
    const T t = T(1) - q * q;
    return t * t * t;
  }
  const T t = T(1) - q;
  return t * t * t;
}

void check_conv_inputs(const Matrix& features, const Matrix& data, const Matrix& query,
                       const KernelSpec& spec, const Matrix& kernel,
                       const NeighborList& neighbors) {
  spec.validate();
  if (features.rows() != data.rows())
    throw InputError("feature rows do not match the data point count");
  if (data.rows() > 0 && features.cols() != static_cast<std::size_t>(spec.c_in))
    throw InputError("feature columns do not match the kernel input channels");
  if (data.rows() > 0 && data.cols() != static_cast<std::size_t>(spec.dim))
    throw InputError("data dimension does not match the kernel");
  if (query.rows() > 0 && query.cols() != static_cast<std::size_t>(spec.dim))
    throw InputError("query dimension does not match the kernel");
  if (kernel.rows() != spec.rows() || kernel.cols() != static_cast<std::size_t>(spec.c_out))
    throw InputError("kernel values do not match the kernel shape");
  if (neighbors.query_count() != query.rows())
    throw InputError("neighbor list does not match the query set");
}

/// out(q) += sum_k w(|o|/r) h_qk G(o), o = x_k - x_q, with h_qk = f_k or
/// f_q + f_k (reflexive).
template <typename T>
void conv_accumulate(const BasicMatrix<T>& features, const BasicMatrix<T>& data,
                     const BasicMatrix<T>& query, const BasicMatrix<T>& kernel,
                     const KernelSpec& spec, const NeighborList& neighbors,
                     bool reflexive, BasicMatrix<T>& out) {
  const int dim = spec.dim;
  const std::size_t cin = static_cast<std::size_t>(spec.c_in);
  const std::size_t cout = static_cast<std::size_t>(spec.c_out);
  const T radius = static_cast<T>(spec.radius);
  std::vector<T> h(cin);
  Corners<T> corners;
  std::array<T, 3> offset{};
  for (std::size_t q = 0; q < query.rows(); ++q) {
    T* out_row = out.row(q).data();
    const T* xq = query.row(q).data();
    for (std::uint32_t k : neighbors.of(q)) {
      const T* xk = data.row(k).data();
      T dist2 = 0;
      for (int a = 0; a < dim; ++a) {
        offset[a] = xk[a] - xq[a];
        dist2 += offset[a] * offset[a];
      }
      const T w = window_t<T>(spec.window, std::sqrt(dist2) / radius);
      if (w == T(0)) continue;
      const T* fk = features.row(k).data();
      if (reflexive) {
        const T* fq = features.row(q).data();
        for (std::size_t c = 0; c < cin; ++c) h[c] = fq[c] + fk[c];
      } else {
        for (std::size_t c = 0; c < cin; ++c) h[c] = fk[c];
      }
      interpolation_corners<T>(offset.data(), spec, corners, false);
      for (int b = 0; b < corners.count; ++b) {
        const T s = w * corners.weight[b];
        if (s == T(0)) continue;
        const T* g = kernel.data() + corners.cell[b] * cin * cout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const T hs = s * h[ci];
          const T* gr = g + ci * cout;
          for (std::size_t co = 0; co < cout; ++co) out_row[co] += hs * gr[co];
        }
      }
    }
  }
}

struct ConvGradBuffers {
  Matrix* features = nullptr;
  Matrix* data = nullptr;
  Matrix* query = nullptr;
  Matrix* kernel = nullptr;
};

/// Reverse pass of conv_accumulate. Null buffers are skipped.
void conv_backward_impl(const Matrix& grad_out, const Matrix& features, const Matrix& data,
                        const Matrix& query, const Matrix& kernel, const KernelSpec& spec,
                        const NeighborList& neighbors, bool reflexive,
                        const ConvGradBuffers& grads) {
  const int dim = spec.dim;
  const std::size_t cin = static_cast<std::size_t>(spec.c_in);
  const std::size_t cout = static_cast<std::size_t>(spec.c_out);
  const double radius = spec.radius;
  const bool need_pos = grads.data || grads.query;
  std::vector<double> h(cin), gh(cin), y(cin);
  Corners<double> corners;
  std::array<double, 3> offset{};
  for (std::size_t q = 0; q < query.rows(); ++q) {
    const double* gq = grad_out.row(q).data();
    bool any = false;
    for (std::size_t co = 0; co < cout; ++co) any = any || gq[co] != 0.0;
    if (!any) continue;
    const double* xq = query.row(q).data();
    for (std::uint32_t k : neighbors.of(q)) {
      const double* xk = data.row(k).data();
      double dist2 = 0;
      for (int a = 0; a < dim; ++a) {
        offset[a] = xk[a] - xq[a];
        dist2 += offset[a] * offset[a];
      }
      const double dist = std::sqrt(dist2);
      const double qn = dist / radius;
      const double w = window_value(spec.window, qn);
      if (w == 0.0) continue;
      const double* fk = features.row(k).data();
      if (reflexive) {
        const double* fq = features.row(q).data();
        for (std::size_t c = 0; c < cin; ++c) h[c] = fq[c] + fk[c];
      } else {
        for (std::size_t c = 0; c < cin; ++c) h[c] = fk[c];
      }
      std::fill(gh.begin(), gh.end(), 0.0);
      interpolation_corners<double>(offset.data(), spec, corners, need_pos);
      double s_total = 0.0;
      std::array<double, 3> ds{0.0, 0.0, 0.0};
      for (int b = 0; b < corners.count; ++b) {
        const double* g = kernel.data() + corners.cell[b] * cin * cout;
        double a_c = 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* gr = g + ci * cout;
          double acc = 0.0;
          for (std::size_t co = 0; co < cout; ++co) acc += gr[co] * gq[co];
          y[ci] = acc;
          a_c += h[ci] * acc;
        }
        const double s = w * corners.weight[b];
        if (grads.kernel && s != 0.0) {
          double* gk = grads.kernel->data() + corners.cell[b] * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double hs = s * h[ci];
            double* gkr = gk + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) gkr[co] += hs * gq[co];
          }
        }
        for (std::size_t ci = 0; ci < cin; ++ci) gh[ci] += s * y[ci];
        if (need_pos) {
          s_total += corners.weight[b] * a_c;
          for (int a = 0; a < dim; ++a) ds[a] += corners.dweight[b][a] * a_c;
        }
      }
      if (grads.features) {
        double* gfk = grads.features->row(k).data();
        for (std::size_t c = 0; c < cin; ++c) gfk[c] += gh[c];
        if (reflexive) {
          double* gfq = grads.features->row(q).data();
          for (std::size_t c = 0; c < cin; ++c) gfq[c] += gh[c];
        }
      }
      if (need_pos) {
        const double wd = dist > 0.0 ? window_derivative(spec.window, qn) / (dist * radius) : 0.0;
        for (int a = 0; a < dim; ++a) {
          const double d = wd * offset[a] * s_total + w * ds[a];
          if (grads.data) (*grads.data)(k, a) += d;
          if (grads.query) (*grads.query)(q, a) -= d;
        }
      }
    }
  }
}

struct HalfLayout {
  std::vector<long> half_index;     // per cell, -1 for mirrored cells
  std::vector<std::size_t> reflect;  // per cell
  std::size_t half_cells = 0;
};

HalfLayout half_layout(const KernelSpec& spec, int axis) {
  if (spec.size % 2 != 0) throw ConfigError("antisymmetric kernels need an even grid size");
  if (axis < 0 || axis >= spec.dim) throw ConfigError("mirror axis out of range");
  const std::size_t cells = spec.cells();
  HalfLayout layout;
  layout.half_index.assign(cells, -1);
  layout.reflect.resize(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t rem = c, stride = 1, refl = 0;
    int axis_idx = 0;
    for (int a = 0; a < spec.dim; ++a) {
      const int idx = static_cast<int>(rem % static_cast<std::size_t>(spec.size));
      rem /= static_cast<std::size_t>(spec.size);
      if (a == axis) axis_idx = idx;
      refl += static_cast<std::size_t>(spec.size - 1 - idx) * stride;
      stride *= static_cast<std::size_t>(spec.size);
    }
    layout.reflect[c] = refl;
    if (axis_idx < spec.size / 2) layout.half_index[c] = static_cast<long>(layout.half_cells++);
  }
  return layout;
}

Matrix materialize(const KernelSpec& spec, int axis, const Matrix& half) {
  const HalfLayout layout = half_layout(spec, axis);
  const std::size_t block = static_cast<std::size_t>(spec.c_in) * spec.c_out;
  if (half.rows() != layout.half_cells * spec.c_in ||
      half.cols() != static_cast<std::size_t>(spec.c_out))
    throw InputError("antisymmetric half values do not match the kernel shape");
  const double sign = g_corrupt_mirror.load() ? 1.0 : -1.0;
  Matrix full(spec.rows(), spec.c_out);
  for (std::size_t c = 0; c < layout.half_index.size(); ++c) {
    double* dst = full.data() + c * block;
    if (layout.half_index[c] >= 0) {
      const double* src = half.data() + static_cast<std::size_t>(layout.half_index[c]) * block;
      std::copy_n(src, block, dst);
    } else {
      const long src_half = layout.half_index[layout.reflect[c]];
      const double* src = half.data() + static_cast<std::size_t>(src_half) * block;
      for (std::size_t i = 0; i < block; ++i) dst[i] = sign * src[i];
    }
  }
  return full;
}

}  // namespace

std::size_t KernelSpec::cells() const { return ipow(size, dim); }

void KernelSpec::validate() const {
  if (dim < 1 || dim > 3) throw ConfigError("kernel dimension must be 1, 2 or 3");
  if (size < 2) throw ConfigError("kernel grid needs at least 2 cells per axis");
  if (c_in < 1 || c_out < 1) throw ConfigError("kernel channel counts must be positive");
  if (!(radius > 0.0)) throw ConfigError("kernel radius must be positive");
}

int default_mirror_axis(int dim) { return dim >= 2 ? 1 : 0; }

std::size_t half_cell_count(const KernelSpec& spec) {
  if (spec.size % 2 != 0) throw ConfigError("antisymmetric kernels need an even grid size");
  return spec.cells() / 2;
}

Matrix materialize_antisymmetric(const AntisymmetricKernel& kernel) {
  kernel.spec.validate();
  return materialize(kernel.spec, kernel.mirror_axis, kernel.half_values);
}

Matrix fold_antisymmetric_gradient(const KernelSpec& spec, int mirror_axis,
                                   const Matrix& full_grad) {
  const HalfLayout layout = half_layout(spec, mirror_axis);
  const std::size_t block = static_cast<std::size_t>(spec.c_in) * spec.c_out;
  if (full_grad.rows() != spec.rows()) throw InputError("full gradient has the wrong shape");
  const double sign = g_corrupt_mirror.load() ? 1.0 : -1.0;
  Matrix half(layout.half_cells * spec.c_in, spec.c_out);
  for (std::size_t c = 0; c < layout.half_index.size(); ++c) {
    if (layout.half_index[c] < 0) continue;
    double* dst = half.data() + static_cast<std::size_t>(layout.half_index[c]) * block;
    const double* own = full_grad.data() + c * block;
    const double* mirrored = full_grad.data() + layout.reflect[c] * block;
    for (std::size_t i = 0; i < block; ++i) dst[i] = own[i] + sign * mirrored[i];
  }
  return half;
}

Matrix interpolate_kernel(const KernelSpec& spec, const Matrix& values,
                          std::span<const double> offset) {
  spec.validate();
  if (offset.size() != static_cast<std::size_t>(spec.dim))
    throw InputError("offset dimension does not match the kernel");
  Corners<double> corners;
  interpolation_corners<double>(offset.data(), spec, corners, false);
  const std::size_t block = static_cast<std::size_t>(spec.c_in) * spec.c_out;
  Matrix g(spec.c_in, spec.c_out);
  for (int b = 0; b < corners.count; ++b) {
    const double* src = values.data() + corners.cell[b] * block;
    for (std::size_t i = 0; i < block; ++i) g.data()[i] += corners.weight[b] * src[i];
  }
  return g;
}

Matrix cconv_forward(const Matrix& features, const Matrix& data, const Matrix& query,
                     const KernelGrid& kernel, const NeighborList& neighbors,
                     ConvCache* cache) {
  check_conv_inputs(features, data, query, kernel.spec, kernel.values, neighbors);
  const bool has_bias = !kernel.bias.empty();
  if (has_bias && kernel.bias.size() != static_cast<std::size_t>(kernel.spec.c_out))
    throw InputError("bias length does not match the output channels");
  Matrix out(query.rows(), kernel.spec.c_out);
  if (has_bias)
    for (std::size_t q = 0; q < out.rows(); ++q)
      std::copy_n(kernel.bias.data(), kernel.bias.size(), out.row(q).data());
  conv_accumulate<double>(features, data, query, kernel.values, kernel.spec, neighbors, false,
                          out);
  if (cache) {
    *cache = ConvCache{features, data, query, kernel.values, kernel.spec, -1, has_bias,
                       std::make_shared<NeighborList>(neighbors)};
  }
  return out;
}

CConvGrads cconv_backward(const Matrix& grad_out, const ConvCache& cache) {
  if (cache.mirror_axis >= 0 || !cache.neighbors)
    throw ContractViolation("cconv_backward needs a cache from cconv_forward");
  if (grad_out.rows() != cache.query.rows() ||
      grad_out.cols() != static_cast<std::size_t>(cache.spec.c_out))
    throw ContractViolation("output gradient does not match the cached forward call");
  CConvGrads g{Matrix(cache.features.rows(), cache.features.cols()),
               Matrix(cache.data.rows(), cache.data.cols()),
               Matrix(cache.query.rows(), cache.query.cols()),
               Matrix(cache.kernel.rows(), cache.kernel.cols()), Matrix()};
  conv_backward_impl(grad_out, cache.features, cache.data, cache.query, cache.kernel,
                     cache.spec, *cache.neighbors, false,
                     {&g.features, &g.data_positions, &g.query_positions, &g.kernel});
  if (cache.has_bias) {
    g.bias = Matrix(1, cache.spec.c_out);
    for (std::size_t q = 0; q < grad_out.rows(); ++q)
      for (std::size_t c = 0; c < grad_out.cols(); ++c) g.bias(0, c) += grad_out(q, c);
  }
  return g;
}

Matrix ascc_forward(const Matrix& features, const Matrix& points,
                    const AntisymmetricKernel& kernel, const NeighborList& neighbors,
                    ConvCache* cache) {
  const Matrix full = materialize_antisymmetric(kernel);
  check_conv_inputs(features, points, points, kernel.spec, full, neighbors);
  Matrix out(points.rows(), kernel.spec.c_out);
  conv_accumulate<double>(features, points, points, full, kernel.spec, neighbors, true, out);
  if (cache) {
    *cache = ConvCache{features, points, points, full, kernel.spec, kernel.mirror_axis, false,
                       std::make_shared<NeighborList>(neighbors)};
  }
  return out;
}

Matrix ascc_forward(const Matrix& features, const Matrix& data, const Matrix& query,
                    const AntisymmetricKernel& kernel, const NeighborList& neighbors,
                    ConvCache* cache) {
  if (!(data == query))
    throw ContractViolation("ASCC requires identical data and query point sets");
  return ascc_forward(features, data, kernel, neighbors, cache);
}

MatrixF ascc_forward(const MatrixF& features, const MatrixF& points,
                     const AntisymmetricKernel& kernel, const NeighborList& neighbors) {
  const MatrixF full = materialize_antisymmetric(kernel).cast<float>();
  check_conv_inputs(features.cast<double>(), points.cast<double>(), points.cast<double>(),
                    kernel.spec, full.cast<double>(), neighbors);
  MatrixF out(points.rows(), kernel.spec.c_out);
  conv_accumulate<float>(features, points, points, full, kernel.spec, neighbors, true, out);
  return out;
}

ASCCGrads ascc_backward(const Matrix& grad_out, const ConvCache& cache) {
  if (cache.mirror_axis < 0 || !cache.neighbors)
    throw ContractViolation("ascc_backward needs a cache from ascc_forward");
  if (grad_out.rows() != cache.query.rows() ||
      grad_out.cols() != static_cast<std::size_t>(cache.spec.c_out))
    throw ContractViolation("output gradient does not match the cached forward call");
  Matrix full_grad(cache.kernel.rows(), cache.kernel.cols());
  ASCCGrads g{Matrix(cache.features.rows(), cache.features.cols()),
              Matrix(cache.data.rows(), cache.data.cols()), Matrix()};
  conv_backward_impl(grad_out, cache.features, cache.data, cache.query, cache.kernel,
                     cache.spec, *cache.neighbors, true,
                     {&g.features, &g.positions, &g.positions, &full_grad});
  g.half_values = fold_antisymmetric_gradient(cache.spec, cache.mirror_axis, full_grad);
  return g;
}

Matrix relu(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::max(0.0, x.data()[i]);
  return out;
}

Matrix relu_backward(const Matrix& x, const Matrix& grad_out) {
  if (!x.same_shape(grad_out)) throw ContractViolation("relu gradient shape mismatch");
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    g.data()[i] = x.data()[i] > 0.0 ? grad_out.data()[i] : 0.0;
  return g;
}

namespace ad {

Var cconv(Tape& t, Var features, Var data, Var query, Var kernel, Var bias,
          const KernelSpec& spec, std::shared_ptr<const NeighborList> neighbors) {
  const Matrix& f = t.value(features);
  const Matrix& xd = t.value(data);
  const Matrix& xq = t.value(query);
  const Matrix& w = t.value(kernel);
  check_conv_inputs(f, xd, xq, spec, w, *neighbors);
  Matrix out(xq.rows(), spec.c_out);
  const bool has_bias = bias.valid();
  if (has_bias) {
    const Matrix& b = t.value(bias);
    if (b.size() != static_cast<std::size_t>(spec.c_out))
      throw InputError("bias length does not match the output channels");
    for (std::size_t q = 0; q < out.rows(); ++q) std::copy_n(b.data(), b.size(), out.row(q).data());
  }
  conv_accumulate<double>(f, xd, xq, w, spec, *neighbors, false, out);
  bool req = any_requires_grad(t, {features, data, query, kernel});
  if (has_bias) req = req || t.requires_grad(bias);
  return t.record(std::move(out), req,
                  [=](Tape& tp, const Matrix& g) {
                    ConvGradBuffers buffers;
                    if (tp.requires_grad(features)) buffers.features = &tp.grad(features);
                    if (tp.requires_grad(data)) buffers.data = &tp.grad(data);
                    if (tp.requires_grad(query)) buffers.query = &tp.grad(query);
                    if (tp.requires_grad(kernel)) buffers.kernel = &tp.grad(kernel);
                    if (buffers.features || buffers.data || buffers.query || buffers.kernel)
                      conv_backward_impl(g, tp.value(features), tp.value(data), tp.value(query),
                                         tp.value(kernel), spec, *neighbors, false, buffers);
                    if (has_bias && tp.requires_grad(bias)) {
                      Matrix& gb = tp.grad(bias);
                      for (std::size_t q = 0; q < g.rows(); ++q)
                        for (std::size_t c = 0; c < g.cols(); ++c) gb.data()[c] += g(q, c);
                    }
                  });
}

Var ascc(Tape& t, Var features, Var points, Var half_values, const KernelSpec& spec,
         int mirror_axis, std::shared_ptr<const NeighborList> neighbors) {
  const Matrix& f = t.value(features);
  const Matrix& x = t.value(points);
  auto full = std::make_shared<Matrix>(materialize(spec, mirror_axis, t.value(half_values)));
  check_conv_inputs(f, x, x, spec, *full, *neighbors);
  Matrix out(x.rows(), spec.c_out);
  conv_accumulate<double>(f, x, x, *full, spec, *neighbors, true, out);
  return t.record(std::move(out), any_requires_grad(t, {features, points, half_values}),
                  [=](Tape& tp, const Matrix& g) {
                    ConvGradBuffers buffers;
                    Matrix full_grad;
                    if (tp.requires_grad(features)) buffers.features = &tp.grad(features);
                    if (tp.requires_grad(points)) {
                      buffers.data = &tp.grad(points);
                      buffers.query = buffers.data;
                    }
                    if (tp.requires_grad(half_values)) {
                      full_grad = Matrix(full->rows(), full->cols());
                      buffers.kernel = &full_grad;
                    }
                    conv_backward_impl(g, tp.value(features), tp.value(points), tp.value(points),
                                       *full, spec, *neighbors, true, buffers);
                    if (buffers.kernel) {
                      const Matrix folded = fold_antisymmetric_gradient(spec, mirror_axis, full_grad);
                      Matrix& gh = tp.grad(half_values);
                      for (std::size_t i = 0; i < folded.size(); ++i) gh.data()[i] += folded.data()[i];
                    }
                  });
}

}  // namespace ad

namespace testing {
void set_corrupt_mirror(bool corrupt) { g_corrupt_mirror.store(corrupt); }
}  // namespace testing

}  // namespace dmcf
