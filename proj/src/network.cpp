#include "dmcf/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace dmcf {

double ArchitectureConfig::branch_radius(int branch) const {
  return base_radius() * std::ldexp(1.0, branch);
}

double ArchitectureConfig::voxel_size(int branch) const {
  return 0.5 * base_radius() * std::ldexp(1.0, branch);
}

void ArchitectureConfig::validate() const {
  if (dim < 1 || dim > 3) throw ConfigError("dim must be 1, 2 or 3");
  if (!(particle_radius > 0.0) || !(radius_scale > 0.0))
    throw ConfigError("particle radius and radius scale must be positive");
  if (branches < 1) throw ConfigError("at least one branch is required");
  if (l1_channels.size() != static_cast<std::size_t>(branches))
    throw ConfigError("l1 channel list must have one entry per branch");
  for (const auto& layer : exchange_channels)
    if (layer.size() != static_cast<std::size_t>(branches))
      throw ConfigError("exchange channel lists must have one entry per branch");
  auto positive = [](int c) { return c >= 1; };
  if (pre_channels < 1 || l4_channels < 1 || !std::all_of(l1_channels.begin(), l1_channels.end(), positive))
    throw ConfigError("channel counts must be positive");
  for (const auto& layer : exchange_channels)
    if (!std::all_of(layer.begin(), layer.end(), positive))
      throw ConfigError("channel counts must be positive");
  if (kernel_size < 2 || head_kernel_size < 2) throw ConfigError("kernel size must be at least 2");
  if (head == HeadKind::ascc && head_kernel_size % 2 != 0)
    throw ConfigError("antisymmetric head needs an even kernel size");
}

ArchitectureConfig default_architecture(int dim) {
  ArchitectureConfig c;
  c.dim = dim;
  if (dim == 1) {
    c.branches = 2;
    c.l1_channels = {16, 8};
    c.exchange_channels = {{32, 16}};
    // Column corrections are a few micrometers; unit-scale raw outputs
    // start the head far from that.
    c.output_scale = 0.01;
  }
  return c;
}

std::size_t ModelParams::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InputError("unknown parameter tensor " + name);
  return static_cast<std::size_t>(it - names.begin());
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

namespace {

std::string conv_name(int layer, int from, int to) {
  return "l" + std::to_string(layer) + "." + std::to_string(from) + "to" + std::to_string(to);
}

KernelSpec conv_spec(const ArchitectureConfig& c, int c_in, int c_out, double radius) {
  return KernelSpec{c.dim, c.kernel_size, c_in, c_out, Window::poly6, radius};
}

KernelSpec head_spec(const ArchitectureConfig& c) {
  return KernelSpec{c.dim, c.head_kernel_size, c.l4_channels, c.dim,
                    c.head == HeadKind::ascc ? Window::peak : Window::poly6, c.base_radius()};
}

struct ConvSlot {
  std::string name;
  KernelSpec spec;
};

/// Every CConv in evaluation order; the head is handled separately.
std::vector<ConvSlot> conv_slots(const ArchitectureConfig& c) {
  std::vector<ConvSlot> slots;
  const int d = c.dim;
  slots.push_back({"pre.fluid", conv_spec(c, 2 * d, c.pre_channels, c.base_radius())});
  slots.push_back({"pre.boundary", conv_spec(c, d, c.pre_channels, c.base_radius())});
  for (int j = 0; j < c.branches; ++j)
    slots.push_back({conv_name(1, 0, j),
                     conv_spec(c, 2 * c.pre_channels, c.l1_channels[j], c.branch_radius(0))});
  std::vector<int> prev = c.l1_channels;
  for (std::size_t e = 0; e < c.exchange_channels.size(); ++e) {
    for (int j = 0; j < c.branches; ++j)
      for (int k = 0; k < c.branches; ++k)
        slots.push_back({conv_name(static_cast<int>(e) + 2, k, j),
                         conv_spec(c, prev[k], c.exchange_channels[e][j], c.branch_radius(k))});
    prev = c.exchange_channels[e];
  }
  const int l4 = static_cast<int>(c.exchange_channels.size()) + 2;
  for (int k = 0; k < c.branches; ++k)
    slots.push_back({conv_name(l4, k, 0), conv_spec(c, prev[k], c.l4_channels, c.branch_radius(k))});
  return slots;
}

}  // namespace

std::vector<TensorLayout> parameter_layout(const ArchitectureConfig& config) {
  config.validate();
  std::vector<TensorLayout> layout;
  for (const auto& slot : conv_slots(config)) {
    layout.push_back({slot.name + ".kernel", slot.spec.rows(),
                      static_cast<std::size_t>(slot.spec.c_out), false});
    layout.push_back({slot.name + ".bias", 1, static_cast<std::size_t>(slot.spec.c_out), true});
  }
  const KernelSpec hs = head_spec(config);
  if (config.head == HeadKind::ascc) {
    layout.push_back({"head.half", half_cell_count(hs) * hs.c_in,
                      static_cast<std::size_t>(hs.c_out), false});
  } else {
    layout.push_back({"head.kernel", hs.rows(), static_cast<std::size_t>(hs.c_out), false});
    layout.push_back({"head.bias", 1, static_cast<std::size_t>(hs.c_out), true});
  }
  return layout;
}

ModelParams init_params(const ArchitectureConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-0.05, 0.05);
  ModelParams p;
  for (const auto& t : parameter_layout(config)) {
    Matrix m(t.rows, t.cols);
    if (!t.is_bias) {
      for (std::size_t i = 0; i < m.size(); ++i) {
        float v = static_cast<float>(uni(rng));
        v = std::clamp(v, -0.05f, 0.05f);
        m.data()[i] = static_cast<double>(v);
      }
    }
    p.names.push_back(t.name);
    p.tensors.push_back(std::move(m));
  }
  return p;
}

void zero_head(const ArchitectureConfig& config, ModelParams& params) {
  for (std::size_t i = 0; i < params.names.size(); ++i)
    if (params.names[i].rfind("head.", 0) == 0) params.tensors[i].fill(0.0);
  (void)config;
}

SceneContext scene_context(const ParticleState& state, std::span<const double> gravity) {
  const auto b = state.boundary_indices();
  SceneContext s;
  s.boundary_positions = gather(state.positions, b);
  s.boundary_normals = gather(state.normals, b);
  if (b.empty()) {
    s.boundary_positions = Matrix(0, state.positions.cols());
    s.boundary_normals = Matrix(0, state.positions.cols());
  }
  s.gravity.assign(gravity.begin(), gravity.end());
  return s;
}

namespace ad {
std::vector<Var> register_params(Tape& t, const ModelParams& params, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& m : params.tensors) vars.push_back(trainable ? t.variable(m) : t.constant(m));
  return vars;
}
}  // namespace ad

namespace {

/// Row order sorting points lexicographically by coordinates (index breaks
/// exact ties), so the network result does not depend on input order.
std::vector<std::size_t> lexicographic_order(const Matrix& points) {
  std::vector<std::size_t> order(points.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto pa = points.row(a);
    const auto pb = points.row(b);
    return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
  });
  return order;
}

/// Grid anchor for voxel queries: the bounding-box minimum of the points,
/// shifted by a quarter voxel so lattice-aligned particles do not sit on
/// cell faces. Returns the argmin row per axis.
std::vector<double> voxel_anchor(const Matrix& points, double voxel,
                                 std::vector<std::size_t>& argmin) {
  const std::size_t d = points.cols();
  std::vector<double> anchor(d, 0.0);
  argmin.assign(d, 0);
  for (std::size_t a = 0; a < d; ++a) {
    double m = points(0, a);
    for (std::size_t i = 1; i < points.rows(); ++i)
      if (points(i, a) < m) {
        m = points(i, a);
        argmin[a] = i;
      }
    anchor[a] = m - 0.25 * voxel;
  }
  return anchor;
}

ad::Var voxel_queries(ad::Tape& t, ad::Var points, double voxel) {
  const Matrix& p = t.value(points);
  std::vector<std::size_t> argmin;
  const auto anchor = voxel_anchor(p, voxel, argmin);
  Matrix centers = voxel_sample(p, voxel, anchor);
  return t.record(std::move(centers), t.requires_grad(points),
                  [points, argmin](ad::Tape& tp, const Matrix& g) {
                    Matrix& dst = tp.grad(points);
                    for (std::size_t a = 0; a < argmin.size(); ++a) {
                      double s = 0.0;
                      for (std::size_t i = 0; i < g.rows(); ++i) s += g(i, a);
                      dst(argmin[a], a) += s;
                    }
                  });
}

ad::Var fps_queries(ad::Tape& t, ad::Var points, double voxel) {
  const Matrix& p = t.value(points);
  std::vector<std::size_t> argmin;
  const auto anchor = voxel_anchor(p, voxel, argmin);
  const std::size_t count = occupied_voxels(p, voxel, anchor).size();
  return ad::gather_rows(t, points, farthest_point_indices(p, count, 0));
}

Matrix constant_rows(std::size_t rows, std::span<const double> row) {
  Matrix m(rows, row.size());
  for (std::size_t r = 0; r < rows; ++r) std::copy(row.begin(), row.end(), m.row(r).begin());
  return m;
}

}  // namespace

ad::Var network_forward(ad::Tape& t, const ArchitectureConfig& config,
                        std::span<const ad::Var> params, ad::Var fluid_positions,
                        ad::Var fluid_velocities, const SceneContext& scene,
                        NetworkTrace* trace) {
  config.validate();
  const std::size_t d = static_cast<std::size_t>(config.dim);
  const std::size_t nf = t.value(fluid_positions).rows();
  if (nf > 0 && t.value(fluid_positions).cols() != d)
    throw InputError("fluid positions do not match the network dimension");
  if (!t.value(fluid_velocities).same_shape(t.value(fluid_positions)))
    throw InputError("fluid velocities do not match fluid positions");
  if (scene.gravity.size() != d) throw InputError("gravity does not match the network dimension");
  const std::size_t nb_count = scene.boundary_positions.rows();
  if (nb_count > 0 && (scene.boundary_positions.cols() != d ||
                       !scene.boundary_normals.same_shape(scene.boundary_positions)))
    throw InputError("boundary data does not match the network dimension");

  const auto layout = parameter_layout(config);
  if (params.size() != layout.size()) throw InputError("parameter count does not match the architecture");
  std::map<std::string, ad::Var> P;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Matrix& v = t.value(params[i]);
    if (v.rows() != layout[i].rows || v.cols() != layout[i].cols)
      throw InputError("parameter " + layout[i].name + " has the wrong shape");
    P[layout[i].name] = params[i];
  }

  // Canonical frame.
  const GravityFrame frame = config.gravity_normalize ? GravityFrame(scene.gravity) : GravityFrame();
  const bool rotate = config.gravity_normalize && !frame.is_identity();
  ad::Var pos = rotate ? ad::rotate_rows(t, fluid_positions, frame, true) : fluid_positions;
  ad::Var vel = rotate ? ad::rotate_rows(t, fluid_velocities, frame, true) : fluid_velocities;
  Matrix bpos = Matrix(nb_count, d);
  Matrix bnorm = Matrix(nb_count, d);
  if (nb_count > 0) {
    bpos = rotate ? frame.to_canonical(scene.boundary_positions) : scene.boundary_positions;
    bnorm = rotate ? frame.to_canonical(scene.boundary_normals) : scene.boundary_normals;
  }
  std::vector<double> accel = scene.gravity;
  if (rotate) {
    Matrix g(1, d, std::vector<double>(scene.gravity));
    accel = frame.to_canonical(g).storage();
  }
  for (double& a : accel) a *= config.accel_feature_scale;

  const auto forder = lexicographic_order(t.value(pos));
  pos = ad::gather_rows(t, pos, forder);
  vel = ad::gather_rows(t, vel, forder);
  const auto border = lexicographic_order(bpos);
  bpos = gather(bpos, border);
  bnorm = gather(bnorm, border);
  if (nb_count == 0) {
    bpos = Matrix(0, d);
    bnorm = Matrix(0, d);
  }

  const ad::Var bpos_v = t.constant(bpos);
  const ad::Var bnorm_v = t.constant(bnorm);
  const ad::Var all = config.boundary_all_layers ? ad::concat_rows(t, pos, bpos_v) : pos;
  const std::size_t nu = t.value(all).rows();

  auto conv = [&](const std::string& name, ad::Var f, ad::Var data, ad::Var query,
                  const KernelSpec& spec, std::shared_ptr<const NeighborList> nb) {
    return ad::cconv(t, f, data, query, P.at(name + ".kernel"), P.at(name + ".bias"), spec, nb);
  };
  auto neighbors = [&](ad::Var data, ad::Var query, double radius) {
    return std::make_shared<const NeighborList>(
        fixed_radius_neighbors(t.value(data), t.value(query), radius));
  };

  // Type-aware preprocessing, queried at every particle in the union.
  const auto slots = conv_slots(config);
  std::size_t slot = 0;
  ad::Var fluid_feat = ad::concat_cols(t, ad::scale(t, vel, config.velocity_feature_scale),
                                       t.constant(constant_rows(nf, accel)));
  if (nf == 0) fluid_feat = t.constant(Matrix(0, 2 * d));
  const ad::Var pre_f = ad::relu(t, conv("pre.fluid", fluid_feat, pos, all, slots[slot].spec,
                                         neighbors(pos, all, config.base_radius())));
  ++slot;
  const ad::Var pre_b = ad::relu(t, conv("pre.boundary", bnorm_v, bpos_v, all, slots[slot].spec,
                                         neighbors(bpos_v, all, config.base_radius())));
  ++slot;
  const ad::Var f0 = ad::concat_cols(t, pre_f, pre_b);

  // Branch query sets.
  const int B = config.branches;
  std::vector<ad::Var> Q(B);
  Q[0] = all;
  for (int j = 1; j < B; ++j) {
    if (nu == 0) {
      Q[j] = all;
    } else {
      Q[j] = config.sampling == Sampling::voxel ? voxel_queries(t, all, config.voxel_size(j))
                                               : fps_queries(t, all, config.voxel_size(j));
    }
  }
  std::map<std::pair<int, int>, std::shared_ptr<const NeighborList>> nb_cache;
  auto branch_nb = [&](int k, int j) {
    auto key = std::make_pair(k, j);
    auto it = nb_cache.find(key);
    if (it == nb_cache.end())
      it = nb_cache.emplace(key, neighbors(Q[k], Q[j], config.branch_radius(k))).first;
    return it->second;
  };

  std::vector<ad::Var> h(B);
  for (int j = 0; j < B; ++j, ++slot)
    h[j] = ad::relu(t, conv(slots[slot].name, f0, all, Q[j], slots[slot].spec, branch_nb(0, j)));

  for (std::size_t e = 0; e < config.exchange_channels.size(); ++e) {
    std::vector<ad::Var> next(B);
    for (int j = 0; j < B; ++j) {
      std::vector<ad::Var> terms;
      for (int k = 0; k < B; ++k, ++slot)
        terms.push_back(conv(slots[slot].name, h[k], Q[k], Q[j], slots[slot].spec, branch_nb(k, j)));
      next[j] = ad::relu(t, ad::add_n(t, terms));
    }
    h = std::move(next);
  }
  std::vector<ad::Var> merge;
  for (int k = 0; k < B; ++k, ++slot)
    merge.push_back(conv(slots[slot].name, h[k], Q[k], Q[0], slots[slot].spec, branch_nb(k, 0)));
  const ad::Var z = ad::relu(t, ad::add_n(t, merge));

  const KernelSpec hs = head_spec(config);
  const auto head_nb = neighbors(all, all, hs.radius);
  ad::Var out;
  if (config.head == HeadKind::ascc) {
    out = ad::ascc(t, z, all, P.at("head.half"), hs, default_mirror_axis(config.dim), head_nb);
  } else {
    out = ad::cconv(t, z, all, all, P.at("head.kernel"), P.at("head.bias"), hs, head_nb);
  }
  if (trace) {
    trace->union_output = out;
    trace->fluid_count = nf;
  }

  ad::Var dx = ad::scale(t, ad::slice_rows(t, out, 0, nf), config.output_scale);
  std::vector<std::size_t> inverse(nf);
  for (std::size_t i = 0; i < nf; ++i) inverse[forder[i]] = i;
  dx = ad::gather_rows(t, dx, inverse);
  if (rotate) dx = ad::rotate_rows(t, dx, frame, false);
  return dx;
}

NetworkEval evaluate_network(const ArchitectureConfig& config, const ModelParams& params,
                             const ParticleState& state, std::span<const double> gravity) {
  ad::Tape t(false);
  const auto pv = ad::register_params(t, params, false);
  const auto fi = state.fluid_indices();
  const std::size_t d = static_cast<std::size_t>(config.dim);
  Matrix fp = fi.empty() ? Matrix(0, d) : gather(state.positions, fi);
  Matrix fv = fi.empty() ? Matrix(0, d) : gather(state.velocities, fi);
  NetworkTrace trace;
  const ad::Var dx = network_forward(t, config, pv, t.constant(fp), t.constant(fv),
                                     scene_context(state, gravity), &trace);
  NetworkEval e;
  e.fluid_dx = t.value(dx);
  e.union_output = t.value(trace.union_output);
  for (double& v : e.union_output.storage()) v *= config.output_scale;
  return e;
}

std::vector<Matrix> network_backward(const ArchitectureConfig& config,
                                     const ModelParams& params, const ParticleState& state,
                                     std::span<const double> gravity, const Matrix& grad_dx) {
  ad::Tape t(true);
  const auto pv = ad::register_params(t, params, true);
  const auto fi = state.fluid_indices();
  const std::size_t d = static_cast<std::size_t>(config.dim);
  Matrix fp = fi.empty() ? Matrix(0, d) : gather(state.positions, fi);
  Matrix fv = fi.empty() ? Matrix(0, d) : gather(state.velocities, fi);
  const ad::Var dx = network_forward(t, config, pv, t.constant(fp), t.constant(fv),
                                     scene_context(state, gravity));
  if (!grad_dx.same_shape(t.value(dx)))
    throw ContractViolation("output gradient does not match the network output");
  t.backward(dx, grad_dx);
  std::vector<Matrix> grads;
  for (const auto& v : pv) grads.push_back(t.grad(v));
  return grads;
}

}  // namespace dmcf
