#include "dmcf/state.hpp"

#include <cmath>

namespace dmcf {

std::vector<std::size_t> ParticleState::fluid_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < types.size(); ++i)
    if (types[i] == ParticleType::fluid) out.push_back(i);
  return out;
}

std::vector<std::size_t> ParticleState::boundary_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < types.size(); ++i)
    if (types[i] == ParticleType::boundary) out.push_back(i);
  return out;
}

void ParticleState::validate() const {
  const std::size_t n = positions.rows();
  const std::size_t d = positions.cols();
  if (n > 0 && (d < 1 || d > 3)) throw InputError("particle dimension must be 1, 2 or 3");
  auto check = [&](const Matrix& m, const char* what) {
    if (m.rows() != n || (n > 0 && m.cols() != d))
      throw InputError(std::string(what) + " shape does not match positions");
    if (!m.all_finite()) throw InputError(std::string(what) + " contain non-finite values");
  };
  check(positions, "positions");
  check(velocities, "velocities");
  check(accelerations, "accelerations");
  check(normals, "normals");
  if (masses.size() != n) throw InputError("mass count does not match positions");
  if (types.size() != n) throw InputError("type count does not match positions");
  for (std::size_t i = 0; i < n; ++i) {
    if (types[i] != ParticleType::boundary) continue;
    double len2 = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      if (velocities(i, a) != 0.0) throw InputError("boundary particles must be static");
      len2 += normals(i, a) * normals(i, a);
    }
    if (std::abs(std::sqrt(len2) - 1.0) > 1e-6)
      throw InputError("boundary normals must have unit length");
  }
}

ParticleState make_state(const Matrix& fluid_positions, const Matrix& fluid_velocities,
                         const Matrix& boundary_positions, const Matrix& boundary_normals) {
  const std::size_t d = fluid_positions.rows() > 0 ? fluid_positions.cols()
                                                   : boundary_positions.cols();
  const std::size_t nf = fluid_positions.rows();
  const std::size_t nb = boundary_positions.rows();
  ParticleState s;
  s.positions = Matrix(nf + nb, d);
  s.velocities = Matrix(nf + nb, d);
  s.accelerations = Matrix(nf + nb, d);
  s.normals = Matrix(nf + nb, d);
  s.masses.assign(nf + nb, 1.0);
  s.types.assign(nf, ParticleType::fluid);
  s.types.resize(nf + nb, ParticleType::boundary);
  std::copy_n(fluid_positions.data(), fluid_positions.size(), s.positions.data());
  std::copy_n(fluid_velocities.data(), fluid_velocities.size(), s.velocities.data());
  std::copy_n(boundary_positions.data(), boundary_positions.size(), s.positions.data() + nf * d);
  std::copy_n(boundary_normals.data(), boundary_normals.size(), s.normals.data() + nf * d);
  return s;
}

Matrix gather(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(m.row(rows[i]).data(), m.cols(), out.row(i).data());
  return out;
}

void scatter(Matrix& dst, const std::vector<std::size_t>& rows, const Matrix& src) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(src.row(i).data(), src.cols(), dst.row(rows[i]).data());
}

}  // namespace dmcf
