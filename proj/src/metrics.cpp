#include "dmcf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dmcf/reference_sph.hpp"

namespace dmcf {

std::vector<Matrix> fluid_positions(const std::vector<ParticleState>& frames) {
  std::vector<Matrix> out;
  for (const auto& f : frames) out.push_back(gather(f.positions, f.fluid_indices()));
  return out;
}

std::vector<Matrix> fluid_velocities(const std::vector<ParticleState>& frames) {
  std::vector<Matrix> out;
  for (const auto& f : frames) out.push_back(gather(f.velocities, f.fluid_indices()));
  return out;
}

namespace {

void check_matched(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) throw InputError("frame counts differ");
  for (std::size_t k = 0; k < a.size(); ++k)
    if (!a[k].same_shape(b[k])) throw InputError("frame shapes differ");
}

double frame_mse(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = a.data()[i] - b.data()[i];
    s += e * e;
  }
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

}  // namespace

double rmse(const std::vector<Matrix>& pred, const std::vector<Matrix>& target) {
  check_matched(pred, target);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    s += frame_mse(pred[k], target[k]) * static_cast<double>(pred[k].size());
    n += pred[k].size();
  }
  return n ? std::sqrt(s / static_cast<double>(n)) : 0.0;
}

std::vector<std::size_t> hungarian(const Matrix& cost) {
  const std::size_t n = cost.rows();
  if (cost.cols() != n) throw InputError("assignment needs a square cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  // Shortest augmenting paths with row/column potentials, 1-based with a
  // virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) assign[p[j] - 1] = j - 1;
  return assign;
}

EmdResult emd(const Matrix& pred, const Matrix& target, std::size_t cap) {
  if (pred.rows() != target.rows()) throw InputError("EMD needs equal particle counts");
  if (pred.rows() > 0 && pred.cols() != target.cols()) throw InputError("EMD dimension mismatch");
  if (pred.rows() > cap) throw InputError("particle count exceeds the exact EMD cap");
  const std::size_t n = pred.rows();
  if (n == 0) return {};
  Matrix cost(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < pred.cols(); ++a) {
        const double e = pred(i, a) - target(j, a);
        s += e * e;
      }
      cost(i, j) = s;
    }
  const auto assign = hungarian(cost);
  EmdResult r;
  for (std::size_t i = 0; i < n; ++i) r.total += cost(i, assign[i]);
  r.mean = r.total / static_cast<double>(n);
  return r;
}

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("histograms differ in size");
  auto kl_to_mix = [](double a, double m) { return a > 0.0 ? a * std::log(a / m) : 0.0; };
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    s += 0.5 * (kl_to_mix(p[i], m) + kl_to_mix(q[i], m));
  }
  return std::max(0.0, s);
}

double jsd_velocity(const std::vector<Matrix>& pred, const std::vector<Matrix>& target, int bins) {
  if (bins < 2) throw InputError("JSD needs at least two bins");
  auto speeds = [](const std::vector<Matrix>& frames) {
    std::vector<double> s;
    for (const auto& f : frames)
      for (std::size_t i = 0; i < f.rows(); ++i) {
        double v2 = 0.0;
        for (double c : f.row(i)) v2 += c * c;
        s.push_back(std::sqrt(v2));
      }
    return s;
  };
  const auto a = speeds(pred);
  const auto b = speeds(target);
  if (a.empty() || b.empty()) return 0.0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : a) lo = std::min(lo, x), hi = std::max(hi, x);
  for (double x : b) lo = std::min(lo, x), hi = std::max(hi, x);
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  auto histogram = [&](const std::vector<double>& xs) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (double x : xs) {
      long k = static_cast<long>(std::floor((x - lo) / width));
      k = std::clamp(k, 0L, static_cast<long>(bins) - 1);
      h[static_cast<std::size_t>(k)] += 1.0;
    }
    for (double& c : h) c /= static_cast<double>(xs.size());
    return h;
  };
  return jsd(histogram(a), histogram(b));
}

SeriesSummary max_density_err(const std::vector<Matrix>& pred, const std::vector<Matrix>& target,
                              double h) {
  check_matched(pred, target);
  SeriesSummary out;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const std::vector<double> mp(pred[k].rows(), 1.0), mt(target[k].rows(), 1.0);
    const auto rp = sph_density(pred[k], mp, h);
    const auto rt = sph_density(target[k], mt, h);
    const double max_p = rp.empty() ? 0.0 : *std::max_element(rp.begin(), rp.end());
    const double max_t = rt.empty() ? 0.0 : *std::max_element(rt.begin(), rt.end());
    if (!(max_t > 0.0)) throw InputError("target frame has zero density");
    out.series.push_back(std::abs(1.0 - max_p / max_t));
  }
  for (double e : out.series) out.mean += e;
  if (!out.series.empty()) out.mean /= static_cast<double>(out.series.size());
  return out;
}

MomentumChange momentum_change(const std::vector<ParticleState>& frames,
                               std::span<const double> gravity, double dt) {
  if (frames.size() < 2) throw InputError("momentum change needs at least two frames");
  if (!(dt > 0.0)) throw InputError("time step must be positive");
  MomentumChange out;
  const std::size_t d = gravity.size();
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    const auto& a = frames[k];
    const auto& b = frames[k + 1];
    if (a.size() != b.size() || a.types != b.types) throw InputError("frames differ in particles");
    std::vector<double> res(d, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.types[i] != ParticleType::fluid) continue;
      for (std::size_t c = 0; c < d; ++c)
        res[c] += a.masses[i] * ((b.velocities(i, c) - a.velocities(i, c)) / dt - gravity[c]);
    }
    double n2 = 0.0;
    for (double r : res) n2 += r * r;
    out.norms.push_back(std::sqrt(n2));
    out.residual.push_back(std::move(res));
  }
  for (double n : out.norms) out.summary += n;
  out.summary /= static_cast<double>(out.norms.size());
  return out;
}

MetricsReport evaluate(const Trajectory& pred, const Trajectory& target,
                       const MetricsOptions& options) {
  const auto pp = fluid_positions(pred.frames);
  const auto tp = fluid_positions(target.frames);
  check_matched(pp, tp);
  MetricsReport r;
  r.rmse = rmse(pp, tp);
  for (std::size_t k = 0; k < pp.size(); ++k) {
    r.rmse_series.push_back(std::sqrt(frame_mse(pp[k], tp[k])));
    const EmdResult e = emd(pp[k], tp[k], options.emd_cap);
    r.emd_series.push_back(e.mean);
    r.emd += e.mean;
    r.emd_total += e.total;
  }
  if (!pp.empty()) {
    r.emd /= static_cast<double>(pp.size());
    r.emd_total /= static_cast<double>(pp.size());
  }
  r.jsd = jsd_velocity(fluid_velocities(pred.frames), fluid_velocities(target.frames), options.bins);
  const auto dens = max_density_err(pp, tp, options.density_support);
  r.max_density_err = dens.mean;
  r.density_series = dens.series;
  r.momentum_series.assign(pred.frames.size(), 0.0);
  if (pred.frames.size() >= 2) {
    const auto m = momentum_change(pred.frames, pred.gravity, pred.dt);
    r.momentum_change = m.summary;
    for (std::size_t k = 0; k < m.norms.size(); ++k) r.momentum_series[k + 1] = m.norms[k];
  }
  return r;
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "frame,rmse,emd,max_density_err,momentum_change\n";
  for (std::size_t k = 0; k < report.rmse_series.size(); ++k)
    os << k << ',' << report.rmse_series[k] << ',' << report.emd_series[k] << ','
       << report.density_series[k] << ',' << report.momentum_series[k] << '\n';
  return os.str();
}

std::string report_summary(const MetricsReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "rmse = " << report.rmse << '\n'
     << "emd = " << report.emd << '\n'
     << "emd_total = " << report.emd_total << '\n'
     << "jsd = " << report.jsd << '\n'
     << "max_density_err = " << report.max_density_err << '\n'
     << "momentum_change = " << report.momentum_change << '\n';
  return os.str();
}

}  // namespace dmcf
