#pragma once

// Weyl coefficients from the eigenfields, and the empirical quantities they
// are compared against: counting-function fits, heat trace, mollified density.

#include "specpart/projections.hpp"
#include "specpart/spectral.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace specpart {

struct XField {
  int n1 = 1, n2 = 1;
  std::vector<double> v;  // v[i1 * n2 + i2]
  double integral() const {  // over the torus
    double s = 0.0;
    for (double x : v) s += x;
    return s * kTwoPi * kTwoPi / static_cast<double>(v.size());
  }
};

struct WeylReport {
  double b_total = 0.0;
  std::vector<int> j;
  std::vector<double> b_per_j;
  std::vector<XField> a1_per_j;
  std::vector<double> a1_integral;
  std::vector<XField> a2_per_j;
  std::vector<double> a2_integral;
  double volume_defect = 0.0;  // |int a_{d-1} - d b|, integrals on a refined grid
  double empirical_b = 0.0;
  double empirical_slope = 0.0;
  double fit_lo = 0.0, fit_hi = 0.0;
};

namespace detail {

inline GridShape weyl_grid(const Component& c, int refine) {
  auto nx = [&](int band) { return band == 0 ? 1 : nice_fft_size(refine * std::max(16, 4 * band + 2)); };
  const int nt = nice_fft_size(refine * std::max(64, 8 * c.bands().t + 4));
  return {nx(c.bands().x1), nx(c.bands().x2), nt};
}

// (1/2) int_0^{2pi} f(x, theta) h(x, theta)^{-2/s} dtheta on every x of the grid.
inline XField sublevel_integral(const FieldGrid& h, const FieldGrid* f, double s) {
  const GridShape& g = h.shape;
  XField out;
  out.n1 = g.n1;
  out.n2 = g.n2;
  out.v.assign(static_cast<std::size_t>(g.n1) * g.n2, 0.0);
  for (int i1 = 0; i1 < g.n1; ++i1)
    for (int i2 = 0; i2 < g.n2; ++i2) {
      double acc = 0.0;
      for (int it = 0; it < g.nt; ++it) {
        const std::size_t p = h.index(i1, i2, it);
        const double hv = h.point(p)[0].real();
        require(hv > 0, ErrorKind::DomainViolation, "nonpositive eigenvalue field for a positive index");
        const double fv = f ? f->point(p)[0].real() : 1.0;
        acc += fv * std::pow(hv, -2.0 / s);
      }
      out.v[static_cast<std::size_t>(i1) * g.n2 + i2] = 0.5 * acc * kTwoPi / g.nt;
    }
  return out;
}

inline GridShape common_shape(const std::vector<const Component*>& cs, int refine) {
  GridShape s{1, 1, 1};
  for (const auto* c : cs) {
    const GridShape t = weyl_grid(*c, refine);
    s.n1 = std::max(s.n1, t.n1);
    s.n2 = std::max(s.n2, t.n2);
    s.nt = std::max(s.nt, t.nt);
  }
  return s;
}

}  // namespace detail

// b = sum_j b_j with b_j the (2 pi)^{-2}-normalized volume of {h^(j) < 1},
// a_{d-1}^(j)(x) = d (2 pi)^{-d} |{xi : h^(j)(x, xi) < 1}|. Only d = 2.
inline WeylReport weyl_leading(const EigenStructure& es) {
  constexpr double d = 2.0;
  WeylReport rep;
  const double s = es.order;
  for (const auto& f : es.fields) {
    if (f.j <= 0) continue;
    const GridShape g1 = detail::weyl_grid(f.h, 1), g2 = detail::weyl_grid(f.h, 2);
    const XField area = detail::sublevel_integral(to_grid(f.h, g1), nullptr, s);
    const XField fine = detail::sublevel_integral(to_grid(f.h, g2), nullptr, s);
    XField a1 = fine;
    for (double& v : a1.v) v *= d / std::pow(kTwoPi, d);
    const double bj = area.integral() / std::pow(kTwoPi, d);
    rep.j.push_back(f.j);
    rep.b_per_j.push_back(bj);
    rep.a1_integral.push_back(a1.integral());
    rep.a1_per_j.push_back(std::move(a1));
    rep.b_total += bj;
  }
  double total_a1 = 0.0;
  for (double v : rep.a1_integral) total_a1 += v;
  rep.volume_defect = std::abs(total_a1 - d * rep.b_total);
  return rep;
}

// a_{d-2}^(j)(x) for a first-order A at d = 2: the sublevel integral of
// tr(P A_sub + (i/2){P, P} A_prin - h (P_j)_sub) with prefactor -d(d-1)/(2 pi)^d.
inline void weyl_second(WeylReport& rep, const Symbol& A, const ProjectionSet& ps, const BandPolicy& pol = {}) {
  require(std::abs(A.order() - 1.0) < 1e-12, ErrorKind::Precondition, "second Weyl coefficient needs order 1");
  require(ps.K >= 1 && A.depth() >= 1, ErrorKind::Precondition, "second Weyl coefficient needs depth >= 1");
  constexpr double d = 2.0;
  const int m = A.m();
  const Component Asub = subprincipal(A, pol);
  const Component& Aprin = A.principal();
  rep.a2_per_j.clear();
  rep.a2_integral.clear();
  for (int j : rep.j) {
    const EigenField& f = ps.eig.field(j);
    const Symbol& Pj = ps.projection(j);
    const Component& P = Pj.principal();
    const Component Psub = subprincipal(Pj, pol);
    const Component PP = poisson_bracket(P, P, pol);
    const Component t1 = product(P, Asub, pol);
    const Component t2 = product(PP, Aprin, pol);
    const GridShape g = detail::common_shape({&f.h, &t1, &t2, &Psub}, 1);
    const FieldGrid hg = to_grid(f.h, g), g1 = to_grid(t1, g), g2 = to_grid(t2, g), g3 = to_grid(Psub, g);
    FieldGrid integrand(g, 1);
    for (std::size_t p = 0; p < g.points(); ++p) {
      Complex tr1{}, tr2{}, tr3{};
      for (int q = 0; q < m; ++q) {
        tr1 += g1.point(p)[q * m + q];
        tr2 += g2.point(p)[q * m + q];
        tr3 += g3.point(p)[q * m + q];
      }
      const Complex val = tr1 + Complex(0, 0.5) * tr2 - (1.0 / (d - 1.0)) * hg.point(p)[0].real() * tr3;
      integrand.point(p)[0] = val;
    }
    XField a2 = detail::sublevel_integral(hg, &integrand, A.order());
    for (double& v : a2.v) v *= -d * (d - 1.0) / std::pow(kTwoPi, d);
    rep.a2_integral.push_back(a2.integral());
    rep.a2_per_j.push_back(std::move(a2));
  }
}

// ---------------------------------------------------------------------------
// Pointwise bracket identities through a locally aligned eigenvector gauge.

struct BracketCheck {
  double generalized_route = 0.0;  // max |{v*, A, v} - (-tr({P,P} A) + h {v*, v})|
  double subprincipal_route = 0.0; // max |{v*, v} - i tr((P_j)_sub)|
  double bracket_scale = 0.0;      // max |{v*, v}|
  int points = 0;
};

namespace detail {

inline CVector aligned_eigenvector(const Component& a, int idx, double x1, double x2, double xi1, double xi2,
                                   const CVector* ref) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(a.evaluate(x1, x2, xi1, xi2));
  CVector v = es.eigenvectors().col(idx);
  if (ref) {
    const Complex o = ref->dot(v);
    if (std::abs(o) > 0) v *= std::conj(o) / std::abs(o);
  }
  return v;
}

}  // namespace detail

inline BracketCheck bracket_identity_check(const Symbol& A, const ProjectionSet& ps, int j, int nx = 6, int nt = 12,
                                           const BandPolicy& pol = {}) {
  const Component& a = A.principal();
  const int idx = j < 0 ? j + ps.eig.m_minus : j - 1 + ps.eig.m_minus;
  const Component& P = ps.projection(j).principal();
  const Component PP = poisson_bracket(P, P, pol);
  const Component Psub = subprincipal(ps.projection(j), pol);
  constexpr double delta = 1e-3;
  BracketCheck out;
  for (int i1 = 0; i1 < nx; ++i1)
    for (int i2 = 0; i2 < nx; ++i2)
      for (int it = 0; it < nt; ++it) {
        const double x[2] = {kTwoPi * (i1 + 0.25) / nx, kTwoPi * (i2 + 0.5) / nx};
        const double th = kTwoPi * (it + 0.125) / nt;
        const double xi[2] = {std::cos(th), std::sin(th)};
        const CVector v0 = detail::aligned_eigenvector(a, idx, x[0], x[1], xi[0], xi[1], nullptr);
        // 4th-order central differences in x_alpha and xi_alpha
        auto deriv = [&](int var) {
          CVector acc = CVector::Zero(v0.size());
          const double w[4] = {1.0, -8.0, 8.0, -1.0};
          const double off[4] = {-2, -1, 1, 2};
          for (int q = 0; q < 4; ++q) {
            double y[4] = {x[0], x[1], xi[0], xi[1]};
            y[var] += off[q] * delta;
            acc += w[q] * detail::aligned_eigenvector(a, idx, y[0], y[1], y[2], y[3], &v0);
          }
          return CVector(acc / (12.0 * delta));
        };
        const CVector vx[2] = {deriv(0), deriv(1)}, vxi[2] = {deriv(2), deriv(3)};
        const CMatrix Am = a.evaluate(x[0], x[1], xi[0], xi[1]);
        Complex gen{}, vv{};
        for (int al = 0; al < 2; ++al) {
          gen += vx[al].dot(Am * vxi[al]) - vxi[al].dot(Am * vx[al]);
          vv += vx[al].dot(vxi[al]) - vxi[al].dot(vx[al]);
        }
        const double h = (v0.adjoint() * Am * v0)(0, 0).real();
        const Complex trPPA = (PP.evaluate(x[0], x[1], xi[0], xi[1]) * Am).trace();
        const Complex trPsub = Psub.evaluate(x[0], x[1], xi[0], xi[1]).trace();
        out.generalized_route = std::max(out.generalized_route, std::abs(gen - (-trPPA + h * vv)));
        out.subprincipal_route = std::max(out.subprincipal_route, std::abs(vv - Complex(0, 1) * trPsub));
        out.bracket_scale = std::max(out.bracket_scale, std::abs(vv));
        ++out.points;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Empirical fits.

struct WeylFit {
  double b = 0.0;
  double slope = 0.0;
  double lo = 0.0, hi = 0.0;
  int samples = 0;
};

// log N+ against log lambda, N+ sampled halfway between consecutive distinct
// eigenvalues in [lo, hi]; b from the intercept.
inline WeylFit fit_counting(const std::vector<double>& positive_sorted, double lo, double hi) {
  std::vector<double> x, y;
  const auto& ev = positive_sorted;
  for (std::size_t i = 0; i + 1 < ev.size(); ++i) {
    if (!(ev[i + 1] > ev[i] * (1 + 1e-12) + 1e-14)) continue;
    const double mid = 0.5 * (ev[i] + ev[i + 1]);
    if (mid < lo || mid > hi) continue;
    x.push_back(std::log(mid));
    y.push_back(std::log(static_cast<double>(i + 1)));
  }
  require(x.size() >= 2, ErrorKind::Precondition, "too few distinct eigenvalues in the fit window");
  const LineFit f = fit_line(x, y);
  return {std::exp(f.intercept), f.slope, lo, hi, static_cast<int>(x.size())};
}

inline WeylFit empirical_weyl_fit(const SpectrumRecord& rec) {
  const std::vector<double> ev = rec.positive(true);
  require(ev.size() >= 50, ErrorKind::Precondition,
          "empirical Weyl fit needs at least 50 trusted positive eigenvalues (have " + std::to_string(ev.size()) + ")");
  return fit_counting(ev, rec.trusted_max / 2, rec.trusted_max);
}

struct HeatScaling {
  std::vector<double> t, scaled;  // t^{d/s} f(t)
  double lo = 0, hi = 0;
};

// t in [8, 12] / (h_min Lambda^s): the damping at the lattice edge stays below e^{-8}.
inline HeatScaling heat_scaling(const SpectrumRecord& rec, double h_min, double s, double d = 2.0, int samples = 9) {
  HeatScaling out;
  const double scale = h_min * std::pow(static_cast<double>(rec.Lambda), s);
  out.lo = 8.0 / scale;
  out.hi = 12.0 / scale;
  for (int i = 0; i < samples; ++i) {
    const double t = out.lo + (out.hi - out.lo) * i / (samples - 1);
    out.t.push_back(t);
    out.scaled.push_back(std::pow(t, d / s) * heat_trace(rec, t, false));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mollified spectral density.

// C-infinity bump: 1 on [-T0/4, T0/4], 0 outside (-T0, T0).
inline double bump_hat(double t, double T0) {
  const double a = std::abs(t);
  if (a <= T0 / 4) return 1.0;
  if (a >= T0) return 0.0;
  const double u = (a - T0 / 4) / (0.75 * T0);
  auto g = [](double x) { return x <= 0 ? 0.0 : std::exp(-1.0 / x); };
  return g(1 - u) / (g(1 - u) + g(u));
}

class Mollifier {
 public:
  explicit Mollifier(double T0 = 1.0, int nodes = 4096) : T0_(T0) {
    require(T0 > 0, ErrorKind::Precondition, "mollifier needs T0 > 0");
    t_.resize(nodes + 1);
    w_.resize(nodes + 1);
    const double h = T0 / nodes;
    for (int i = 0; i <= nodes; ++i) {
      t_[i] = i * h;
      w_[i] = (i == 0 || i == nodes ? 0.5 : 1.0) * h * bump_hat(t_[i], T0) / kPi;
    }
  }
  double T0() const { return T0_; }
  double operator()(double u) const {
    double s = 0.0;
    for (std::size_t i = 0; i < t_.size(); ++i) s += w_[i] * std::cos(u * t_[i]);
    return s;
  }
  // antiderivative with M(-inf) = 0
  double cumulative(double u) const {
    double s = 0.5;
    for (std::size_t i = 0; i < t_.size(); ++i) s += w_[i] * (i == 0 ? u : std::sin(u * t_[i]) / t_[i]);
    return s;
  }
  const std::vector<double>& nodes() const { return t_; }
  const std::vector<double>& weights() const { return w_; }

 private:
  double T0_;
  std::vector<double> t_, w_;
};

// sum_k mu(lambda - lambda_k) over a fixed set of eigenvalues.
class SpectralDensity {
 public:
  SpectralDensity(const std::vector<double>& eigenvalues, const Mollifier& mu) : mu_(mu), S_(mu.nodes().size()) {
    const auto& t = mu.nodes();
    for (std::size_t i = 0; i < t.size(); ++i) {
      Complex acc{};
      for (double l : eigenvalues) acc += std::polar(1.0, -l * t[i]);
      S_[i] = acc;
    }
  }
  double operator()(double lam) const {
    const auto& t = mu_.nodes();
    const auto& w = mu_.weights();
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += w[i] * (std::polar(1.0, lam * t[i]) * S_[i]).real();
    return acc;
  }

 private:
  const Mollifier& mu_;
  std::vector<Complex> S_;
};

inline std::vector<double> mollified_density(const std::vector<double>& eigenvalues, const Mollifier& mu,
                                             const std::vector<double>& grid) {
  const SpectralDensity rho(eigenvalues, mu);
  std::vector<double> out;
  for (double lam : grid) out.push_back(rho(lam));
  return out;
}

inline std::vector<double> mollified_density(const SpectrumRecord& rec, const Mollifier& mu,
                                             const std::vector<double>& grid) {
  return mollified_density(rec.positive(false), mu, grid);
}

// int_a^b of the density, in closed form.
inline double smoothed_count(const std::vector<double>& eigenvalues, const Mollifier& mu, double a, double b) {
  double s = 0.0;
  for (double l : eigenvalues) s += mu.cumulative(b - l) - mu.cumulative(a - l);
  return s;
}

// The same integral by adaptive quadrature of the sampled density.
inline double integrate_density(const std::vector<double>& eigenvalues, const Mollifier& mu, double a, double b) {
  const SpectralDensity rho(eigenvalues, mu);
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(rho, a, b, 10, 1e-14);
}

// x-resolved density sum_k |v_k(x)|^2 mu(lambda - lambda_k), trusted eigenvalues only.
inline std::vector<std::vector<double>> local_mollified_density(const SpectrumRecord& rec, const Mollifier& mu,
                                                                const std::vector<double>& grid,
                                                                const std::vector<std::array<double, 2>>& xs) {
  const Lattice lat{rec.Lambda, rec.m};
  std::vector<std::vector<double>> out(grid.size(), std::vector<double>(xs.size(), 0.0));
  for (int i : rec.positive_indices(true)) {
    const CVector v = rec.eigenvector(i);
    for (std::size_t p = 0; p < xs.size(); ++p) {
      std::vector<Complex> comp(rec.m, Complex{});
      for (int q = 0; q < rec.n; ++q) {
        if (v(q) == Complex{}) continue;
        const auto md = lat.mode(q);
        comp[md[2]] += v(q) * std::polar(1.0, md[0] * xs[p][0] + md[1] * xs[p][1]) / kTwoPi;
      }
      double amp = 0.0;
      for (auto c : comp) amp += std::norm(c);
      for (std::size_t g = 0; g < grid.size(); ++g) out[g][p] += amp * mu(grid[g] - rec.eigenvalues(i));
    }
  }
  return out;
}

struct DensityFit {
  double a1 = 0.0;  // coefficient of lambda^{d-1}
  double a0 = 0.0;
  double lo = 0, hi = 0;
};

// Least squares density ~ a1 lambda + a0 at d = 2.
inline DensityFit fit_density(const SpectrumRecord& rec, const Mollifier& mu, int samples = 64) {
  DensityFit out;
  out.lo = rec.trusted_max / 2;
  out.hi = rec.trusted_max;
  std::vector<double> grid;
  for (int i = 0; i < samples; ++i) grid.push_back(out.lo + (out.hi - out.lo) * i / (samples - 1));
  const std::vector<double> rho = mollified_density(rec, mu, grid);
  const LineFit f = fit_line(grid, rho);
  out.a1 = f.slope;
  out.a0 = f.intercept;
  return out;
}

}  // namespace specpart
