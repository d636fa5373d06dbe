#pragma once

// Matrix-valued polyhomogeneous symbols on T^2 x (R^2 \ 0).
//
// A homogeneous component of degree d stores Fourier coefficients in x and in
// the polar angle of xi:
//   a(x, xi) = |xi|^d * sum_{k1,k2,n} c[k1][k2][n] e^{i(k1 x1 + k2 x2)} e^{i n theta}
// with c an m x m matrix. Derivatives in x and xi act exactly on this basis.

#include "specpart/core.hpp"
#include "specpart/fft.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace specpart {

struct Bands {
  int x1 = 0;
  int x2 = 0;
  int t = 0;
  friend bool operator==(const Bands&, const Bands&) = default;
};

inline Bands band_union(Bands a, Bands b) {
  return {std::max(a.x1, b.x1), std::max(a.x2, b.x2), std::max(a.t, b.t)};
}

struct BandPolicy {
  int x_band = 28;
  int theta_band = 36;
  double band_tol = 1e-10;   // hard limit on discarded l1 coefficient mass
  double trim_tol = 1e-13;   // mass that may be shed to shrink bands
  double prune_rel = 1e-15;  // entries below prune_rel * max|c| are flushed to zero
};

class HomogeneousComponent {
 public:
  HomogeneousComponent() = default;
  HomogeneousComponent(int m, double degree, Bands b) : degree_(degree), m_(m), b_(b) {
    require(m >= 1 && b.x1 >= 0 && b.x2 >= 0 && b.t >= 0, ErrorKind::Precondition, "bad component shape");
    c_.assign(size(), Complex{});
  }

  double degree() const { return degree_; }
  void set_degree(double d) { degree_ = d; }
  int m() const { return m_; }
  const Bands& bands() const { return b_; }
  int w1() const { return 2 * b_.x1 + 1; }
  int w2() const { return 2 * b_.x2 + 1; }
  int wt() const { return 2 * b_.t + 1; }
  std::size_t size() const { return static_cast<std::size_t>(w1()) * w2() * wt() * m_ * m_; }
  std::vector<Complex>& data() { return c_; }
  const std::vector<Complex>& data() const { return c_; }

  bool in_band(int k1, int k2, int n) const {
    return std::abs(k1) <= b_.x1 && std::abs(k2) <= b_.x2 && std::abs(n) <= b_.t;
  }
  std::size_t block(int k1, int k2, int n) const {
    return ((static_cast<std::size_t>(k1 + b_.x1) * w2() + (k2 + b_.x2)) * wt() + (n + b_.t)) * m_ * m_;
  }
  Complex& at(int k1, int k2, int n, int p, int q) { return c_[block(k1, k2, n) + p * m_ + q]; }
  Complex at(int k1, int k2, int n, int p, int q) const {
    if (!in_band(k1, k2, n)) return {};
    return c_[block(k1, k2, n) + p * m_ + q];
  }
  // m x m coefficient matrix at (k, n); zero outside the bands.
  CMatrix coeff(int k1, int k2, int n) const {
    CMatrix out = CMatrix::Zero(m_, m_);
    if (!in_band(k1, k2, n)) return out;
    const Complex* p = &c_[block(k1, k2, n)];
    for (int r = 0; r < m_; ++r)
      for (int s = 0; s < m_; ++s) out(r, s) = p[r * m_ + s];
    return out;
  }

  template <class F>
  void for_each_mode(F&& f) const {
    for (int k1 = -b_.x1; k1 <= b_.x1; ++k1)
      for (int k2 = -b_.x2; k2 <= b_.x2; ++k2)
        for (int n = -b_.t; n <= b_.t; ++n) f(k1, k2, n, &c_[block(k1, k2, n)]);
  }

  // Value at (x, xi) with xi given in polar form.
  CMatrix evaluate_polar(double x1, double x2, double r, double theta) const {
    CMatrix out = CMatrix::Zero(m_, m_);
    const double scale = std::pow(r, degree_);
    for_each_mode([&](int k1, int k2, int n, const Complex* c) {
      const Complex ph = std::polar(1.0, k1 * x1 + k2 * x2 + n * theta);
      for (int p = 0; p < m_; ++p)
        for (int q = 0; q < m_; ++q) out(p, q) += c[p * m_ + q] * ph;
    });
    return out * scale;
  }
  CMatrix evaluate(double x1, double x2, double xi1, double xi2) const {
    return evaluate_polar(x1, x2, std::hypot(xi1, xi2), std::atan2(xi2, xi1));
  }

  double l1_mass() const {
    double s = 0;
    for (const auto& z : c_) s += std::abs(z);
    return s;
  }
  double max_abs() const {
    double s = 0;
    for (const auto& z : c_) s = std::max(s, std::abs(z));
    return s;
  }
  bool is_zero() const {
    return std::all_of(c_.begin(), c_.end(), [](const Complex& z) { return z == Complex{}; });
  }

  // Copy into new bands, dropping anything outside them.
  HomogeneousComponent rebanded(Bands nb) const {
    HomogeneousComponent out(m_, degree_, nb);
    for_each_mode([&](int k1, int k2, int n, const Complex* c) {
      if (!out.in_band(k1, k2, n)) return;
      std::copy(c, c + m_ * m_, &out.c_[out.block(k1, k2, n)]);
    });
    return out;
  }

 private:
  double degree_ = 0.0;
  int m_ = 1;
  Bands b_{};
  std::vector<Complex> c_;
};

using Component = HomogeneousComponent;

// y += alpha * x, growing y's bands when needed.
inline void axpy(Component& y, Complex alpha, const Component& x) {
  require(y.m() == x.m(), ErrorKind::DimensionMismatch, "axpy matrix size");
  if (!(band_union(y.bands(), x.bands()) == y.bands())) y = y.rebanded(band_union(y.bands(), x.bands()));
  const int mm = x.m() * x.m();
  x.for_each_mode([&](int k1, int k2, int n, const Complex* c) {
    Complex* dst = &y.data()[y.block(k1, k2, n)];
    for (int i = 0; i < mm; ++i) dst[i] += alpha * c[i];
  });
}

inline Component operator+(const Component& a, const Component& b) {
  Component out = a;
  axpy(out, 1.0, b);
  return out;
}
inline Component operator-(const Component& a, const Component& b) {
  Component out = a;
  axpy(out, -1.0, b);
  return out;
}
inline Component operator*(Complex s, const Component& a) {
  Component out = a;
  for (auto& z : out.data()) z *= s;
  return out;
}

// Discards small coefficients and shrinks bands to the policy caps. Returns the
// discarded l1 mass; throws BandOverflow when it exceeds band_tol.
inline double trim(Component& c, const BandPolicy& pol) {
  const double maxabs = c.max_abs();
  double discarded = 0.0;
  if (maxabs == 0.0) {
    c = Component(c.m(), c.degree(), Bands{});
    return 0.0;
  }
  for (auto& z : c.data()) {
    if (z != Complex{} && std::abs(z) < pol.prune_rel * maxabs) {
      discarded += std::abs(z);
      z = {};
    }
  }
  const int mm = c.m() * c.m();
  Bands nb = c.bands();
  double budget = pol.trim_tol;
  for (int axis = 0; axis < 3; ++axis) {
    int* band = axis == 0 ? &nb.x1 : axis == 1 ? &nb.x2 : &nb.t;
    const int cap = axis == 2 ? pol.theta_band : pol.x_band;
    std::vector<double> shell(*band + 1, 0.0);
    c.for_each_mode([&](int k1, int k2, int n, const Complex* v) {
      if (!c.in_band(k1, k2, n)) return;
      if (std::abs(k1) > nb.x1 || std::abs(k2) > nb.x2 || std::abs(n) > nb.t) return;
      const int r = std::abs(axis == 0 ? k1 : axis == 1 ? k2 : n);
      for (int i = 0; i < mm; ++i) shell[r] += std::abs(v[i]);
    });
    const double axis_budget = budget / (3 - axis);
    double forced = 0.0, removed = 0.0;
    // Forced removal beyond the cap is charged against band_tol, not the trim budget.
    while (*band > 0) {
      if (*band > cap) {
        forced += shell[*band];
      } else if (removed + shell[*band] <= axis_budget) {
        removed += shell[*band];
      } else {
        break;
      }
      --*band;
    }
    budget -= removed;
    discarded += forced + removed;
  }
  if (!(nb == c.bands())) c = c.rebanded(nb);
  require(discarded <= pol.band_tol, ErrorKind::BandOverflow,
          "discarded coefficient mass " + std::to_string(discarded) + " exceeds band_tol");
  return discarded;
}

// ---------------------------------------------------------------------------
// Exact derivatives in coefficient space.

// d/dx_axis, axis in {1, 2}.
inline Component d_x(const Component& a, int axis) {
  Component out = a;
  const int mm = a.m() * a.m();
  a.for_each_mode([&](int k1, int k2, int n, const Complex*) {
    const Complex f = kI * static_cast<double>(axis == 1 ? k1 : k2);
    Complex* dst = &out.data()[out.block(k1, k2, n)];
    for (int i = 0; i < mm; ++i) dst[i] *= f;
  });
  return out;
}

// d/dxi_axis, axis in {1, 2}. Lowers the degree by one and widens the angular band.
//   d/dxi1 (r^d e^{in t}) = r^{d-1} [ (d-n)/2 e^{i(n+1)t} + (d+n)/2 e^{i(n-1)t} ]
//   d/dxi2 (r^d e^{in t}) = r^{d-1} [ -i(d-n)/2 e^{i(n+1)t} + i(d+n)/2 e^{i(n-1)t} ]
inline Component d_xi(const Component& a, int axis) {
  Bands nb = a.bands();
  nb.t += 1;
  Component out(a.m(), a.degree() - 1.0, nb);
  const double d = a.degree();
  const int mm = a.m() * a.m();
  a.for_each_mode([&](int k1, int k2, int n, const Complex* c) {
    Complex up = (d - n) / 2.0;
    Complex dn = (d + n) / 2.0;
    if (axis == 2) {
      up *= -kI;
      dn *= kI;
    }
    Complex* u = &out.data()[out.block(k1, k2, n + 1)];
    Complex* w = &out.data()[out.block(k1, k2, n - 1)];
    for (int i = 0; i < mm; ++i) {
      u[i] += up * c[i];
      w[i] += dn * c[i];
    }
  });
  return out;
}

// Pointwise conjugate transpose: c*_{k,n} = conj(c_{-k,-n})^T.
inline Component star(const Component& a) {
  Component out(a.m(), a.degree(), a.bands());
  const int m = a.m();
  a.for_each_mode([&](int k1, int k2, int n, const Complex* c) {
    Complex* dst = &out.data()[out.block(-k1, -k2, -n)];
    for (int p = 0; p < m; ++p)
      for (int q = 0; q < m; ++q) dst[q * m + p] = std::conj(c[p * m + q]);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sample grids at |xi| = 1. Layout [i1][i2][it][p][q], x_a = 2 pi i_a / n_a,
// theta = 2 pi it / nt.

struct GridShape {
  int n1 = 1;
  int n2 = 1;
  int nt = 1;
  std::size_t points() const { return static_cast<std::size_t>(n1) * n2 * nt; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

// Smallest FFT-friendly grid that represents bands b exactly.
inline GridShape grid_for(Bands b) {
  auto n = [](int band) { return band == 0 ? 1 : nice_fft_size(2 * band + 1); };
  return {n(b.x1), n(b.x2), n(b.t)};
}

struct FieldGrid {
  GridShape shape;
  int m = 1;
  std::vector<Complex> v;

  FieldGrid() = default;
  FieldGrid(GridShape s, int m_) : shape(s), m(m_), v(s.points() * m_ * m_, Complex{}) {}
  Complex* point(std::size_t g) { return v.data() + g * m * m; }
  const Complex* point(std::size_t g) const { return v.data() + g * m * m; }
  std::size_t index(int i1, int i2, int it) const {
    return (static_cast<std::size_t>(i1) * shape.n2 + i2) * shape.nt + it;
  }
};

inline FieldGrid to_grid(const Component& a, GridShape s) {
  const Bands& b = a.bands();
  require(s.n1 >= 2 * b.x1 + 1 && s.n2 >= 2 * b.x2 + 1 && s.nt >= 2 * b.t + 1, ErrorKind::BandOverflow,
          "grid too coarse for component bands");
  FieldGrid g(s, a.m());
  const int mm = a.m() * a.m();
  a.for_each_mode([&](int k1, int k2, int n, const Complex* c) {
    const int i1 = (k1 + s.n1) % s.n1, i2 = (k2 + s.n2) % s.n2, it = (n + s.nt) % s.nt;
    Complex* dst = g.point(g.index(i1, i2, it));
    for (int i = 0; i < mm; ++i) dst[i] = c[i];
  });
  fft3(g.v, s.n1, s.n2, s.nt, mm, +1);
  return g;
}

// Analysis of grid values into a component of the given degree, then trim.
inline Component from_grid(FieldGrid g, double degree, const BandPolicy& pol) {
  const GridShape s = g.shape;
  const int mm = g.m * g.m;
  fft3(g.v, s.n1, s.n2, s.nt, mm, -1);
  const double inv = 1.0 / static_cast<double>(s.points());
  Bands b{(s.n1 - 1) / 2, (s.n2 - 1) / 2, (s.nt - 1) / 2};
  Component out(g.m, degree, b);
  for (int k1 = -b.x1; k1 <= b.x1; ++k1)
    for (int k2 = -b.x2; k2 <= b.x2; ++k2)
      for (int n = -b.t; n <= b.t; ++n) {
        const int i1 = (k1 + s.n1) % s.n1, i2 = (k2 + s.n2) % s.n2, it = (n + s.nt) % s.nt;
        const Complex* src = g.point(g.index(i1, i2, it));
        Complex* dst = &out.data()[out.block(k1, k2, n)];
        for (int i = 0; i < mm; ++i) dst[i] = src[i] * inv;
      }
  trim(out, pol);
  return out;
}

// acc += alpha * A * B pointwise.
inline void grid_gemm_acc(FieldGrid& acc, Complex alpha, const FieldGrid& a, const FieldGrid& b) {
  const int m = a.m;
  const std::size_t np = a.shape.points();
  for (std::size_t g = 0; g < np; ++g) {
    const Complex* pa = a.point(g);
    const Complex* pb = b.point(g);
    Complex* pc = acc.point(g);
    for (int p = 0; p < m; ++p)
      for (int r = 0; r < m; ++r) {
        const Complex ar = alpha * pa[p * m + r];
        if (ar == Complex{}) continue;
        for (int q = 0; q < m; ++q) pc[p * m + q] += ar * pb[r * m + q];
      }
  }
}

// acc += alpha * A * B * C pointwise.
inline void grid_gemm3_acc(FieldGrid& acc, Complex alpha, const FieldGrid& a, const FieldGrid& b,
                           const FieldGrid& c) {
  const int m = a.m;
  FieldGrid ab(a.shape, m);
  grid_gemm_acc(ab, 1.0, a, b);
  grid_gemm_acc(acc, alpha, ab, c);
}

// Pointwise matrix product of two components.
inline Component product(const Component& a, const Component& b, const BandPolicy& pol) {
  require(a.m() == b.m(), ErrorKind::DimensionMismatch, "product matrix size");
  const Bands& ba = a.bands();
  const Bands& bb = b.bands();
  GridShape s = grid_for({ba.x1 + bb.x1, ba.x2 + bb.x2, ba.t + bb.t});
  FieldGrid acc(s, a.m());
  grid_gemm_acc(acc, 1.0, to_grid(a, s), to_grid(b, s));
  return from_grid(std::move(acc), a.degree() + b.degree(), pol);
}

// Component of the given degree from a function f(x1, x2, theta) -> m x m
// matrix sampled on a grid resolving bands b.
template <class F>
Component sample_component(int m, double degree, Bands b, F&& f, const BandPolicy& pol = {}) {
  const GridShape s = grid_for(b);
  FieldGrid g(s, m);
  for (int i1 = 0; i1 < s.n1; ++i1)
    for (int i2 = 0; i2 < s.n2; ++i2)
      for (int it = 0; it < s.nt; ++it) {
        const CMatrix v = f(kTwoPi * i1 / s.n1, kTwoPi * i2 / s.n2, kTwoPi * it / s.nt);
        Complex* dst = g.point(g.index(i1, i2, it));
        for (int p = 0; p < m; ++p)
          for (int q = 0; q < m; ++q) dst[p * m + q] = v(p, q);
      }
  return from_grid(std::move(g), degree, pol);
}

// Max over a sample grid at |xi| = 1 of the pointwise spectral norm.
inline double component_norm(const Component& a) {
  if (a.is_zero()) return 0.0;
  const Bands& b = a.bands();
  auto n = [](int band) { return band == 0 ? 1 : nice_fft_size(std::max(4 * band + 2, 16)); };
  GridShape s{n(b.x1), n(b.x2), nice_fft_size(std::max(4 * b.t + 2, 32))};
  FieldGrid g = to_grid(a, s);
  const int m = a.m();
  double best = 0.0;
  CMatrix mat(m, m);
  for (std::size_t p = 0; p < s.points(); ++p) {
    const Complex* v = g.point(p);
    for (int r = 0; r < m; ++r)
      for (int q = 0; q < m; ++q) mat(r, q) = v[r * m + q];
    if (m == 1) {
      best = std::max(best, std::abs(mat(0, 0)));
    } else {
      Eigen::SelfAdjointEigenSolver<CMatrix> es(mat.adjoint() * mat, Eigen::EigenvaluesOnly);
      best = std::max(best, std::sqrt(std::max(0.0, es.eigenvalues()(m - 1))));
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Symbols.

class Symbol {
 public:
  Symbol() = default;
  Symbol(int m, double order) : m_(m), order_(order) {}
  Symbol(int m, double order, std::vector<Component> comps) : m_(m), order_(order), comps_(std::move(comps)) {
    validate();
  }

  int m() const { return m_; }
  double order() const { return order_; }
  int depth() const { return static_cast<int>(comps_.size()) - 1; }
  const std::vector<Component>& components() const { return comps_; }
  const Component& component(int i) const { return comps_.at(i); }
  Component& component(int i) { return comps_.at(i); }
  const Component& principal() const { return comps_.at(0); }

  void push(Component c) {
    require(c.m() == m_, ErrorKind::DimensionMismatch, "component matrix size");
    require(std::abs(c.degree() - (order_ - static_cast<double>(comps_.size()))) < 1e-12, ErrorKind::Precondition,
            "component degrees must decrease by exactly one");
    comps_.push_back(std::move(c));
  }

  void validate() const {
    for (std::size_t i = 0; i < comps_.size(); ++i) {
      require(comps_[i].m() == m_, ErrorKind::DimensionMismatch, "component matrix size");
      require(std::abs(comps_[i].degree() - (order_ - static_cast<double>(i))) < 1e-12, ErrorKind::Precondition,
              "component degrees must decrease by exactly one");
    }
  }

  // Components beyond the new depth dropped, zero components appended if deeper.
  Symbol truncated(int K) const {
    Symbol out(m_, order_);
    for (int i = 0; i <= K; ++i)
      out.comps_.push_back(i <= depth() ? comps_[i] : Component(m_, order_ - i, Bands{}));
    return out;
  }

  CMatrix evaluate(double x1, double x2, double xi1, double xi2) const {
    CMatrix out = CMatrix::Zero(m_, m_);
    for (const auto& c : comps_) out += c.evaluate(x1, x2, xi1, xi2);
    return out;
  }

 private:
  int m_ = 1;
  double order_ = 0.0;
  std::vector<Component> comps_;
};

inline Symbol operator+(const Symbol& a, const Symbol& b) {
  require(a.m() == b.m() && a.order() == b.order(), ErrorKind::DimensionMismatch, "symbol sum shape");
  const int K = std::min(a.depth(), b.depth());
  Symbol out(a.m(), a.order());
  for (int i = 0; i <= K; ++i) out.push(a.component(i) + b.component(i));
  return out;
}
inline Symbol operator-(const Symbol& a, const Symbol& b) {
  require(a.m() == b.m() && a.order() == b.order(), ErrorKind::DimensionMismatch, "symbol difference shape");
  const int K = std::min(a.depth(), b.depth());
  Symbol out(a.m(), a.order());
  for (int i = 0; i <= K; ++i) out.push(a.component(i) - b.component(i));
  return out;
}
inline Symbol operator*(Complex s, const Symbol& a) {
  Symbol out(a.m(), a.order());
  for (const auto& c : a.components()) out.push(s * c);
  return out;
}

// Constant matrix multiplier M |xi|^degree as a single component.
inline Component constant_component(const CMatrix& M, double degree) {
  Component c(static_cast<int>(M.rows()), degree, Bands{});
  for (int p = 0; p < M.rows(); ++p)
    for (int q = 0; q < M.cols(); ++q) c.at(0, 0, 0, p, q) = M(p, q);
  return c;
}

inline Symbol identity_symbol(int m, int K) {
  Symbol out(m, 0.0);
  out.push(constant_component(CMatrix::Identity(m, m), 0.0));
  for (int i = 1; i <= K; ++i) out.push(Component(m, -static_cast<double>(i), Bands{}));
  return out;
}

inline double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

inline Symbol trim_all(Symbol s, const BandPolicy& pol) {
  for (int i = 0; i <= s.depth(); ++i) trim(s.component(i), pol);
  return s;
}

// Left-symbol composition truncated at `depth` lower orders:
//   sum_{|alpha|<=depth} (-i)^{|alpha|}/alpha! d_xi^alpha a * d_x^alpha b.
inline Symbol compose(const Symbol& a, const Symbol& b, int depth, const BandPolicy& pol = {}) {
  require(a.m() == b.m(), ErrorKind::DimensionMismatch, "compose: matrix sizes differ");
  require(depth >= 0 && depth <= std::min(a.depth(), b.depth()), ErrorKind::DepthOverflow,
          "compose: depth exceeds stored truncation");
  const int m = a.m();
  Bands ba{}, bb{};
  for (int i = 0; i <= depth; ++i) {
    ba = band_union(ba, a.component(i).bands());
    bb = band_union(bb, b.component(i).bands());
  }
  const GridShape s = grid_for({ba.x1 + bb.x1, ba.x2 + bb.x2, ba.t + bb.t + depth});
  std::vector<FieldGrid> acc(depth + 1, FieldGrid(s, m));
  std::vector<bool> touched(depth + 1, false);

  for (int i = 0; i <= depth; ++i) {
    if (a.component(i).is_zero()) continue;
    for (int order = 0; i + order <= depth; ++order) {
      for (int a1 = order; a1 >= 0; --a1) {
        const int a2 = order - a1;
        Component da = a.component(i);
        for (int r = 0; r < a1; ++r) da = d_xi(da, 1);
        for (int r = 0; r < a2; ++r) da = d_xi(da, 2);
        if (da.is_zero()) continue;
        const FieldGrid ga = to_grid(da, s);
        Complex coef = std::pow(-kI, order) / (factorial(a1) * factorial(a2));
        for (int j = 0; i + j + order <= depth; ++j) {
          if (b.component(j).is_zero()) continue;
          Component db = b.component(j);
          for (int r = 0; r < a1; ++r) db = d_x(db, 1);
          for (int r = 0; r < a2; ++r) db = d_x(db, 2);
          if (db.is_zero()) continue;
          const int t = i + j + order;
          grid_gemm_acc(acc[t], coef, ga, to_grid(db, s));
          touched[t] = true;
        }
      }
    }
  }
  Symbol out(m, a.order() + b.order());
  for (int t = 0; t <= depth; ++t) {
    const double deg = out.order() - t;
    out.push(touched[t] ? from_grid(std::move(acc[t]), deg, pol) : Component(m, deg, Bands{}));
  }
  return out;
}

// Left-symbol adjoint truncated at `depth`:
//   sum_{|alpha|<=depth} (-i)^{|alpha|}/alpha! d_xi^alpha d_x^alpha a*.
inline Symbol adjoint_symbol(const Symbol& a, int depth, const BandPolicy& pol = {}) {
  require(depth >= 0 && depth <= a.depth(), ErrorKind::DepthOverflow, "adjoint: depth exceeds stored truncation");
  const int m = a.m();
  std::vector<Component> out;
  for (int t = 0; t <= depth; ++t) out.emplace_back(m, a.order() - t, Bands{});
  for (int i = 0; i <= depth; ++i) {
    const Component s = star(a.component(i));
    if (s.is_zero()) continue;
    for (int order = 0; i + order <= depth; ++order)
      for (int a1 = order; a1 >= 0; --a1) {
        const int a2 = order - a1;
        Component d = s;
        for (int r = 0; r < a1; ++r) d = d_x(d_xi(d, 1), 1);
        for (int r = 0; r < a2; ++r) d = d_x(d_xi(d, 2), 2);
        axpy(out[i + order], std::pow(-kI, order) / (factorial(a1) * factorial(a2)), d);
      }
  }
  Symbol res(m, a.order());
  for (auto& c : out) {
    trim(c, pol);
    res.push(std::move(c));
  }
  return res;
}

// (a + a^*) / 2 with the asymptotic adjoint.
inline Symbol symmetrize(const Symbol& a, int depth, const BandPolicy& pol = {}) {
  Symbol adj = adjoint_symbol(a, depth, pol);
  Symbol out(a.m(), a.order());
  for (int i = 0; i <= depth; ++i) {
    Component c = 0.5 * (a.component(i) + adj.component(i));
    trim(c, pol);
    out.push(std::move(c));
  }
  return out;
}

// {B, C} = sum_a (B_{x_a} C_{xi_a} - B_{xi_a} C_{x_a}).
inline Component poisson_bracket(const Component& B, const Component& C, const BandPolicy& pol = {}) {
  require(B.m() == C.m(), ErrorKind::DimensionMismatch, "poisson_bracket: matrix sizes differ");
  const Bands b1 = B.bands(), b2 = C.bands();
  const GridShape s = grid_for({b1.x1 + b2.x1, b1.x2 + b2.x2, b1.t + b2.t + 1});
  FieldGrid acc(s, B.m());
  for (int ax = 1; ax <= 2; ++ax) {
    grid_gemm_acc(acc, 1.0, to_grid(d_x(B, ax), s), to_grid(d_xi(C, ax), s));
    grid_gemm_acc(acc, -1.0, to_grid(d_xi(B, ax), s), to_grid(d_x(C, ax), s));
  }
  return from_grid(std::move(acc), B.degree() + C.degree() - 1.0, pol);
}

// {B, C, D} = sum_a (B_{x_a} C D_{xi_a} - B_{xi_a} C D_{x_a}).
inline Component generalized_bracket(const Component& B, const Component& C, const Component& D,
                                     const BandPolicy& pol = {}) {
  require(B.m() == C.m() && C.m() == D.m(), ErrorKind::DimensionMismatch,
          "generalized_bracket: matrix sizes differ");
  const Bands b1 = B.bands(), b2 = C.bands(), b3 = D.bands();
  const GridShape s = grid_for({b1.x1 + b2.x1 + b3.x1, b1.x2 + b2.x2 + b3.x2, b1.t + b2.t + b3.t + 1});
  FieldGrid acc(s, B.m());
  const FieldGrid gc = to_grid(C, s);
  for (int ax = 1; ax <= 2; ++ax) {
    grid_gemm3_acc(acc, 1.0, to_grid(d_x(B, ax), s), gc, to_grid(d_xi(D, ax), s));
    grid_gemm3_acc(acc, -1.0, to_grid(d_xi(B, ax), s), gc, to_grid(d_x(D, ax), s));
  }
  return from_grid(std::move(acc), B.degree() + C.degree() + D.degree() - 1.0, pol);
}

// a_sub = a_{s-1} + (i/2) sum_a d_{x_a} d_{xi_a} a_s.
inline Component subprincipal(const Symbol& a, const BandPolicy& pol = {}) {
  require(a.depth() >= 1, ErrorKind::DepthOverflow, "subprincipal: missing subleading component");
  Component out = a.component(1);
  for (int ax = 1; ax <= 2; ++ax) axpy(out, 0.5 * kI, d_x(d_xi(a.principal(), ax), ax));
  trim(out, pol);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization.

inline constexpr std::string_view kSymbolMagic = "SPSYM1";

inline void write_symbol(BinaryWriter& w, const Symbol& a) {
  w.put_bytes(kSymbolMagic);
  w.put<std::int32_t>(a.m());
  w.put<double>(a.order());
  w.put<std::int32_t>(a.depth());
  for (const auto& c : a.components()) {
    w.put<double>(c.degree());
    w.put<std::int32_t>(c.bands().x1);
    w.put<std::int32_t>(c.bands().x2);
    w.put<std::int32_t>(c.bands().t);
    for (const auto& z : c.data()) w.put_complex(z);
  }
}

inline std::string serialize_symbol(const Symbol& a) {
  BinaryWriter w;
  write_symbol(w, a);
  return w.bytes();
}

inline Symbol read_symbol(BinaryReader& r) {
  require(r.get_bytes(kSymbolMagic.size()) == kSymbolMagic, ErrorKind::CacheVersion, "not an SPSYM1 symbol");
  const int m = r.get<std::int32_t>();
  const double order = r.get<double>();
  const int K = r.get<std::int32_t>();
  require(m >= 1 && K >= 0 && K < 1024, ErrorKind::CacheCorrupt, "implausible symbol header");
  Symbol a(m, order);
  for (int i = 0; i <= K; ++i) {
    const double deg = r.get<double>();
    Bands b;
    b.x1 = r.get<std::int32_t>();
    b.x2 = r.get<std::int32_t>();
    b.t = r.get<std::int32_t>();
    require(b.x1 >= 0 && b.x2 >= 0 && b.t >= 0 && b.x1 < 4096 && b.x2 < 4096 && b.t < 4096,
            ErrorKind::CacheCorrupt, "implausible bands");
    Component c(m, deg, b);
    for (auto& z : c.data()) z = r.get_complex();
    a.push(std::move(c));
  }
  return a;
}

inline Symbol deserialize_symbol(std::string_view bytes) {
  BinaryReader r(bytes);
  Symbol a = read_symbol(r);
  require(r.at_end(), ErrorKind::CacheCorrupt, "trailing bytes after symbol");
  return a;
}

// Text table of nonzero coefficients, one per line.
inline std::string debug_dump(const Symbol& a) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "symbol m=%d order=%.17g depth=%d\n", a.m(), a.order(), a.depth());
  os << buf;
  for (const auto& c : a.components()) {
    std::snprintf(buf, sizeof buf, "component degree=%.17g bands=%d,%d,%d\n", c.degree(), c.bands().x1,
                  c.bands().x2, c.bands().t);
    os << buf;
    const int m = c.m();
    c.for_each_mode([&](int k1, int k2, int n, const Complex* v) {
      for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q) {
          const Complex z = v[p * m + q];
          if (z == Complex{}) continue;
          std::snprintf(buf, sizeof buf, "%d %d %d %d %d %.17g %.17g\n", k1, k2, n, p, q, z.real(), z.imag());
          os << buf;
        }
    });
  }
  return os.str();
}

}  // namespace specpart
