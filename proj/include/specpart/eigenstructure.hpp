#pragma once

// Eigenvalue and eigenprojection fields of a Hermitian principal symbol.
// Index convention: eigenvalues sorted upward, negative ones labelled
// -m_minus..-1 and positive ones 1..m_plus.

#include "specpart/symbol.hpp"

#include <Eigen/Eigenvalues>

namespace specpart {

struct EigenField {
  int j = 0;
  Component h;  // scalar field, degree s
  Component P;  // m x m, degree 0
  double gap = 0.0;
};

struct EigenStructure {
  std::vector<EigenField> fields;  // ascending in j
  int m_minus = 0;
  int m_plus = 0;
  double order = 0.0;
  double h_min = 0.0;  // min over the cosphere of min_j |h^(j)|
  double h_max = 0.0;
  double max_label_jump = 0.0;  // largest change of h^(j) between neighbouring grid points

  const EigenField& field(int j) const {
    for (const auto& f : fields)
      if (f.j == j) return f;
    throw Error(ErrorKind::Precondition, "no eigenfield with index " + std::to_string(j));
  }
  std::vector<int> positive_indices() const {
    std::vector<int> out;
    for (int j = 1; j <= m_plus; ++j) out.push_back(j);
    return out;
  }
  std::vector<int> indices() const {
    std::vector<int> out;
    for (const auto& f : fields) out.push_back(f.j);
    return out;
  }
};

inline int signed_index(int sorted_pos, int m_minus) {
  return sorted_pos < m_minus ? sorted_pos - m_minus : sorted_pos - m_minus + 1;
}

// Grid used to resolve eigenfields of a component with the given bands.
inline GridShape eigen_grid(const Component& a, const BandPolicy& pol) {
  auto n = [](int band, int cap) { return band == 0 ? 1 : nice_fft_size(std::max(4 * cap, 8 * band + 4)); };
  return {n(a.bands().x1, pol.x_band), n(a.bands().x2, pol.x_band), n(a.bands().t, pol.theta_band)};
}

// gap_tol < 0 selects the default 1e-3 * max|h| on the cosphere.
inline EigenStructure eigendecompose_principal(const Component& a_prin, double gap_tol = -1.0,
                                               const BandPolicy& pol = {}) {
  const int m = a_prin.m();
  const GridShape s = eigen_grid(a_prin, pol);
  const FieldGrid g = to_grid(a_prin, s);
  const std::size_t np = s.points();

  std::vector<double> vals(np * m);
  FieldGrid vecs(s, m);  // columns are eigenvectors
  CMatrix M(m, m);
  double hmax = 0.0;
  for (std::size_t p = 0; p < np; ++p) {
    const Complex* v = g.point(p);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) M(r, c) = v[r * m + c];
    const double scale = std::max(M.norm(), 1e-300);
    if ((M - M.adjoint()).norm() > 1e-10 * scale) {
      throw Error(ErrorKind::NotHermitian, "principal symbol is not Hermitian on the grid");
    }
    Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (M + M.adjoint()));
    require(es.info() == Eigen::Success, ErrorKind::EigensolverFailure, "pointwise eigensolve failed");
    for (int i = 0; i < m; ++i) {
      vals[p * m + i] = es.eigenvalues()(i);
      hmax = std::max(hmax, std::abs(es.eigenvalues()(i)));
    }
    Complex* dst = vecs.point(p);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) dst[r * m + c] = es.eigenvectors()(r, c);
  }
  if (gap_tol < 0) gap_tol = 1e-3 * hmax;

  auto where = [&](std::size_t p) {
    const std::size_t it = p % s.nt, i2 = (p / s.nt) % s.n2, i1 = p / (s.nt * s.n2);
    char buf[128];
    std::snprintf(buf, sizeof buf, "(x1=%.6g, x2=%.6g, theta=%.6g)", kTwoPi * i1 / s.n1, kTwoPi * i2 / s.n2,
                  kTwoPi * it / s.nt);
    return std::string(buf);
  };

  int m_minus = -1;
  std::vector<double> gaps(m, std::numeric_limits<double>::infinity());
  double hmin = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < np; ++p) {
    const double* e = &vals[p * m];
    int neg = 0;
    for (int i = 0; i < m; ++i) {
      if (std::abs(e[i]) <= 1e-12 * std::max(hmax, 1e-300)) {
        throw Error(ErrorKind::SingularSymbol, "principal symbol is singular at " + where(p));
      }
      if (e[i] < 0) ++neg;
      hmin = std::min(hmin, std::abs(e[i]));
    }
    if (m_minus < 0) m_minus = neg;
    require(neg == m_minus, ErrorKind::SimplicityViolated, "eigenvalue sign pattern changes at " + where(p));
    for (int i = 0; i < m; ++i) {
      double d = std::numeric_limits<double>::infinity();
      if (i > 0) d = std::min(d, e[i] - e[i - 1]);
      if (i + 1 < m) d = std::min(d, e[i + 1] - e[i]);
      if (m > 1 && d <= gap_tol) {
        throw Error(ErrorKind::SimplicityViolated, "eigenvalue simplicity violated at " + where(p));
      }
      gaps[i] = std::min(gaps[i], d);
    }
  }

  // Neighbour jumps along each grid axis, used as a continuity diagnostic.
  double jump = 0.0;
  for (std::size_t p = 0; p < np; ++p) {
    const std::size_t it = p % s.nt, i2 = (p / s.nt) % s.n2, i1 = p / (s.nt * s.n2);
    const std::size_t nbrs[3] = {((i1 + 1) % s.n1 * s.n2 + i2) * s.nt + it,
                                 (i1 * s.n2 + (i2 + 1) % s.n2) * s.nt + it, (i1 * s.n2 + i2) * s.nt + (it + 1) % s.nt};
    for (std::size_t q : nbrs)
      for (int i = 0; i < m; ++i) jump = std::max(jump, std::abs(vals[q * m + i] - vals[p * m + i]));
  }

  EigenStructure es;
  es.m_minus = m_minus;
  es.m_plus = m - m_minus;
  es.order = a_prin.degree();
  es.h_min = hmin;
  es.h_max = hmax;
  es.max_label_jump = jump;
  for (int i = 0; i < m; ++i) {
    FieldGrid hg(s, 1), pg(s, m);
    for (std::size_t p = 0; p < np; ++p) {
      hg.point(p)[0] = vals[p * m + i];
      const Complex* V = vecs.point(p);
      Complex* dst = pg.point(p);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) dst[r * m + c] = V[r * m + i] * std::conj(V[c * m + i]);
    }
    EigenField f;
    f.j = signed_index(i, m_minus);
    f.h = from_grid(std::move(hg), a_prin.degree(), pol);
    f.P = from_grid(std::move(pg), 0.0, pol);
    f.gap = m > 1 ? gaps[i] : std::numeric_limits<double>::infinity();
    es.fields.push_back(std::move(f));
  }
  return es;
}

struct PartitionCheck {
  double idempotency = 0.0;   // max |P^2 - P|
  double hermiticity = 0.0;   // max |P - P*|
  double trace = 0.0;         // max |tr P - 1|
  double orthogonality = 0.0; // max |P_j P_l|, j != l
  double completeness = 0.0;  // max |sum P - I|
  double max() const { return std::max({idempotency, hermiticity, trace, orthogonality, completeness}); }
};

// Pointwise check of the projection identities on a sample grid.
inline PartitionCheck verify_projection_partition(const std::vector<EigenField>& fields) {
  PartitionCheck out;
  if (fields.empty()) return out;
  const int m = fields[0].P.m();
  Bands b{};
  for (const auto& f : fields) b = band_union(b, f.P.bands());
  auto n = [](int band) { return band == 0 ? 1 : nice_fft_size(4 * band + 2); };
  const GridShape s{n(b.x1), n(b.x2), n(b.t)};
  std::vector<FieldGrid> grids;
  for (const auto& f : fields) grids.push_back(to_grid(f.P, s));
  std::vector<CMatrix> P(fields.size(), CMatrix(m, m));
  for (std::size_t p = 0; p < s.points(); ++p) {
    CMatrix sum = CMatrix::Zero(m, m);
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const Complex* v = grids[j].point(p);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) P[j](r, c) = v[r * m + c];
      sum += P[j];
      out.idempotency = std::max(out.idempotency, (P[j] * P[j] - P[j]).cwiseAbs().maxCoeff());
      out.hermiticity = std::max(out.hermiticity, (P[j] - P[j].adjoint()).cwiseAbs().maxCoeff());
      out.trace = std::max(out.trace, std::abs(P[j].trace() - 1.0));
    }
    for (std::size_t j = 0; j < fields.size(); ++j)
      for (std::size_t l = 0; l < fields.size(); ++l)
        if (j != l) out.orthogonality = std::max(out.orthogonality, (P[j] * P[l]).cwiseAbs().maxCoeff());
    out.completeness = std::max(out.completeness, (sum - CMatrix::Identity(m, m)).cwiseAbs().maxCoeff());
  }
  return out;
}

// Scalar field promoted to s * Id.
inline Component scalar_to_matrix(const Component& s, int m) {
  Component out(m, s.degree(), s.bands());
  s.for_each_mode([&](int k1, int k2, int n, const Complex* c) {
    for (int p = 0; p < m; ++p) out.at(k1, k2, n, p, p) = c[0];
  });
  return out;
}

// max pointwise |sum_j h^(j) P^(j) - a_prin|.
inline double reconstruction_error(const EigenStructure& es, const Component& a_prin, const BandPolicy& pol = {}) {
  Component sum(a_prin.m(), a_prin.degree(), Bands{});
  for (const auto& f : es.fields) axpy(sum, 1.0, product(scalar_to_matrix(f.h, a_prin.m()), f.P, pol));
  return component_norm(sum - a_prin);
}

}  // namespace specpart
