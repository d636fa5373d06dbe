#pragma once

// Pseudodifferential projections P_j built order by order, the companion
// operators A_j, and sign certificates for P_j* A P_j.

#include "specpart/eigenstructure.hpp"
#include "specpart/spectral.hpp"

namespace specpart {

struct ResidualEntry {
  int order = 0;  // 0, -1, ..., -K relative to the leading degree of the defect
  std::string family;
  int j = 0;
  int l = 0;
  double norm = 0.0;
};

struct ProjectionSet {
  EigenStructure eig;
  std::vector<Symbol> P;  // aligned with eig.fields
  Symbol source;
  int K = 0;
  std::vector<ResidualEntry> residual_log;

  const Symbol& projection(int j) const {
    for (std::size_t i = 0; i < eig.fields.size(); ++i)
      if (eig.fields[i].j == j) return P[i];
    throw Error(ErrorKind::Precondition, "no projection with index " + std::to_string(j));
  }
  double max_residual() const {
    double r = 0.0;
    for (const auto& e : residual_log) r = std::max(r, e.norm);
    return r;
  }
};

namespace detail {

// Pointwise block solve for the degree -k correction of P_j:
//   off-diagonal blocks  P^(a) q P^(b) = -P^(a) c P^(b) / (h_a - h_b)
//   diagonal blocks      P^(j) q P^(j) = -P^(j) d P^(j),  P^(l) q P^(l) = P^(l) d P^(l)
inline Component projection_correction(const EigenStructure& es, std::size_t jpos, const Component& d,
                                       const Component& c, double degree, const BandPolicy& pol) {
  const int m = d.m();
  Bands b = band_union(d.bands(), c.bands());
  for (const auto& f : es.fields) b = band_union(b, band_union(f.P.bands(), f.h.bands()));
  auto n = [&](int band, int cap) { return band == 0 ? 1 : nice_fft_size(std::max(6 * band + 3, 4 * cap)); };
  const GridShape s{n(b.x1, pol.x_band), n(b.x2, pol.x_band), n(b.t, pol.theta_band)};

  const FieldGrid gd = to_grid(d, s), gc = to_grid(c, s);
  std::vector<FieldGrid> gP, gh;
  for (const auto& f : es.fields) {
    gP.push_back(to_grid(f.P, s));
    gh.push_back(to_grid(f.h, s));
  }
  FieldGrid out(s, m);
  auto load = [m](const Complex* src) {
    CMatrix M(m, m);
    for (int r = 0; r < m; ++r)
      for (int q = 0; q < m; ++q) M(r, q) = src[r * m + q];
    return M;
  };
  const std::size_t nf = es.fields.size();
  std::vector<CMatrix> Pm(nf);
  std::vector<double> hv(nf);
  for (std::size_t p = 0; p < s.points(); ++p) {
    const CMatrix D = load(gd.point(p)), C = load(gc.point(p));
    for (std::size_t a = 0; a < nf; ++a) {
      Pm[a] = load(gP[a].point(p));
      hv[a] = gh[a].point(p)[0].real();
    }
    CMatrix q = CMatrix::Zero(m, m);
    for (std::size_t a = 0; a < nf; ++a)
      for (std::size_t bb = 0; bb < nf; ++bb) {
        if (a == bb) {
          q += (a == jpos ? -1.0 : 1.0) * (Pm[a] * D * Pm[a]);
        } else {
          q -= (Pm[a] * C * Pm[bb]) / (hv[a] - hv[bb]);
        }
      }
    Complex* dst = out.point(p);
    for (int r = 0; r < m; ++r)
      for (int qq = 0; qq < m; ++qq) dst[r * m + qq] = q(r, qq);
  }
  return from_grid(std::move(out), degree, pol);
}

}  // namespace detail

inline void log_residuals(ProjectionSet& ps, const BandPolicy& pol) {
  const int K = ps.K;
  const int m = ps.source.m();
  const std::size_t nf = ps.P.size();
  ps.residual_log.clear();
  auto add = [&](int order, const std::string& fam, int j, int l, const Component& c) {
    ps.residual_log.push_back({order, fam, j, l, component_norm(c)});
  };
  for (std::size_t a = 0; a < nf; ++a) {
    const int j = ps.eig.fields[a].j;
    add(0, "principal", j, j, ps.P[a].principal() - ps.eig.fields[a].P);
    const Symbol adj = adjoint_symbol(ps.P[a], K, pol);
    for (int t = 0; t <= K; ++t) add(-t, "selfadjoint", j, j, ps.P[a].component(t) - adj.component(t));
    for (std::size_t b = 0; b < nf; ++b) {
      const int l = ps.eig.fields[b].j;
      const Symbol pp = compose(ps.P[a], ps.P[b], K, pol);
      for (int t = 0; t <= K; ++t) {
        Component c = pp.component(t);
        if (a == b) c = c - ps.P[a].component(t);
        add(-t, "orthogonality", j, l, c);
      }
    }
    const Symbol A = ps.source.truncated(K);
    const Symbol comm = compose(A, ps.P[a], K, pol) - compose(ps.P[a], A, K, pol);
    for (int t = 0; t <= K; ++t) add(-t, "commutation", j, j, comm.component(t));
  }
  for (int t = 0; t <= K; ++t) {
    Component sum(m, -static_cast<double>(t), Bands{});
    for (std::size_t a = 0; a < nf; ++a) axpy(sum, 1.0, ps.P[a].component(t));
    if (t == 0) sum = sum - constant_component(CMatrix::Identity(m, m), 0.0);
    add(-t, "completeness", 0, 0, sum);
  }
}

inline ProjectionSet build_projections(const Symbol& A, int K, const BandPolicy& pol = {}, double gap_tol = -1.0) {
  require(K >= 0, ErrorKind::Precondition, "build_projections: K must be >= 0");
  require(A.depth() >= K, ErrorKind::DepthOverflow, "build_projections: symbol stored to depth " +
                                                        std::to_string(A.depth()) + " < K = " + std::to_string(K));
  ProjectionSet ps;
  ps.eig = eigendecompose_principal(A.principal(), gap_tol, pol);
  ps.source = A;
  ps.K = K;
  const int m = A.m();
  for (std::size_t a = 0; a < ps.eig.fields.size(); ++a) {
    Symbol P(m, 0.0);
    P.push(ps.eig.fields[a].P);
    for (int k = 1; k <= K; ++k) {
      Symbol Pk = P.truncated(k);
      const Symbol Ak = A.truncated(k);
      const Component d = compose(Pk, Pk, k, pol).component(k);
      const Component c = (compose(Ak, Pk, k, pol) - compose(Pk, Ak, k, pol)).component(k);
      Pk.component(k) = detail::projection_correction(ps.eig, a, d, c, -static_cast<double>(k), pol);
      const Symbol adj = adjoint_symbol(Pk, k, pol);
      Component q = Pk.component(k) - 0.5 * (Pk.component(k) - adj.component(k));
      trim(q, pol);
      Pk.component(k) = std::move(q);
      P = std::move(Pk);
    }
    ps.P.push_back(std::move(P));
  }
  log_residuals(ps, pol);
  return ps;
}

// A_j = A - 2 sum_{l=1..m+, l != j} P_l* A P_l, symmetrized; one per positive j.
inline std::vector<Symbol> build_Aj(const Symbol& A, const ProjectionSet& ps, const BandPolicy& pol = {}) {
  const int m_plus = ps.eig.m_plus;
  require(m_plus >= 1, ErrorKind::Precondition, "build_Aj needs at least one positive eigenvalue");
  const int K = std::min(ps.K, A.depth());
  if (m_plus == 1) return {A};
  std::vector<Symbol> T(m_plus + 1);
  const Symbol Ak = A.truncated(K);
  for (int l = 1; l <= m_plus; ++l) {
    const Symbol& Pl = ps.projection(l);
    T[l] = compose(adjoint_symbol(Pl, K, pol), compose(Ak, Pl, K, pol), K, pol);
  }
  std::vector<Symbol> out;
  for (int j = 1; j <= m_plus; ++j) {
    Symbol Aj = A;
    for (int l = 1; l <= m_plus; ++l) {
      if (l == j) continue;
      for (int t = 0; t <= K; ++t) axpy(Aj.component(t), -2.0, T[l].component(t));
    }
    out.push_back(symmetrize(Aj, A.depth(), pol));
  }
  return out;
}

// sym(P_j* A P_j) as a symbol.
inline Symbol sandwich(const Symbol& A, const Symbol& Pj, int K, const BandPolicy& pol = {}) {
  const Symbol Ak = A.truncated(K);
  return symmetrize(compose(adjoint_symbol(Pj, K, pol), compose(Ak, Pj, K, pol), K, pol), K, pol);
}

struct SignCertificate {
  int j = 0;
  double extreme = 0.0;  // min Rayleigh quotient for j > 0, max for j < 0
  double rate = 0.0;     // Lambda^{-(K+1-s)}
  double fitted_C = 0.0; // |extreme| / rate
  int shell_modes = 0;
};

// Extreme Rayleigh quotients of quantize(P_j* A P_j) over vectors supported on
// Lambda/2 <= |k| <= Lambda.
inline std::vector<SignCertificate> certify_sign(const Symbol& A, const ProjectionSet& ps, int Lambda,
                                                 const BandPolicy& pol = {}) {
  std::vector<SignCertificate> out;
  const int K = ps.K;
  for (const auto& f : ps.eig.fields) {
    const QuantizedOperator Q = quantize(sandwich(A, ps.projection(f.j), K, pol), Lambda, true);
    const std::vector<int> S = Q.lattice.shell(0.5 * Lambda, Lambda, true);
    double ext = f.j > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    for (auto& blk : sparsity_blocks(Q.matrix, &S)) {
      const RVector ev = hermitian_eigenvalues(compress(Q.matrix, blk));
      if (ev.size() == 0) continue;
      ext = f.j > 0 ? std::min(ext, ev(0)) : std::max(ext, ev(ev.size() - 1));
    }
    SignCertificate c;
    c.j = f.j;
    c.extreme = ext;
    c.shell_modes = static_cast<int>(S.size());
    c.rate = std::pow(static_cast<double>(Lambda), -(K + 1 - A.order()));
    c.fitted_C = std::abs(ext) / c.rate;
    out.push_back(c);
  }
  return out;
}

inline int max_x_band(const Symbol& a) {
  int b = 0;
  for (const auto& c : a.components()) b = std::max({b, c.bands().x1, c.bands().x2});
  return b;
}

// Largest singular value of the columns of D restricted to S.
inline double column_block_norm(const SpMatrix& D, const std::vector<int>& S) {
  if (S.empty()) return 0.0;
  SpMatrix DS(D.rows(), static_cast<std::int64_t>(S.size()));
  std::vector<Eigen::Triplet<Complex, std::int64_t>> trips;
  for (std::size_t c = 0; c < S.size(); ++c)
    for (SpMatrix::InnerIterator it(D, S[c]); it; ++it) trips.emplace_back(it.row(), c, it.value());
  DS.setFromTriplets(trips.begin(), trips.end());
  const CMatrix G = CMatrix(SpMatrix(DS.adjoint() * DS));
  const RVector ev = hermitian_eigenvalues(G);
  return std::sqrt(std::max(0.0, ev(ev.size() - 1)));
}

struct ShellDefect {
  int Lambda = 0;
  double idempotency = 0.0;  // max_{j,l} || (P_j P_l - delta_jl P_j) restricted to the shell ||
};

// Quantized idempotency defect on vectors supported on Lambda <= |k| < Lambda + 1,
// measured on a lattice large enough that no truncation enters.
inline ShellDefect shell_idempotency_defect(const ProjectionSet& ps, int Lambda) {
  int band = 0;
  for (const auto& P : ps.P) band = std::max(band, max_x_band(P));
  const int Lout = Lambda + 2 + 2 * band;
  std::vector<SpMatrix> Q;
  for (const auto& P : ps.P) Q.push_back(quantize(P, Lout, true).matrix);
  const Lattice lat{Lout, ps.source.m()};
  const std::vector<int> S = lat.shell(Lambda, Lambda + 1);
  ShellDefect out;
  out.Lambda = Lambda;
  for (std::size_t a = 0; a < Q.size(); ++a)
    for (std::size_t b = 0; b < Q.size(); ++b) {
      SpMatrix D = Q[a] * Q[b];
      if (a == b) D -= Q[a];
      out.idempotency = std::max(out.idempotency, column_block_norm(D, S));
    }
  return out;
}

inline std::string residual_csv(const ProjectionSet& ps) {
  std::string s = "order,family,j,l,norm\n";
  char buf[128];
  for (const auto& e : ps.residual_log) {
    std::snprintf(buf, sizeof buf, "%d,%s,%d,%d,%.6e\n", e.order, e.family.c_str(), e.j, e.l, e.norm);
    s += buf;
  }
  return s;
}

// Serialized projections: the SPSYM1 containers in index order.
inline std::string serialize_projections(const ProjectionSet& ps) {
  BinaryWriter w;
  w.put_bytes("SPPROJ1");
  w.put<std::int32_t>(static_cast<std::int32_t>(ps.P.size()));
  for (std::size_t a = 0; a < ps.P.size(); ++a) {
    w.put<std::int32_t>(ps.eig.fields[a].j);
    write_symbol(w, ps.P[a]);
  }
  return w.bytes();
}

}  // namespace specpart
