#pragma once

// Spectral propagators, Hamiltonian flows of the eigenvalue fields, and the
// commutation / transport diagnostics built on them.

#include "specpart/partition.hpp"
#include "specpart/fft.hpp"

#include <random>

namespace specpart {

inline BlockOperator propagator(const SpectrumRecord& rec, double t) {
  return rec.function([t](double l) { return std::polar(1.0, -t * l); });
}

// exp(-i t Q^{1/(2n)}) for a nonnegative record.
inline BlockOperator sqrt_propagator(const SpectrumRecord& rec, double t, int n = 1) {
  require(n >= 1, ErrorKind::Precondition, "root index n must be >= 1");
  for (int i = 0; i < rec.eigenvalues.size(); ++i)
    require(rec.eigenvalues(i) >= -1e-9 * std::max(rec.norm, 1.0), ErrorKind::DomainViolation,
            "square-root propagator of an operator with negative spectrum");
  const double zt = rec.zero_tol(), p = 1.0 / (2.0 * n);
  return rec.function([=](double l) { return std::polar(1.0, -t * (l > zt ? std::pow(l, p) : 0.0)); });
}

// ---------------------------------------------------------------------------
// Shell diagnostics.

struct ShellNorms {
  std::vector<double> rho;
  std::vector<double> commutator;  // max ||[U, P_j] v||
  std::vector<double> cross;       // max_{l != j} ||P_l U P_j v||
  std::vector<double> leakage;     // max ||(I - P_j) U v|| with v = P_j v / |P_j v|
  double slope() const { return loglog_slope(rho, commutator); }
};

inline CVector random_shell_vector(const std::vector<int>& S, int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  CVector v = CVector::Zero(n);
  for (int i : S) v(i) = Complex(g(rng), g(rng));
  return v / v.norm();
}

// Any operator given by its action on a vector.
using Action = std::function<CVector(const CVector&)>;

inline ShellNorms commutator_diagnostic(const Action& U, const QuantizedProjections& Pq, int j, const Lattice& lat,
                                        const std::vector<double>& shells, std::uint64_t seed, int vectors = 32) {
  std::size_t jpos = Pq.j.size();
  for (std::size_t a = 0; a < Pq.j.size(); ++a)
    if (Pq.j[a] == j) jpos = a;
  require(jpos < Pq.j.size(), ErrorKind::Precondition, "no quantized projection for the requested index");
  const SpMatrix& P = Pq.Q[jpos];
  ShellNorms out;
  std::mt19937_64 rng(seed);
  for (double rho : shells) {
    const std::vector<int> S = lat.shell(rho, rho + 1);
    require(!S.empty() && rho + 1 <= lat.L, ErrorKind::Precondition, "shell outside the lattice");
    double comm = 0, cross = 0, leak = 0;
    for (int r = 0; r < vectors; ++r) {
      const CVector v = random_shell_vector(S, lat.size(), rng);
      comm = std::max(comm, (U(P * v) - P * U(v)).norm());
      CVector w = P * v;
      const double wn = w.norm();
      if (wn == 0) continue;
      w /= wn;
      const CVector Uw = U(w);
      leak = std::max(leak, (Uw - P * Uw).norm());
      for (std::size_t l = 0; l < Pq.Q.size(); ++l)
        if (l != jpos) cross = std::max(cross, (Pq.Q[l] * Uw).norm());
    }
    out.rho.push_back(rho);
    out.commutator.push_back(comm);
    out.cross.push_back(cross);
    out.leakage.push_back(leak);
  }
  return out;
}

inline Action as_action(const BlockOperator& U) {
  return [&U](const CVector& v) { return U.apply(v); };
}

// ---------------------------------------------------------------------------
// Hamiltonian flow of a scalar eigenvalue field.

struct FlowState {
  double t = 0;
  double x1 = 0, x2 = 0, xi1 = 0, xi2 = 0;
  double h_drift = 0;
};

class ScalarField {
 public:
  explicit ScalarField(const Component& h)
      : h_(h), hx1_(d_x(h, 1)), hx2_(d_x(h, 2)), hxi1_(d_xi(h, 1)), hxi2_(d_xi(h, 2)) {
    require(h.m() == 1, ErrorKind::DimensionMismatch, "Hamiltonian must be a scalar field");
  }
  double value(const double* s) const { return h_.evaluate(s[0], s[1], s[2], s[3])(0, 0).real(); }
  void rhs(const double* s, double* out) const {
    out[0] = hxi1_.evaluate(s[0], s[1], s[2], s[3])(0, 0).real();
    out[1] = hxi2_.evaluate(s[0], s[1], s[2], s[3])(0, 0).real();
    out[2] = -hx1_.evaluate(s[0], s[1], s[2], s[3])(0, 0).real();
    out[3] = -hx2_.evaluate(s[0], s[1], s[2], s[3])(0, 0).real();
  }

 private:
  Component h_, hx1_, hx2_, hxi1_, hxi2_;
};

// Classical RK4 with a fixed step; the step is halved (up to 4 times) when the
// energy drift exceeds flow_tol |h(0)|. Positions are unwrapped; wrap with wrap_angle.
inline std::vector<FlowState> hamiltonian_flow(const Component& h, double y1, double y2, double eta1, double eta2,
                                               double t_final, int steps, double flow_tol = 1e-8) {
  require(std::hypot(eta1, eta2) > 0, ErrorKind::Precondition, "initial covector must be nonzero");
  require(steps >= 1, ErrorKind::Precondition, "flow needs at least one step");
  const ScalarField H(h);
  for (int attempt = 0; attempt < 5; ++attempt, steps *= 2) {
    std::vector<FlowState> traj;
    double s[4] = {y1, y2, eta1, eta2};
    const double h0 = H.value(s);
    const double dt = t_final / steps;
    bool ok = true;
    traj.push_back({0, s[0], s[1], s[2], s[3], 0});
    for (int i = 0; i < steps && ok; ++i) {
      double k1[4], k2[4], k3[4], k4[4], tmp[4];
      H.rhs(s, k1);
      for (int q = 0; q < 4; ++q) tmp[q] = s[q] + 0.5 * dt * k1[q];
      H.rhs(tmp, k2);
      for (int q = 0; q < 4; ++q) tmp[q] = s[q] + 0.5 * dt * k2[q];
      H.rhs(tmp, k3);
      for (int q = 0; q < 4; ++q) tmp[q] = s[q] + dt * k3[q];
      H.rhs(tmp, k4);
      for (int q = 0; q < 4; ++q) s[q] += dt / 6 * (k1[q] + 2 * k2[q] + 2 * k3[q] + k4[q]);
      const double drift = std::abs(H.value(s) - h0);
      if (drift > flow_tol * std::abs(h0)) ok = false;
      traj.push_back({(i + 1) * dt, s[0], s[1], s[2], s[3], drift});
    }
    if (ok) return traj;
  }
  throw Error(ErrorKind::Precondition, "Hamiltonian flow drift exceeds tolerance after step halving");
}

inline double torus_distance(double a1, double a2, double b1, double b2) {
  return std::hypot(circle_distance(a1, b1), circle_distance(a2, b2));
}

// ---------------------------------------------------------------------------
// Wave packets.

struct WavePacket {
  double y1 = 0, y2 = 0;
  int eta1 = 0, eta2 = 0;
  double sigma = 0;        // position width
  double band_radius = 0;  // 99% of the Gaussian mass lies within this Fourier radius
  double band_mass = 0;    // mass fraction kept by the truncation
  CVector amplitude;       // eigenvector of A_prin(y, eta)
  CVector coeffs;          // on the lattice, unit norm
};

// Gaussian packet exp(-|x-y|^2 / (2 sigma^2)) e^{i eta x} times the h^(j)
// eigenvector at the center.
inline WavePacket make_wave_packet(const Component& a_prin, int sorted_index, const Lattice& lat, double y1, double y2,
                                   int eta1, int eta2, double sigma = -1) {
  WavePacket w;
  w.y1 = y1;
  w.y2 = y2;
  w.eta1 = eta1;
  w.eta2 = eta2;
  const double eta = std::hypot(eta1, eta2);
  require(eta > 0, ErrorKind::Precondition, "packet frequency must be nonzero");
  w.sigma = sigma > 0 ? sigma : 1.0 / std::sqrt(eta);
  w.band_radius = std::sqrt(std::log(100.0)) / w.sigma;
  require(eta + w.band_radius <= lat.L, ErrorKind::Precondition, "packet band does not fit in the lattice");
  Eigen::SelfAdjointEigenSolver<CMatrix> es(a_prin.evaluate(y1, y2, eta1, eta2));
  w.amplitude = es.eigenvectors().col(sorted_index);
  w.coeffs = CVector::Zero(lat.size());
  double total = 0, kept = 0;
  const int m = lat.m;
  for (int k1 = -lat.L; k1 <= lat.L; ++k1)
    for (int k2 = -lat.L; k2 <= lat.L; ++k2) {
      const double d1 = k1 - eta1, d2 = k2 - eta2;
      const double g = std::exp(-0.5 * w.sigma * w.sigma * (d1 * d1 + d2 * d2));
      total += g * g;
      if (std::hypot(d1, d2) > w.band_radius) continue;
      kept += g * g;
      const Complex ph = std::polar(g, -(d1 * y1 + d2 * y2));
      for (int p = 0; p < m; ++p) w.coeffs(lat.index(k1, k2, p)) = ph * w.amplitude(p);
    }
  w.band_mass = kept / total;
  w.coeffs /= w.coeffs.norm();
  return w;
}

// |u(x)|^2 on an N x N grid, summed over components.
inline std::vector<double> position_density(const CVector& u, const Lattice& lat, int N) {
  require(N >= 2 * lat.L + 1, ErrorKind::Precondition, "position grid too coarse");
  std::vector<double> rho(static_cast<std::size_t>(N) * N, 0.0);
  std::vector<Complex> buf(static_cast<std::size_t>(N) * N);
  for (int p = 0; p < lat.m; ++p) {
    std::fill(buf.begin(), buf.end(), Complex{});
    for (int k1 = -lat.L; k1 <= lat.L; ++k1)
      for (int k2 = -lat.L; k2 <= lat.L; ++k2)
        buf[static_cast<std::size_t>((k1 + N) % N) * N + (k2 + N) % N] = u(lat.index(k1, k2, p));
    fft3(buf, N, N, 1, 1, +1);
    for (std::size_t i = 0; i < buf.size(); ++i) rho[i] += std::norm(buf[i]);
  }
  return rho;
}

// Circular first moment per coordinate.
inline std::array<double, 2> circular_center(const std::vector<double>& rho, int N) {
  Complex c1{}, c2{};
  for (int i1 = 0; i1 < N; ++i1)
    for (int i2 = 0; i2 < N; ++i2) {
      const double w = rho[static_cast<std::size_t>(i1) * N + i2];
      c1 += w * std::polar(1.0, kTwoPi * i1 / N);
      c2 += w * std::polar(1.0, kTwoPi * i2 / N);
    }
  return {wrap_angle(std::arg(c1)), wrap_angle(std::arg(c2))};
}

struct TrackPoint {
  double t = 0;
  double c1 = 0, c2 = 0;        // packet center
  double f1 = 0, f2 = 0;        // flow position
  double discrepancy = 0;       // torus distance
  double mass = 0;              // norm^2 of the evolved vector
  double band_leak = 0;         // mass outside the packet band around the flowed frequency
};

struct TrackReport {
  std::vector<TrackPoint> points;
  double max_discrepancy = 0;
  bool leak_warning = false;
};

inline TrackReport track_singularity(const SpectrumRecord& rec, const CVector& v, const WavePacket& packet,
                                     const Component& h, const std::vector<double>& times, int flow_steps = 4096) {
  const Lattice lat{rec.Lambda, rec.m};
  const int N = nice_fft_size(4 * rec.Lambda + 2);
  TrackReport rep;
  for (double t : times) {
    const BlockOperator U = propagator(rec, t);
    const CVector w = U.apply(v);
    TrackPoint tp;
    tp.t = t;
    tp.mass = w.squaredNorm();
    const auto c = circular_center(position_density(w, lat, N), N);
    tp.c1 = c[0];
    tp.c2 = c[1];
    const int steps = std::max(1, static_cast<int>(std::ceil(flow_steps * std::abs(t))));
    const auto traj = t == 0.0 ? std::vector<FlowState>{{0, packet.y1, packet.y2, double(packet.eta1), double(packet.eta2), 0}}
                               : hamiltonian_flow(h, packet.y1, packet.y2, packet.eta1, packet.eta2, t, steps, 1e-6);
    const FlowState& end = traj.back();
    tp.f1 = wrap_angle(end.x1);
    tp.f2 = wrap_angle(end.x2);
    tp.discrepancy = torus_distance(tp.c1, tp.c2, tp.f1, tp.f2);
    double out = 0;
    for (int i = 0; i < lat.size(); ++i) {
      const auto md = lat.mode(i);
      if (std::hypot(md[0] - end.xi1, md[1] - end.xi2) > packet.band_radius) out += std::norm(w(i));
    }
    tp.band_leak = tp.mass > 0 ? out / tp.mass : 0.0;
    rep.leak_warning = rep.leak_warning || tp.band_leak > 0.05;
    rep.max_discrepancy = std::max(rep.max_discrepancy, tp.discrepancy);
    rep.points.push_back(tp);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Projections of a nonnegative second-order operator versus its square root.

struct SqrtProjectionReport {
  ShellNorms shells;    // ||[sqrt Q, P_j] v|| on shells
  double slope = 0;
  std::vector<double> principal_gap;  // per j, |P_j(A2) - P_j(B)| principal component norm
  std::vector<std::vector<double>> order_gap;  // per j, per order
};

inline SqrtProjectionReport sqrt_projection_check(const SpectrumRecord& recA2, const QuantizedProjections& Pq, int j,
                                                  const std::vector<double>& shells, std::uint64_t seed) {
  SqrtProjectionReport rep;
  const BlockOperator R = fractional_power(recA2, 0.5);
  const Lattice lat{recA2.Lambda, recA2.m};
  rep.shells = commutator_diagnostic(as_action(R), Pq, j, lat, shells, seed);
  rep.slope = rep.shells.slope();
  return rep;
}

// Component-wise distance between two projection sets with the same indices.
inline void compare_projection_sets(SqrtProjectionReport& rep, const ProjectionSet& a, const ProjectionSet& b) {
  const int K = std::min(a.K, b.K);
  for (const auto& f : a.eig.fields) {
    if (f.j <= 0) continue;
    const Symbol& Pa = a.projection(f.j);
    const Symbol& Pb = b.projection(f.j);
    std::vector<double> gaps;
    for (int t = 0; t <= K; ++t) gaps.push_back(component_norm(Pa.component(t) - Pb.component(t)));
    rep.principal_gap.push_back(gaps[0]);
    rep.order_gap.push_back(gaps);
  }
}

inline std::string trajectory_csv(const std::vector<FlowState>& traj) {
  std::string out = "t,x1,x2,xi1,xi2,h_drift\n";
  char buf[256];
  for (const auto& s : traj) {
    std::snprintf(buf, sizeof buf, "%.9e,%.12e,%.12e,%.12e,%.12e,%.3e\n", s.t, wrap_angle(s.x1), wrap_angle(s.x2), s.xi1,
                  s.xi2, s.h_drift);
    out += buf;
  }
  return out;
}

}  // namespace specpart
