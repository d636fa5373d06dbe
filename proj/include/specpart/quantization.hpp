#pragma once

// Left quantization of symbols on the truncated Fourier lattice of T^2, and
// the model operators.

#include "specpart/symbol.hpp"

#include <Eigen/Sparse>

#include <map>

namespace specpart {

using SpMatrix = Eigen::SparseMatrix<Complex, Eigen::ColMajor, std::int64_t>;

// Modes k with max(|k1|, |k2|) <= L, each carrying m components.
// index(k, p) = ((k1 + L)(2L + 1) + (k2 + L)) m + p.
struct Lattice {
  int L = 0;
  int m = 1;
  int side() const { return 2 * L + 1; }
  int points() const { return side() * side(); }
  int size() const { return points() * m; }
  bool contains(int k1, int k2) const { return std::abs(k1) <= L && std::abs(k2) <= L; }
  int point_index(int k1, int k2) const { return (k1 + L) * side() + (k2 + L); }
  int index(int k1, int k2, int p) const { return point_index(k1, k2) * m + p; }
  std::array<int, 2> point(int pi) const { return {pi / side() - L, pi % side() - L}; }
  std::array<int, 3> mode(int idx) const {
    const auto k = point(idx / m);
    return {k[0], k[1], idx % m};
  }
  double radius(int idx) const {
    const auto k = point(idx / m);
    return std::hypot(k[0], k[1]);
  }
  // Mode indices with r_lo <= |k| < r_hi (or <= when closed_hi).
  std::vector<int> shell(double r_lo, double r_hi, bool closed_hi = false) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i) {
      const double r = radius(i);
      if (r >= r_lo && (closed_hi ? r <= r_hi : r < r_hi)) out.push_back(i);
    }
    return out;
  }
};

// Smooth radial cutoff: 0 for |xi| <= r0, 1 for |xi| >= r1.
struct Excision {
  double r0 = 0.5;
  double r1 = 1.0;
  double operator()(double r) const { return smooth_step((r - r0) / (r1 - r0)); }
};

struct QuantizedOperator {
  Lattice lattice;
  Excision excision;
  SpMatrix matrix;
  std::string source_hash;

  int size() const { return lattice.size(); }
  CMatrix dense() const { return CMatrix(matrix); }
  CVector apply(const CVector& v) const { return matrix * v; }
};

inline std::string symbol_digest(const Symbol& a) { return sha256_hex(serialize_symbol(a)); }

// Column k of the left quantization: sum over components of
// |k|^deg * sum_n c[delta][n] e^{i n theta(k)}, as a map delta -> m x m block.
inline void symbol_column(const Symbol& a, int k1, int k2, int depth_limit,
                          std::map<std::pair<int, int>, CMatrix>& out) {
  out.clear();
  const int m = a.m();
  const double r = std::hypot(k1, k2);
  const double th = std::atan2(static_cast<double>(k2), static_cast<double>(k1));
  for (int i = 0; i <= std::min(depth_limit, a.depth()); ++i) {
    const Component& c = a.component(i);
    if (c.is_zero()) continue;
    const double scale = std::pow(r, c.degree());
    const int bt = c.bands().t;
    std::vector<Complex> ph(2 * bt + 1);
    for (int n = -bt; n <= bt; ++n) ph[n + bt] = std::polar(scale, n * th);
    for (int d1 = -c.bands().x1; d1 <= c.bands().x1; ++d1)
      for (int d2 = -c.bands().x2; d2 <= c.bands().x2; ++d2) {
        CMatrix blk = CMatrix::Zero(m, m);
        bool any = false;
        for (int n = -bt; n <= bt; ++n) {
          const Complex* coef = &c.data()[c.block(d1, d2, n)];
          for (int p = 0; p < m * m; ++p) {
            if (coef[p] == Complex{}) continue;
            blk(p / m, p % m) += coef[p] * ph[n + bt];
            any = true;
          }
        }
        if (!any) continue;
        auto [it, inserted] = out.try_emplace({d1, d2}, blk);
        if (!inserted) it->second += blk;
      }
  }
}

// M[(k',p),(k,q)] = chi(|k|) a_hat_{pq}(k' - k, k), optionally replaced by (M + M*)/2.
inline QuantizedOperator quantize(const Symbol& a, int Lambda, bool symmetrize_matrix = true, Excision ex = {},
                                  int depth_limit = 1 << 20) {
  require(Lambda >= 4, ErrorKind::Precondition, "quantize: cutoff must be at least 4");
  require(ex.r1 <= Lambda, ErrorKind::Precondition, "quantize: cutoff too small for excision");
  for (const auto& c : a.components())
    require(c.bands().x1 <= 2 * Lambda && c.bands().x2 <= 2 * Lambda, ErrorKind::BandOverflow,
            "quantize: x-band of symbol exceeds 2*Lambda");
  QuantizedOperator Q;
  Q.lattice = {Lambda, a.m()};
  Q.excision = ex;
  const Lattice& lat = Q.lattice;
  const int m = a.m();
  std::vector<Eigen::Triplet<Complex, std::int64_t>> trips;
  std::map<std::pair<int, int>, CMatrix> col;
  for (int k1 = -Lambda; k1 <= Lambda; ++k1)
    for (int k2 = -Lambda; k2 <= Lambda; ++k2) {
      const double chi = ex(std::hypot(k1, k2));
      if (chi == 0.0) continue;
      symbol_column(a, k1, k2, depth_limit, col);
      for (const auto& [d, blk] : col) {
        const int t1 = k1 + d.first, t2 = k2 + d.second;
        if (!lat.contains(t1, t2)) continue;
        for (int p = 0; p < m; ++p)
          for (int q = 0; q < m; ++q) {
            const Complex v = chi * blk(p, q);
            if (v != Complex{}) trips.emplace_back(lat.index(t1, t2, p), lat.index(k1, k2, q), v);
          }
      }
    }
  Q.matrix.resize(lat.size(), lat.size());
  Q.matrix.setFromTriplets(trips.begin(), trips.end());
  if (symmetrize_matrix) {
    SpMatrix adj = Q.matrix.adjoint();
    Q.matrix = 0.5 * (Q.matrix + adj);
  }
  Q.matrix.prune(Complex{});
  Q.matrix.makeCompressed();
  char buf[96];
  std::snprintf(buf, sizeof buf, "|L=%d|sym=%d|ex=%.17g,%.17g|depth=%d", Lambda, symmetrize_matrix ? 1 : 0, ex.r0,
                ex.r1, std::min(depth_limit, a.depth()));
  Q.source_hash = sha256_hex(symbol_digest(a) + buf);
  return Q;
}

// Restriction of a lattice-L operator to the modes of a smaller lattice.
inline SpMatrix restrict_to_lattice(const SpMatrix& M, const Lattice& from, const Lattice& to) {
  std::vector<int> map(from.size(), -1);
  for (int i = 0; i < from.size(); ++i) {
    const auto md = from.mode(i);
    if (to.contains(md[0], md[1])) map[i] = to.index(md[0], md[1], md[2]);
  }
  std::vector<Eigen::Triplet<Complex, std::int64_t>> trips;
  for (int c = 0; c < M.outerSize(); ++c) {
    if (map[c] < 0) continue;
    for (SpMatrix::InnerIterator it(M, c); it; ++it)
      if (map[it.row()] >= 0) trips.emplace_back(map[it.row()], map[c], it.value());
  }
  SpMatrix out(to.size(), to.size());
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

// Hermitian compression of M onto the index set S (dense).
inline CMatrix compress(const SpMatrix& M, const std::vector<int>& S) {
  std::vector<int> pos(M.rows(), -1);
  for (std::size_t i = 0; i < S.size(); ++i) pos[S[i]] = static_cast<int>(i);
  CMatrix out = CMatrix::Zero(S.size(), S.size());
  for (std::size_t c = 0; c < S.size(); ++c)
    for (SpMatrix::InnerIterator it(M, S[c]); it; ++it)
      if (pos[it.row()] >= 0) out(pos[it.row()], c) = it.value();
  return out;
}

// ---------------------------------------------------------------------------
// Model operators.

inline CMatrix pauli(int which) {
  CMatrix s = CMatrix::Zero(2, 2);
  if (which == 1) s << 0, 1, 1, 0;
  if (which == 2) s << 0, Complex(0, -1), Complex(0, 1), 0;
  if (which == 3) s << 1, 0, 0, -1;
  return s;
}

struct ModelSpec {
  std::string name = "two_speed";
  double eps = 0.0;
  int depth = 5;  // stored truncation depth of the symmetrized symbol
};

inline const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = {"diag_multiplier", "dirac2d", "two_speed", "two_speed_perturbed",
                                                 "second_order_nonneg"};
  return names;
}

namespace detail {

// ξ1 σ3 + ξ2 σ1 = |ξ| (cos θ σ3 + sin θ σ1)
inline Component dirac_component(double weight) {
  Component c(2, 1.0, {0, 0, 1});
  const CMatrix s3 = pauli(3), s1 = pauli(1);
  for (int p = 0; p < 2; ++p)
    for (int q = 0; q < 2; ++q) {
      c.at(0, 0, 1, p, q) = weight * (0.5 * s3(p, q) + Complex(0, -0.5) * s1(p, q));
      c.at(0, 0, -1, p, q) = weight * (0.5 * s3(p, q) + Complex(0, 0.5) * s1(p, q));
    }
  return c;
}

// eps sin(x1) |ξ| σ1
inline Component sine_perturbation(double eps) {
  Component c(2, 1.0, {1, 0, 0});
  const CMatrix s1 = pauli(1);
  for (int p = 0; p < 2; ++p)
    for (int q = 0; q < 2; ++q) {
      c.at(1, 0, 0, p, q) = eps * Complex(0, -0.5) * s1(p, q);
      c.at(-1, 0, 0, p, q) = eps * Complex(0, 0.5) * s1(p, q);
    }
  return c;
}

inline Symbol from_principal(const Component& a0, int depth) {
  Symbol a(a0.m(), a0.degree());
  a.push(a0);
  for (int i = 1; i <= depth; ++i) a.push(Component(a0.m(), a0.degree() - i, Bands{}));
  return a;
}

}  // namespace detail

inline void validate_model(const ModelSpec& spec) {
  const auto& names = model_names();
  require(std::find(names.begin(), names.end(), spec.name) != names.end(), ErrorKind::Config,
          "unknown model '" + spec.name + "'");
  require(spec.depth >= 0 && spec.depth <= 12, ErrorKind::Config, "model depth must lie in [0, 12]");
  require(std::isfinite(spec.eps) && spec.eps >= 0, ErrorKind::Config, "model eps must be finite and >= 0");
  // Pointwise perturbation bound: the gap shrinks by at most 2 eps.
  if (spec.name == "two_speed_perturbed" || spec.name == "second_order_nonneg")
    require(spec.eps < 0.5, ErrorKind::Config,
            "eps = " + std::to_string(spec.eps) + " violates the gap bound eps < gap/2 = 0.5");
  if (spec.name == "dirac2d")
    require(spec.eps < 1.0, ErrorKind::Config,
            "eps = " + std::to_string(spec.eps) + " violates the gap bound eps < gap/2 = 1");
  if (spec.name == "diag_multiplier" || spec.name == "two_speed")
    require(spec.eps == 0.0, ErrorKind::Config, "model '" + spec.name + "' takes no perturbation");
}

inline Symbol model_operator(const ModelSpec& spec, const BandPolicy& pol = {}) {
  validate_model(spec);
  const int K = spec.depth;
  if (spec.name == "diag_multiplier") {
    CMatrix d = CMatrix::Zero(2, 2);
    d(0, 0) = 1.0;
    d(1, 1) = 2.0;
    return detail::from_principal(constant_component(d, 1.0), K);
  }
  if (spec.name == "dirac2d") {
    Component a0 = detail::dirac_component(1.0);
    if (spec.eps != 0.0) a0 = a0 + detail::sine_perturbation(spec.eps);
    return symmetrize(detail::from_principal(a0, K), K, pol);
  }
  if (spec.name == "two_speed" || spec.name == "two_speed_perturbed") {
    Component a0 = constant_component(1.5 * CMatrix::Identity(2, 2), 1.0) + detail::dirac_component(0.5);
    if (spec.eps != 0.0) a0 = a0 + detail::sine_perturbation(spec.eps);
    return symmetrize(detail::from_principal(a0, K), K, pol);
  }
  // second_order_nonneg: square of the first-order two-speed operator.
  ModelSpec first{"two_speed_perturbed", spec.eps, K};
  const Symbol B = model_operator(first, pol);
  return symmetrize(compose(B, B, K, pol), K, pol);
}

// Matrix realization of a model at cutoff Lambda. The second-order model is
// realized as Q_B^2 with Q_B the first-order quantization, which is exactly
// positive semidefinite.
inline QuantizedOperator quantize_model(const ModelSpec& spec, int Lambda, const BandPolicy& pol = {},
                                        Excision ex = {}) {
  if (spec.name == "second_order_nonneg") {
    ModelSpec first{"two_speed_perturbed", spec.eps, spec.depth};
    QuantizedOperator Q = quantize(model_operator(first, pol), Lambda, true, ex);
    SpMatrix sq = Q.matrix * Q.matrix;
    SpMatrix adj = sq.adjoint();
    Q.matrix = 0.5 * (sq + adj);
    Q.matrix.prune(Complex{});
    Q.matrix.makeCompressed();
    Q.source_hash = sha256_hex(Q.source_hash + "|square");
    return Q;
  }
  return quantize(model_operator(spec, pol), Lambda, true, ex);
}

// ---------------------------------------------------------------------------
// Matrix dump.

inline constexpr std::string_view kQopMagic = "SPQOP1";

inline std::string serialize_quantized(const QuantizedOperator& Q) {
  BinaryWriter w;
  w.put_bytes(kQopMagic);
  w.put<std::int32_t>(Q.lattice.L);
  w.put<std::int32_t>(Q.lattice.m);
  w.put<std::int64_t>(Q.size());
  for (int i = 0; i < Q.size(); ++i) {
    const auto md = Q.lattice.mode(i);
    w.put<std::int32_t>(md[0]);
    w.put<std::int32_t>(md[1]);
    w.put<std::int32_t>(md[2]);
  }
  const CMatrix D = Q.dense();
  for (int c = 0; c < D.cols(); ++c)
    for (int r = 0; r < D.rows(); ++r) w.put_complex(D(r, c));
  return w.bytes();
}

inline QuantizedOperator deserialize_quantized(std::string_view bytes) {
  BinaryReader r(bytes);
  require(r.get_bytes(kQopMagic.size()) == kQopMagic, ErrorKind::CacheVersion, "not an SPQOP1 dump");
  QuantizedOperator Q;
  Q.lattice.L = r.get<std::int32_t>();
  Q.lattice.m = r.get<std::int32_t>();
  const auto n = r.get<std::int64_t>();
  require(Q.lattice.L >= 0 && Q.lattice.m >= 1 && n == Q.lattice.size(), ErrorKind::CacheCorrupt,
          "inconsistent SPQOP1 header");
  for (std::int64_t i = 0; i < n; ++i) {
    const int k1 = r.get<std::int32_t>(), k2 = r.get<std::int32_t>(), p = r.get<std::int32_t>();
    require(Q.lattice.index(k1, k2, p) == i, ErrorKind::CacheCorrupt, "unexpected mode order");
  }
  std::vector<Eigen::Triplet<Complex, std::int64_t>> trips;
  for (std::int64_t c = 0; c < n; ++c)
    for (std::int64_t rr = 0; rr < n; ++rr) {
      const Complex z = r.get_complex();
      if (z != Complex{}) trips.emplace_back(rr, c, z);
    }
  require(r.at_end(), ErrorKind::CacheCorrupt, "trailing bytes after SPQOP1 dump");
  Q.matrix.resize(n, n);
  Q.matrix.setFromTriplets(trips.begin(), trips.end());
  return Q;
}

}  // namespace specpart
