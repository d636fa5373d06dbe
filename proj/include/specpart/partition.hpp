#pragma once

// Splitting the positive spectrum into m+ series: semi-axis partition,
// eigenfunction classification, count matching and the finite-dimensional
// lemmas used along the way.

#include "specpart/projections.hpp"
#include "specpart/spectral.hpp"

#include <map>
#include <random>
#include <set>

namespace specpart {

inline double partition_beta(double alpha, double d, double s) {
  require(alpha > 0, ErrorKind::Precondition, "alpha must be positive");
  return 1.0 / (1.0 + alpha * d / s);
}
inline double partition_gamma(double alpha, double d, double s) { return 1.0 + d * partition_beta(alpha, d, s) / s; }

struct SemiaxisPartition {
  double alpha = 0, beta = 0, gamma = 0;
  std::vector<double> nu;  // nu[0] = 0
  std::vector<double> c;   // c[0] unused
  std::vector<double> dist;
  double empirical_C = 0.0;  // min_n n^gamma dist_n
  double length_exponent = 0.0;  // fitted exponent of nu_{n+1}-nu_n against nu_n

  bool strictly_increasing() const {
    for (std::size_t i = 1; i < nu.size(); ++i)
      if (!(nu[i] > nu[i - 1])) return false;
    return true;
  }
  // index n with lambda in (nu_n, nu_{n+1}], or -1 beyond the last interval
  int interval_of(double lambda) const {
    auto it = std::lower_bound(nu.begin(), nu.end(), lambda);
    if (it == nu.begin() || it == nu.end()) return -1;
    return static_cast<int>(it - nu.begin()) - 1;
  }
};

inline double distance_to_set(const std::vector<double>& sorted, double x) {
  if (sorted.empty()) return std::numeric_limits<double>::infinity();
  auto it = std::lower_bound(sorted.begin(), sorted.end(), x);
  double d = std::numeric_limits<double>::infinity();
  if (it != sorted.end()) d = *it - x;
  if (it != sorted.begin()) d = std::min(d, x - *std::prev(it));
  return d;
}

// nu_n = n^beta + c_n / n with c_n picked from 65 points of [-beta/4, beta/4]
// to stay as far as possible from the given eigenvalues.
inline SemiaxisPartition build_semiaxis_partition(double alpha, double s, double d, std::vector<double> eigenvalues,
                                                  int n_max) {
  require(alpha > 0, ErrorKind::Precondition, "alpha must be positive");
  require(n_max >= 1, ErrorKind::Precondition, "n_max must be >= 1");
  std::sort(eigenvalues.begin(), eigenvalues.end());
  SemiaxisPartition out;
  out.alpha = alpha;
  out.beta = partition_beta(alpha, d, s);
  out.gamma = partition_gamma(alpha, d, s);
  out.nu.assign(1, 0.0);
  out.c.assign(1, 0.0);
  out.dist.assign(1, 0.0);
  out.empirical_C = std::numeric_limits<double>::infinity();
  const double b = out.beta;
  constexpr int kScan = 65;
  for (int n = 1; n <= n_max; ++n) {
    const double base = std::pow(n, b);
    double best_c = 0.0, best_d = -1.0;
    for (int i = 0; i < kScan; ++i) {
      const double c = -b / 4 + (b / 2) * i / (kScan - 1);
      const double dd = distance_to_set(eigenvalues, base + c / n);
      if (dd > best_d) {
        best_d = dd;
        best_c = c;
      }
    }
    out.nu.push_back(base + best_c / n);
    out.c.push_back(best_c);
    out.dist.push_back(best_d);
    out.empirical_C = std::min(out.empirical_C, std::pow(n, out.gamma) * best_d);
  }
  std::vector<double> x, y;
  for (int n = 1; n < n_max; ++n) {
    x.push_back(std::log(out.nu[n]));
    y.push_back(std::log(out.nu[n + 1] - out.nu[n]));
  }
  if (x.size() >= 2) out.length_exponent = fit_line(x, y).slope;
  return out;
}

// Smallest n_max whose nu reaches past lambda_max.
inline int partition_size_for(double lambda_max, double alpha, double d, double s) {
  const double b = partition_beta(alpha, d, s);
  return static_cast<int>(std::ceil(std::pow(lambda_max + 1.0, 1.0 / b))) + 2;
}

// ---------------------------------------------------------------------------
// Classification of eigenfunctions by dominant projection.

struct EigenLabel {
  int k = 0;  // 1-based index among positive eigenvalues
  double lambda = 0.0;
  int label = 0;
  double dominance = 0.0;
  double negative_mass = 0.0;
  bool classified = true;
  std::map<int, double> mass;
};

struct QuantizedProjections {
  std::vector<int> j;
  std::vector<SpMatrix> Q;
  int m_plus = 0;
};

inline QuantizedProjections quantize_projections(const ProjectionSet& ps, int Lambda, Excision ex = {}) {
  QuantizedProjections out;
  out.m_plus = ps.eig.m_plus;
  for (const auto& f : ps.eig.fields) {
    out.j.push_back(f.j);
    out.Q.push_back(quantize(ps.projection(f.j), Lambda, true, ex).matrix);
  }
  return out;
}

inline std::vector<EigenLabel> classify_eigenfunctions(const SpectrumRecord& rec, const QuantizedProjections& Pq) {
  for (const auto& Q : Pq.Q)
    require(Q.rows() == rec.n, ErrorKind::DimensionMismatch, "projections and spectrum use different lattices");
  std::vector<EigenLabel> out;
  int k = 0;
  for (int i : rec.positive_indices(false)) {
    ++k;
    if (rec.eigenvalues(i) > rec.trusted_max) break;
    const CVector u = rec.eigenvector(i);
    EigenLabel e;
    e.k = k;
    e.lambda = rec.eigenvalues(i);
    e.dominance = -1.0;
    for (std::size_t a = 0; a < Pq.Q.size(); ++a) {
      const double w = (Pq.Q[a] * u).squaredNorm();
      e.mass[Pq.j[a]] = w;
      if (Pq.j[a] < 0) {
        e.negative_mass += w;
      } else if (w > e.dominance) {
        e.dominance = w;
        e.label = Pq.j[a];
      }
    }
    e.classified = e.dominance >= 1.0 / (Pq.m_plus + 1);
    out.push_back(e);
  }
  return out;
}

// Matrices of A_j = A - 2 sum_{l>0, l!=j} P_l* A P_l built from the quantized
// operators. Products are taken on a padded lattice and then compressed, so the
// cutoff enters only once, as it does for A.
inline int series_padding(const Symbol& A, const ProjectionSet& ps) {
  int band = max_x_band(A);
  for (const auto& P : ps.P) band = std::max(band, max_x_band(P));
  return 2 * band + 2;
}

inline std::string series_source_hash(const Symbol& A, const ProjectionSet& ps, int Lambda, int j, Excision ex = {}) {
  std::string key = symbol_digest(A);
  for (const auto& P : ps.P) key += "|" + symbol_digest(P);
  char buf[96];
  std::snprintf(buf, sizeof buf, "|series|L=%d|Lout=%d|ex=%.17g,%.17g", Lambda, Lambda + series_padding(A, ps), ex.r0,
                ex.r1);
  return sha256_hex(key + buf + "|j=" + std::to_string(j));
}

inline std::vector<QuantizedOperator> quantize_series_operators(const Symbol& A, const ProjectionSet& ps, int Lambda,
                                                                Excision ex = {}) {
  const int Lout = Lambda + series_padding(A, ps);
  const QuantizedOperator QA = quantize(A, Lout, true, ex);
  std::vector<SpMatrix> T;
  for (int l = 1; l <= ps.eig.m_plus; ++l) {
    const SpMatrix P = quantize(ps.projection(l), Lout, true, ex).matrix;
    const SpMatrix Pa = P.adjoint();
    T.push_back(SpMatrix(Pa * SpMatrix(QA.matrix * P)));
  }
  const Lattice inner{Lambda, A.m()};
  std::vector<QuantizedOperator> out;
  for (int j = 1; j <= ps.eig.m_plus; ++j) {
    SpMatrix M = QA.matrix;
    for (int l = 1; l <= ps.eig.m_plus; ++l)
      if (l != j) M -= 2.0 * T[l - 1];
    SpMatrix Mi = restrict_to_lattice(M, QA.lattice, inner);
    const SpMatrix adj = Mi.adjoint();
    Mi = 0.5 * (Mi + adj);
    Mi.prune(Complex{});
    Mi.makeCompressed();
    QuantizedOperator q;
    q.lattice = inner;
    q.excision = ex;
    q.matrix = std::move(Mi);
    q.source_hash = series_source_hash(A, ps, Lambda, j, ex);
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Count matching between sigma+(A) and the merged sigma+(A_j).

struct MatchReport {
  SemiaxisPartition partition;
  int stabilization = -1;          // first n of three consecutive matching intervals
  int r_alpha = 0;
  std::vector<int> candidate_shifts;
  std::vector<int> later_mismatches;  // intervals past stabilization with unequal counts
  std::vector<double> lambda, mu;     // positive, trusted
  std::vector<double> residual;       // |lambda_k - mu_{k+r}|, NaN when out of range
  double dist_A_to_Aj_top = 0.0;      // max over top half of dist(lambda_k, U sigma+(A_j))
  double dist_Aj_to_A_top = 0.0;      // max over top half and j of dist(lambda_k^(j), sigma+(A))
  std::vector<double> dist_A_to_Aj, dist_Aj_to_A;
};

inline std::vector<double> positive_values(const SpectrumRecord& rec, double upto) {
  std::vector<double> out;
  for (int i = 0; i < rec.eigenvalues.size(); ++i) {
    const double l = rec.eigenvalues(i);
    if (l > rec.zero_tol() && l <= upto) out.push_back(l);
  }
  return out;
}

inline MatchReport match_series(const SpectrumRecord& recA, const std::vector<const SpectrumRecord*>& recAj, double alpha,
                                double d = 2.0, double s = 1.0) {
  for (const auto* r : recAj)
    require(r->Lambda == recA.Lambda && r->n == recA.n, ErrorKind::DimensionMismatch,
            "series records must share the lattice");
  MatchReport out;
  const double T = recA.trusted_max;
  out.lambda = positive_values(recA, T);
  for (const auto* r : recAj) {
    const auto v = positive_values(*r, T);
    out.mu.insert(out.mu.end(), v.begin(), v.end());
  }
  std::sort(out.mu.begin(), out.mu.end());

  std::vector<double> merged = out.lambda;
  merged.insert(merged.end(), out.mu.begin(), out.mu.end());
  std::sort(merged.begin(), merged.end());
  const double b = partition_beta(alpha, d, s);
  const int n_max = std::max(2, static_cast<int>(std::floor(std::pow(T, 1.0 / b))));
  out.partition = build_semiaxis_partition(alpha, s, d, merged, n_max);
  const auto& nu = out.partition.nu;

  auto count_upto = [](const std::vector<double>& v, double x) {
    return static_cast<int>(std::upper_bound(v.begin(), v.end(), x) - v.begin());
  };
  const int intervals = static_cast<int>(nu.size()) - 1;  // (nu_n, nu_{n+1}] for n < intervals
  std::vector<int> cl(intervals), cm(intervals);
  for (int n = 0; n < intervals; ++n) {
    cl[n] = count_upto(out.lambda, nu[n + 1]) - count_upto(out.lambda, nu[n]);
    cm[n] = count_upto(out.mu, nu[n + 1]) - count_upto(out.mu, nu[n]);
  }
  for (int n = 0; n + 2 < intervals; ++n) {
    if (cl[n] == cm[n] && cl[n + 1] == cm[n + 1] && cl[n + 2] == cm[n + 2] && cl[n] + cl[n + 1] + cl[n + 2] > 0) {
      out.stabilization = n;
      break;
    }
  }
  if (out.stabilization < 0) {
    int first = -1;
    for (int n = 0; n < intervals && first < 0; ++n)
      if (cl[n] != cm[n]) first = n;
    std::string msg = "count matching failed";
    if (first >= 0) {
      char buf[160];
      std::snprintf(buf, sizeof buf, ": first mismatch on (%.9g, %.9g] with %d vs %d eigenvalues", nu[first],
                    nu[first + 1], cl[first], cm[first]);
      msg += buf;
    }
    throw Error(ErrorKind::CountMatchingFailed, msg);
  }
  std::set<int> shifts;
  for (int n = out.stabilization; n < intervals; ++n) {
    if (cl[n] != cm[n]) {
      out.later_mismatches.push_back(n);
      continue;
    }
    if (cl[n] == 0) continue;
    // k' and k'' are the first indices inside the interval
    shifts.insert(count_upto(out.mu, nu[n]) - count_upto(out.lambda, nu[n]));
  }
  out.candidate_shifts.assign(shifts.begin(), shifts.end());
  {
    const int n = out.stabilization;
    int m = n;
    while (m < intervals && (cl[m] == 0 || cl[m] != cm[m])) ++m;
    out.r_alpha = m < intervals ? count_upto(out.mu, nu[m]) - count_upto(out.lambda, nu[m]) : 0;
  }
  out.residual.resize(out.lambda.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < out.lambda.size(); ++k) {
    const long idx = static_cast<long>(k) + out.r_alpha;
    if (idx >= 0 && idx < static_cast<long>(out.mu.size())) out.residual[k] = std::abs(out.lambda[k] - out.mu[idx]);
  }

  // One-sided distances against the full positive spectra.
  const std::vector<double> fullA = positive_values(recA, std::numeric_limits<double>::infinity());
  std::vector<double> fullMu;
  for (const auto* r : recAj) {
    const auto v = positive_values(*r, std::numeric_limits<double>::infinity());
    fullMu.insert(fullMu.end(), v.begin(), v.end());
  }
  std::sort(fullMu.begin(), fullMu.end());
  for (double l : out.lambda) {
    const double dd = distance_to_set(fullMu, l);
    out.dist_A_to_Aj.push_back(dd);
    if (l >= T / 2) out.dist_A_to_Aj_top = std::max(out.dist_A_to_Aj_top, dd);
  }
  for (double l : out.mu) {
    const double dd = distance_to_set(fullA, l);
    out.dist_Aj_to_A.push_back(dd);
    if (l >= T / 2) out.dist_Aj_to_A_top = std::max(out.dist_Aj_to_A_top, dd);
  }
  return out;
}

// Log-log slope of per-bin maxima of a positive sequence indexed from 1; bins are
// geometric in k and start at k_min. Zero or NaN entries are skipped.
inline double binned_decay_slope(const std::vector<double>& v, int bins = 8, int k_min = 8) {
  const int n = static_cast<int>(v.size());
  if (n <= k_min) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> x, y;
  const double lo = std::log(k_min), hi = std::log(n + 1.0);
  for (int b = 0; b < bins; ++b) {
    const int k0 = static_cast<int>(std::exp(lo + (hi - lo) * b / bins));
    const int k1 = static_cast<int>(std::exp(lo + (hi - lo) * (b + 1) / bins));
    double mx = 0.0;
    double kc = 0.0;
    for (int k = std::max(k0, 1); k < std::min(k1, n + 1); ++k) {
      const double r = v[k - 1];
      if (std::isfinite(r) && r > mx) {
        mx = r;
        kc = k;
      }
    }
    if (mx > 0) {
      x.push_back(std::log(kc));
      y.push_back(std::log(mx));
    }
  }
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  return fit_line(x, y).slope;
}

// ---------------------------------------------------------------------------
// Finite-dimensional lemmas.

inline double max_norm(const CMatrix& M) { return M.size() ? M.cwiseAbs().maxCoeff() : 0.0; }

struct GramResult {
  CMatrix G;
  int terms = 0;
  bool in_lemma = true;
};

// G = F^{-1/2} through the binomial series in R = F - I.
inline GramResult gram_orthonormalize(const CMatrix& F, bool allow_fallback = false) {
  const int r = static_cast<int>(F.rows());
  require(F.rows() == F.cols(), ErrorKind::DimensionMismatch, "gram matrix must be square");
  require(max_norm(F - F.adjoint()) <= 1e-14 * std::max(1.0, max_norm(F)), ErrorKind::NotHermitian,
          "gram matrix is not Hermitian");
  const CMatrix R = F - CMatrix::Identity(r, r);
  GramResult out;
  if (max_norm(R) > 1.0 / (3.0 * r * r)) {
    require(allow_fallback, ErrorKind::Precondition, "||F - I||_max exceeds 1/(3 r^2)");
    RVector w;
    CMatrix V;
    hermitian_eigensolve(F, w, V);
    require(w.minCoeff() > 0, ErrorKind::DomainViolation, "gram matrix is not positive definite");
    out.G = V * w.cwiseInverse().cwiseSqrt().asDiagonal() * V.adjoint();
    out.in_lemma = false;
    return out;
  }
  out.G = CMatrix::Identity(r, r);
  CMatrix term = CMatrix::Identity(r, r);
  double coef = 1.0;
  for (int k = 1; k < 400; ++k) {
    coef *= (-0.5 - (k - 1)) / k;
    term = term * R;
    const CMatrix add = coef * term;
    out.G += add;
    out.terms = k;
    if (max_norm(add) < 1e-16) break;
  }
  out.G = 0.5 * (out.G + out.G.adjoint());
  return out;
}

inline CMatrix inverse_sqrt_oracle(const CMatrix& F) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(F);
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() * es.eigenvectors().adjoint();
}

// Random Hermitian F with ||F - I||_max equal to `radius`.
inline CMatrix random_gram_matrix(int r, double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  CMatrix X(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) X(i, j) = Complex(g(rng), g(rng));
  CMatrix H = 0.5 * (X + X.adjoint());
  H *= radius / max_norm(H);
  return CMatrix::Identity(r, r) + H;
}

struct ClusterVerdict {
  bool holds = false;
  int count = 0;
  int r = 0;
  double lo = 0, hi = 0;
  double max_residual = 0.0;
};

// Lemma: r orthonormal u_k with ||(A - mu_k) u_k|| <= eps force r eigenvalues in
// [mu_1 - sqrt(r) eps, mu_r + sqrt(r) eps].
inline ClusterVerdict cluster_count_bound(const std::vector<double>& mu, const CMatrix& U, const SpMatrix& A,
                                          const SpectrumRecord& recA, double eps) {
  const int r = static_cast<int>(mu.size());
  require(r >= 1 && U.cols() == r && U.rows() == A.rows(), ErrorKind::DimensionMismatch,
          "cluster test needs one column per mu");
  require(std::is_sorted(mu.begin(), mu.end()), ErrorKind::Precondition, "mu must be sorted");
  const double orth = max_norm(U.adjoint() * U - CMatrix::Identity(r, r));
  require(orth <= 1e-10, ErrorKind::Precondition,
          "columns are not orthonormal (defect " + std::to_string(orth) + ")");
  ClusterVerdict v;
  v.r = r;
  for (int k = 0; k < r; ++k) {
    const double res = (A * U.col(k) - mu[k] * U.col(k)).norm();
    v.max_residual = std::max(v.max_residual, res);
  }
  require(v.max_residual <= eps, ErrorKind::Precondition,
          "residual hypothesis fails: " + std::to_string(v.max_residual) + " > eps");
  v.lo = mu.front() - std::sqrt(r) * eps;
  v.hi = mu.back() + std::sqrt(r) * eps;
  for (int i = 0; i < recA.eigenvalues.size(); ++i)
    if (recA.eigenvalues(i) >= v.lo && recA.eigenvalues(i) <= v.hi) ++v.count;
  v.holds = v.count >= r;
  return v;
}

struct OracleVerdict {
  bool holds = false;
  double projector_error = 0.0;
  int count_A = 0;
  int count_sum = 0;
  double additivity_defect = 0.0;
  double orthogonality_defect = 0.0;
};

namespace detail {
struct DenseSpectrum {
  RVector w;
  CMatrix V;
};
inline DenseSpectrum dense_spectrum(const CMatrix& A) {
  DenseSpectrum s;
  hermitian_eigensolve(A, s.w, s.V);
  return s;
}
inline CMatrix spectral_projector(const DenseSpectrum& s, const std::function<bool(double)>& keep) {
  CMatrix P = CMatrix::Zero(s.V.rows(), s.V.rows());
  for (int i = 0; i < s.w.size(); ++i)
    if (keep(s.w(i))) P += s.V.col(i) * s.V.col(i).adjoint();
  return P;
}
}  // namespace detail

// Positive parts add and are mutually orthogonal => spectral projectors of the
// positive spectrum below lambda add, and so do the counts.
inline OracleVerdict simultaneous_diag_oracle(const CMatrix& A, const std::vector<CMatrix>& family, double lambda) {
  const int n = static_cast<int>(A.rows());
  require(n <= 256, ErrorKind::Precondition, "oracle is limited to n <= 256");
  for (const auto& Aj : family)
    require(Aj.rows() == n && Aj.cols() == n, ErrorKind::DimensionMismatch, "family member has wrong size");
  double scale = std::max(1.0, max_norm(A));
  const detail::DenseSpectrum sA = detail::dense_spectrum(A);
  const double zt = 1e-12 * scale;
  auto positive_part = [&](const detail::DenseSpectrum& s) {
    CMatrix B = CMatrix::Zero(n, n);
    for (int i = 0; i < s.w.size(); ++i)
      if (s.w(i) > zt) B += s.w(i) * s.V.col(i) * s.V.col(i).adjoint();
    return B;
  };
  std::vector<detail::DenseSpectrum> sj;
  std::vector<CMatrix> plus;
  CMatrix sum = CMatrix::Zero(n, n);
  for (const auto& Aj : family) {
    sj.push_back(detail::dense_spectrum(Aj));
    plus.push_back(positive_part(sj.back()));
    sum += plus.back();
    scale = std::max(scale, max_norm(Aj));
  }
  OracleVerdict v;
  v.additivity_defect = max_norm(positive_part(sA) - sum);
  for (std::size_t a = 0; a < plus.size(); ++a)
    for (std::size_t b = 0; b < plus.size(); ++b)
      if (a != b) v.orthogonality_defect = std::max(v.orthogonality_defect, max_norm(plus[a] * plus[b]));
  require(v.additivity_defect <= 1e-10 * scale, ErrorKind::Precondition,
          "hypothesis A+ = sum A_j+ fails (" + std::to_string(v.additivity_defect) + ")");
  require(v.orthogonality_defect <= 1e-10 * scale * scale, ErrorKind::Precondition,
          "hypothesis A_j+ A_l+ = 0 fails (" + std::to_string(v.orthogonality_defect) + ")");
  auto in_window = [&](double l) { return l > zt && l < lambda; };
  CMatrix Psum = CMatrix::Zero(n, n);
  for (const auto& s : sj) {
    Psum += detail::spectral_projector(s, in_window);
    for (int i = 0; i < s.w.size(); ++i) v.count_sum += in_window(s.w(i));
  }
  for (int i = 0; i < sA.w.size(); ++i) v.count_A += in_window(sA.w(i));
  v.projector_error = max_norm(detail::spectral_projector(sA, in_window) - Psum);
  v.holds = v.projector_error <= 1e-9 && v.count_A == v.count_sum;
  return v;
}

// ---------------------------------------------------------------------------

struct PartitionReport {
  std::vector<EigenLabel> labels;
  MatchReport match;
  double alpha = 0, beta = 0, gamma = 0;
};

inline std::string partition_csv(const PartitionReport& rep) {
  std::string out = "k,lambda,label,dominance,mu,residual\n";
  char buf[256];
  for (std::size_t i = 0; i < rep.match.lambda.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    int label = 0;
    double dom = std::numeric_limits<double>::quiet_NaN();
    for (const auto& e : rep.labels)
      if (e.k == k) {
        label = e.label;
        dom = e.dominance;
      }
    const long idx = static_cast<long>(i) + rep.match.r_alpha;
    const double mu = idx >= 0 && idx < static_cast<long>(rep.match.mu.size()) ? rep.match.mu[idx]
                                                                               : std::numeric_limits<double>::quiet_NaN();
    std::snprintf(buf, sizeof buf, "%d,%.12e,%d,%.6e,%.12e,%.6e\n", k, rep.match.lambda[i], label, dom, mu,
                  rep.match.residual[i]);
    out += buf;
  }
  return out;
}

}  // namespace specpart
