#include "specpart/spectral.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace specpart;

namespace {

QuantizedOperator fixture(const CMatrix& M, const std::string& tag) {
  QuantizedOperator Q;
  Q.lattice = {0, static_cast<int>(M.rows())};
  Q.matrix = M.sparseView();
  Q.source_hash = sha256_hex(tag);
  return Q;
}

CMatrix random_hermitian(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  CMatrix A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = Complex(g(rng), g(rng));
  return 0.5 * (A + A.adjoint());
}

// Characteristic polynomial by Faddeev-LeVerrier, roots by sign-change bisection.
std::vector<double> charpoly_roots(const CMatrix& A) {
  const int n = static_cast<int>(A.rows());
  std::vector<double> c(n + 1);
  c[n] = 1.0;
  CMatrix M = CMatrix::Zero(n, n);
  for (int k = 1; k <= n; ++k) {
    M = A * M + c[n - k + 1] * CMatrix::Identity(n, n);
    c[n - k] = -(A * M).trace().real() / k;
  }
  auto p = [&](double x) {
    double v = 0.0;
    for (int i = n; i >= 0; --i) v = v * x + c[i];
    return v;
  };
  const double R = A.norm() + 1.0;
  const int grid = 200000;
  std::vector<double> roots;
  double x0 = -R, p0 = p(x0);
  for (int i = 1; i <= grid; ++i) {
    double x1 = -R + 2 * R * i / grid, p1 = p(x1);
    if (p0 == 0.0) roots.push_back(x0);
    if (p0 * p1 < 0) {
      double a = x0, b = x1;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        (p(a) * p(mid) <= 0 ? b : a) = mid;
      }
      roots.push_back(0.5 * (a + b));
    }
    x0 = x1;
    p0 = p1;
  }
  return roots;
}

double op_diff(const CMatrix& a, const CMatrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("specpart-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Spectral, DiagonalMultiplierEigenvaluesAreExact) {
  const QuantizedOperator Q = quantize_model({"diag_multiplier", 0.0, 1}, 6);
  const SpectrumRecord rec = spectrum(Q, 10.0);
  std::vector<double> expect;
  const Excision chi;
  for (int i = 0; i < Q.size(); ++i) {
    const double r = Q.lattice.radius(i);
    expect.push_back((Q.lattice.mode(i)[2] == 0 ? 1.0 : 2.0) * chi(r) * r);
  }
  std::sort(expect.begin(), expect.end());
  ASSERT_EQ(rec.eigenvalues.size(), static_cast<int>(expect.size()));
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(rec.eigenvalues(i), expect[i]);
}

TEST(Spectral, EigenvaluesAreNondecreasingWithSmallResiduals) {
  const QuantizedOperator Q = quantize_model({"two_speed_perturbed", 0.1, 3}, 6);
  const SpectrumRecord rec = spectrum(Q, 10.0);
  const CMatrix D = Q.dense();
  for (int i = 1; i < rec.eigenvalues.size(); ++i) EXPECT_LE(rec.eigenvalues(i - 1), rec.eigenvalues(i));
  double worst = 0.0;
  for (int i = 0; i < rec.n; ++i) {
    const CVector v = rec.eigenvector(i);
    worst = std::max(worst, (D * v - rec.eigenvalues(i) * v).norm());
  }
  EXPECT_LT(worst, 1e-9 * rec.norm);
  const CMatrix V = rec.eigenvectors();
  EXPECT_LT(op_diff(V.adjoint() * V, CMatrix::Identity(rec.n, rec.n)), 1e-9);
}

TEST(Spectral, PermutationInvariance) {
  const CMatrix A = random_hermitian(12, 3);
  Eigen::PermutationMatrix<Eigen::Dynamic> P(12);
  P.setIdentity();
  std::mt19937 rng(5);
  std::shuffle(P.indices().data(), P.indices().data() + 12, rng);
  const CMatrix B = P * A * P.transpose();
  const SpectrumRecord ra = spectrum(fixture(A, "a"), 1.0);
  const SpectrumRecord rb = spectrum(fixture(B, "b"), 1.0);
  EXPECT_LT((ra.eigenvalues - rb.eigenvalues).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Spectral, MatchesCharacteristicPolynomialRoots) {
  const CMatrix A = random_hermitian(4, 11);
  const std::vector<double> roots = charpoly_roots(A);
  ASSERT_EQ(roots.size(), 4u);
  const SpectrumRecord rec = spectrum(fixture(A, "fixture"), 1.0);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(rec.eigenvalues(i), roots[i], 1e-10);
}

TEST(Spectral, TraceInvariance) {
  const QuantizedOperator Q = quantize_model({"dirac2d", 0.3, 3}, 6);
  const SpectrumRecord rec = spectrum(Q, 10.0);
  EXPECT_NEAR(rec.eigenvalues.sum(), Q.dense().trace().real(), 1e-8 * rec.norm * rec.n);
}

TEST(Spectral, CountingFunction) {
  CMatrix D = CMatrix::Zero(5, 5);
  D.diagonal() << -1.0, 0.0, 1.0, 2.0, 2.0;
  const SpectrumRecord rec = spectrum(fixture(D, "count"), 10.0);
  EXPECT_EQ(counting_function(rec, 0.0), 0);
  EXPECT_EQ(counting_function(rec, -3.0), 0);
  EXPECT_EQ(counting_function(rec, 1.0), 0);
  EXPECT_EQ(counting_function(rec, 1.0 + 1e-12), 1);
  EXPECT_EQ(counting_function(rec, 2.0), 1);
  EXPECT_EQ(counting_function(rec, 2.5), 3);
}

TEST(Spectral, CountingFunctionMatchesLatticeEnumeration) {
  const QuantizedOperator Q = quantize_model({"diag_multiplier", 0.0, 1}, 6);
  const SpectrumRecord rec = spectrum(Q, 10.0);
  const Excision chi;
  int direct = 0;
  for (int k1 = -6; k1 <= 6; ++k1)
    for (int k2 = -6; k2 <= 6; ++k2) {
      const double r = std::hypot(k1, k2);
      for (double c : {1.0, 2.0}) {
        const double v = c * chi(r) * r;
        direct += v > 0 && v < 1.5;
      }
    }
  EXPECT_EQ(counting_function(rec, 1.5), direct);
  EXPECT_EQ(direct, 8);  // |k| = 1 and |k| = sqrt 2 in the slow band
}

TEST(Spectral, PositivePartBothForms) {
  const CMatrix A = random_hermitian(10, 7);
  const SpectrumRecord rec = spectrum(fixture(A, "plus"), 1.0);
  const CMatrix theta = matrix_function(rec, [&](double l) { return Complex(theta_step(l, rec.zero_tol())); }).dense();
  const CMatrix absA = matrix_function(rec, [](double l) { return Complex(std::abs(l)); }).dense();
  const CMatrix form1 = A * theta;
  const CMatrix form2 = 0.5 * (A + absA);
  EXPECT_LT(op_diff(form1, form2), 1e-12);
  const RVector ev = hermitian_eigenvalues(form2);
  std::vector<double> expect;
  for (int i = 0; i < 10; ++i) expect.push_back(std::max(rec.eigenvalues(i), 0.0));
  std::sort(expect.begin(), expect.end());
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(ev(i), expect[i], 1e-12);
  EXPECT_LT(op_diff(theta * theta, theta), 1e-9);
  EXPECT_LT(op_diff(theta.adjoint(), theta), 1e-9);
}

TEST(Spectral, FunctionalCalculus) {
  const QuantizedOperator Q = quantize_model({"two_speed_perturbed", 0.1, 3}, 5);
  const SpectrumRecord rec = spectrum(Q, 10.0);
  EXPECT_LT(op_diff(matrix_function(rec, [](double l) { return Complex(l); }).dense(), Q.dense()), 1e-9);
  const BlockOperator U = matrix_function(rec, [](double l) { return std::exp(-kI * l); });
  EXPECT_LT(U.unitarity_defect(), 1e-9);
  const SpectrumRecord pos = spectrum(quantize_model({"second_order_nonneg", 0.1, 3}, 5), 10.0);
  const CMatrix S = fractional_power(pos, 0.5).dense();
  const CMatrix P = matrix_function(pos, [&](double l) { return Complex(theta_step(l, pos.zero_tol()) * l); }).dense();
  EXPECT_LT(op_diff(S * S, P), 1e-9 * pos.norm);
}

TEST(Spectral, FractionalPowerRejectsNegativeSpectrum) {
  CMatrix D = CMatrix::Zero(3, 3);
  D.diagonal() << -1.0, 1.0, 4.0;
  const SpectrumRecord rec = spectrum(fixture(D, "neg"), 10.0);
  try {
    fractional_power(rec, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DomainViolation);
  }
  D(0, 0) = -1e-12;
  const CMatrix S = fractional_power(spectrum(fixture(D, "clip"), 10.0), 0.5).dense();
  EXPECT_EQ(S(0, 0), Complex(0.0));
  EXPECT_NEAR(S(2, 2).real(), 2.0, 1e-14);
}

TEST(Spectral, HeatTrace) {
  CMatrix D = CMatrix::Zero(3, 3);
  D.diagonal() << -5.0, 0.0, 2.0;
  const SpectrumRecord rec = spectrum(fixture(D, "heat"), 10.0);
  EXPECT_NEAR(heat_trace(rec, 1.0), std::exp(-2.0), 1e-15);
  EXPECT_LT(heat_trace(rec, 50.0), 1e-40);
  EXPECT_THROW(heat_trace(rec, 0.0), Error);
}

TEST(Spectral, TrustedEdge) { EXPECT_NEAR(trusted_edge(0.5, 1.0, 16, 1.0), 8.0, 1e-15); }

TEST(Spectral, CacheRoundTripIsBitExact) {
  const auto dir = fresh_dir("cache");
  const SpectrumRecord rec = spectrum(quantize_model({"two_speed_perturbed", 0.1, 2}, 5), 7.5);
  cache_store(dir, rec);
  const SpectrumRecord back = cache_load(dir, rec.source_hash);
  EXPECT_EQ(serialize_record(back), serialize_record(rec));
  EXPECT_EQ(back.trusted_max, 7.5);
  EXPECT_EQ(back.eigenvalues, rec.eigenvalues);
  EXPECT_EQ(back.eigenvectors(), rec.eigenvectors());
  std::filesystem::remove_all(dir);
}

TEST(Spectral, CacheDetectsTamperingAndMisses) {
  const auto dir = fresh_dir("tamper");
  const SpectrumRecord rec = spectrum(quantize_model({"dirac2d", 0.3, 2}, 4), 3.0);
  cache_store(dir, rec);
  const auto path = cache_path(dir, rec.source_hash);
  std::string bytes = read_file(path);
  bytes[bytes.size() / 2] ^= 0x01;
  write_file_atomic(path, bytes);
  try {
    cache_load(dir, rec.source_hash);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::CacheDigest);
  }
  bytes[0] = 'X';
  write_file_atomic(path, bytes);
  try {
    cache_load(dir, rec.source_hash);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::CacheVersion);
  }
  try {
    cache_load(dir, std::string(64, '0'));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::CacheMiss);
  }
  std::filesystem::remove_all(dir);
}
