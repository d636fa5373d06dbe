#include "specpart/projections.hpp"

#include <gtest/gtest.h>

using namespace specpart;

namespace {

const double kPoints[][4] = {{0.3, 1.1, 1.0, 0.0}, {2.0, 4.5, -0.6, 0.8}, {5.1, 0.2, 0.3, -2.1}, {1.7, 3.3, -1.2, -0.5}};

const ProjectionSet& perturbed_k2() {
  static const ProjectionSet ps = build_projections(model_operator({"two_speed_perturbed", 0.1, 4}), 2);
  return ps;
}

}  // namespace

TEST(Projections, MultiplierProjectionsAreConstantAtEveryOrder) {
  for (const char* name : {"diag_multiplier", "two_speed"}) {
    const Symbol A = model_operator({name, 0.0, 3});
    const ProjectionSet ps = build_projections(A, 3);
    for (const auto& P : ps.P) {
      for (int t = 1; t <= 3; ++t) EXPECT_EQ(component_norm(P.component(t)), 0.0) << name << " order " << t;
      EXPECT_EQ(P.principal().bands().x1, 0);
      EXPECT_EQ(P.principal().bands().x2, 0);
    }
    EXPECT_LT(ps.max_residual(), 1e-13);
  }
}

TEST(Projections, LeadingComponentIsEigenprojection) {
  const ProjectionSet& ps = perturbed_k2();
  for (std::size_t a = 0; a < ps.P.size(); ++a)
    EXPECT_LT(component_norm(ps.P[a].principal() - ps.eig.fields[a].P), 1e-10);
}

TEST(Projections, DefectFamiliesVanishThroughDepth) {
  const ProjectionSet& ps = perturbed_k2();
  std::set<std::string> families;
  for (const auto& e : ps.residual_log) {
    families.insert(e.family);
    EXPECT_LE(e.norm, 1e-8) << e.family << " order " << e.order << " j=" << e.j << " l=" << e.l;
    EXPECT_GE(e.order, -2);
  }
  EXPECT_EQ(families,
            (std::set<std::string>{"principal", "selfadjoint", "orthogonality", "completeness", "commutation"}));
  EXPECT_EQ(residual_csv(ps).substr(0, 21), "order,family,j,l,norm");
}

TEST(Projections, QuantizedIdempotencyDefectDecays) {
  const int K = 1;
  const ProjectionSet ps = build_projections(model_operator({"two_speed_perturbed", 0.1, 3}), K);
  std::vector<double> L, D;
  for (int lam : {8, 16, 32}) {
    L.push_back(lam);
    D.push_back(shell_idempotency_defect(ps, lam).idempotency);
  }
  EXPECT_GT(D[0], D[1]);
  EXPECT_GT(D[1], D[2]);
  EXPECT_LE(loglog_slope(L, D), -(K + 1) + 0.5);
}

TEST(Projections, SingleSpeedCompanionIsTheOperator) {
  const Symbol A = model_operator({"dirac2d", 0.3, 2});
  const ProjectionSet ps = build_projections(A, 2);
  const auto Aj = build_Aj(A, ps);
  ASSERT_EQ(Aj.size(), 1u);
  for (int t = 0; t <= A.depth(); ++t) EXPECT_EQ(component_norm(Aj[0].component(t) - A.component(t)), 0.0);
}

TEST(Projections, DiagonalCompanionOperators) {
  const Symbol A = model_operator({"diag_multiplier", 0.0, 1});
  const auto Aj = build_Aj(A, build_projections(A, 1));
  ASSERT_EQ(Aj.size(), 2u);
  for (const auto& p : kPoints) {
    const double r = std::hypot(p[2], p[3]);
    const CMatrix a1 = Aj[0].evaluate(p[0], p[1], p[2], p[3]);
    const CMatrix a2 = Aj[1].evaluate(p[0], p[1], p[2], p[3]);
    CMatrix e1 = CMatrix::Zero(2, 2), e2 = CMatrix::Zero(2, 2);
    e1(0, 0) = r;
    e1(1, 1) = -2 * r;
    e2(0, 0) = -r;
    e2(1, 1) = 2 * r;
    EXPECT_LT((a1 - e1).norm(), 1e-13);
    EXPECT_LT((a2 - e2).norm(), 1e-13);
  }
}

TEST(Projections, CompanionHasOnePositiveEigenvalue) {
  const Symbol A = model_operator({"two_speed_perturbed", 0.1, 4});
  const ProjectionSet& ps = perturbed_k2();
  const auto Aj = build_Aj(A, ps);
  for (int j = 1; j <= 2; ++j) {
    for (const auto& p : kPoints) {
      Eigen::SelfAdjointEigenSolver<CMatrix> es(Aj[j - 1].principal().evaluate(p[0], p[1], p[2], p[3]));
      const RVector ev = es.eigenvalues();
      EXPECT_LT(ev(0), 0.0);
      EXPECT_GT(ev(1), 0.0);
      const double h = ps.eig.field(j).h.evaluate(p[0], p[1], p[2], p[3])(0, 0).real();
      EXPECT_NEAR(ev(1), h, 1e-10);
    }
  }
}

TEST(Projections, CompanionsCommuteThroughDepth) {
  const Symbol A = model_operator({"two_speed_perturbed", 0.1, 4});
  const ProjectionSet& ps = perturbed_k2();
  const auto Aj = build_Aj(A, ps);
  const Symbol c = compose(Aj[0], Aj[1], 2) - compose(Aj[1], Aj[0], 2);
  for (int t = 0; t <= 2; ++t) EXPECT_LT(component_norm(c.component(t)), 1e-8) << "order " << t;
}

TEST(Projections, DiagonalSignCertificateIsExactlyZero) {
  const Symbol A = model_operator({"diag_multiplier", 0.0, 2});
  const auto cert = certify_sign(A, build_projections(A, 2), 12);
  ASSERT_EQ(cert.size(), 2u);
  for (const auto& c : cert) {
    EXPECT_EQ(c.extreme, 0.0);
    EXPECT_GT(c.shell_modes, 0);
  }
}

TEST(Projections, NegatingTheOperatorFlipsTheCertificate) {
  const Symbol A = model_operator({"dirac2d", 0.3, 2});
  const Symbol B = -1.0 * A;
  const auto ca = certify_sign(A, build_projections(A, 2), 12);
  const auto cb = certify_sign(B, build_projections(B, 2), 12);
  ASSERT_EQ(ca.size(), 2u);
  ASSERT_EQ(cb.size(), 2u);
  // index j of -A is index -j of A
  EXPECT_NEAR(cb[0].extreme, -ca[1].extreme, 1e-12);
  EXPECT_NEAR(cb[1].extreme, -ca[0].extreme, 1e-12);
  EXPECT_GT(ca[1].extreme, -1e-2);
  EXPECT_LT(ca[0].extreme, 1e-2);
}

TEST(Projections, DepthBeyondStoredSymbolIsRejected) {
  const Symbol A = model_operator({"two_speed", 0.0, 1});
  try {
    build_projections(A, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DepthOverflow);
  }
}

TEST(Projections, SerializationIsDeterministic) {
  const ProjectionSet& ps = perturbed_k2();
  const std::string a = serialize_projections(ps);
  EXPECT_EQ(a.substr(0, 7), "SPPROJ1");
  const ProjectionSet again = build_projections(model_operator({"two_speed_perturbed", 0.1, 4}), 2);
  EXPECT_EQ(a, serialize_projections(again));
}
