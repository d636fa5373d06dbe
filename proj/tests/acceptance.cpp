// One PASS/FAIL line per acceptance criterion; exit status 1 when any fails.

#include "specpart/hyperbolic.hpp"
#include "specpart/partition.hpp"
#include "specpart/weyl.hpp"

#include <nlohmann/json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

using namespace specpart;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void need(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back((ok ? "" : "!") + what);
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<const SpectrumRecord*> pointers(const std::vector<SpectrumRecord>& v) {
  std::vector<const SpectrumRecord*> out;
  for (const auto& r : v) out.push_back(&r);
  return out;
}

CMatrix random_unitary(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  CMatrix X(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) X(i, j) = Complex(g(rng), g(rng));
  return Eigen::HouseholderQR<CMatrix>(X).householderQ();
}

template <class F>
bool rejects(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == ErrorKind::Precondition;
  }
  return false;
}

// ---------------------------------------------------------------------------

Outcome projection_contracts() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  const Symbol A = model_operator({"two_speed_perturbed", 0.1, 5});
  const ProjectionSet ps = build_projections(A, 3);
  std::map<std::string, double> fam;
  int deepest = 0;
  for (const auto& e : ps.residual_log) {
    fam[e.family] = std::max(fam[e.family], e.norm);
    deepest = std::min(deepest, e.order);
  }
  double worst = 0.0;
  for (const auto& [k, v] : fam) worst = std::max(worst, v);
  o.need(fam.size() == 5, std::to_string(fam.size()) + " defect families");
  o.need(deepest <= -3, "defects logged to order " + std::to_string(deepest));
  o.need(worst <= 1e-8, "max defect " + fmt("%.2e", worst));
  std::vector<double> L, D;
  for (int Lam : {8, 16, 32}) {
    L.push_back(Lam);
    D.push_back(shell_idempotency_defect(ps, Lam).idempotency);
  }
  const double slope = loglog_slope(L, D);
  o.need(slope <= -3.5, "idempotency slope " + fmt("%.2f", slope));
  const double t = seconds_since(t0);
  o.need(t <= 300, "runtime " + fmt("%.0fs", t));
  return o;
}

Outcome sign_definiteness() {
  Outcome o;
  for (int K : {3, 4}) {
    const Symbol A = model_operator({"two_speed_perturbed", 0.1, K + 2});
    const ProjectionSet ps = build_projections(A, K);
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& c : certify_sign(A, ps, 24))
      if (c.j > 0) worst = std::min(worst, c.extreme);
    const double bound = K == 3 ? -1e-3 : -1e-4;
    o.need(worst >= bound, "K=" + std::to_string(K) + " min Rayleigh " + fmt("%.2e", worst));
  }
  return o;
}

struct Series {
  SpectrumRecord recA;
  std::vector<SpectrumRecord> recAj;
};

Series series(const ModelSpec& spec, int K, int Lambda) {
  const Symbol A = model_operator(spec);
  const ProjectionSet ps = build_projections(A, K);
  const double T = trusted_edge(0.45, ps.eig.h_min, Lambda, A.order());
  Series s{spectrum(quantize(A, Lambda), T), {}};
  for (const auto& q : quantize_series_operators(A, ps, Lambda)) s.recAj.push_back(spectrum(q, T));
  return s;
}

Outcome spectral_partition() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  constexpr double kAlpha = 0.5;
  {
    const Series s = series({"diag_multiplier", 0.0, 3}, 1, 16);
    const MatchReport m = match_series(s.recA, pointers(s.recAj), kAlpha);
    double rmax = 0.0;
    for (double r : m.residual)
      if (std::isfinite(r)) rmax = std::max(rmax, r);
    o.need(m.stabilization >= 0, "diag r_alpha " + std::to_string(m.r_alpha));
    o.need(rmax <= 1e-10, "diag residual " + fmt("%.1e", rmax));
  }
  double top[2][2] = {};
  for (int K : {1, 3}) {
    const Series s = series({"two_speed_perturbed", 0.1, K + 2}, K, 24);
    const MatchReport m = match_series(s.recA, pointers(s.recAj), kAlpha);
    top[K == 3][0] = m.dist_A_to_Aj_top;
    top[K == 3][1] = m.dist_Aj_to_A_top;
    if (K != 3) continue;
    o.need(m.stabilization >= 0, "stabilized at n=" + std::to_string(m.stabilization));
    const double slope = binned_decay_slope(m.residual);
    o.need(slope <= -1.0, "residual slope " + fmt("%.2f", slope));
  }
  for (int side = 0; side < 2; ++side) {
    const double shrink = top[0][side] / top[1][side];
    o.need(shrink >= 4.0, std::string(side ? "series->A" : "A->series") + " top-half distance " +
                              fmt("%.2e", top[0][side]) + " -> " + fmt("%.2e", top[1][side]) + " (x" +
                              fmt("%.2f", shrink) + ")");
  }
  const double t = seconds_since(t0);
  o.need(t <= 900, "runtime " + fmt("%.0fs", t));
  return o;
}

Outcome partition_geometry() {
  Outcome o;
  bool exact = true;
  for (auto [alpha, beta, gamma] : {std::tuple{4.0, 1.0 / 9.0, 11.0 / 9.0}, std::tuple{0.5, 0.5, 2.0},
                                    std::tuple{1.0, 1.0 / 3.0, 5.0 / 3.0}})
    exact = exact && std::abs(partition_beta(alpha, 2, 1) - beta) <= 2e-16 &&
            std::abs(partition_gamma(alpha, 2, 1) - gamma) <= 4e-16;
  o.need(exact, "beta, gamma closed forms");
  const SpectrumRecord rec = spectrum(quantize_model({"two_speed", 0.0, 1}, 16), 1e9);
  const double alpha = 4.0;
  const SemiaxisPartition p = build_semiaxis_partition(alpha, 1, 2, rec.positive(false), 200);
  o.need(p.strictly_increasing(), "nu strictly increasing");
  bool c_in_range = true;
  for (std::size_t n = 1; n < p.c.size(); ++n) c_in_range = c_in_range && std::abs(p.c[n]) <= p.beta / 4 + 1e-15;
  o.need(c_in_range, "c_n in [-beta/4, beta/4]");
  o.need(p.empirical_C > 0, "C " + fmt("%.2e", p.empirical_C));
  const double target = -alpha * 2 / 1;
  o.need(std::abs(p.length_exponent / target - 1) <= 0.15, "length exponent " + fmt("%.3f", p.length_exponent));
  return o;
}

Outcome gram_lemma() {
  Outcome o;
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> pick_r(1, 64);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int violations = 0;
  double worst_gfg = 0, worst_oracle = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int r = pick_r(rng);
    const double radius = u(rng) / (3.0 * r * r);
    const CMatrix F = random_gram_matrix(r, radius, rng);
    const GramResult g = gram_orthonormalize(F);
    const CMatrix I = CMatrix::Identity(r, r);
    const double gfg = max_norm(g.G * F * g.G - I);
    const double oracle = max_norm(g.G - inverse_sqrt_oracle(F));
    worst_gfg = std::max(worst_gfg, gfg);
    worst_oracle = std::max(worst_oracle, oracle);
    if (!g.in_lemma || gfg > 1e-12 || max_norm(g.G - I) > max_norm(F - I) || oracle > 1e-11) ++violations;
  }
  o.need(violations == 0, std::to_string(violations) + " violations in 100");
  o.need(worst_gfg <= 1e-12, "max |GFG-I| " + fmt("%.1e", worst_gfg));
  o.need(worst_oracle <= 1e-11, "max |G-oracle| " + fmt("%.1e", worst_oracle));
  return o;
}

// A = sum of members that are simultaneously diagonal in a random basis, each
// positive on its own block of coordinates.
struct Family {
  CMatrix A;
  std::vector<CMatrix> members;
};

Family commuting_family(int n, int members, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  std::uniform_int_distribution<int> owner(-1, members - 1);
  const CMatrix W = random_unitary(n, seed + 1);
  std::vector<RVector> d(members, RVector::Zero(n));
  RVector dA = RVector::Zero(n);
  for (int i = 0; i < n; ++i) {
    const int who = owner(rng);
    for (int l = 0; l < members; ++l) d[l](i) = l == who ? u(rng) : -u(rng);
    dA(i) = who >= 0 ? d[who](i) : -u(rng);
  }
  auto conj = [&](const RVector& v) { return CMatrix(W * v.cast<Complex>().asDiagonal() * W.adjoint()); };
  Family f{conj(dA), {}};
  for (const auto& v : d) f.members.push_back(conj(v));
  return f;
}

Outcome oracle_additivity() {
  Outcome o;
  double worst = 0;
  bool counts = true, holds = true;
  for (auto [n, members] : {std::pair{8, 2}, std::pair{64, 3}, std::pair{256, 2}, std::pair{256, 4}}) {
    const Family f = commuting_family(n, members, 100 + n + members);
    for (double lambda : {0.5, 2.0, 4.5, 10.0}) {
      const OracleVerdict v = simultaneous_diag_oracle(f.A, f.members, lambda);
      worst = std::max(worst, v.projector_error);
      counts = counts && v.count_A == v.count_sum;
      holds = holds && v.holds;
    }
  }
  o.need(holds && worst <= 1e-9, "max projector error " + fmt("%.1e", worst));
  o.need(counts, "counts additive");
  const Family f = commuting_family(32, 2, 7);
  CMatrix overlap = f.members[1];
  overlap += f.members[0];  // positive parts no longer orthogonal to A's
  bool rejected = rejects([&] { simultaneous_diag_oracle(f.A, {f.members[0], overlap}, 3.0); });
  const CMatrix noncommuting = CMatrix(random_unitary(32, 99) * f.members[0] * random_unitary(32, 99).adjoint());
  rejected = rejected && rejects([&] { simultaneous_diag_oracle(f.A, {noncommuting, f.members[1]}, 3.0); });
  const CMatrix big = CMatrix::Identity(257, 257);
  rejected = rejected && rejects([&] { simultaneous_diag_oracle(big, {big}, 3.0); });
  o.need(rejected, "negative controls rejected");
  return o;
}

// |xi| (3/2 + (1/2) n . sigma) with an x-dependent tilt, so the bracket term of
// the second coefficient is nonzero.
Symbol tilted_two_speed() {
  Component c = sample_component(2, 1.0, {12, 0, 1}, [](double x1, double, double th) {
    const double t = 0.6 * std::sin(x1);
    const CMatrix n = std::cos(t) * (std::cos(th) * pauli(1) + std::sin(th) * pauli(2)) + std::sin(t) * pauli(3);
    return CMatrix(1.5 * CMatrix::Identity(2, 2) + 0.5 * n);
  });
  Symbol a(2, 1.0);
  a.push(c);
  for (int t = 1; t <= 2; ++t) a.push(Component(2, 1.0 - t, {0, 0, 0}));
  return a;
}

Outcome weyl_law() {
  Outcome o;
  const double b = 5 * kPi / 4;
  const ModelSpec spec{"two_speed", 0.0, 3};
  const Symbol A = model_operator(spec);
  const ProjectionSet ps = build_projections(A, 2);
  WeylReport w = weyl_leading(ps.eig);
  weyl_second(w, A, ps);
  o.need(std::abs(w.b_total - b) <= 1e-12, "closed-form b " + fmt("%.12f", w.b_total));
  o.need(w.volume_defect <= 1e-8, "volume identity " + fmt("%.1e", w.volume_defect));
  const int L = 32;
  const SpectrumRecord rec = spectrum(quantize_model(spec, L), trusted_edge(0.45, ps.eig.h_min, L, 1));
  const WeylFit f = empirical_weyl_fit(rec);
  o.need(std::abs(f.b / b - 1) <= 0.05, "empirical b " + fmt("%.4f", f.b));
  o.need(std::abs(f.slope / 2 - 1) <= 0.02, "exponent " + fmt("%.4f", f.slope));
  const HeatScaling hs = heat_scaling(rec, ps.eig.h_min, 1);
  double heat = 0;
  for (double v : hs.scaled) heat = std::max(heat, std::abs(v / (5 * kPi / 2) - 1));
  o.need(heat <= 0.05, "heat deviation " + fmt("%.3f", heat));
  double a1 = 0;
  for (double v : w.a1_integral) a1 += v;
  const DensityFit df = fit_density(rec, Mollifier(1.0));
  o.need(std::abs(df.a1 / a1 - 1) <= 0.10, "density a1 " + fmt("%.4f", df.a1) + " vs " + fmt("%.4f", a1));
  double bracket = 0, scale = 0;
  for (const auto& [S, K] : {std::pair{model_operator({"two_speed_perturbed", 0.1, 5}), 3}, std::pair{tilted_two_speed(), 1}}) {
    const ProjectionSet pp = build_projections(S, K);
    for (int j : {1, 2}) {
      const BracketCheck bc = bracket_identity_check(S, pp, j);
      bracket = std::max({bracket, bc.generalized_route, bc.subprincipal_route});
      scale = std::max(scale, bc.bracket_scale);
    }
  }
  o.need(bracket <= 1e-8, "bracket identity " + fmt("%.1e", bracket) + " (bracket scale " + fmt("%.2f", scale) + ")");
  return o;
}

Outcome hyperbolic() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  const int L = 32;
  const std::vector<double> shells = {6, 12, 24};
  const ModelSpec spec{"two_speed_perturbed", 0.1, 5};
  const Symbol A = model_operator(spec);
  const ProjectionSet ps = build_projections(A, 3);
  const SpectrumRecord rec = spectrum(quantize_model(spec, L), trusted_edge(0.45, ps.eig.h_min, L, 1));
  double unit = 0;
  for (double t : {-1.0, 0.5, 1.0}) unit = std::max(unit, propagator(rec, t).unitarity_defect());
  const QuantizedProjections Pq = quantize_projections(ps, L);
  const Lattice lat{L, 2};
  const BlockOperator U = propagator(rec, 1.0);
  for (int j : {1, 2}) {
    const ShellNorms sn = commutator_diagnostic(as_action(U), Pq, j, lat, shells, 42 + j);
    const std::string tag = "j=" + std::to_string(j);
    o.need(sn.slope() <= -2.0, tag + " commutator slope " + fmt("%.2f", sn.slope()));
    o.need(sn.cross.back() <= 1e-3, tag + " cross " + fmt("%.1e", sn.cross.back()));
    const WavePacket pk = make_wave_packet(A.principal(), j - 1, lat, 1.0, 2.0, L / 4, 0);
    const TrackReport tr =
        track_singularity(rec, pk.coeffs, pk, ps.eig.field(j).h, {-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0});
    o.need(tr.max_discrepancy <= pk.sigma,
           tag + " packet drift " + fmt("%.3f", tr.max_discrepancy) + " / width " + fmt("%.3f", pk.sigma));
  }
  const ModelSpec s2{"second_order_nonneg", 0.1, 5};
  const ProjectionSet ps2 = build_projections(model_operator(s2), 3);
  const SpectrumRecord r2 = spectrum(quantize_model(s2, L), 1e9);
  unit = std::max(unit, sqrt_propagator(r2, 1.0).unitarity_defect());
  o.need(unit <= 1e-9, "unitarity " + fmt("%.1e", unit));
  const QuantizedProjections Pq2 = quantize_projections(ps2, L);
  for (int j : {1, 2}) {
    const SqrtProjectionReport rep = sqrt_projection_check(r2, Pq2, j, shells, 7 + j);
    o.need(rep.slope <= -2.0, "sqrt j=" + std::to_string(j) + " slope " + fmt("%.2f", rep.slope));
  }
  const double t = seconds_since(t0);
  o.need(t <= 1200, "runtime " + fmt("%.0fs", t));
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  Outcome o;
  const char* bin = std::getenv("SPECPART_BIN");
  if (!bin) {
    o.need(false, "SPECPART_BIN not set");
    return o;
  }
  const fs::path root = fs::temp_directory_path() / ("specpart-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "run.ini") << "[model]\nname = two_speed_perturbed\neps = 0.1\n\n"
                                     "[run]\nlambdas = 12, 16\nK = 2\nseed = 19\n\n"
                                     "[stages]\npartition = true\nweyl = true\nhyperbolic = true\nspectra_csv = true\n";
  bool ran = true;
  for (const char* tag : {"a", "b"}) {
    const fs::path out = root / tag;
    const std::string cmd = "SPECPART_CACHE='" + (root / (std::string(tag) + "-cache")).string() + "' '" + bin +
                            "' run --config '" + (root / "run.ini").string() + "' --output '" + out.string() +
                            "' >/dev/null 2>&1; '" + bin + "' report --output '" + out.string() + "' >/dev/null 2>&1";
    const int raw = std::system(cmd.c_str());
    const int rc = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    ran = ran && (rc == 0 || rc == 1) && fs::exists(out / "report.json");
  }
  o.need(ran, "two runs completed");
  if (ran) {
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(root / "a"))
      if (e.is_regular_file()) names.insert(e.path().filename().string());
    std::set<std::string> other;
    for (const auto& e : fs::directory_iterator(root / "b"))
      if (e.is_regular_file()) other.insert(e.path().filename().string());
    int differing = 0;
    for (const auto& n : names) differing += slurp(root / "a" / n) != slurp(root / "b" / n);
    o.need(names == other && differing == 0,
           std::to_string(names.size()) + " files, " + std::to_string(differing) + " differ");
  }
  fs::remove_all(root);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"projection contracts", projection_contracts},
      {"sign definiteness", sign_definiteness},
      {"spectral partition", spectral_partition},
      {"partition geometry", partition_geometry},
      {"gram orthonormalization", gram_lemma},
      {"positive-part oracle", oracle_additivity},
      {"weyl law", weyl_law},
      {"hyperbolic propagation", hyperbolic},
      {"determinism", determinism},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.need(false, std::string("error: ") + e.what());
    }
    std::string detail;
    for (const auto& n : o.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::printf("%s %zu %s (%.0fs): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                seconds_since(t0), detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
