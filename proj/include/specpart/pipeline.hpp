#pragma once

// Stage orchestration for the command-line driver: symbols, projections,
// cached spectra, diagnostics, and the report bundle with its manifest.

#include "specpart/config.hpp"
#include "specpart/hyperbolic.hpp"
#include "specpart/weyl.hpp"

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <iostream>

namespace specpart {

using Json = nlohmann::ordered_json;

enum ExitStatus : int { kExitOk = 0, kExitAcceptance = 1, kExitConfig = 2, kExitComputation = 3 };

struct Stages {
  bool symbol_check = false;
  bool spectra = false;
  bool partition = false;
  bool weyl = false;
  bool hyperbolic = false;
};

inline Stages stages_from_config(const RunConfig& c) {
  Stages s;
  s.spectra = c.spectra_csv;
  s.partition = c.partition;
  s.weyl = c.weyl;
  s.hyperbolic = c.hyperbolic;
  return s;
}

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double bound = 0.0;
  std::string note;
};

// Exclusive ownership of an output directory for the lifetime of a run.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir) : path_(dir / ".specpart.lock") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, ErrorKind::Config, "output directory is not writable: " + dir.string());
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    require(fd_ >= 0, ErrorKind::Config,
            errno == EEXIST ? "output directory is locked by another run: " + path_.string()
                            : "output directory is not writable: " + dir.string());
  }
  ~OutputLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

namespace detail {

inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline std::string json_text(const Json& j) { return j.dump(2) + "\n"; }

inline std::vector<double> geometric_shells(int Lambda) {
  std::vector<double> out;
  for (double f : {3.0 / 16, 3.0 / 8, 3.0 / 4}) out.push_back(std::max(1.0, std::round(f * Lambda)));
  return out;
}

inline double max_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v)
    if (std::isfinite(x)) m = std::max(m, x);
  return m;
}

}  // namespace detail

class Pipeline {
 public:
  Pipeline(RunConfig cfg, std::filesystem::path cache_dir) : cfg_(std::move(cfg)), cache_(std::move(cache_dir)) {}

  const RunConfig& config() const { return cfg_; }
  const std::vector<CheckResult>& checks() const { return checks_; }
  const std::map<std::string, std::string>& files() const { return files_; }

  void build_symbols() {
    if (built_) return;
    A_ = model_operator(cfg_.model);
    ps_ = build_projections(A_, cfg_.K);
    order_ = A_.order();
    built_ = true;
    std::string csv = residual_csv(ps_);
    files_["residual_log.csv"] = csv;
  }

  void symbol_check() {
    build_symbols();
    Json j;
    j["model"] = cfg_.model.name;
    j["K"] = cfg_.K;
    j["order"] = order_;
    j["m_minus"] = ps_.eig.m_minus;
    j["m_plus"] = ps_.eig.m_plus;
    j["h_min"] = ps_.eig.h_min;
    j["h_max"] = ps_.eig.h_max;
    const PartitionCheck pc = verify_projection_partition(ps_.eig.fields);
    j["principal_partition_defect"] = pc.max();
    j["reconstruction_error"] = reconstruction_error(ps_.eig, A_.principal());
    j["max_residual"] = ps_.max_residual();
    j["symbol_sha256"] = symbol_digest(A_);
    files_["symbol_check.json"] = detail::json_text(j);
    add_check("symbols.principal_partition", pc.max() <= 1e-10, pc.max(), 1e-10);
    add_check("symbols.projection_residual", ps_.max_residual() <= 1e-8, ps_.max_residual(), 1e-8);
  }

  double trusted_max(int Lambda) const { return trusted_edge(cfg_.trust_frac, ps_.eig.h_min, Lambda, order_); }

  // Spectrum of Q, served from the cache when its digest is present.
  const SpectrumRecord& record(const std::string& label, int Lambda, const std::string& key,
                               const std::function<QuantizedOperator()>& make) {
    auto it = records_.find(key);
    if (it != records_.end()) return it->second;
    SpectrumRecord rec;
    bool cached = false;
    if (std::filesystem::exists(cache_path(cache_, key))) {
      try {
        rec = cache_load(cache_, key);
        cached = true;
      } catch (const Error& e) {
        std::cerr << "warning: discarding cache entry " << key << ": " << e.what() << "\n";
      }
    }
    if (!cached) {
      const QuantizedOperator Q = make();
      require(Q.source_hash == key, ErrorKind::CacheDigest, "operator digest differs from its cache key");
      rec = spectrum(Q, trusted_max(Lambda));
      cache_store(cache_, rec);
    }
    rec.trusted_max = trusted_max(Lambda);
    spectra_log_.push_back({{"operator", label}, {"Lambda", Lambda}, {"source_hash", key}, {"cached", cached}});
    return records_.emplace(key, std::move(rec)).first->second;
  }

  const SpectrumRecord& spectrum_of_model(int Lambda) {
    build_symbols();
    const QuantizedOperator Q = quantize_model(cfg_.model, Lambda);
    return record("A", Lambda, Q.source_hash, [Q] { return Q; });
  }

  const SpectrumRecord& spectrum_of_symbol(int Lambda) {
    build_symbols();
    const QuantizedOperator Q = quantize(A_, Lambda);
    return record("A_symbol", Lambda, Q.source_hash, [Q] { return Q; });
  }

  std::vector<const SpectrumRecord*> spectra_of_series(int Lambda) {
    build_symbols();
    std::vector<const SpectrumRecord*> out;
    std::vector<QuantizedOperator> built;
    for (int j = 1; j <= ps_.eig.m_plus; ++j) {
      const std::string key = series_source_hash(A_, ps_, Lambda, j);
      out.push_back(&record("A_" + std::to_string(j), Lambda, key, [&, j] {
        if (built.empty()) built = quantize_series_operators(A_, ps_, Lambda);
        return built[j - 1];
      }));
    }
    return out;
  }

  void spectra_stage() {
    for (int L : cfg_.lambdas) {
      const SpectrumRecord& rec = spectrum_of_model(L);
      std::string csv = "index,lambda,trusted\n";
      char buf[96];
      for (int i = 0; i < rec.eigenvalues.size(); ++i) {
        const double l = rec.eigenvalues(i);
        std::snprintf(buf, sizeof buf, "%d,%.12e,%d\n", i, l, std::abs(l) <= rec.trusted_max ? 1 : 0);
        csv += buf;
      }
      files_["spectrum_L" + std::to_string(L) + ".csv"] = csv;
    }
  }

  void partition_stage() {
    build_symbols();
    for (int L : cfg_.lambdas) {
      const std::string tag = "partition_L" + std::to_string(L);
      const SpectrumRecord& recA = spectrum_of_symbol(L);
      const auto series = spectra_of_series(L);
      PartitionReport rep;
      rep.alpha = cfg_.alpha;
      rep.beta = partition_beta(cfg_.alpha, 2, order_);
      rep.gamma = partition_gamma(cfg_.alpha, 2, order_);
      rep.labels = classify_eigenfunctions(recA, quantize_projections(ps_, L));
      Json j;
      j["Lambda"] = L;
      j["alpha"] = rep.alpha;
      j["beta"] = rep.beta;
      j["gamma"] = rep.gamma;
      j["trusted_max"] = recA.trusted_max;
      int unclassified = 0;
      for (const auto& e : rep.labels) unclassified += e.classified ? 0 : 1;
      j["classified"] = static_cast<int>(rep.labels.size()) - unclassified;
      j["unclassified"] = unclassified;
      try {
        rep.match = match_series(recA, series, cfg_.alpha, 2, order_);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::CountMatchingFailed) throw;
        j["stabilization"] = nullptr;
        j["error"] = e.what();
        files_[tag + ".csv"] = "k,lambda,label,dominance,mu,residual\n";
        files_[tag + ".json"] = detail::json_text(j);
        add_check(tag + ".stabilized", false, 0, 0, e.what());
        continue;
      }
      const MatchReport& m = rep.match;
      const double rmax = detail::max_of(m.residual);
      const double slope = binned_decay_slope(m.residual);
      j["stabilization"] = m.stabilization;
      j["intervals"] = static_cast<int>(m.partition.nu.size()) - 1;
      j["partition_c"] = m.partition.c;
      j["empirical_C"] = m.partition.empirical_C;
      j["length_exponent"] = detail::finite_or_null(m.partition.length_exponent);
      j["r_alpha"] = m.r_alpha;
      j["candidate_shifts"] = m.candidate_shifts;
      j["later_mismatches"] = m.later_mismatches;
      j["n_lambda"] = m.lambda.size();
      j["n_mu"] = m.mu.size();
      j["residual_max"] = rmax;
      j["residual_slope"] = detail::finite_or_null(slope);
      j["dist_A_to_series_top"] = m.dist_A_to_Aj_top;
      j["dist_series_to_A_top"] = m.dist_Aj_to_A_top;
      files_[tag + ".csv"] = partition_csv(rep);
      files_[tag + ".json"] = detail::json_text(j);
      add_check(tag + ".stabilized", true, m.stabilization, 0);
      const bool decays = rmax <= 1e-10 || (std::isfinite(slope) && slope <= -1.0);
      add_check(tag + ".residual_decay", decays, std::isfinite(slope) ? slope : rmax, -1.0,
                rmax <= 1e-10 ? "residuals below 1e-10" : "binned log-log slope");
    }
  }

  void weyl_stage() {
    build_symbols();
    WeylReport w = weyl_leading(ps_.eig);
    weyl_second(w, A_, ps_);
    Json j;
    j["order"] = order_;
    j["b_total"] = w.b_total;
    j["j"] = w.j;
    j["b_per_j"] = w.b_per_j;
    j["a1_integral"] = w.a1_integral;
    j["a2_integral"] = w.a2_integral;
    j["volume_defect"] = w.volume_defect;
    add_check("weyl.volume_identity", w.volume_defect <= 1e-8, w.volume_defect, 1e-8);
    Json brackets = Json::array();
    double bracket_worst = 0.0;
    for (int jj : ps_.eig.positive_indices()) {
      const BracketCheck bc = bracket_identity_check(A_, ps_, jj);
      brackets.push_back({{"j", jj},
                          {"generalized_route", bc.generalized_route},
                          {"subprincipal_route", bc.subprincipal_route},
                          {"bracket_scale", bc.bracket_scale}});
      bracket_worst = std::max({bracket_worst, bc.generalized_route, bc.subprincipal_route});
    }
    j["bracket_identity"] = brackets;
    add_check("weyl.bracket_identity", bracket_worst <= 1e-8, bracket_worst, 1e-8);
    Json per = Json::array();
    const Mollifier mu(1.0);
    double a1_sum = 0.0;
    for (double a : w.a1_integral) a1_sum += a;
    for (int L : cfg_.lambdas) {
      const SpectrumRecord& rec = spectrum_of_model(L);
      Json e;
      e["Lambda"] = L;
      e["trusted_max"] = rec.trusted_max;
      try {
        const WeylFit f = empirical_weyl_fit(rec);
        e["empirical_b"] = f.b;
        e["empirical_slope"] = f.slope;
        e["fit_lo"] = f.lo;
        e["fit_hi"] = f.hi;
        e["fit_samples"] = f.samples;
        if (L == cfg_.max_lambda()) {
          const double rb = std::abs(f.b / w.b_total - 1);
          const double rs = std::abs(f.slope / (2.0 / order_) - 1);
          add_check("weyl.empirical_b", rb <= 0.05, rb, 0.05, "relative error at the largest cutoff");
          add_check("weyl.exponent", rs <= 0.02, rs, 0.02, "relative error at the largest cutoff");
        }
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::Precondition) throw;
        e["empirical_b"] = nullptr;
        e["error"] = err.what();
        if (L == cfg_.max_lambda()) add_check("weyl.empirical_b", false, 0, 0.05, err.what());
      }
      const HeatScaling hs = heat_scaling(rec, ps_.eig.h_min, order_);
      e["heat_t"] = hs.t;
      e["heat_scaled"] = hs.scaled;
      const double heat_target = std::tgamma(2.0 / order_ + 1) * w.b_total;
      double heat_dev = 0.0;
      for (double v : hs.scaled) heat_dev = std::max(heat_dev, std::abs(v / heat_target - 1));
      e["heat_target"] = heat_target;
      const DensityFit df = fit_density(rec, mu);
      e["density_a1"] = df.a1;
      e["density_a0"] = df.a0;
      per.push_back(e);
      std::vector<double> grid;
      for (int i = 0; i < 64; ++i) grid.push_back(df.lo + (df.hi - df.lo) * i / 63.0);
      const std::vector<double> rho = mollified_density(rec, mu, grid);
      std::string csv = "lambda,density\n";
      char buf[96];
      for (std::size_t i = 0; i < grid.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.12e,%.12e\n", grid[i], rho[i]);
        csv += buf;
      }
      files_["density_L" + std::to_string(L) + ".csv"] = csv;
      if (L == cfg_.max_lambda()) {
        add_check("weyl.heat_scaling", heat_dev <= 0.05, heat_dev, 0.05, "max relative deviation on the window");
        if (order_ == 1.0) {
          const double rd = std::abs(df.a1 / a1_sum - 1);
          add_check("weyl.density_a1", rd <= 0.10, rd, 0.10, "relative error at the largest cutoff");
        }
      }
    }
    j["per_lambda"] = per;
    files_["weyl.json"] = detail::json_text(j);
  }

  void hyperbolic_stage() {
    build_symbols();
    const int L = cfg_.max_lambda();
    const SpectrumRecord& rec = spectrum_of_model(L);
    const bool second_order = cfg_.model.name == "second_order_nonneg";
    const BlockOperator U = second_order ? sqrt_propagator(rec, 1.0) : propagator(rec, 1.0);
    const double unit = U.unitarity_defect();
    Json j;
    j["Lambda"] = L;
    j["propagator"] = second_order ? "exp(-i t sqrt(A))" : "exp(-i t A)";
    j["unitarity_defect"] = unit;
    add_check("hyperbolic.unitarity", unit <= 1e-9, unit, 1e-9);
    const QuantizedProjections Pq = quantize_projections(ps_, L);
    const Lattice lat{L, A_.m()};
    const std::vector<double> shells = detail::geometric_shells(L);
    std::string shell_csv = "j,shell,commutator,cross,leakage\n";
    Json per = Json::array();
    for (int jj : ps_.eig.positive_indices()) {
      const std::uint64_t seed = cfg_.seed * 1000003ULL + static_cast<std::uint64_t>(jj);
      ShellNorms sn;
      if (second_order) {
        sn = sqrt_projection_check(rec, Pq, jj, shells, seed).shells;
      } else {
        sn = commutator_diagnostic(as_action(U), Pq, jj, lat, shells, seed);
      }
      char buf[160];
      for (std::size_t i = 0; i < sn.rho.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%d,%g,%.6e,%.6e,%.6e\n", jj, sn.rho[i], sn.commutator[i], sn.cross[i],
                      sn.leakage[i]);
        shell_csv += buf;
      }
      const double cmax = detail::max_of(sn.commutator);
      const double slope = cmax > 1e-12 ? sn.slope() : std::numeric_limits<double>::quiet_NaN();
      Json e;
      e["j"] = jj;
      e["commutator_slope"] = detail::finite_or_null(slope);
      e["commutator_max"] = cmax;
      e["cross_at_top_shell"] = sn.cross.back();
      const std::string tag = "hyperbolic.j" + std::to_string(jj);
      add_check(tag + ".commutator_decay", cmax <= 1e-12 || slope <= -2.0, std::isfinite(slope) ? slope : cmax, -2.0);
      if (!second_order) {
        add_check(tag + ".cross_term", sn.cross.back() <= 1e-3, sn.cross.back(), 1e-3, "largest shell");
        packet(jj, rec, lat, e);
      }
      per.push_back(e);
    }
    j["series"] = per;
    files_["shells_L" + std::to_string(L) + ".csv"] = shell_csv;
    files_["hyperbolic.json"] = detail::json_text(j);
  }

  // summary.json and manifest.json; the returned status reflects the checks.
  int write_outputs() {
    Json s;
    s["config_hash"] = cfg_.source_hash();
    s["config"] = cfg_.canonical();
    Json cj = Json::array();
    bool all = true;
    for (const auto& c : checks_) {
      Json e;
      e["name"] = c.name;
      e["pass"] = c.pass;
      e["value"] = detail::finite_or_null(c.value);
      e["bound"] = c.bound;
      if (!c.note.empty()) e["note"] = c.note;
      cj.push_back(e);
      all = all && c.pass;
    }
    s["checks"] = cj;
    s["status"] = all ? "pass" : "fail";
    files_["summary.json"] = detail::json_text(s);
    Json m;
    m["config_hash"] = cfg_.source_hash();
    Json fl = Json::array();
    for (const auto& [name, bytes] : files_) {
      write_file_atomic(cfg_.output_dir / name, bytes);
      fl.push_back({{"path", name}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
    }
    m["files"] = fl;
    m["spectra"] = spectra_log_;
    write_file_atomic(cfg_.output_dir / "manifest.json", detail::json_text(m));
    return all ? kExitOk : kExitAcceptance;
  }

 private:
  void add_check(const std::string& name, bool pass, double value, double bound, const std::string& note = {}) {
    checks_.push_back({name, pass, value, bound, note});
  }

  // Packet launched at (1, 2) with frequency (Lambda/4, 0), tracked for |t| <= 1.
  void packet(int jj, const SpectrumRecord& rec, const Lattice& lat, Json& e) {
    int pos = -1;
    for (int p = 0; p < A_.m(); ++p)
      if (signed_index(p, ps_.eig.m_minus) == jj) pos = p;
    const WavePacket pk = make_wave_packet(A_.principal(), pos, lat, 1.0, 2.0, std::max(1, lat.L / 4), 0);
    const Component& h = ps_.eig.field(jj).h;
    const TrackReport tr = track_singularity(rec, pk.coeffs, pk, h, {-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0});
    e["packet_sigma"] = pk.sigma;
    e["packet_max_discrepancy"] = tr.max_discrepancy;
    e["packet_leak_warning"] = tr.leak_warning;
    Json pts = Json::array();
    for (const auto& p : tr.points)
      pts.push_back({{"t", p.t}, {"center", {p.c1, p.c2}}, {"flow", {p.f1, p.f2}}, {"discrepancy", p.discrepancy},
                     {"band_leak", p.band_leak}});
    e["packet_track"] = pts;
    add_check("hyperbolic.j" + std::to_string(jj) + ".packet_tracking", tr.max_discrepancy <= pk.sigma,
              tr.max_discrepancy, pk.sigma, "within one packet width");
    const auto traj = hamiltonian_flow(h, pk.y1, pk.y2, pk.eta1, pk.eta2, 1.0, 64);
    files_["trajectory_j" + std::to_string(jj) + ".csv"] = trajectory_csv(traj);
  }

  RunConfig cfg_;
  std::filesystem::path cache_;
  bool built_ = false;
  Symbol A_;
  ProjectionSet ps_;
  double order_ = 1.0;
  std::map<std::string, SpectrumRecord> records_;
  Json spectra_log_ = Json::array();
  std::vector<CheckResult> checks_;
  std::map<std::string, std::string> files_;
};

inline int run_stages(const RunConfig& cfg, const std::filesystem::path& cache_dir, const Stages& st) {
  OutputLock lock(cfg.output_dir);
  Pipeline p(cfg, cache_dir);
  p.build_symbols();
  if (st.symbol_check) p.symbol_check();
  if (st.spectra) p.spectra_stage();
  if (st.partition) p.partition_stage();
  if (st.weyl) p.weyl_stage();
  if (st.hyperbolic) p.hyperbolic_stage();
  return p.write_outputs();
}

// Aggregate the JSON outputs listed in an existing manifest into report.json,
// verifying every listed digest first.
inline int aggregate_report(const std::filesystem::path& out_dir) {
  OutputLock lock(out_dir);
  const auto mpath = out_dir / "manifest.json";
  require(std::filesystem::exists(mpath), ErrorKind::Io, "no manifest in " + out_dir.string());
  const Json m = Json::parse(read_file(mpath));
  Json rep;
  rep["config_hash"] = m.at("config_hash");
  Json parts = Json::object();
  bool pass = false;
  for (const auto& f : m.at("files")) {
    const std::string name = f.at("path");
    const std::string bytes = read_file(out_dir / name);
    require(sha256_hex(bytes) == f.at("sha256").get<std::string>(), ErrorKind::CacheDigest,
            "output file " + name + " does not match its manifest digest");
    if (name.size() > 5 && name.substr(name.size() - 5) == ".json" && name != "report.json") {
      const Json part = Json::parse(bytes);
      if (name == "summary.json") pass = part.at("status") == "pass";
      parts[name.substr(0, name.size() - 5)] = part;
    }
  }
  rep["status"] = pass ? "pass" : "fail";
  rep["reports"] = parts;
  const std::string text = detail::json_text(rep);
  write_file_atomic(out_dir / "report.json", text);
  Json m2 = m;
  Json fl = Json::array();
  for (const auto& f : m.at("files"))
    if (f.at("path") != "report.json") fl.push_back(f);
  fl.push_back({{"path", "report.json"}, {"sha256", sha256_hex(text)}, {"bytes", text.size()}});
  m2["files"] = fl;
  write_file_atomic(mpath, detail::json_text(m2));
  return pass ? kExitOk : kExitAcceptance;
}

}  // namespace specpart
