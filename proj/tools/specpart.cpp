#include "specpart/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace specpart;

namespace {

struct Options {
  std::string config;
  std::string cache_dir;
  std::string output;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 1;
};

int execute(const std::string& sub, const Options& o) {
  try {
    if (sub == "report") {
      std::filesystem::path out = o.output;
      if (out.empty()) out = load_config(o.config).output_dir;
      const int status = aggregate_report(out);
      std::cout << (out / "report.json").string() << "\n";
      return status;
    }
    RunConfig cfg = load_config(o.config);
    if (o.seed_set) cfg.seed = o.seed;
    if (!o.output.empty()) cfg.output_dir = o.output;
    cfg.jobs = o.jobs;
    validate(cfg);
    Stages st;
    if (sub == "run") st = stages_from_config(cfg);
    if (sub == "check-symbols") st.symbol_check = true;
    if (sub == "spectrum") st.spectra = true;
    if (sub == "partition") st.partition = true;
    if (sub == "weyl") st.weyl = true;
    if (sub == "evolve") st.hyperbolic = true;
    const int status = run_stages(cfg, resolve_cache_dir(cfg, o.cache_dir), st);
    std::cout << (cfg.output_dir / "manifest.json").string() << "\n";
    if (status != kExitOk) std::cerr << "acceptance checks failed; see summary.json\n";
    return status;
  } catch (const Error& e) {
    std::cerr << "specpart: " << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? kExitConfig : kExitComputation;
  } catch (const std::exception& e) {
    std::cerr << "specpart: " << e.what() << "\n";
    return kExitComputation;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral partition diagnostics for elliptic systems on the 2-torus"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> subs = {
      {"run", "run every stage enabled in the config"},
      {"check-symbols", "build the symbol and its projections and check the identities"},
      {"spectrum", "compute and cache the spectra for every cutoff"},
      {"partition", "count matching against the one-speed companion operators"},
      {"weyl", "Weyl coefficients and empirical counting fits"},
      {"evolve", "propagator, commutator shells and wave-packet tracking"},
      {"report", "aggregate the JSON outputs of a previous run"},
  };
  for (const auto& [name, help] : subs) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", o.config, "config file")->check(CLI::ExistingFile);
    if (name != "report") s->get_option("--config")->required();
    s->add_option("--output", o.output, "output directory (overrides the config)");
    s->add_option("--cache-dir", o.cache_dir, "spectrum cache directory");
    s->add_option_function<std::uint64_t>(
        "--seed", [&o](std::uint64_t v) { o.seed = v, o.seed_set = true; }, "random seed (overrides the config)");
    s->add_option("--jobs", o.jobs, "worker count")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  if (o.config.empty() && o.output.empty()) {
    std::cerr << "specpart: report needs --config or --output\n";
    return kExitConfig;
  }
  return execute(app.get_subcommands().front()->get_name(), o);
}
