#pragma once

// Run configuration: a sectioned key/value file, validated and canonicalized
// so that its digest can key reports and caches.

#include "specpart/spectral.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>

namespace specpart {

struct RunConfig {
  ModelSpec model;
  std::vector<int> lambdas{16};
  int K = 3;
  double alpha = 0.5;
  double trust_frac = 0.45;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "specpart-out";
  std::filesystem::path cache_dir;  // empty: <output_dir>/cache
  bool partition = true;
  bool weyl = false;
  bool hyperbolic = false;
  bool spectra_csv = false;
  int jobs = 1;
  bool depth_explicit = false;

  // Sorted key=value lines over every field that affects results.
  std::string canonical() const;
  std::string source_hash() const { return sha256_hex(canonical()); }
  int max_lambda() const { return *std::max_element(lambdas.begin(), lambdas.end()); }
};

namespace detail {

inline std::string canonical_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  const char* b = text.data();
  const char* e = b + text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  require(ec == std::errc() && p == e && std::isfinite(v), ErrorKind::Config,
          "config key '" + key + "' expects a number, got '" + text + "'");
  return v;
}

inline long long parse_int(const std::string& key, const std::string& text) {
  long long v = 0;
  const char* b = text.data();
  const char* e = b + text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  require(ec == std::errc() && p == e, ErrorKind::Config,
          "config key '" + key + "' expects an integer, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "yes" || text == "on" || text == "1") return true;
  if (text == "false" || text == "no" || text == "off" || text == "0") return false;
  throw Error(ErrorKind::Config, "config key '" + key + "' expects a boolean, got '" + text + "'");
}

inline std::string trim_ws(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline void check_range(bool ok, const std::string& key, const std::string& range) {
  require(ok, ErrorKind::Config, "config key '" + key + "' must lie in " + range);
}

}  // namespace detail

inline std::string RunConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["model.name"] = model.name;
  kv["model.eps"] = detail::canonical_number(model.eps);
  kv["model.depth"] = std::to_string(model.depth);
  std::string ls;
  for (std::size_t i = 0; i < lambdas.size(); ++i) ls += (i ? "," : "") + std::to_string(lambdas[i]);
  kv["run.lambdas"] = ls;
  kv["run.K"] = std::to_string(K);
  kv["run.alpha"] = detail::canonical_number(alpha);
  kv["run.trust_frac"] = detail::canonical_number(trust_frac);
  kv["run.seed"] = std::to_string(seed);
  kv["stages.partition"] = partition ? "true" : "false";
  kv["stages.weyl"] = weyl ? "true" : "false";
  kv["stages.hyperbolic"] = hyperbolic ? "true" : "false";
  kv["stages.spectra_csv"] = spectra_csv ? "true" : "false";
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline void validate(const RunConfig& c) {
  validate_model(c.model);
  detail::check_range(!c.lambdas.empty() && c.lambdas.size() <= 8, "run.lambdas", "a list of 1 to 8 cutoffs");
  for (int L : c.lambdas) detail::check_range(L >= 4 && L <= 64, "run.lambdas", "[4, 64]");
  detail::check_range(c.K >= 0 && c.K <= 6, "run.K", "[0, 6]");
  detail::check_range(c.model.depth >= c.K, "model.depth", "[K, 12]");
  detail::check_range(c.alpha > 0 && c.alpha <= 16, "run.alpha", "(0, 16]");
  detail::check_range(c.trust_frac > 0 && c.trust_frac < 1, "run.trust_frac", "(0, 1)");
  detail::check_range(c.jobs >= 1 && c.jobs <= 256, "jobs", "[1, 256]");
}

// Relative paths in the file are taken relative to the file's directory.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorKind::Config, std::string("config parse error: ") + e.what());
  }
  static const std::map<std::string, std::set<std::string>> known = {
      {"model", {"name", "eps", "depth"}},
      {"run", {"lambdas", "K", "alpha", "trust_frac", "seed", "output", "cache"}},
      {"stages", {"partition", "weyl", "hyperbolic", "spectra_csv"}},
  };
  RunConfig c;
  for (const auto& [section, body] : tree) {
    const auto it = known.find(section);
    require(it != known.end() && !body.empty(), ErrorKind::Config, "unknown config section '" + section + "'");
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      require(it->second.count(key) == 1, ErrorKind::Config, "unknown config key '" + full + "'");
      const std::string v = detail::trim_ws(node.data());
      if (full == "model.name") c.model.name = v;
      if (full == "model.eps") c.model.eps = detail::parse_double(full, v);
      if (full == "model.depth") {
        c.model.depth = static_cast<int>(detail::parse_int(full, v));
        c.depth_explicit = true;
      }
      if (full == "run.lambdas") {
        c.lambdas.clear();
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ','))
          c.lambdas.push_back(static_cast<int>(detail::parse_int(full, detail::trim_ws(item))));
      }
      if (full == "run.K") c.K = static_cast<int>(detail::parse_int(full, v));
      if (full == "run.alpha") c.alpha = detail::parse_double(full, v);
      if (full == "run.trust_frac") c.trust_frac = detail::parse_double(full, v);
      if (full == "run.seed") {
        const long long s = detail::parse_int(full, v);
        detail::check_range(s >= 0, full, "[0, 2^63)");
        c.seed = static_cast<std::uint64_t>(s);
      }
      if (full == "run.output") c.output_dir = v;
      if (full == "run.cache") c.cache_dir = v;
      if (section == "stages") {
        const bool b = detail::parse_bool(full, v);
        if (key == "partition") c.partition = b;
        if (key == "weyl") c.weyl = b;
        if (key == "hyperbolic") c.hyperbolic = b;
        if (key == "spectra_csv") c.spectra_csv = b;
      }
    }
  }
  if (!c.depth_explicit) c.model.depth = std::min(12, c.K + 2);
  if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
  if (!c.cache_dir.empty() && c.cache_dir.is_relative()) c.cache_dir = base_dir / c.cache_dir;
  validate(c);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::Config, "config file not found: " + path.string());
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
  return parse_config(text, path.parent_path());
}

// Precedence: explicit flag, then SPECPART_CACHE, then the config file, then <output>/cache.
inline std::filesystem::path resolve_cache_dir(const RunConfig& c, const std::string& flag = {}) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SPECPART_CACHE"); env && *env) return env;
  if (!c.cache_dir.empty()) return c.cache_dir;
  return c.output_dir / "cache";
}

}  // namespace specpart
