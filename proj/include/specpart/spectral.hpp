#pragma once

// Block-diagonal Hermitian eigensolves, functional calculus, counting
// functions, heat traces and the on-disk spectrum cache.

#include "specpart/quantization.hpp"

#ifndef lapack_complex_float
#define lapack_complex_float std::complex<float>
#endif
#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#endif
#include <lapacke.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <unistd.h>

namespace specpart {

// Connected components of the sparsity graph of a structurally symmetric
// matrix, restricted to `subset` when given. Blocks are listed by smallest
// mode, modes ascending inside each block.
inline std::vector<std::vector<int>> sparsity_blocks(const SpMatrix& M, const std::vector<int>* subset = nullptr) {
  const int n = static_cast<int>(M.rows());
  std::vector<char> active(n, subset ? 0 : 1);
  if (subset)
    for (int i : *subset) active[i] = 1;
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (int c = 0; c < M.outerSize(); ++c) {
    if (!active[c]) continue;
    for (SpMatrix::InnerIterator it(M, c); it; ++it) {
      const int r = static_cast<int>(it.row());
      if (!active[r] || it.value() == Complex{}) continue;
      const int a = find(r), b = find(c);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i)
    if (active[i]) groups[find(i)].push_back(i);
  std::vector<std::vector<int>> out;
  for (auto& [root, modes] : groups) out.push_back(std::move(modes));
  return out;
}

struct EigenBlock {
  std::vector<int> modes;
  RVector values;   // ascending
  CMatrix vectors;  // columns aligned with values
};

// Dense Hermitian eigensolve (LAPACK zheevd), ascending eigenvalues.
inline void hermitian_eigensolve(const CMatrix& A, RVector& values, CMatrix& vectors) {
  const lapack_int n = static_cast<lapack_int>(A.rows());
  vectors = 0.5 * (A + A.adjoint());
  values.resize(n);
  if (n == 0) return;
  const lapack_int info =
      LAPACKE_zheevd(LAPACK_COL_MAJOR, 'V', 'L', n, vectors.data(), n, values.data());
  require(info == 0, ErrorKind::EigensolverFailure, "zheevd returned " + std::to_string(info));
}

inline RVector hermitian_eigenvalues(const CMatrix& A) {
  const lapack_int n = static_cast<lapack_int>(A.rows());
  CMatrix work = 0.5 * (A + A.adjoint());
  RVector values(n);
  if (n == 0) return values;
  const lapack_int info = LAPACKE_zheevd(LAPACK_COL_MAJOR, 'N', 'L', n, work.data(), n, values.data());
  require(info == 0, ErrorKind::EigensolverFailure, "zheevd returned " + std::to_string(info));
  return values;
}

inline std::vector<EigenBlock> block_eigensolve(const SpMatrix& M, const std::vector<int>* subset = nullptr) {
  std::vector<EigenBlock> out;
  for (auto& modes : sparsity_blocks(M, subset)) {
    EigenBlock b;
    b.modes = std::move(modes);
    hermitian_eigensolve(compress(M, b.modes), b.values, b.vectors);
    out.push_back(std::move(b));
  }
  return out;
}

// Block-diagonal operator given in the block bases.
struct BlockOperator {
  int n = 0;
  std::vector<std::vector<int>> modes;
  std::vector<CMatrix> mats;

  CVector apply(const CVector& v) const {
    CVector out = CVector::Zero(n);
    for (std::size_t b = 0; b < mats.size(); ++b) {
      const auto& md = modes[b];
      CVector x(md.size());
      for (std::size_t i = 0; i < md.size(); ++i) x(i) = v(md[i]);
      const CVector y = mats[b] * x;
      for (std::size_t i = 0; i < md.size(); ++i) out(md[i]) = y(i);
    }
    return out;
  }
  CMatrix apply(const CMatrix& V) const {
    CMatrix out(n, V.cols());
    for (int c = 0; c < V.cols(); ++c) out.col(c) = apply(CVector(V.col(c)));
    return out;
  }
  CMatrix dense() const {
    CMatrix out = CMatrix::Zero(n, n);
    for (std::size_t b = 0; b < mats.size(); ++b)
      for (std::size_t i = 0; i < modes[b].size(); ++i)
        for (std::size_t j = 0; j < modes[b].size(); ++j) out(modes[b][i], modes[b][j]) = mats[b](i, j);
    return out;
  }
  BlockOperator operator*(const BlockOperator& o) const {
    require(modes == o.modes, ErrorKind::DimensionMismatch, "block structures differ");
    BlockOperator r = *this;
    for (std::size_t b = 0; b < mats.size(); ++b) r.mats[b] = mats[b] * o.mats[b];
    return r;
  }
  // max over blocks of || M_b^* M_b - I ||_max
  double unitarity_defect() const {
    double d = 0.0;
    for (const auto& M : mats) {
      const CMatrix G = M.adjoint() * M - CMatrix::Identity(M.cols(), M.cols());
      if (G.size()) d = std::max(d, G.cwiseAbs().maxCoeff());
    }
    return d;
  }
};

struct SpectrumRecord {
  RVector eigenvalues;                        // nondecreasing
  std::vector<std::pair<int, int>> location;  // (block, column) per eigenvalue
  std::vector<EigenBlock> blocks;
  double trusted_max = 0.0;
  double norm = 0.0;  // max |lambda|
  std::string source_hash;
  int Lambda = 0;
  int m = 1;
  int n = 0;

  double zero_tol() const { return 1e-12 * norm; }

  CVector eigenvector(int i) const {
    const auto [b, c] = location.at(i);
    CVector v = CVector::Zero(n);
    const auto& blk = blocks[b];
    for (std::size_t r = 0; r < blk.modes.size(); ++r) v(blk.modes[r]) = blk.vectors(r, c);
    return v;
  }
  CMatrix eigenvectors() const {
    CMatrix V(n, n);
    for (int i = 0; i < n; ++i) V.col(i) = eigenvector(i);
    return V;
  }

  BlockOperator function(const std::function<Complex(double)>& f) const {
    BlockOperator op;
    op.n = n;
    for (const auto& blk : blocks) {
      CVector fd(blk.values.size());
      for (int i = 0; i < blk.values.size(); ++i) fd(i) = f(blk.values(i));
      op.modes.push_back(blk.modes);
      op.mats.push_back(blk.vectors * fd.asDiagonal() * blk.vectors.adjoint());
    }
    return op;
  }

  // Fill the global ordering and metadata from blocks.
  void finalize() {
    std::vector<std::tuple<double, int, int>> all;
    n = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      n += static_cast<int>(blocks[b].modes.size());
      for (int c = 0; c < blocks[b].values.size(); ++c)
        all.emplace_back(blocks[b].values(c), static_cast<int>(b), c);
    }
    std::sort(all.begin(), all.end());
    eigenvalues.resize(all.size());
    location.clear();
    norm = 0.0;
    for (std::size_t i = 0; i < all.size(); ++i) {
      eigenvalues(i) = std::get<0>(all[i]);
      location.emplace_back(std::get<1>(all[i]), std::get<2>(all[i]));
      norm = std::max(norm, std::abs(eigenvalues(i)));
    }
  }

  std::vector<double> positive(bool trusted_only = true) const {
    std::vector<double> out;
    for (int i = 0; i < eigenvalues.size(); ++i) {
      const double l = eigenvalues(i);
      if (l > zero_tol() && (!trusted_only || l <= trusted_max)) out.push_back(l);
    }
    return out;
  }
  std::vector<int> positive_indices(bool trusted_only = true) const {
    std::vector<int> out;
    for (int i = 0; i < eigenvalues.size(); ++i) {
      const double l = eigenvalues(i);
      if (l > zero_tol() && (!trusted_only || l <= trusted_max)) out.push_back(i);
    }
    return out;
  }
};

// Trusted window edge h_min (trust_frac Lambda)^s.
inline double trusted_edge(double trust_frac, double h_min, int Lambda, double order) {
  return h_min * std::pow(trust_frac * Lambda, order);
}

inline SpectrumRecord spectrum(const QuantizedOperator& Q, double trusted_max) {
  SpectrumRecord rec;
  rec.blocks = block_eigensolve(Q.matrix);
  rec.trusted_max = trusted_max;
  rec.source_hash = Q.source_hash;
  rec.Lambda = Q.lattice.L;
  rec.m = Q.lattice.m;
  rec.finalize();
  return rec;
}

// N+(lambda) = #{k : 0 < lambda_k < lambda}; values within zero_tol of 0 are not positive.
inline int counting_function(const SpectrumRecord& rec, double lambda) {
  if (lambda <= 0) return 0;
  int count = 0;
  for (int i = 0; i < rec.eigenvalues.size(); ++i) {
    const double l = rec.eigenvalues(i);
    if (l > rec.zero_tol() && l < lambda) ++count;
  }
  return count;
}

inline double theta_step(double lambda, double zero_tol) { return lambda > zero_tol ? 1.0 : 0.0; }

// V f(D) V* for a scalar function f.
inline BlockOperator matrix_function(const SpectrumRecord& rec, const std::function<Complex(double)>& f) {
  return rec.function(f);
}

// Q^(1/2n) with negative values above -1e-9 ||Q|| clipped to zero.
inline BlockOperator fractional_power(const SpectrumRecord& rec, double power) {
  for (int i = 0; i < rec.eigenvalues.size(); ++i)
    require(rec.eigenvalues(i) >= -1e-9 * std::max(rec.norm, 1.0), ErrorKind::DomainViolation,
            "fractional power of an operator with negative spectrum (" + std::to_string(rec.eigenvalues(i)) + ")");
  const double zt = rec.zero_tol();
  return rec.function([=](double l) { return Complex(l > zt ? std::pow(l, power) : 0.0); });
}

inline double heat_trace(const SpectrumRecord& rec, double t, bool trusted_only = false) {
  require(t > 0, ErrorKind::Precondition, "heat_trace needs t > 0");
  double s = 0.0;
  for (double l : rec.positive(trusted_only)) s += std::exp(-t * l);
  return s;
}

// ---------------------------------------------------------------------------
// Cache: <root>/<source_hash>.spec, magic SPREC1, trailing SHA-256 of the payload.

inline constexpr std::string_view kRecordMagic = "SPREC1";

inline std::string serialize_record(const SpectrumRecord& rec) {
  BinaryWriter w;
  w.put_bytes(kRecordMagic);
  w.put<std::int32_t>(rec.Lambda);
  w.put<std::int32_t>(rec.m);
  w.put<double>(rec.trusted_max);
  w.put<std::int64_t>(static_cast<std::int64_t>(rec.source_hash.size()));
  w.put_bytes(rec.source_hash);
  w.put<std::int64_t>(static_cast<std::int64_t>(rec.blocks.size()));
  for (const auto& b : rec.blocks) {
    w.put<std::int64_t>(static_cast<std::int64_t>(b.modes.size()));
    for (int md : b.modes) w.put<std::int32_t>(md);
    for (int i = 0; i < b.values.size(); ++i) w.put<double>(b.values(i));
    for (int c = 0; c < b.vectors.cols(); ++c)
      for (int r = 0; r < b.vectors.rows(); ++r) w.put_complex(b.vectors(r, c));
  }
  std::string payload = w.bytes();
  payload += sha256_hex(payload);
  return payload;
}

inline SpectrumRecord deserialize_record(std::string_view bytes) {
  require(bytes.size() >= kRecordMagic.size() + 64, ErrorKind::CacheCorrupt, "spectrum file too short");
  require(bytes.substr(0, kRecordMagic.size()) == kRecordMagic, ErrorKind::CacheVersion,
          "spectrum file has wrong magic or version");
  const std::string_view payload = bytes.substr(0, bytes.size() - 64);
  require(sha256_hex(payload) == bytes.substr(bytes.size() - 64), ErrorKind::CacheDigest,
          "spectrum file digest mismatch");
  BinaryReader r(payload);
  r.get_bytes(kRecordMagic.size());
  SpectrumRecord rec;
  rec.Lambda = r.get<std::int32_t>();
  rec.m = r.get<std::int32_t>();
  rec.trusted_max = r.get<double>();
  const auto hl = r.get<std::int64_t>();
  require(hl >= 0 && hl < 4096, ErrorKind::CacheCorrupt, "bad hash length");
  rec.source_hash = std::string(r.get_bytes(hl));
  const auto nb = r.get<std::int64_t>();
  require(nb >= 0 && nb < (1 << 26), ErrorKind::CacheCorrupt, "bad block count");
  for (std::int64_t b = 0; b < nb; ++b) {
    EigenBlock blk;
    const auto sz = r.get<std::int64_t>();
    require(sz >= 0 && sz < (1 << 20), ErrorKind::CacheCorrupt, "bad block size");
    blk.modes.resize(sz);
    for (auto& md : blk.modes) md = r.get<std::int32_t>();
    blk.values.resize(sz);
    for (std::int64_t i = 0; i < sz; ++i) blk.values(i) = r.get<double>();
    blk.vectors.resize(sz, sz);
    for (std::int64_t c = 0; c < sz; ++c)
      for (std::int64_t rr = 0; rr < sz; ++rr) blk.vectors(rr, c) = r.get_complex();
    rec.blocks.push_back(std::move(blk));
  }
  require(r.at_end(), ErrorKind::CacheCorrupt, "trailing bytes in spectrum file");
  rec.finalize();
  return rec;
}

inline std::filesystem::path cache_path(const std::filesystem::path& root, const std::string& key) {
  return root / (key + ".spec");
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write to a temporary sibling, then rename into place.
inline void write_file_atomic(const std::filesystem::path& p, std::string_view bytes) {
  std::filesystem::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, p);
}

inline void cache_store(const std::filesystem::path& root, const SpectrumRecord& rec) {
  write_file_atomic(cache_path(root, rec.source_hash), serialize_record(rec));
}

inline SpectrumRecord cache_load(const std::filesystem::path& root, const std::string& key) {
  const auto p = cache_path(root, key);
  if (!std::filesystem::exists(p)) throw Error(ErrorKind::CacheMiss, "no cached spectrum for " + key);
  SpectrumRecord rec = deserialize_record(read_file(p));
  require(rec.source_hash == key, ErrorKind::CacheDigest, "cached spectrum belongs to a different source");
  return rec;
}

}  // namespace specpart
