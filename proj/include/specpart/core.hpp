#pragma once

// Shared vocabulary: scalar types, the error type, digests, binary I/O and a
// few numeric helpers used by every module.

#include <Eigen/Dense>
#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace specpart {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr Complex kI{0.0, 1.0};

enum class ErrorKind {
  DimensionMismatch,
  DepthOverflow,
  BandOverflow,
  SimplicityViolated,
  NotHermitian,
  SingularSymbol,
  DomainViolation,
  Precondition,
  CountMatchingFailed,
  EigensolverFailure,
  CacheMiss,
  CacheCorrupt,
  CacheVersion,
  CacheDigest,
  Config,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::DepthOverflow: return "depth overflow";
    case ErrorKind::BandOverflow: return "band overflow";
    case ErrorKind::SimplicityViolated: return "eigenvalue simplicity violated";
    case ErrorKind::NotHermitian: return "non-Hermitian input";
    case ErrorKind::SingularSymbol: return "singular principal symbol";
    case ErrorKind::DomainViolation: return "domain violation";
    case ErrorKind::Precondition: return "precondition failed";
    case ErrorKind::CountMatchingFailed: return "count matching failed";
    case ErrorKind::EigensolverFailure: return "eigensolver failure";
    case ErrorKind::CacheMiss: return "cache miss";
    case ErrorKind::CacheCorrupt: return "cache corrupt";
    case ErrorKind::CacheVersion: return "cache version mismatch";
    case ErrorKind::CacheDigest: return "cache digest mismatch";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Io: return "I/O error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

// ---------------------------------------------------------------------------
// SHA-256 digests (hex encoded).

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(const void* data, std::size_t n) {
    EVP_DigestUpdate(ctx_, data, n);
    return *this;
  }
  Sha256& update(std::string_view s) { return update(s.data(), s.size()); }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, out.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
      s.push_back(kHex[out[i] >> 4]);
      s.push_back(kHex[out[i] & 15]);
    }
    return s;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view data) { return Sha256().update(data).hex(); }

// ---------------------------------------------------------------------------
// Little-endian binary I/O. The host is required to be little-endian; all
// container formats are written byte-for-byte from native values.

static_assert(std::endian::native == std::endian::little, "little-endian host required");

class BinaryWriter {
 public:
  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void put_bytes(std::string_view s) { buf_.append(s.data(), s.size()); }
  void put_complex(Complex z) {
    put(z.real());
    put(z.imag());
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string_view data) : data_(data) {}
  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    require(pos_ + sizeof(T) <= data_.size(), ErrorKind::CacheCorrupt, "truncated binary stream");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view get_bytes(std::size_t n) {
    require(pos_ + n <= data_.size(), ErrorKind::CacheCorrupt, "truncated binary stream");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Complex get_complex() {
    double re = get<double>();
    double im = get<double>();
    return {re, im};
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Numeric helpers.

// Smallest n' >= n whose only prime factors are 2, 3 and 5.
inline int nice_fft_size(int n) {
  for (int c = std::max(n, 1);; ++c) {
    int r = c;
    for (int p : {2, 3, 5})
      while (r % p == 0) r /= p;
    if (r == 1) return c;
  }
}

// C-infinity step: 0 for t <= 0, 1 for t >= 1, built from exp(-1/t).
inline double smooth_step(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / t);
  const double b = std::exp(-1.0 / (1.0 - t));
  return a / (a + b);
}

// Least-squares line y = slope * x + intercept.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::Precondition, "fit_line needs >= 2 points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0, ErrorKind::Precondition, "fit_line needs distinct abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

// Slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  return fit_line(lx, ly).slope;
}

// Spectral norm of a small dense matrix.
inline double spectral_norm(const CMatrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<CMatrix> svd(m);
  return svd.singularValues()(0);
}

// Distance on the circle R / 2piZ.
inline double circle_distance(double a, double b) {
  double d = std::remainder(a - b, kTwoPi);
  return std::abs(d);
}

inline double wrap_angle(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0) r += kTwoPi;
  return r;
}

}  // namespace specpart
