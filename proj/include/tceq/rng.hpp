#pragma once

// Counter-based random number generation.
//
// All randomness in the library flows through Philox4x32-10 keyed by a
// 64-bit seed. A draw is addressed by a 128-bit counter (four 32-bit
// words), so any (path, step, stream, purpose) tuple can be sampled
// independently of evaluation order or thread count. Normal variates use
// the Wichura AS241 inverse CDF; this choice is fixed because seeds
// promise bit-reproducible output.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace tceq::rng {

// Purpose tags keep independent consumers on disjoint counter ranges.
enum class Purpose : std::uint32_t {
  kPathNoise = 0x50415448,   // training / evaluation path increments
  kWeightInit = 0x574e4954,  // network weight initialization
  kEvalNoise = 0x4556414c,   // evaluator sub-draws (inner conditioning)
};

struct Counter {
  std::uint32_t w0 = 0, w1 = 0, w2 = 0, w3 = 0;
};

namespace detail {

inline void mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                      std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace detail

// Philox4x32-10 block cipher (Salmon, Moraes, Dror, Shaw 2011).
inline std::array<std::uint32_t, 4> philox4x32(Counter ctr, std::uint64_t seed) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  std::uint32_t c0 = ctr.w0, c1 = ctr.w1, c2 = ctr.w2, c3 = ctr.w3;
  std::uint32_t k0 = static_cast<std::uint32_t>(seed);
  std::uint32_t k1 = static_cast<std::uint32_t>(seed >> 32);

  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    detail::mulhilo32(kMul0, c0, hi0, lo0);
    detail::mulhilo32(kMul1, c2, hi1, lo1);
    const std::uint32_t n0 = hi1 ^ c1 ^ k0;
    const std::uint32_t n1 = lo1;
    const std::uint32_t n2 = hi0 ^ c3 ^ k1;
    const std::uint32_t n3 = lo0;
    c0 = n0;
    c1 = n1;
    c2 = n2;
    c3 = n3;
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return {c0, c1, c2, c3};
}

// Uniform in the open interval (0, 1) from two 32-bit words. 52 mantissa
// bits centered on the cell midpoints keep both endpoints excluded.
inline double uniform_open(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return static_cast<double>(bits >> 12) * 0x1.0p-52 + 0x1.0p-53;
}

// Inverse standard normal CDF, algorithm AS241 (Wichura 1988), double
// precision variant PPND16.
inline double normal_inv_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("normal_inv_cdf: p must lie in (0,1)");
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        q * (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                   6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
               1.3314166789178437745e2) * r + 3.3871328727963666080e0);
    const double den =
        (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
              3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
            5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
          4.2313330701600911252e1) * r + 1.0);
    return num / den;
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
    value = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
    value = num / den;
  }
  return (q < 0.0) ? -value : value;
}

// One Philox block yields a pair of independent standard normals.
inline std::pair<double, double> normal_pair(std::uint64_t seed, Counter ctr) {
  const auto words = philox4x32(ctr, seed);
  const double u1 = uniform_open(words[0], words[1]);
  const double u2 = uniform_open(words[2], words[3]);
  return {normal_inv_cdf(u1), normal_inv_cdf(u2)};
}

inline double uniform(std::uint64_t seed, Counter ctr) {
  const auto words = philox4x32(ctr, seed);
  return uniform_open(words[0], words[1]);
}

// Uniform on (-bound, bound); used for fan-in scaled weight init.
inline double uniform_symmetric(std::uint64_t seed, Counter ctr, double bound) {
  return (2.0 * uniform(seed, ctr) - 1.0) * bound;
}

}  // namespace tceq::rng
