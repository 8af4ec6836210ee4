#include "dsem/random.hpp"

#include <cmath>

namespace dsem {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  std::uint64_t state = h ^ (v + 0x632be59bd9b4e019ULL + (h << 6) + (h >> 2));
  return splitmix64(state);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

std::uint64_t hash_key(const StreamKey& key) {
  std::uint64_t h = 0x2545f4914f6cdd1dULL;
  h = mix(h, key.seed);
  h = mix(h, key.chain);
  h = mix(h, key.iteration);
  h = mix(h, static_cast<std::uint64_t>(key.kind));
  h = mix(h, key.participant);
  h = mix(h, key.timepoint);
  h = mix(h, key.indicator);
  return h;
}

RandomStream::RandomStream(std::uint64_t seed) { seed_from(seed); }

RandomStream::RandomStream(const StreamKey& key) { seed_from(hash_key(key)); }

void RandomStream::seed_from(std::uint64_t s) {
  for (auto& word : s_) word = splitmix64(s);
}

RandomStream::result_type RandomStream::operator()() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RandomStream::uniform() {
  // 53 random bits, shifted by half an ulp so that 0 is excluded.
  return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

double RandomStream::exponential(double rate) { return -std::log(uniform()) / rate; }

// Marsaglia and Tsang; shapes below one use the u^(1/a) boost.
double RandomStream::gamma(double shape) {
  if (shape < 1.0) {
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

// Michael, Schucany and Haas.
double RandomStream::inverse_gaussian(double mu, double lambda) {
  const double y = normal();
  const double y2 = y * y;
  const double x = mu + mu * mu * y2 / (2.0 * lambda) -
                   mu / (2.0 * lambda) *
                       std::sqrt(4.0 * mu * lambda * y2 + mu * mu * y2 * y2);
  if (uniform() <= mu / (mu + x)) return x;
  return mu * mu / x;
}

}  // namespace dsem
