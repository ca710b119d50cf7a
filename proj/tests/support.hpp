#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "cavity/multiscale.hpp"
#include "cavity/volume.hpp"

namespace testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cavity_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> uniform_values(std::size_t n, std::uint32_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

inline cavity::Volume uniform_volume(cavity::Dims d, std::uint32_t seed, double lo = 0.0, double hi = 1.0) {
  return cavity::Volume(d, uniform_values(d.size(), seed, lo, hi));
}

inline cavity::BinaryMask bernoulli_mask(cavity::Dims d, std::uint32_t seed, double p) {
  std::mt19937 gen(seed);
  std::bernoulli_distribution dist(p);
  std::vector<std::uint8_t> m(d.size());
  for (auto& b : m) b = dist(gen) ? 1 : 0;
  return cavity::BinaryMask(d, std::move(m));
}

inline cavity::BinaryMask sphere_mask(cavity::Dims d, double cx, double cy, double cz, double r) {
  std::vector<std::uint8_t> m(d.size());
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        const double dx = double(x) - cx, dy = double(y) - cy, dz = double(z) - cz;
        m[x + d.x * (y + d.y * z)] = dx * dx + dy * dy + dz * dz <= r * r ? 1 : 0;
      }
  return cavity::BinaryMask(d, std::move(m));
}

// Reflect-without-repeat written out directly, period 2(n-1).
inline long reflect(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Full 3D convolution with the outer-product kernel, no separability.
inline cavity::Volume brute_convolve(const cavity::Volume& v, const cavity::GaussianKernel1D& k) {
  const cavity::Dims d = v.dims();
  const long r = k.radius;
  std::vector<double> out(d.size(), 0.0);
  for (long z = 0; z < long(d.z); ++z)
    for (long y = 0; y < long(d.y); ++y)
      for (long x = 0; x < long(d.x); ++x) {
        double acc = 0.0;
        for (long c = -r; c <= r; ++c)
          for (long b = -r; b <= r; ++b)
            for (long a = -r; a <= r; ++a) {
              const double w = k.weights[a + r] * k.weights[b + r] * k.weights[c + r];
              acc += w * v(reflect(x + a, d.x), reflect(y + b, d.y), reflect(z + c, d.z));
            }
        out[v.index(x, y, z)] = acc;
      }
  return cavity::Volume(d, std::move(out));
}

}  // namespace testing
