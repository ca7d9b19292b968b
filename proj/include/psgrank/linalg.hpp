#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace psgrank {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Non-owning (name, tensor) view used to walk parameter sets generically.
template <typename M>
struct NamedTensor {
  std::string name;
  M* tensor;
};

/// SplitMix64 finalizer; derives independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Normal(0, stddev) truncated at two standard deviations by resampling.
template <typename T>
void fill_truncated_normal(Mat<T>& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double z;
    do {
      z = normal(rng);
    } while (std::abs(z) > 2.0);
    m.data()[i] = static_cast<T>(z * stddev);
  }
}

template <typename T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

}  // namespace psgrank
