#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace uqadv {

using Index = Eigen::Index;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for malformed graphs: shape mismatches, unbound inputs, non-finite values.
class GraphError : public Error {
public:
    using Error::Error;
};

/// Raised when reading a malformed checkpoint, dataset, or config file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Sub-seed derivation: mix64(master ^ fnv1a(tag)). Every random stream in a run
/// is obtained this way from the single master seed.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return mix64(master ^ h);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index) {
    return mix64(derive_seed(master, tag) + index);
}

/// Numerically stable log(sum(exp(v))).
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.derived().array() - m).exp().sum());
}

/// Draw a vector of iid standard normals.
inline Eigen::VectorXd standard_normal(Index n, Rng& rng) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd v(n);
    for (Index i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
}

}  // namespace uqadv
