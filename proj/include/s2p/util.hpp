#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace s2p {

using Rng = std::mt19937_64;

/// Child seed derived from a parent seed and a stream tag (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
    std::uint64_t z = parent + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = std * normal(rng);
    return m;
}

inline Eigen::VectorXd gaussian_vector(Eigen::Index n, double std, Rng& rng) {
    return gaussian_matrix(n, 1, std, rng);
}

/// Uniform integer in [0, n).
inline int uniform_index(int n, Rng& rng) {
    return static_cast<int>(rng() % static_cast<std::uint64_t>(n));
}

/// Fisher-Yates shuffle driven only by rng() so the permutation is library independent.
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

/// Round-trippable decimal text for a double.
std::string format_double(double v);

}  // namespace s2p
