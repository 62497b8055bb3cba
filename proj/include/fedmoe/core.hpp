#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace fedmoe {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Random engine used throughout. Streams are deterministic for a fixed seed
/// within one build of the library.
using Rng = std::mt19937_64;

/// Invalid sizes, ranges or config values.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Mismatched dimensions between parameters, features and expert outputs.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Sample {
    Eigen::VectorXd features;
    int label = 0;
};

/// A list of labeled samples stored row-wise: row i of `features` is sample i.
struct Dataset {
    Eigen::MatrixXd features;
    Eigen::VectorXi labels;

    Dataset() = default;
    Dataset(Eigen::MatrixXd x, Eigen::VectorXi y);

    Index size() const { return features.rows(); }
    Index dim() const { return features.cols(); }
    bool empty() const { return size() == 0; }

    Sample sample(Index i) const;
    Dataset rows(const std::vector<Index>& indices) const;

    friend bool operator==(const Dataset& a, const Dataset& b);
};

Dataset concatenate(const std::vector<Dataset>& parts);

/// Uniform double in [0, 1) built from the top 53 bits of one engine draw.
double uniform01(Rng& rng);

/// Uniform integer in [0, n).
Index uniform_index(Rng& rng, Index n);

/// Deterministic 64-bit mix (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

/// Seed for a (master, index, role) triple. Distinct tags or indices give
/// unrelated streams; the mapping is stable within this implementation.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::string_view tag);

}  // namespace fedmoe
