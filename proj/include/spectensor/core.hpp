#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace spectensor {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Deterministic random source. Every random operation takes one by reference;
/// nothing in the library owns a global generator.
using Rng = std::mt19937_64;

// Error hierarchy. All library failures derive from spectensor::Error so
// callers (the CLI in particular) can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid reshape plan (overlapping, missing or empty mode groups).
struct PlanError : Error {
    using Error::Error;
};

/// Input outside an operation's domain (non-symmetric matrix, bad parameter).
struct DomainError : Error {
    using Error::Error;
};

/// Dimensions of two inputs disagree.
struct DimensionError : Error {
    using Error::Error;
};

/// Rank deficiency where full rank is required.
struct DegeneracyError : Error {
    using Error::Error;
};

/// Malformed file or configuration. `line` is 0 when not applicable.
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line(line) {}
    std::size_t line;
};

/// Derives an independent generator for (seed, a, b). Used to give each
/// random contraction trial its own stream so trials may run in any order.
inline Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
    return Rng(seq);
}

inline Vector gaussian_vector(Index size, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector g(size);
    for (Index i = 0; i < size; ++i) g[i] = normal(rng);
    return g;
}

inline Matrix gaussian_matrix(Index rows, Index cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix g(rows, cols);
    // column-major fill order is part of the reproducibility contract
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) g(i, j) = normal(rng);
    return g;
}

/// Flips the sign of `v` so that its largest-magnitude entry is positive.
/// Returns the sign applied (+1 or -1).
inline double canonical_sign(Eigen::Ref<Vector> v) {
    if (v.size() == 0) return 1.0;
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) {
        v = -v;
        return -1.0;
    }
    return 1.0;
}

/// Worker count for data-parallel loops: SPECTENSOR_THREADS if set, else the
/// hardware concurrency.
inline unsigned worker_count() {
    if (const char* env = std::getenv("SPECTENSOR_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, count) on up to worker_count() threads. Indices
/// are split into contiguous chunks; body must only write to slot i.
template <class Body>
void parallel_for(std::size_t count, Body&& body) {
    const std::size_t workers = std::min<std::size_t>(worker_count(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(count, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([begin, end, w, &body, &errors] {
            try {
                for (std::size_t i = begin; i < end; ++i) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace spectensor
