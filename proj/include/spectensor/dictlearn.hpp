#pragma once

#include "core.hpp"
#include "decompose.hpp"
#include "spectral.hpp"
#include "tensor4.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace spectensor {

// ---------------------------------------------------------------------------
// Sparse coefficient model

/// Draws a support set into `in_support` (one flag per coordinate). Any
/// sampler with Pr[i in S] = p and Pr[j in S | i in S] <= tau is admissible.
using SupportSampler = std::function<void(Rng&, std::span<std::uint8_t> in_support)>;

/// Parameters of the tau-nice coefficient distribution: coordinates in the
/// support are p^{-1/4} times an independent random sign, so E[x_i^4] = 1.
struct NiceDistSpec {
    Index n = 0;
    double p = 0.1;
    double tau = 0.1;
    bool kurtosis_uniform = true;
    SupportSampler support;  // empty -> independent Bernoulli(p)

    double magnitude() const { return std::pow(p, -0.25); }

    void validate() const {
        if (n <= 0) throw DomainError("NiceDistSpec: n must be positive");
        if (!(p > 0.0 && p <= 1.0)) throw DomainError("NiceDistSpec: p must lie in (0, 1]");
        if (!(tau >= 0.0 && tau < 1.0)) throw DomainError("NiceDistSpec: tau must lie in [0, 1)");
    }
};

inline Vector sample_nice(const NiceDistSpec& spec, Rng& rng) {
    spec.validate();
    std::vector<std::uint8_t> support(static_cast<std::size_t>(spec.n), 0);
    if (spec.support) {
        spec.support(rng, support);
    } else {
        std::bernoulli_distribution coin(spec.p);
        for (auto& s : support) s = coin(rng) ? 1 : 0;
    }
    std::bernoulli_distribution sign(0.5);
    const double mag = spec.magnitude();
    Vector x = Vector::Zero(spec.n);
    for (Index i = 0; i < spec.n; ++i)
        if (support[static_cast<std::size_t>(i)]) x[i] = sign(rng) ? mag : -mag;
    return x;
}

/// Samples y = A x as rows of an m x d matrix.
inline Matrix sample_dictionary(const Matrix& dictionary, const NiceDistSpec& spec, std::size_t m, Rng& rng) {
    if (dictionary.cols() != spec.n) throw DimensionError("sample_dictionary: dictionary has wrong column count");
    Matrix y(static_cast<Index>(m), dictionary.rows());
    for (std::size_t s = 0; s < m; ++s) y.row(static_cast<Index>(s)) = (dictionary * sample_nice(spec, rng)).transpose();
    return y;
}

// ---------------------------------------------------------------------------
// Fourth-moment estimation

struct MomentEstimate {
    Tensor4 tensor;
    std::size_t count = 0;
    std::optional<double> scale;  // kurtosis estimate E[x_i^4], once known
};

/// Streaming accumulator of sum y^{(x)4}, held as the d^2 x d^2 square
/// unfolding. Samples are buffered as columns y (x) y and folded in with a
/// rank update per block; block sums are combined pairwise (binary-counter
/// tree), so rounding error grows with log(m) rather than m.
class MomentAccumulator {
public:
    explicit MomentAccumulator(Index dim, Index block = 512)
        : dim_(dim), block_(block), buffer_(dim * dim, block) {
        if (dim <= 0) throw DomainError("MomentAccumulator: dimension must be positive");
    }

    Index dim() const { return dim_; }
    std::size_t count() const { return count_; }

    void add(const Eigen::Ref<const Vector>& y) {
        if (y.size() != dim_) throw DimensionError("empirical_moment4: sample has dimension " + std::to_string(y.size()) +
                                                   ", expected " + std::to_string(dim_));
        for (Index i = 0; i < dim_; ++i) buffer_.col(filled_).segment(i * dim_, dim_) = y[i] * y;
        ++count_;
        if (++filled_ == block_) flush();
    }

    /// Folds in another shard's samples.
    void merge(MomentAccumulator other) {
        if (other.dim_ != dim_) throw DimensionError("MomentAccumulator::merge: dimension mismatch");
        other.flush();
        flush();
        for (auto& [level, sum] : other.levels_) push(level, std::move(sum));
        count_ += other.count_;
    }

    /// Mean of y^{(x)4}, averaged over all 24 mode permutations.
    MomentEstimate finish() {
        if (count_ == 0) throw DomainError("empirical_moment4: at least one sample is required");
        flush();
        Matrix total = Matrix::Zero(dim_ * dim_, dim_ * dim_);
        // smallest partial sums first
        for (auto it = levels_.rbegin(); it != levels_.rend(); ++it) total += it->second;
        total.triangularView<Eigen::StrictlyUpper>() = total.transpose().triangularView<Eigen::StrictlyUpper>();
        total /= static_cast<double>(count_);
        return MomentEstimate{symmetrize(Tensor4::from_square_unfolding(total)), count_, std::nullopt};
    }

private:
    void flush() {
        if (filled_ == 0) return;
        Matrix block = Matrix::Zero(dim_ * dim_, dim_ * dim_);
        block.selfadjointView<Eigen::Lower>().rankUpdate(buffer_.leftCols(filled_));
        filled_ = 0;
        push(0, std::move(block));
    }

    void push(int level, Matrix sum) {
        while (!levels_.empty() && levels_.back().first == level) {
            sum += levels_.back().second;
            levels_.pop_back();
            ++level;
        }
        levels_.emplace_back(level, std::move(sum));
    }

    Index dim_;
    Index block_;
    Matrix buffer_;
    Index filled_ = 0;
    std::size_t count_ = 0;
    std::vector<std::pair<int, Matrix>> levels_;  // lower triangles only
};

/// Samples are the rows of `samples`.
inline MomentEstimate empirical_moment4(const Matrix& samples) {
    if (samples.rows() < 1) throw DomainError("empirical_moment4: at least one sample is required");
    MomentAccumulator acc(samples.cols());
    for (Index s = 0; s < samples.rows(); ++s) acc.add(samples.row(s).transpose());
    return acc.finish();
}

// ---------------------------------------------------------------------------
// Moment cleaning

/// Regroups a {1,2}{3,4} unfolding as {1,3}{2,4}:
/// out[(i,k),(j,l)] = m[(i,j),(k,l)], so (a(x)b)(c(x)d)^T -> (a(x)c)(b(x)d)^T.
/// The map is an involution.
inline Matrix reshape_sigma(const Matrix& m) {
    if (m.rows() != m.cols()) throw DimensionError("reshape_sigma: matrix must be square");
    const Index d = Tensor4::side_from_square(m.rows());
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
            for (Index k = 0; k < d; ++k)
                for (Index l = 0; l < d; ++l) out(i * d + k, j * d + l) = m(i * d + j, k * d + l);
    return out;
}

/// Two-reshaping cleanup of a fourth-moment tensor: truncate the square
/// unfolding at eps = 3*alpha, regroup with reshape_sigma, truncate again at
/// alpha. The result approximates sum_i E[x_i^4] a_i^{(x)4} in Frobenius norm.
inline Tensor4 clean_moment(const Tensor4& moment, double alpha) {
    if (!(alpha >= 0.0)) throw DomainError("clean_moment: alpha must be nonnegative");
    const Matrix first = psd_truncate(Matrix(moment.square()), 3.0 * alpha);
    return Tensor4::from_square_unfolding(psd_truncate(reshape_sigma(first), alpha));
}

/// Spectral norms of the two cross terms
///   sum_{i!=j} c_ij a_i a_i^T (x) a_j a_j^T  and  sum_{i!=j} c_ij a_j a_i^T (x) a_i a_j^T
/// where c = E[x_i^2 x_j^2] (symmetric n x n, diagonal ignored).
inline std::pair<double, double> cross_term_norms(const ComponentSet& a, const Matrix& pair_moments) {
    const Index n = static_cast<Index>(a.size());
    if (pair_moments.rows() != n || pair_moments.cols() != n)
        throw DimensionError("cross_term_norms: pair-moment table must be n x n");
    if (n < 2) return {0.0, 0.0};
    const Index d = a.dim;
    Matrix first = Matrix::Zero(d * d, d * d);
    Matrix second = Matrix::Zero(d * d, d * d);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const Vector& ai = a.vectors[static_cast<std::size_t>(i)];
            const Vector& aj = a.vectors[static_cast<std::size_t>(j)];
            const double c = pair_moments(i, j);
            // kron(X, Y)[(p,q),(r,s)] = X(p,r) Y(q,s)
            const Vector ij = Tensor4::kron(ai, aj), ji = Tensor4::kron(aj, ai);
            first.noalias() += c * ij * ij.transpose();   // a_i a_i^T (x) a_j a_j^T
            second.noalias() += c * ji * ij.transpose();  // a_j a_i^T (x) a_i a_j^T
        }
    auto norm = [](const Matrix& m) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
        return es.eigenvalues().cwiseAbs().maxCoeff();
    };
    return {norm(first), norm(second)};
}

// ---------------------------------------------------------------------------
// Whitening

struct WhiteningState {
    Matrix covariance;
    Matrix inv_sqrt;
    Matrix sqrt;
    double condition = 1.0;  // lambda_max / lambda_min of the covariance
};

inline WhiteningState whitening_from_covariance(const Matrix& cov) {
    if (cov.rows() != cov.cols()) throw DimensionError("whiten: covariance must be square");
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()));
    const Vector& lambda = es.eigenvalues();
    const double lmax = lambda.maxCoeff();
    const double lmin = lambda.minCoeff();
    if (!(lmin > 1e-12 * std::max(1.0, lmax)))
        throw DegeneracyError("whiten: covariance is rank-deficient (smallest eigenvalue " + std::to_string(lmin) + ")");
    const Matrix& u = es.eigenvectors();
    return WhiteningState{cov, u * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * u.transpose(),
                          u * lambda.cwiseSqrt().asDiagonal() * u.transpose(), lmax / lmin};
}

/// Empirical covariance of the rows and the rows mapped by Sigma^{-1/2}.
inline std::pair<WhiteningState, Matrix> whiten(const Matrix& samples) {
    if (samples.rows() < samples.cols())
        throw DomainError("whiten: need at least d samples (have " + std::to_string(samples.rows()) + ")");
    const Matrix cov = samples.transpose() * samples / static_cast<double>(samples.rows());
    WhiteningState state = whitening_from_covariance(cov);
    Matrix out = samples * state.inv_sqrt;  // inv_sqrt is symmetric
    return {std::move(state), std::move(out)};
}

// ---------------------------------------------------------------------------
// Recovery

/// Postprocessing against the (uncleaned) moment with error parameter 1/2.
/// Returns the better-scoring of the two top singular vectors.
inline Vector dict_postprocess(const Tensor4& moment, const Vector& u) {
    const auto cands = detail::refine(moment, u);
    return cands[0].score >= cands[1].score ? cands[0].v : cands[1].v;
}

/// Mean of the square-unfolding eigenvalues above 3*tau*s, iterated to a
/// fixed point from s = lambda_max. On a tau-nice moment the signal block has
/// trace n * E[x^4], so the mean recovers the kurtosis without knowing A.
inline double estimate_kurtosis(const Tensor4& moment, double tau) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(moment.square()), Eigen::EigenvaluesOnly);
    const Vector& lambda = es.eigenvalues();
    double s = lambda.maxCoeff();
    if (!(s > 0.0)) throw DegeneracyError("estimate_kurtosis: moment has no positive spectrum");
    for (int it = 0; it < 50; ++it) {
        double sum = 0.0;
        int count = 0;
        for (Index i = 0; i < lambda.size(); ++i)
            if (lambda[i] > 3.0 * tau * s) {
                sum += lambda[i];
                ++count;
            }
        const double next = sum / count;
        if (next == s) break;
        s = next;
    }
    return s;
}

inline constexpr double kMaxTau = 0.25;

struct DictParams {
    double tau = 0.1;
    std::optional<double> alpha;  // defaults to tau (moments are normalized to unit kurtosis)
    std::optional<double> decompose_eps;  // defaults to alpha
    bool whiten = false;
    std::size_t min_samples = 0;  // 0 -> 10 d^2
    std::size_t trials_per_round = 0;
    std::size_t max_trials = 2000;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(tau >= 0.0 && tau < kMaxTau))
            throw DomainError("learn_dictionary: tau = " + std::to_string(tau) + " violates the tau-nice precondition tau < " +
                              std::to_string(kMaxTau));
        if (alpha && !(*alpha >= 0.0 && *alpha < 1.0 / 3.0)) throw DomainError("learn_dictionary: alpha must lie in [0, 1/3)");
    }
};

struct DictionaryReport {
    ComponentSet components;
    double kurtosis = 1.0;
    double alpha = 0.0;
    std::size_t samples = 0;
    std::optional<double> condition;
    DecompositionReport decomposition;
    std::vector<std::string> warnings;
};

/// Normalize -> clean -> decompose -> postprocess against the moment.
inline DictionaryReport learn_dictionary_from_moment(MomentEstimate moment, const DictParams& params) {
    params.validate();
    DictionaryReport report;
    report.samples = moment.count;
    if (!moment.scale) moment.scale = estimate_kurtosis(moment.tensor, params.tau);
    report.kurtosis = *moment.scale;
    Tensor4 normalized = (1.0 / *moment.scale) * moment.tensor;

    report.alpha = params.alpha.value_or(params.tau);
    const Tensor4 cleaned = clean_moment(normalized, report.alpha);

    RecoveryParams rp;
    rp.eps = params.decompose_eps.value_or(report.alpha);
    rp.trials_per_round = params.trials_per_round;
    rp.max_trials = params.max_trials;
    rp.rng_seed = params.seed;
    report.decomposition = full_decompose(cleaned, rp);
    report.warnings = report.decomposition.warnings;

    ComponentSet refined{normalized.dim(), {}, {}};
    const double dedup = rp.effective_dedup();
    for (const auto& u : report.decomposition.components.vectors) {
        Vector v = dict_postprocess(normalized, u);
        if (max_sq_corr(refined, v) >= dedup) continue;
        refined.push(v, quartic_form(normalized, v));
    }
    if (refined.size() > 1) {
        try {
            refined = orthonormalize(refined);
        } catch (const DegeneracyError& e) {
            report.warnings.push_back(std::string("orthonormalization skipped: ") + e.what());
        }
    }
    for (auto& v : refined.vectors) canonical_sign(v);
    report.components = std::move(refined);
    return report;
}

/// Full pipeline from raw samples (rows of `samples`, each y = A x).
inline DictionaryReport learn_dictionary(const Matrix& samples, const DictParams& params) {
    params.validate();
    const Index d = samples.cols();
    const std::size_t floor = params.min_samples ? params.min_samples : static_cast<std::size_t>(10 * d * d);
    if (static_cast<std::size_t>(samples.rows()) < floor)
        throw DomainError("learn_dictionary: insufficient samples (" + std::to_string(samples.rows()) + " < " +
                          std::to_string(floor) + ")");

    std::optional<WhiteningState> white;
    MomentEstimate moment;
    if (params.whiten) {
        auto [state, transformed] = whiten(samples);
        moment = empirical_moment4(transformed);
        white = std::move(state);
    } else {
        moment = empirical_moment4(samples);
    }

    DictionaryReport report = learn_dictionary_from_moment(std::move(moment), params);
    if (white) {
        // columns of the original dictionary are proportional to Sigma^{1/2} b
        report.condition = white->condition;
        for (auto& v : report.components.vectors) {
            v = white->sqrt * v;
            v.normalize();
            canonical_sign(v);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// `.smp` sample files: "SMP1", u64 d, u64 m, then m rows of d float64.

inline void write_smp(std::ostream& os, const Matrix& samples) {
    os.write("SMP1", 4);
    io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(samples.cols()));
    io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(samples.rows()));
    for (Index s = 0; s < samples.rows(); ++s)
        for (Index i = 0; i < samples.cols(); ++i) io::write_le(os, samples(s, i));
}

inline Matrix read_smp(std::istream& is) {
    io::expect_magic(is, "SMP1");
    const auto d = io::read_le<std::uint64_t>(is, "dimension");
    const auto m = io::read_le<std::uint64_t>(is, "sample count");
    if (d == 0 || d > 4096) throw ParseError("smp: implausible dimension " + std::to_string(d));
    Matrix samples(static_cast<Index>(m), static_cast<Index>(d));
    for (Index s = 0; s < samples.rows(); ++s)
        for (Index i = 0; i < samples.cols(); ++i) samples(s, i) = io::read_le<double>(is, "samples");
    if (is.peek() != std::char_traits<char>::eof()) throw ParseError("smp: trailing bytes after samples");
    return samples;
}

inline void save_smp(const std::string& path, const Matrix& samples) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    write_smp(os, samples);
}

inline Matrix load_smp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path);
    return read_smp(is);
}

}  // namespace spectensor
