#pragma once

#include "core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace spectensor {

/// Top spectral data of a matrix: values sorted descending with orthonormal
/// vector columns. `left`/`right` hold singular vectors; for a PSD input they
/// coincide with eigenvectors.
struct SpectralDecomp {
    Vector values;
    Matrix left;
    Matrix right;
    int iterations = 0;
    bool converged = false;
};

struct ConvergenceError : Error {
    ConvergenceError(const std::string& what, SpectralDecomp best) : Error(what), best(std::move(best)) {}
    SpectralDecomp best;
};

/// PSD matrix held as basis * diag(values) * basis^T. Keeps the truncated
/// square unfolding at rank r instead of d^2.
struct LowRankPsd {
    Matrix basis;   // n x r, orthonormal columns
    Vector values;  // r, positive, descending

    Index size() const { return basis.rows(); }
    Index rank() const { return values.size(); }

    Matrix dense() const {
        if (rank() == 0) return Matrix::Zero(size(), size());
        return basis * values.asDiagonal() * basis.transpose();
    }
};

inline constexpr double kSymmetryTolerance = 1e-8;

/// (M - eps*Id)_+ in factored form. The input is symmetrized before the
/// eigendecomposition; asymmetry above 1e-8 * ||M||_F is rejected.
inline LowRankPsd psd_truncate_factors(const Matrix& m, double eps) {
    if (!(eps >= 0.0)) throw DomainError("psd_truncate: eps must be nonnegative");
    if (m.size() == 0) return {Matrix(0, 0), Vector(0)};
    if (m.rows() != m.cols()) throw DomainError("psd_truncate: matrix must be square");
    const double scale = m.norm();
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale)
        throw DomainError("psd_truncate: matrix is not symmetric");
    const Matrix sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    const Vector& lambda = es.eigenvalues();  // ascending
    // Eigenvalues sitting exactly at eps are rounding noise, not rank.
    const double floor = 1e-12 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
    Index keep = 0;
    while (keep < lambda.size() && lambda[lambda.size() - 1 - keep] - eps > floor) ++keep;
    LowRankPsd out{Matrix(m.rows(), keep), Vector(keep)};
    for (Index r = 0; r < keep; ++r) {
        const Index src = lambda.size() - 1 - r;
        out.values[r] = lambda[src] - eps;
        out.basis.col(r) = es.eigenvectors().col(src);
    }
    return out;
}

inline Matrix psd_truncate(const Matrix& m, double eps) { return psd_truncate_factors(m, eps).dense(); }

/// U * min(Sigma, bound) * V^T. Only singular values above `bound` are
/// touched; the result is stored as the original matrix minus the
/// correction on that subspace.
inline Matrix clip_singular(const Matrix& m, double bound) {
    if (!(bound > 0.0)) throw DomainError("clip_singular: bound must be positive");
    if (!m.allFinite()) throw DomainError("clip_singular: non-finite input");
    if (m.size() == 0) return m;
    if (m.rows() < m.cols()) return clip_singular(Matrix(m.transpose()), bound).transpose();

    // Right singular structure from the (small) Gram matrix.
    Eigen::SelfAdjointEigenSolver<Matrix> es(m.transpose() * m);
    const Vector& s2 = es.eigenvalues();
    Matrix out = m;
    for (Index i = 0; i < s2.size(); ++i) {
        const double s = std::sqrt(std::max(0.0, s2[i]));
        if (s <= bound) continue;
        const Vector v = es.eigenvectors().col(i);
        out.noalias() -= (1.0 - bound / s) * (m * v) * v.transpose();
    }
    return out;
}

struct PowerIterOptions {
    double tol = 1e-9;
    int max_iters = 500;
    int oversample = 8;
};

/// Top-k singular triplets by block power iteration with Rayleigh-Ritz
/// extraction. Converged when every kept triplet has
/// ||M^T u - sigma v|| <= tol * sigma_1 (M v = sigma u holds exactly by
/// construction). Vectors follow the canonical sign convention on `left`.
inline SpectralDecomp subspace_power_iter(const Matrix& m, Index k, Rng& rng, PowerIterOptions opt = {}) {
    const Index small = std::min(m.rows(), m.cols());
    if (k <= 0 || k > small) throw DomainError("subspace_power_iter: k must be in [1, min(rows, cols)]");
    if (opt.max_iters < 1) throw DomainError("subspace_power_iter: max_iters must be positive");
    const Index block = std::min<Index>(small, k + std::max(0, opt.oversample));

    auto orthonormal_columns = [](const Matrix& a) -> Matrix {
        Eigen::HouseholderQR<Matrix> qr(a);
        return qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
    };

    Matrix v = orthonormal_columns(gaussian_matrix(m.cols(), block, rng));
    SpectralDecomp best;
    double best_residual = std::numeric_limits<double>::infinity();

    for (int it = 1; it <= opt.max_iters; ++it) {
        const Matrix mv = m * v;
        Eigen::JacobiSVD<Matrix> svd(mv, Eigen::ComputeThinU | Eigen::ComputeThinV);
        SpectralDecomp cur;
        cur.values = svd.singularValues().head(k);
        cur.left = svd.matrixU().leftCols(k);
        cur.right = v * svd.matrixV().leftCols(k);
        cur.iterations = it;

        const double top = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
        double residual = 0.0;
        if (top > 0.0) {
            const Matrix r = m.transpose() * cur.left - cur.right * cur.values.asDiagonal();
            residual = r.colwise().norm().maxCoeff() / top;
        }
        if (residual < best_residual) {
            best_residual = residual;
            best = cur;
        }
        if (residual <= opt.tol) {
            best.converged = true;
            break;
        }
        v = orthonormal_columns(m.transpose() * orthonormal_columns(mv));
    }

    for (Index j = 0; j < k; ++j) {
        Vector u = best.left.col(j);
        if (canonical_sign(u) < 0) best.right.col(j) *= -1.0;
        best.left.col(j) = u;
    }
    if (!best.converged)
        throw ConvergenceError("subspace_power_iter: residual " + std::to_string(best_residual) + " above tolerance after " +
                                   std::to_string(opt.max_iters) + " iterations",
                               best);
    return best;
}

/// Largest singular value, via subspace power iteration with k = 1. A run
/// that exhausts its iterations still returns its best estimate.
inline double spectral_norm(const Matrix& m) {
    if (m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0) return 0.0;
    Rng rng(0x5eed);
    try {
        return subspace_power_iter(m, 1, rng).values[0];
    } catch (const ConvergenceError& e) {
        return e.best.values[0];
    }
}

/// Top singular triplet of a small dense matrix, sign-normalized on the left
/// vector.
struct TopSingular {
    double value = 0.0;
    Vector left;
    Vector right;
};

inline TopSingular top_singular(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    TopSingular out{svd.singularValues()[0], svd.matrixU().col(0), svd.matrixV().col(0)};
    if (canonical_sign(out.left) < 0) out.right = -out.right;
    return out;
}

}  // namespace spectensor
