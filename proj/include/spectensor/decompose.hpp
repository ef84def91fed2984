#pragma once

#include "core.hpp"
#include "spectral.hpp"
#include "tensor4.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace spectensor {

/// Recovered unit vectors, each with its acceptance score <v^{(x)4}, T_clean>.
/// Components are identified only up to sign.
struct ComponentSet {
    Index dim = 0;
    std::vector<Vector> vectors;
    std::vector<double> scores;

    std::size_t size() const { return vectors.size(); }
    bool empty() const { return vectors.empty(); }

    void push(Vector v, double score = 0.0) {
        if (dim == 0) dim = v.size();
        if (v.size() != dim) throw DimensionError("ComponentSet: vector dimension mismatch");
        vectors.push_back(std::move(v));
        scores.push_back(score);
    }

    /// d x k matrix with the components as columns.
    Matrix matrix() const {
        Matrix b(dim, static_cast<Index>(vectors.size()));
        for (std::size_t i = 0; i < vectors.size(); ++i) b.col(static_cast<Index>(i)) = vectors[i];
        return b;
    }

    static ComponentSet from_columns(const Matrix& b) {
        ComponentSet out;
        out.dim = b.rows();
        for (Index i = 0; i < b.cols(); ++i) out.push(b.col(i));
        return out;
    }
};

/// Tolerances and loop bounds for full_decompose. Zero means "derive the
/// default" for the fields documented as such.
struct RecoveryParams {
    double eps = 0.05;              // spectral bound on the noise
    double dedup_corr = 0.0;        // 0 -> 1 - max(eps, 1e-3)
    std::size_t trials_per_round = 0;  // 0 -> ceil(10 n ln n), at least 10
    std::size_t max_trials = 2000;  // cap on the derived trial count
    double accept_margin = 1.0;     // multiplies the postprocess threshold
    std::size_t max_rounds = 0;     // 0 -> ceil(100 ln n), at least 1
    std::uint64_t rng_seed = 0;

    double effective_dedup() const { return dedup_corr > 0.0 ? dedup_corr : 1.0 - std::max(eps, 1e-3); }

    void validate() const {
        if (!(eps >= 0.0 && eps < 1.0)) throw DomainError("RecoveryParams: eps must lie in [0, 1)");
        const double dd = effective_dedup();
        if (!(dd > 0.0 && dd < 1.0)) throw DomainError("RecoveryParams: dedup_corr must lie in (0, 1)");
        if (max_trials < 1) throw DomainError("RecoveryParams: max_trials must be at least 1");
        if (!(accept_margin > 0.0)) throw DomainError("RecoveryParams: accept_margin must be positive");
    }
};

struct ContractionCandidate {
    Vector g;
    Vector u_left;
    Vector u_right;
    double sigma_top = 0.0;
};

struct WorkingState {
    Tensor4 clean;
    Tensor4 work;
    ComponentSet known;
    std::size_t round = 0;
};

struct DecompositionReport {
    ComponentSet components;
    std::size_t rounds = 0;
    std::size_t trials_used = 0;
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------

/// (T_{12,34} - eps*Id)_+ in factored form; its rank is the working n.
inline LowRankPsd preprocess(const Tensor4& t, double eps) {
    return psd_truncate_factors(Matrix(t.square()), eps);
}

/// Projects onto {||T_{123,4}|| <= 1} and then {||T_{124,3}|| <= 1}.
inline Tensor4 clip_rect(const Tensor4& t) {
    const Index d = t.dim();
    Tensor4 out(d);
    out.tall() = clip_singular(Matrix(t.tall()), 1.0);
    const auto plan = ReshapePlan::tall124_3();
    return unreshape(clip_singular(reshape(out, plan).values, 1.0), plan, d);
}

/// M_g = sum_{ij} g_{ij} T_{ij..}: contraction of modes 1,2 against g, giving
/// a d x d matrix over modes 3 (rows) and 4 (columns).
inline Matrix contract_modes12(const Tensor4& t, const Vector& g) {
    const Index d = t.dim();
    if (g.size() != d * d) throw DimensionError("contract_modes12: g must have d^2 entries");
    const Vector flat = t.square().transpose() * g;
    return Eigen::Map<const RowMatrix>(flat.data(), d, d);
}

inline ContractionCandidate random_contraction(const Tensor4& t, Rng& rng) {
    const Index d = t.dim();
    ContractionCandidate c;
    c.g = gaussian_vector(d * d, rng);
    const TopSingular top = top_singular(contract_modes12(t, c.g));
    c.u_left = top.left;
    c.u_right = top.right;
    c.sigma_top = top.value;
    return c;
}

/// (v (x) v)^T T_{12,34} (v (x) v) = <T, v^{(x)4}>.
inline double quartic_form(const Tensor4& t, const Vector& v) {
    const Vector vv = Tensor4::kron(v, v);
    return vv.dot(t.square() * vv);
}

struct PostprocessResult {
    Vector v;
    double score = 0.0;
};

namespace detail {

/// Top left/right singular vectors of reshape(T (u (x) u)) with their scores.
inline std::array<PostprocessResult, 2> refine(const Tensor4& t, const Vector& u) {
    const Index d = t.dim();
    if (u.size() != d) throw DimensionError("postprocess: vector dimension mismatch");
    const Vector a = t.square() * Tensor4::kron(u, u);
    const TopSingular top = top_singular(Eigen::Map<const RowMatrix>(a.data(), d, d));
    return {PostprocessResult{top.left, quartic_form(t, top.left)},
            PostprocessResult{top.right, quartic_form(t, top.right)}};
}

}  // namespace detail

inline double postprocess_threshold(double eps) { return (1.0 - 3.0 * eps) * (1.0 - 3.0 * eps) - eps; }
inline double batch_threshold(double eps) { return (1.0 - 6.0 * eps) * (1.0 - 6.0 * eps) - eps; }

/// Sharpens a candidate against the clean tensor. Returns the better-scoring
/// of the two singular vectors that clears (1-3eps)^2 - eps (times `margin`),
/// or nothing.
inline std::optional<PostprocessResult> postprocess(const Tensor4& t_clean, const Vector& u, double eps,
                                                    double margin = 1.0) {
    const auto cands = detail::refine(t_clean, u);
    const double threshold = margin * postprocess_threshold(eps);
    const PostprocessResult* best = nullptr;
    for (const auto& c : cands)
        if (c.score >= threshold && (!best || c.score > best->score)) best = &c;
    if (!best) return std::nullopt;
    return *best;
}

/// Nearest orthonormal set: with B = U S V^T (columns b_i), returns
/// U S^{-1} U^T b_i for each i, which equals the polar factor U V^T.
inline ComponentSet orthonormalize(const ComponentSet& b) {
    if (b.empty()) return b;
    const Matrix m = b.matrix();
    if (m.cols() > m.rows()) throw DegeneracyError("orthonormalize: more vectors than dimensions");
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double smin = svd.singularValues().minCoeff();
    if (smin < 1e-8)
        throw DegeneracyError("orthonormalize: vectors are linearly dependent (sigma_min = " + std::to_string(smin) + ")");
    ComponentSet out = ComponentSet::from_columns(svd.matrixU() * svd.matrixV().transpose());
    out.scores = b.scores;
    return out;
}

/// T_work -= sum_b b^{(x)4}; the subtracted vectors join the known set.
inline WorkingState subtract_components(WorkingState state, const ComponentSet& found) {
    for (std::size_t i = 0; i < found.size(); ++i) {
        state.work.add_rank_one(found.vectors[i], -1.0);
        state.known.push(found.vectors[i], found.scores[i]);
    }
    return state;
}

/// Largest deviation of the Gram matrix from the identity, i.e.
/// ||sum a_i a_i^T - Id_S|| on the span S of the vectors.
inline double near_orthonormal_check(const ComponentSet& components) {
    if (components.empty()) return 0.0;
    const Matrix a = components.matrix();
    Eigen::SelfAdjointEigenSolver<Matrix> es(a.transpose() * a, Eigen::EigenvaluesOnly);
    return (es.eigenvalues().array() - 1.0).abs().maxCoeff();
}

inline double max_sq_corr(const ComponentSet& set, const Vector& v) {
    double best = 0.0;
    for (const auto& k : set.vectors) best = std::max(best, std::pow(k.dot(v), 2));
    return best;
}

/// Rounds of preprocess -> clip -> random contractions -> postprocess ->
/// dedup -> orthonormalize -> score filter -> subtract, until the working
/// tensor has no spectrum above eps, the round bound is hit, or two
/// consecutive rounds add nothing.
inline DecompositionReport full_decompose(const Tensor4& t, const RecoveryParams& params) {
    params.validate();
    const double eps = params.eps;
    const double dedup = params.effective_dedup();

    DecompositionReport report;
    report.components.dim = t.dim();
    WorkingState state{t, t, ComponentSet{t.dim(), {}, {}}, 0};
    std::size_t max_rounds = params.max_rounds;
    int empty_streak = 0;

    while (max_rounds == 0 || state.round < max_rounds) {
        if (static_cast<Index>(state.known.size()) >= t.dim()) break;
        const LowRankPsd pre = preprocess(state.work, eps);
        const auto n_work = static_cast<std::size_t>(pre.rank());
        if (n_work == 0) break;
        if (max_rounds == 0)
            max_rounds = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(100.0 * std::log(std::max<double>(n_work, 2)))));

        const Tensor4 clipped = clip_rect(Tensor4::from_square_unfolding(pre.dense()));

        std::size_t trials = params.trials_per_round;
        if (trials == 0) {
            const double n = static_cast<double>(n_work);
            trials = std::max<std::size_t>(10, static_cast<std::size_t>(std::ceil(10.0 * n * std::log(n))));
            trials = std::min(trials, params.max_trials);
        }

        // Trials are independent given their own sub-stream; results are
        // consumed in trial order so the outcome does not depend on threads.
        std::vector<std::array<std::optional<PostprocessResult>, 2>> outcomes(trials);
        parallel_for(trials, [&](std::size_t i) {
            Rng rng = substream(params.rng_seed, state.round, i);
            const ContractionCandidate c = random_contraction(clipped, rng);
            outcomes[i][0] = postprocess(state.clean, c.u_left, eps, params.accept_margin);
            outcomes[i][1] = postprocess(state.clean, c.u_right, eps, params.accept_margin);
        });
        report.trials_used += trials;

        ComponentSet batch{t.dim(), {}, {}};
        for (const auto& pair : outcomes)
            for (const auto& res : pair) {
                if (!res) continue;
                if (max_sq_corr(state.known, res->v) >= dedup || max_sq_corr(batch, res->v) >= dedup) continue;
                batch.push(res->v, res->score);
            }
        if (static_cast<Index>(batch.size() + state.known.size()) > t.dim()) {
            // keep the best-scoring candidates that still fit
            std::vector<std::size_t> order(batch.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return batch.scores[a] > batch.scores[b]; });
            ComponentSet kept{t.dim(), {}, {}};
            for (std::size_t i = 0; i + state.known.size() < static_cast<std::size_t>(t.dim()); ++i)
                kept.push(batch.vectors[order[i]], batch.scores[order[i]]);
            batch = std::move(kept);
        }

        ComponentSet accepted{t.dim(), {}, {}};
        if (!batch.empty()) {
            ComponentSet ortho;
            try {
                ortho = orthonormalize(batch);
            } catch (const DegeneracyError& e) {
                report.warnings.push_back("round " + std::to_string(state.round) + ": " + e.what());
                ortho = ComponentSet{t.dim(), {}, {}};
            }
            for (std::size_t i = 0; i < ortho.size(); ++i) {
                const double score = quartic_form(state.clean, ortho.vectors[i]);
                if (score >= batch_threshold(eps)) accepted.push(ortho.vectors[i], score);
            }
        }

        state = subtract_components(std::move(state), accepted);
        ++state.round;
        if (accepted.empty()) {
            if (++empty_streak >= 2) {
                report.warnings.push_back("stalled: no new components in two consecutive rounds");
                break;
            }
        } else {
            empty_streak = 0;
        }
    }

    report.rounds = state.round;
    // Batches are orthonormal internally; a final symmetric orthonormalization
    // makes the union orthonormal as well.
    report.components = state.known;
    if (report.components.size() > 1) {
        try {
            ComponentSet ortho = orthonormalize(report.components);
            for (std::size_t i = 0; i < ortho.size(); ++i) {
                canonical_sign(ortho.vectors[i]);
                ortho.scores[i] = quartic_form(t, ortho.vectors[i]);
            }
            report.components = std::move(ortho);
        } catch (const DegeneracyError& e) {
            report.warnings.push_back(std::string("final orthonormalization skipped: ") + e.what());
        }
    } else {
        for (auto& v : report.components.vectors) canonical_sign(v);
    }
    return report;
}

}  // namespace spectensor
