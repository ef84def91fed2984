// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances are fixed constants below; nothing here is tuned.

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <string>

using namespace spectensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass;
    std::string detail;
};

Matrix truth_square(const ComponentSet& a) {
    const Index d = a.dim;
    Matrix s = Matrix::Zero(d * d, d * d);
    for (const auto& v : a.vectors) {
        const Vector vv = Tensor4::kron(v, v);
        s += vv * vv.transpose();
    }
    return s;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

// ---------------------------------------------------------------------------

DecompositionReport criterion1_run() {
    const Instance inst = gen_instance(20, 10, {NoiseKind::none, 0.0}, 2024);
    RecoveryParams p;
    p.eps = 0.05;
    p.rng_seed = 2024;
    return full_decompose(inst.tensor, p);
}

Outcome criterion1() {
    const auto t0 = Clock::now();
    const DecompositionReport r = criterion1_run();
    const double secs = seconds_since(t0);
    const Instance inst = gen_instance(20, 10, {NoiseKind::none, 0.0}, 2024);
    const MatchReport m = score(r.components, inst.truth);
    const bool pass = r.components.size() == 10 && m.pairs.size() == 10 && m.min_corr2 >= 0.999 && secs < 60.0;
    return {pass, "components " + std::to_string(r.components.size()) + ", min corr2 " + fmt(m.min_corr2) + ", " +
                      fmt(secs) + " s"};
}

Outcome criterion2_3(bool clipping) {
    int checked = 0, violations = 0;
    double worst_ratio = 0.0, worst_norm = 0.0, worst_excess = -1e300;
    for (double eps : {0.02, 0.05, 0.1})
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const Instance inst = gen_instance(16, 8, {NoiseKind::random_symmetric, eps}, 1000 + seed);
            const Matrix s = truth_square(inst.truth);
            const Matrix pre = preprocess(inst.tensor, eps).dense();
            ++checked;
            if (!clipping) {
                const double err = (pre - s).norm(), bound = 2 * eps * std::sqrt(2.0 * 8);
                worst_ratio = std::max(worst_ratio, err / bound);
                if (!(err <= bound)) ++violations;
                continue;
            }
            const Tensor4 s_t = Tensor4::from_square_unfolding(s);
            for (const Tensor4& in : {Tensor4::from_square_unfolding(pre), inst.tensor}) {
                const Tensor4 c = clip_rect(in);
                const double n1 = oracle::spectral_norm(oracle::unfold(c, {1, 2, 3}, {4}));
                const double n2 = oracle::spectral_norm(oracle::unfold(c, {1, 2, 4}, {3}));
                const double excess = frobenius(c - s_t) - frobenius(in - s_t);
                worst_norm = std::max({worst_norm, n1, n2});
                worst_excess = std::max(worst_excess, excess);
                if (!(n1 <= 1 + 1e-8 && n2 <= 1 + 1e-8 && excess <= 1e-8)) ++violations;
            }
        }
    if (!clipping)
        return {violations == 0, std::to_string(checked) + " instances, " + std::to_string(violations) +
                                     " violations, max err/bound " + fmt(worst_ratio)};
    return {violations == 0, std::to_string(checked) + " instances (preprocessed and raw), " + std::to_string(violations) +
                                 " violations, max unfolding norm " + fmt(worst_norm) + ", max Frobenius change " +
                                 fmt(worst_excess)};
}

Outcome criterion4() {
    Rng rng(44);
    std::uniform_int_distribution<int> size(1, 10);
    std::uniform_real_distribution<double> level(0.0, 1.5);
    double worst_diff = 0.0;
    int nonexpansive_fail = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = size(rng);
        const Matrix g = oracle::random_matrix(n, n, rng);
        const Matrix sym = 0.5 * (g + g.transpose());
        const double eps = level(rng);
        worst_diff = std::max(worst_diff, (psd_truncate(sym, eps) - oracle::psd_truncate(sym, eps)).cwiseAbs().maxCoeff());

        const Matrix r = oracle::random_matrix(size(rng), size(rng), rng);
        const double bound = 0.1 + level(rng);
        worst_diff = std::max(worst_diff, (clip_singular(r, bound) - oracle::clip_singular(r, bound)).cwiseAbs().maxCoeff());
    }
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = size(rng), c = size(rng);
        const Matrix gx = oracle::random_matrix(n, n, rng), gy = oracle::random_matrix(n, n, rng);
        const Matrix x = 0.5 * (gx + gx.transpose()), y = 0.5 * (gy + gy.transpose());
        const double eps = level(rng);
        if ((psd_truncate(x, eps) - psd_truncate(y, eps)).norm() > (x - y).norm() + 1e-12) ++nonexpansive_fail;
        const Matrix rx = oracle::random_matrix(n, c, rng), ry = oracle::random_matrix(n, c, rng);
        const double bound = 0.1 + level(rng);
        if ((clip_singular(rx, bound) - clip_singular(ry, bound)).norm() > (rx - ry).norm() + 1e-12) ++nonexpansive_fail;
    }
    return {worst_diff <= 1e-10 && nonexpansive_fail == 0,
            "max |diff| vs oracle " + fmt(worst_diff) + ", nonexpansiveness failures " + std::to_string(nonexpansive_fail)};
}

Outcome criterion5() {
    Rng rng(55);
    int violations = 0, checked = 0;
    double worst = 0.0;
    for (double eps : {0.01, 0.04, 0.09})
        for (int trial = 0; trial < 20; ++trial) {
            const Index k = 2 + trial % 4, d = 2 * k + trial % 3;
            const Matrix q = oracle::orthonormal_columns(d, 2 * k, rng);
            const Matrix a = q.leftCols(k), c = q.rightCols(k);
            // b_i tilted from a_i towards c_i: orthonormal, <a_i,b_i>^2 = 1 - eps
            const Matrix b = std::sqrt(1.0 - eps) * a + std::sqrt(eps) * c;
            const Matrix diff = truth_square(ComponentSet::from_columns(a)) - truth_square(ComponentSet::from_columns(b));
            const double norm = oracle::jacobi_eigen(diff).values.cwiseAbs().maxCoeff();
            worst = std::max(worst, norm / (4 * std::sqrt(eps)));
            ++checked;
            if (!(norm <= 4 * std::sqrt(eps))) ++violations;
        }
    return {violations == 0, std::to_string(checked) + " pairs, " + std::to_string(violations) +
                                 " violations, max norm/bound " + fmt(worst)};
}

struct Crit6Run {
    MatchReport pipeline, baseline;
    DecompositionReport report;
};

Crit6Run criterion6_run(std::uint64_t seed) {
    const Instance inst = gen_instance(16, 8, {NoiseKind::identity_scaled, 0.1}, 600 + seed);
    RecoveryParams p;
    p.eps = 0.1;
    p.rng_seed = 600 + seed;
    Crit6Run r;
    r.report = full_decompose(inst.tensor, p);
    r.pipeline = score(r.report.components, inst.truth);
    Rng rng = substream(600 + seed, 0x1E77);
    r.baseline = score(jennrich_baseline(inst.tensor, 20, rng), inst.truth);
    return r;
}

Outcome criterion6() {
    int good = 0, beaten = 0;
    std::string mins;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Crit6Run r = criterion6_run(seed);
        if (r.pipeline.count_at_least(0.9) >= 7) ++good;
        if (r.baseline.min_corr2 < r.pipeline.min_corr2) ++beaten;
        mins += (seed ? " " : "") + fmt(r.pipeline.min_corr2) + "/" + fmt(r.baseline.min_corr2);
    }
    return {good >= 9 && beaten >= 8, "runs with >=7 at corr2>=0.9: " + std::to_string(good) +
                                          "/10, baseline lower: " + std::to_string(beaten) +
                                          "/10 (pipeline/baseline min corr2: " + mins + ")"};
}

Outcome criterion7() {
    int violations = 0;
    std::string detail;
    for (double p : {0.1, 0.2}) {
        Rng rng(700 + static_cast<std::uint64_t>(p * 100));
        const Matrix a = oracle::orthonormal_columns(10, 10, rng);
        const Tensor4 moment = oracle::analytic_moment(a, p);
        // coefficients scaled so E[x^4] = 1; the target is sum_i E[x_i^4] a_i^{(x)4}
        const double err = frobenius(clean_moment(moment, p) - oracle::sum_rank_one(a));
        const double bound = 9 * p * std::sqrt(10.0);
        if (!(err <= bound)) ++violations;
        detail += (detail.empty() ? "" : ", ") + std::string("p=") + fmt(p) + ": " + fmt(err) + " <= " + fmt(bound);
    }
    return {violations == 0, detail};
}

Outcome criterion8() {
    Rng rng(88);
    int violations = 0, checked = 0;
    double worst = 0.0;
    for (Index n = 1; n <= 12; ++n)
        for (double alpha : {0.05, 0.1, 0.2}) {
            const Index d = n + static_cast<Index>(rng() % 3);
            const ComponentSet a = ComponentSet::from_columns(oracle::orthonormal_columns(d, n, rng));
            // independent-support table (E[x_i^2 x_j^2] = alpha, E[x^4] = 1) and a
            // non-uniform table bounded entrywise by alpha
            Matrix uniform = Matrix::Constant(n, n, alpha);
            Matrix varied(n, n);
            std::uniform_real_distribution<double> u(0.0, alpha);
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j <= i; ++j) varied(i, j) = varied(j, i) = u(rng);
            for (const Matrix& table : {uniform, varied}) {
                const auto [first, second] = cross_term_norms(a, table);
                worst = std::max({worst, first / alpha, second / alpha});
                ++checked;
                if (!(first <= alpha + 1e-9 && second <= alpha + 1e-9)) ++violations;
            }
        }
    return {violations == 0, std::to_string(checked) + " sets, " + std::to_string(violations) +
                                 " violations, max norm/alpha " + fmt(worst)};
}

struct Crit9Run {
    DictionaryReport report;
    MatchReport match;
};

Crit9Run criterion9_run() {
    Rng rng(909);
    const Matrix a = haar_orthonormal(16, 16, rng);
    NiceDistSpec spec;
    spec.n = 16;
    spec.p = 0.1;
    spec.tau = 0.1;
    const Matrix y = sample_dictionary(a, spec, 200000, rng);
    DictParams params;
    params.tau = 0.1;
    params.seed = 909;
    Crit9Run r;
    r.report = learn_dictionary(y, params);
    r.match = score(r.report.components, ComponentSet::from_columns(a));
    return r;
}

Outcome criterion9() {
    const auto t0 = Clock::now();
    const Crit9Run r = criterion9_run();
    const double secs = seconds_since(t0);
    const std::size_t good = r.match.count_at_least(0.95);
    return {good >= 14 && secs < 300.0, "columns with corr2>=0.95: " + std::to_string(good) + "/16, min corr2 " +
                                            fmt(r.match.min_corr2) + ", kurtosis estimate " + fmt(r.report.kurtosis) +
                                            ", " + fmt(secs) + " s"};
}

Outcome criterion10() {
    // Three order-3 tensors A in R^k (x) R^l (x) R^m stored as k slices of l x m.
    struct Fixed {
        std::string name;
        std::vector<Matrix> slices;
    };
    auto from_tensor4 = [](const Tensor4& t) {
        // modes {1,2} -> alpha, {3} -> beta, {4} -> gamma
        const Index d = t.dim();
        std::vector<Matrix> s(static_cast<std::size_t>(d * d), Matrix(d, d));
        for (Index i = 0; i < d * d; ++i)
            for (Index k = 0; k < d; ++k)
                for (Index l = 0; l < d; ++l) s[static_cast<std::size_t>(i)](k, l) = t.square()(i, k * d + l);
        return s;
    };
    std::vector<Fixed> tensors;
    Rng rng(1010);
    {
        std::vector<Matrix> s;
        for (int i = 0; i < 12; ++i) s.push_back(oracle::random_matrix(5, 7, rng));
        tensors.push_back({"gaussian 12x5x7", s});
    }
    tensors.push_back({"orthogonal 4-tensor d=6 n=4", from_tensor4(oracle::sum_rank_one(oracle::orthonormal_columns(6, 4, rng)))});
    tensors.push_back({"clipped noisy 4-tensor d=5", from_tensor4(clip_rect(gen_instance(5, 3, {NoiseKind::random_symmetric, 0.3}, 3).tensor))});

    int violations = 0;
    std::string detail;
    for (auto& f : tensors) {
        const Index k = static_cast<Index>(f.slices.size()), l = f.slices[0].rows(), m = f.slices[0].cols();
        Matrix ab_g(k * l, m), ag_b(k * m, l);
        for (Index i = 0; i < k; ++i) {
            ab_g.middleRows(i * l, l) = f.slices[static_cast<std::size_t>(i)];
            ag_b.middleRows(i * m, m) = f.slices[static_cast<std::size_t>(i)].transpose();
        }
        const double scale = std::max(oracle::spectral_norm(ab_g), oracle::spectral_norm(ag_b));
        for (auto& s : f.slices) s /= scale;  // both unfolding norms <= 1, max exactly 1

        Rng g_rng(2020);
        int exceed2 = 0, exceed3 = 0;
        const int draws = 1000;
        for (int draw = 0; draw < draws; ++draw) {
            const Vector g = gaussian_vector(k, g_rng);
            Matrix sum = Matrix::Zero(l, m);
            for (Index i = 0; i < k; ++i) sum += g[i] * f.slices[static_cast<std::size_t>(i)];
            const double norm = oracle::spectral_norm(sum);
            exceed2 += norm >= 2.0;
            exceed3 += norm >= 3.0;
        }
        const double b2 = static_cast<double>(m + l) * std::exp(-2.0), b3 = static_cast<double>(m + l) * std::exp(-4.5);
        const double f2 = exceed2 / static_cast<double>(draws), f3 = exceed3 / static_cast<double>(draws);
        if (!(f2 <= b2 && f3 <= b3)) ++violations;
        detail += (detail.empty() ? "" : "; ") + f.name + ": t=2 " + fmt(f2) + "<=" + fmt(b2) + ", t=3 " + fmt(f3) + "<=" +
                  fmt(b3);
    }
    return {violations == 0, detail};
}

Outcome criterion11() {
    const double eta = 0.02, target = 1.0 - 5.0 * std::sqrt(eta);
    const Index d = 16, n = 8;
    int passing = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(1100 + seed);
        const Matrix q = oracle::orthonormal_columns(d, n, rng);
        const Matrix g = oracle::random_matrix(d, n, rng);
        auto build = [&](double s) {
            Matrix c = q + s * g;
            for (Index j = 0; j < n; ++j) c.col(j).normalize();
            return ComponentSet::from_columns(c);
        };
        // perturbation size chosen by bisection so the Gram deviation is eta
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (lo + hi);
            (near_orthonormal_check(build(mid)) < eta ? lo : hi) = mid;
        }
        const ComponentSet comps = build(lo);
        const double dev = (oracle::jacobi_eigen(comps.matrix().transpose() * comps.matrix()).values.array() - 1.0).abs().maxCoeff();
        Tensor4 t(d);
        for (const auto& v : comps.vectors) t.add_rank_one(v);
        RecoveryParams p;
        p.eps = eta;
        p.rng_seed = 1100 + seed;
        const MatchReport m = score(full_decompose(t, p).components, comps);
        const std::size_t good = m.count_at_least(target);
        if (good >= static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(n))) && std::abs(dev - eta) < 1e-6) ++passing;
        detail += (detail.empty() ? "" : ", ") + std::to_string(good) + "/" + std::to_string(n) + " (eta " + fmt(dev) + ")";
    }
    return {passing == 5, "threshold corr2 >= " + fmt(target) + ": " + detail};
}

Outcome criterion12() {
    auto with_threads = [](const char* n, auto&& f) {
        setenv("SPECTENSOR_THREADS", n, 1);
        auto out = f();
        unsetenv("SPECTENSOR_THREADS");
        return out;
    };
    int mismatches = 0;
    const std::string c1a = with_threads("1", [] { return to_json(criterion1_run()).dump(); });
    const std::string c1b = with_threads("3", [] { return to_json(criterion1_run()).dump(); });
    mismatches += c1a != c1b;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::string a = with_threads("1", [&] { return to_json(criterion6_run(seed).report).dump(); });
        const std::string b = with_threads("4", [&] { return to_json(criterion6_run(seed).report).dump(); });
        mismatches += a != b;
    }
    const std::string c9a = with_threads("1", [] { return to_json(criterion9_run().report).dump(); });
    const std::string c9b = with_threads("2", [] { return to_json(criterion9_run().report).dump(); });
    mismatches += c9a != c9b;
    return {mismatches == 0, "12 report pairs rerun under different thread counts, " + std::to_string(mismatches) +
                                 " differ"};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"1 noise-free recovery d=20 n=10", criterion1},
        {"2 preprocessing Frobenius bound", [] { return criterion2_3(false); }},
        {"3 clipping contract", [] { return criterion2_3(true); }},
        {"4 projection oracles and nonexpansiveness", criterion4},
        {"5 subtraction spectral bound", criterion5},
        {"6 robust recovery under identity noise", criterion6},
        {"7 moment cleaning Frobenius bound", criterion7},
        {"8 cross-term spectral norms", criterion8},
        {"9 dictionary learning end-to-end", criterion9},
        {"10 Gaussian contraction tail", criterion10},
        {"11 near-orthonormal recovery", criterion11},
        {"12 determinism of JSON reports", criterion12},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << " -- " << o.detail << std::endl;
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
    return failed ? 1 : 0;
}
