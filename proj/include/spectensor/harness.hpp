#pragma once

#include "core.hpp"
#include "decompose.hpp"
#include "dictlearn.hpp"
#include "spectral.hpp"
#include "tensor4.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace spectensor {

// ---------------------------------------------------------------------------
// Synthetic instances

enum class NoiseKind { none, identity_scaled, random_symmetric, random_dense_tensor, planted_cancel };

inline const char* to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::none: return "none";
        case NoiseKind::identity_scaled: return "identity_scaled";
        case NoiseKind::random_symmetric: return "random_symmetric";
        case NoiseKind::random_dense_tensor: return "random_dense_tensor";
        case NoiseKind::planted_cancel: return "planted_cancel";
    }
    return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
    for (NoiseKind k : {NoiseKind::none, NoiseKind::identity_scaled, NoiseKind::random_symmetric,
                        NoiseKind::random_dense_tensor, NoiseKind::planted_cancel})
        if (s == to_string(k)) return k;
    throw DomainError("unknown noise kind '" + s + "'");
}

/// `eps` is the exact spectral norm of the square unfolding of E, except for
/// planted_cancel, where E = -sum_{i <= ceil(eps^2 n)} a_i^{(x)4} is unscaled.
struct NoiseModel {
    NoiseKind kind = NoiseKind::none;
    double eps = 0.0;
};

struct Instance {
    Tensor4 tensor;
    ComponentSet truth;
    Tensor4 noise;
};

/// First n columns of a Haar-random orthogonal d x d matrix.
inline Matrix haar_orthonormal(Index d, Index n, Rng& rng) {
    Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(d, d, rng));
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR();
    for (Index j = 0; j < d; ++j)
        if (r(j, j) < 0) q.col(j) *= -1.0;
    return q.leftCols(n);
}

inline double square_unfolding_norm(const Tensor4& e) {
    const Matrix m = e.square();
    if (m.cwiseAbs().maxCoeff() == 0.0) return 0.0;
    if ((m - m.transpose()).cwiseAbs().maxCoeff() <= kSymmetryTolerance * m.norm()) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
        return es.eigenvalues().cwiseAbs().maxCoeff();
    }
    return Eigen::JacobiSVD<Matrix>(m).singularValues()[0];
}

inline Tensor4 make_noise(Index d, const ComponentSet& truth, const NoiseModel& noise, Rng& rng) {
    if (!(noise.eps >= 0.0)) throw DomainError("noise eps must be nonnegative");
    const Index dd = d * d;
    Tensor4 e(d);
    switch (noise.kind) {
        case NoiseKind::none: return e;
        case NoiseKind::identity_scaled: e = Tensor4::from_square_unfolding(Matrix::Identity(dd, dd)); break;
        case NoiseKind::random_symmetric: {
            const Matrix g = gaussian_matrix(dd, dd, rng);
            e = Tensor4::from_square_unfolding(0.5 * (g + g.transpose()));
            break;
        }
        case NoiseKind::random_dense_tensor:
            e = symmetrize(Tensor4::from_square_unfolding(gaussian_matrix(dd, dd, rng)));
            break;
        case NoiseKind::planted_cancel: {
            const auto k = std::min<std::size_t>(truth.size(), static_cast<std::size_t>(std::ceil(
                                                                   noise.eps * noise.eps * static_cast<double>(truth.size()))));
            for (std::size_t i = 0; i < k; ++i) e.add_rank_one(truth.vectors[i], -1.0);
            return e;
        }
    }
    const double norm = square_unfolding_norm(e);
    e *= norm > 0.0 ? noise.eps / norm : 0.0;
    return e;
}

/// T = sum_i a_i^{(x)4} + E with Haar-random orthonormal a_i.
inline Instance gen_instance(Index d, Index n, const NoiseModel& noise, std::uint64_t seed) {
    if (d <= 0 || n < 0) throw DomainError("gen_instance: need d > 0 and n >= 0");
    if (n > d) throw DomainError("gen_instance: n = " + std::to_string(n) + " exceeds d = " + std::to_string(d));
    Rng basis_rng = substream(seed, 0xA11CE);
    Rng noise_rng = substream(seed, 0xE7707);
    Instance inst{Tensor4(d), ComponentSet::from_columns(haar_orthonormal(d, n, basis_rng)), Tensor4(d)};
    inst.truth.dim = d;
    for (const auto& a : inst.truth.vectors) inst.tensor.add_rank_one(a);
    inst.noise = make_noise(d, inst.truth, noise, noise_rng);
    inst.tensor += inst.noise;
    return inst;
}

// ---------------------------------------------------------------------------
// Jennrich baseline

struct JennrichOptions {
    double dedup = 0.99;
    std::size_t max_components = 0;  // 0 -> d
    double pinv_tol = 1e-8;
};

/// Simultaneous diagonalization of two random contractions of the raw tensor:
/// eigenvectors of M_1 M_2^+ are the components when E = 0. Real eigenvectors
/// from all trials are ranked by <T, v^{(x)4}> and harvested greedily.
inline ComponentSet jennrich_baseline(const Tensor4& t, std::size_t trials, Rng& rng, JennrichOptions opt = {}) {
    const Index d = t.dim();
    const std::size_t cap = opt.max_components ? opt.max_components : static_cast<std::size_t>(d);
    struct Candidate {
        Vector v;
        double score;
    };
    std::vector<Candidate> pool;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const Matrix m1 = contract_modes12(t, gaussian_vector(d * d, rng));
        const Matrix m2 = contract_modes12(t, gaussian_vector(d * d, rng));
        Eigen::JacobiSVD<Matrix> svd(m2, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Vector& s = svd.singularValues();
        if (s.size() == 0 || s[0] == 0.0) continue;
        Vector inv = Vector::Zero(s.size());
        for (Index i = 0; i < s.size(); ++i)
            if (s[i] > opt.pinv_tol * s[0]) inv[i] = 1.0 / s[i];
        const Matrix pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
        Eigen::EigenSolver<Matrix> es(m1 * pinv);
        if (es.info() != Eigen::Success) continue;
        const auto& lambda = es.eigenvalues();
        const double top = lambda.cwiseAbs().maxCoeff();
        for (Index j = 0; j < lambda.size(); ++j) {
            if (std::abs(lambda[j]) <= opt.pinv_tol * top) continue;
            if (std::abs(lambda[j].imag()) > 1e-8 * std::max(1.0, std::abs(lambda[j]))) continue;
            Vector v = es.eigenvectors().col(j).real();
            const double nv = v.norm();
            if (!(nv > 0.0)) continue;
            v /= nv;
            canonical_sign(v);
            pool.push_back({v, quartic_form(t, v)});
        }
    }
    std::stable_sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    ComponentSet out{d, {}, {}};
    for (const auto& c : pool) {
        if (out.size() >= cap) break;
        if (!(c.score > 0.0)) break;
        if (max_sq_corr(out, c.v) >= opt.dedup) continue;
        out.push(c.v, c.score);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scoring

struct MatchPair {
    std::size_t recovered;
    std::size_t truth;
    double corr2;
};

struct MatchReport {
    std::vector<MatchPair> pairs;  // sorted by truth index
    std::size_t recovered_count = 0;
    std::size_t truth_count = 0;
    double min_corr2 = 0.0;
    double mean_corr2 = 0.0;

    std::size_t count_at_least(double threshold) const {
        return static_cast<std::size_t>(
            std::count_if(pairs.begin(), pairs.end(), [&](const MatchPair& p) { return p.corr2 >= threshold; }));
    }
};

/// Greedy matching on squared correlation: repeatedly take the largest
/// remaining <b, a>^2, ties going to the lower (recovered, truth) index.
inline MatchReport score(const ComponentSet& recovered, const ComponentSet& truth) {
    if (!recovered.empty() && !truth.empty() && recovered.dim != truth.dim)
        throw DimensionError("score: recovered and truth dimensions differ");
    MatchReport rep;
    rep.recovered_count = recovered.size();
    rep.truth_count = truth.size();
    std::vector<MatchPair> all;
    for (std::size_t i = 0; i < recovered.size(); ++i)
        for (std::size_t j = 0; j < truth.size(); ++j) {
            const double c = recovered.vectors[i].dot(truth.vectors[j]);
            const double nn = recovered.vectors[i].squaredNorm() * truth.vectors[j].squaredNorm();
            all.push_back({i, j, nn > 0.0 ? std::clamp(c * c / nn, 0.0, 1.0) : 0.0});
        }
    std::stable_sort(all.begin(), all.end(), [](const MatchPair& a, const MatchPair& b) { return a.corr2 > b.corr2; });
    std::vector<bool> used_r(recovered.size()), used_t(truth.size());
    for (const auto& p : all) {
        if (used_r[p.recovered] || used_t[p.truth]) continue;
        used_r[p.recovered] = used_t[p.truth] = true;
        rep.pairs.push_back(p);
    }
    std::sort(rep.pairs.begin(), rep.pairs.end(), [](const MatchPair& a, const MatchPair& b) { return a.truth < b.truth; });
    if (!rep.pairs.empty()) {
        rep.min_corr2 = 1.0;
        double sum = 0.0;
        for (const auto& p : rep.pairs) {
            rep.min_corr2 = std::min(rep.min_corr2, p.corr2);
            sum += p.corr2;
        }
        rep.mean_corr2 = sum / static_cast<double>(rep.pairs.size());
    }
    return rep;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const ComponentSet& c) {
    nlohmann::json vecs = nlohmann::json::array();
    for (const auto& v : c.vectors) vecs.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    return {{"dim", c.dim}, {"components", vecs}, {"scores", c.scores}};
}

inline nlohmann::json to_json(const DecompositionReport& r) {
    nlohmann::json j = to_json(r.components);
    j["rounds"] = r.rounds;
    j["trials_used"] = r.trials_used;
    j["warnings"] = r.warnings;
    return j;
}

inline nlohmann::json to_json(const DictionaryReport& r) {
    nlohmann::json j = to_json(r.components);
    j["kurtosis"] = r.kurtosis;
    j["alpha"] = r.alpha;
    j["samples"] = r.samples;
    j["condition"] = r.condition ? nlohmann::json(*r.condition) : nlohmann::json(nullptr);
    j["rounds"] = r.decomposition.rounds;
    j["trials_used"] = r.decomposition.trials_used;
    j["warnings"] = r.warnings;
    return j;
}

inline nlohmann::json to_json(const MatchReport& m) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : m.pairs) pairs.push_back({{"recovered", p.recovered}, {"truth", p.truth}, {"corr2", p.corr2}});
    return {{"pairs", pairs},
            {"recovered", m.recovered_count},
            {"truth", m.truth_count},
            {"min_corr2", m.min_corr2},
            {"mean_corr2", m.mean_corr2}};
}

// ---------------------------------------------------------------------------
// Experiment grid

enum class Algorithm { pipeline, jennrich, both };

struct ExperimentConfig {
    std::vector<Index> d;
    std::vector<Index> n;
    std::vector<double> eps;
    std::vector<NoiseKind> noise;
    std::vector<std::uint64_t> seeds;
    Algorithm algorithm = Algorithm::pipeline;
    RecoveryParams recovery;
    bool recovery_eps_from_noise = true;  // use the cell's eps unless [recovery].eps is given
    std::size_t jennrich_trials = 20;
    double recovered_threshold = 0.9;
    bool record_timing = false;
};

namespace detail {

template <class T>
T toml_get(const toml::node& node, const char* key) {
    if (auto v = node.value<T>()) return *v;
    throw ParseError(std::string("config: bad value for '") + key + "'", node.source().begin.line);
}

template <class T>
std::vector<T> toml_list(const toml::table& tbl, const char* key) {
    std::vector<T> out;
    const toml::node* node = tbl.get(key);
    if (!node) return out;
    if (const auto* arr = node->as_array()) {
        for (const auto& el : *arr) out.push_back(toml_get<T>(el, key));
    } else {
        out.push_back(toml_get<T>(*node, key));
    }
    return out;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source = "config") {
    toml::table tbl;
    try {
        tbl = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        throw ParseError("config: " + std::string(e.description()), e.source().begin.line);
    }
    ExperimentConfig cfg;
    for (auto v : detail::toml_list<std::int64_t>(tbl, "d")) cfg.d.push_back(static_cast<Index>(v));
    for (auto v : detail::toml_list<std::int64_t>(tbl, "n")) cfg.n.push_back(static_cast<Index>(v));
    cfg.eps = detail::toml_list<double>(tbl, "eps");
    for (const auto& s : detail::toml_list<std::string>(tbl, "noise")) {
        try {
            cfg.noise.push_back(noise_kind_from_string(s));
        } catch (const DomainError& e) {
            throw ParseError(std::string("config: ") + e.what(), tbl.get("noise")->source().begin.line);
        }
    }
    for (auto v : detail::toml_list<std::int64_t>(tbl, "seeds")) cfg.seeds.push_back(static_cast<std::uint64_t>(v));

    if (const toml::node* a = tbl.get("algorithm")) {
        const auto s = detail::toml_get<std::string>(*a, "algorithm");
        if (s == "pipeline") cfg.algorithm = Algorithm::pipeline;
        else if (s == "jennrich") cfg.algorithm = Algorithm::jennrich;
        else if (s == "both") cfg.algorithm = Algorithm::both;
        else throw ParseError("config: algorithm must be pipeline, jennrich or both", a->source().begin.line);
    }
    if (const toml::node* v = tbl.get("record_timing")) cfg.record_timing = detail::toml_get<bool>(*v, "record_timing");
    if (const toml::node* v = tbl.get("jennrich_trials"))
        cfg.jennrich_trials = static_cast<std::size_t>(detail::toml_get<std::int64_t>(*v, "jennrich_trials"));
    if (const toml::node* v = tbl.get("recovered_threshold"))
        cfg.recovered_threshold = detail::toml_get<double>(*v, "recovered_threshold");

    if (const toml::node* r = tbl.get("recovery")) {
        const auto* rt = r->as_table();
        if (!rt) throw ParseError("config: [recovery] must be a table", r->source().begin.line);
        auto size_field = [&](const char* key, std::size_t& out) {
            if (const toml::node* v = rt->get(key)) out = static_cast<std::size_t>(detail::toml_get<std::int64_t>(*v, key));
        };
        auto real_field = [&](const char* key, double& out) {
            if (const toml::node* v = rt->get(key)) out = detail::toml_get<double>(*v, key);
        };
        if (rt->get("eps")) cfg.recovery_eps_from_noise = false;
        real_field("eps", cfg.recovery.eps);
        real_field("dedup_corr", cfg.recovery.dedup_corr);
        real_field("accept_margin", cfg.recovery.accept_margin);
        size_field("trials_per_round", cfg.recovery.trials_per_round);
        size_field("max_trials", cfg.recovery.max_trials);
        size_field("max_rounds", cfg.recovery.max_rounds);
    }
    return cfg;
}

struct CellResult {
    Index d = 0, n = 0;
    double eps = 0.0;
    NoiseKind noise = NoiseKind::none;
    std::uint64_t seed = 0;
    std::string algo;
    MatchReport match;
    nlohmann::json report;
    double wall_ms = 0.0;
};

inline std::string format_real(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

inline std::string csv_header() { return "d,n,eps,noise,seed,algo,recovered,min_corr2,mean_corr2,wall_ms"; }

inline std::string csv_row(const CellResult& c, double threshold) {
    std::ostringstream os;
    os << c.d << ',' << c.n << ',' << format_real(c.eps) << ',' << to_string(c.noise) << ',' << c.seed << ',' << c.algo
       << ',' << c.match.count_at_least(threshold) << ',' << format_real(c.match.min_corr2) << ','
       << format_real(c.match.mean_corr2) << ',' << format_real(c.wall_ms);
    return os.str();
}

/// Runs every (d, n, eps, noise, seed) cell, each algorithm in turn.
inline std::vector<CellResult> run_grid(const ExperimentConfig& cfg) {
    struct Cell {
        Index d, n;
        double eps;
        NoiseKind noise;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (Index d : cfg.d)
        for (Index n : cfg.n)
            for (double e : cfg.eps)
                for (NoiseKind k : cfg.noise)
                    for (std::uint64_t s : cfg.seeds) cells.push_back({d, n, e, k, s});

    std::vector<std::string> algos;
    if (cfg.algorithm != Algorithm::jennrich) algos.push_back("pipeline");
    if (cfg.algorithm != Algorithm::pipeline) algos.push_back("jennrich");

    std::vector<CellResult> results(cells.size() * algos.size());
    parallel_for(results.size(), [&](std::size_t idx) {
        const Cell& c = cells[idx / algos.size()];
        const std::string& algo = algos[idx % algos.size()];
        const Instance inst = gen_instance(c.d, c.n, NoiseModel{c.noise, c.eps}, c.seed);
        CellResult r{c.d, c.n, c.eps, c.noise, c.seed, algo, {}, {}, 0.0};
        const auto start = std::chrono::steady_clock::now();
        ComponentSet found;
        if (algo == "pipeline") {
            RecoveryParams p = cfg.recovery;
            if (cfg.recovery_eps_from_noise) p.eps = c.eps;
            p.rng_seed = c.seed;
            const DecompositionReport rep = full_decompose(inst.tensor, p);
            found = rep.components;
            r.report = to_json(rep);
        } else {
            Rng rng = substream(c.seed, 0x1E77);
            found = jennrich_baseline(inst.tensor, cfg.jennrich_trials, rng);
            r.report = to_json(found);
        }
        const auto stop = std::chrono::steady_clock::now();
        if (cfg.record_timing) r.wall_ms = std::chrono::duration<double, std::milli>(stop - start).count();
        r.match = score(found, inst.truth);
        r.report["match"] = to_json(r.match);
        r.report["cell"] = {{"d", c.d}, {"n", c.n}, {"eps", c.eps}, {"noise", to_string(c.noise)}, {"seed", c.seed},
                            {"algo", algo}};
        results[idx] = std::move(r);
    });
    return results;
}

/// Writes cell_NNNN_<algo>.json per cell and results.csv into `outdir`.
inline std::vector<CellResult> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& outdir) {
    std::filesystem::create_directories(outdir);
    const std::vector<CellResult> results = run_grid(cfg);
    std::ofstream csv(outdir / "results.csv");
    if (!csv) throw Error("cannot write " + (outdir / "results.csv").string());
    csv << csv_header() << '\n';
    for (std::size_t i = 0; i < results.size(); ++i) {
        std::ostringstream name;
        name << "cell_" << std::setw(4) << std::setfill('0') << i << '_' << results[i].algo << ".json";
        std::ofstream js(outdir / name.str());
        js << results[i].report.dump(2) << '\n';
        csv << csv_row(results[i], cfg.recovered_threshold) << '\n';
    }
    return results;
}

inline std::vector<CellResult> run_experiment(const std::filesystem::path& config, const std::filesystem::path& outdir) {
    std::ifstream in(config);
    if (!in) throw Error("cannot open " + config.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return run_experiment(parse_experiment_config(buf.str(), config.string()), outdir);
}

}  // namespace spectensor
