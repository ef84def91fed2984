#include <spectensor/spectensor.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace spectensor;

namespace {

void write_json(const std::string& path, const nlohmann::json& j) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path + " for writing");
    os << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust orthogonal 4-tensor decomposition and dictionary learning"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic tensor sum_i a_i^(x)4 + E");
    Index g_d = 16, g_n = 8;
    std::string g_noise = "none", g_out, g_truth;
    double g_eps = 0.0;
    std::uint64_t g_seed = 0;
    gen->add_option("--d", g_d, "Dimension")->check(CLI::PositiveNumber);
    gen->add_option("--n", g_n, "Number of components")->check(CLI::NonNegativeNumber);
    gen->add_option("--noise", g_noise, "none|identity_scaled|random_symmetric|random_dense_tensor|planted_cancel");
    gen->add_option("--eps", g_eps, "Noise spectral norm");
    gen->add_option("--seed", g_seed, "Random seed");
    gen->add_option("--out", g_out, "Output .t4 file")->required();
    gen->add_option("--truth", g_truth, "Write ground-truth components as JSON");

    // gen-samples
    auto* gs = app.add_subcommand("gen-samples", "Sample y = A x with sparse random-sign x");
    Index s_n = 16, s_d = 16;
    double s_p = 0.1;
    std::size_t s_m = 200000;
    std::uint64_t s_seed = 0;
    std::string s_out, s_dict;
    gs->add_option("--n", s_n, "Dictionary size")->check(CLI::PositiveNumber);
    gs->add_option("--d", s_d, "Dimension")->check(CLI::PositiveNumber);
    gs->add_option("--p", s_p, "Support probability");
    gs->add_option("--m", s_m, "Number of samples");
    gs->add_option("--seed", s_seed, "Random seed");
    gs->add_option("--out", s_out, "Output .smp file")->required();
    gs->add_option("--dict", s_dict, "Write the dictionary columns as JSON");

    // decompose
    auto* dec = app.add_subcommand("decompose", "Recover components from a .t4 tensor");
    std::string d_in, d_out;
    RecoveryParams d_params;
    dec->add_option("--input", d_in, "Input .t4 file")->required();
    dec->add_option("--eps", d_params.eps, "Noise spectral bound");
    dec->add_option("--seed", d_params.rng_seed, "Random seed");
    dec->add_option("--out", d_out, "Output JSON (default stdout)");
    dec->add_option("--trials", d_params.trials_per_round, "Contractions per round (0 = automatic)");
    dec->add_option("--max-rounds", d_params.max_rounds, "Round limit (0 = automatic)");
    dec->add_option("--dedup", d_params.dedup_corr, "Duplicate threshold on squared correlation");

    // dictlearn
    auto* dl = app.add_subcommand("dictlearn", "Learn an orthogonal dictionary from .smp samples");
    std::string l_in, l_out;
    DictParams l_params;
    double l_alpha = -1.0;
    dl->add_option("--samples", l_in, "Input .smp file")->required();
    dl->add_option("--tau", l_params.tau, "Support correlation bound");
    dl->add_option("--seed", l_params.seed, "Random seed");
    dl->add_option("--out", l_out, "Output JSON (default stdout)");
    dl->add_flag("--whiten", l_params.whiten, "Whiten samples first");
    dl->add_option("--alpha", l_alpha, "Cross-moment bound (default tau)");
    dl->add_option("--min-samples", l_params.min_samples, "Sample floor (0 = 10 d^2)");

    // bench
    auto* bench = app.add_subcommand("bench", "Run an experiment grid from a TOML config");
    std::string b_cfg, b_out;
    bench->add_option("--config", b_cfg, "TOML config")->required();
    bench->add_option("--out", b_out, "Output directory")->required();

    // spectrum
    auto* spec = app.add_subcommand("spectrum", "Print eigenvalues of the {1,2}{3,4} unfolding");
    std::string p_in;
    std::size_t p_top = 0;
    spec->add_option("--input", p_in, "Input .t4 file")->required();
    spec->add_option("--top", p_top, "Only the largest k (0 = all)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const Instance inst = gen_instance(g_d, g_n, NoiseModel{noise_kind_from_string(g_noise), g_eps}, g_seed);
            save_t4(g_out, inst.tensor);
            if (!g_truth.empty()) write_json(g_truth, to_json(inst.truth));
        } else if (*gs) {
            if (s_n > s_d) throw DomainError("gen-samples: n must not exceed d");
            Rng rng(s_seed);
            const Matrix a = haar_orthonormal(s_d, s_n, rng);
            NiceDistSpec dist;
            dist.n = s_n;
            dist.p = s_p;
            dist.tau = s_p;
            save_smp(s_out, sample_dictionary(a, dist, s_m, rng));
            if (!s_dict.empty()) write_json(s_dict, to_json(ComponentSet::from_columns(a)));
        } else if (*dec) {
            write_json(d_out, to_json(full_decompose(load_t4(d_in), d_params)));
        } else if (*dl) {
            if (l_alpha >= 0.0) l_params.alpha = l_alpha;
            write_json(l_out, to_json(learn_dictionary(load_smp(l_in), l_params)));
        } else if (*bench) {
            const auto results = run_experiment(std::filesystem::path(b_cfg), std::filesystem::path(b_out));
            std::cerr << results.size() << " cells written to " << b_out << '\n';
        } else if (*spec) {
            const Tensor4 t = load_t4(p_in);
            const Matrix m = t.square();
            Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
            const Vector& ev = es.eigenvalues();
            const std::size_t count = p_top ? std::min<std::size_t>(p_top, ev.size()) : ev.size();
            std::cout << std::setprecision(10);
            for (std::size_t i = 0; i < count; ++i) std::cout << ev[ev.size() - 1 - static_cast<Index>(i)] << '\n';
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
