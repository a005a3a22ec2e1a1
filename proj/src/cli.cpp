#include "depfusion/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "depfusion/config.hpp"
#include "depfusion/dde.hpp"
#include "depfusion/image_io.hpp"
#include "depfusion/pgmf.hpp"
#include "depfusion/suites.hpp"
#include "depfusion/tensor_io.hpp"
#include "depfusion/verify.hpp"
#include "depfusion/wavelet.hpp"

namespace depfusion::cli {

namespace {

namespace fs = std::filesystem;

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> dtype;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file");
    cmd->add_option("--seed", flags.seed, "random seed (overrides config)");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--dtype", flags.dtype, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
}

// File config first, CLI flags override.
RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg;
    if (!flags.config_path.empty()) cfg = RunConfig::from_json_file(flags.config_path);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.out) cfg.output = *flags.out;
    if (flags.dtype) cfg.dtype = *flags.dtype == "f64" ? Dtype::F64 : Dtype::F32;
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    write_file_atomic(path, text.data(), text.size());
}

double ms_between(std::chrono::steady_clock::time_point a,
                  std::chrono::steady_clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

template <class T>
int enhance_with_dtype(const RunConfig& cfg, bool identity_params) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto bytes = read_file(cfg.input);
    FeatureMap<T> image = decode_ppm<T>(bytes);

    Prng prng(cfg.seed);
    const DdeParams params =
        identity_params
            ? DdeParams::identity(image.c, cfg.levels, cfg.kernels, cfg.basis,
                                  cfg.discretization)
            : DdeParams::random(prng, image.c, cfg.levels, cfg.kernels, cfg.basis,
                                cfg.discretization);
    DdeStats stats;
    FeatureMap<T> enhanced = dde_pipeline(image, params, &stats);
    for (auto& v : enhanced.data)
        v = static_cast<T>(std::min(1.0, std::max(0.0, static_cast<double>(v))));
    const auto t1 = std::chrono::steady_clock::now();

    const fs::path out_dir(cfg.output);
    fs::create_directories(out_dir);
    save_ppm(out_dir / "enhanced.ppm", enhanced);
    save_tensor(out_dir / "enhanced.dft", TensorVariant(enhanced));

    nlohmann::json report;
    report["config"] = nlohmann::json::parse(cfg.to_json_text());
    report["identity_params"] = identity_params;
    report["input_shape"] = {image.b, image.c, image.h, image.w};
    report["max_abs_gate"] = stats.max_abs_gate;
    report["gate_warnings"] = stats.gate_warnings;
    report["max_imag_residue"] = stats.max_imag;
    report["elapsed_ms"] = ms_between(t0, t1);
    write_text(out_dir / "enhance_report.json", report.dump(2) + "\n");
    std::cout << "enhanced " << cfg.input << " -> " << (out_dir / "enhanced.ppm").string()
              << " (" << ms_between(t0, t1) << " ms)\n";
    return 0;
}

int cmd_enhance(const RunConfig& cfg, bool identity_params) {
    if (cfg.input.empty()) throw InvalidArgument("enhance: missing input image");
    return cfg.dtype == Dtype::F64 ? enhance_with_dtype<double>(cfg, identity_params)
                                   : enhance_with_dtype<float>(cfg, identity_params);
}

template <class T>
int fuse_with_dtype(const RunConfig& cfg, const std::string& rgb_path,
                    const std::string& ir_path) {
    const FeatureMap<T> f_v = tensor_cast<T>(load_tensor(rgb_path));
    const FeatureMap<T> f_i = tensor_cast<T>(load_tensor(ir_path));
    if (!f_v.same_shape(f_i))
        throw ShapeError("fuse: RGB features " + f_v.shape_string() + " vs IR features " +
                         f_i.shape_string());

    Prng prng(cfg.seed);
    PgmfParams params = PgmfParams::random(prng, f_v.c, 8, 3, cfg.discretization);
    params.dropout_rate = cfg.dropout;
    params.dropout_seed = cfg.seed ^ 0xd20;

    PgmfStats stats;
    const FeatureMap<T> fused = pgmf_fuse(f_v, f_i, params, cfg.variant, &stats);

    const fs::path out_dir(cfg.output);
    fs::create_directories(out_dir);
    save_tensor(out_dir / "fused.dft", TensorVariant(fused));

    nlohmann::json sidecar;
    sidecar["config"] = nlohmann::json::parse(cfg.to_json_text());
    sidecar["variant"] = stats.variant;
    sidecar["sort_algorithm"] = stats.sort_algorithm;
    sidecar["perm_v"] = stats.perm_v;
    sidecar["perm_i"] = stats.perm_i;
    sidecar["scores"] = {
        {"v", {{"min", stats.score_min_v}, {"max", stats.score_max_v}, {"mean", stats.score_mean_v}}},
        {"i", {{"min", stats.score_min_i}, {"max", stats.score_max_i}, {"mean", stats.score_mean_i}}}};
    sidecar["timings_ms"] = {{"projection", stats.ms_projection},
                             {"psn", stats.ms_psn},
                             {"sort_serialize", stats.ms_sort},
                             {"ssm", stats.ms_ssm}};
    write_text(out_dir / "fused.json", sidecar.dump(2) + "\n");
    std::cout << "fused " << rgb_path << " + " << ir_path << " -> "
              << (out_dir / "fused.dft").string() << "\n";
    return 0;
}

int cmd_fuse(const RunConfig& cfg, const std::string& rgb_path, const std::string& ir_path) {
    return cfg.dtype == Dtype::F64 ? fuse_with_dtype<double>(cfg, rgb_path, ir_path)
                                   : fuse_with_dtype<float>(cfg, rgb_path, ir_path);
}

int cmd_verify(const RunConfig& cfg, const std::string& suite, double mutate_haar) {
    if (mutate_haar != 0.0) set_haar_corruption(mutate_haar);
    const SuiteReport report = run_suite(suite, cfg.seed);
    set_haar_corruption(0.0);
    for (const auto& c : report.checks)
        std::printf("%s %-42s observed=%.3e tolerance=%.3e\n", c.pass ? "PASS" : "FAIL",
                    c.name.c_str(), c.observed, c.tolerance);
    const fs::path out_dir(cfg.output);
    fs::create_directories(out_dir);
    write_text(out_dir / ("verify_" + suite + ".json"), report.to_json(cfg.to_json_text()) + "\n");
    std::cout << (report.pass() ? "ALL CHECKS PASSED" : "CHECK FAILURES PRESENT") << " ("
              << report.checks.size() << " checks, suite " << suite << ")\n";
    return report.pass() ? 0 : 1;
}

int cmd_bench(const RunConfig& cfg, std::vector<std::size_t> sizes, std::size_t repeats) {
    const ComplexityTable table = run_complexity_suite(sizes, repeats);
    nlohmann::json j = nlohmann::json::parse(table.to_json());
    j["config"] = nlohmann::json::parse(cfg.to_json_text());
    auto in_band = nlohmann::json::array();
    for (const auto& r : table.doubling_ratios) {
        const bool ok = r[0] >= 1.6 && r[0] <= 2.6 && r[1] >= 1.6 && r[1] <= 2.6 &&
                        r[2] >= 1.6 && r[2] <= 2.6;
        in_band.push_back(ok);
    }
    j["ratios_in_band"] = in_band;
    const fs::path out_dir(cfg.output);
    fs::create_directories(out_dir);
    write_text(out_dir / "bench.json", j.dump(2) + "\n");
    for (const auto& r : table.rows)
        std::printf("N=%-8zu psn=%.3fms sort=%.3fms ssm=%.3fms\n", r.n, r.psn_ms, r.sort_ms,
                    r.ssm_ms);
    for (std::size_t i = 0; i < table.doubling_ratios.size(); ++i) {
        const auto& r = table.doubling_ratios[i];
        std::printf("ratio[%zu] psn=%.2f sort=%.2f ssm=%.2f %s\n", i, r[0], r[1], r[2],
                    in_band[i].get<bool>() ? "" : "(outside [1.6, 2.6])");
    }
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"desk-scale dual-domain enhancement and priority-guided fusion kernels"};
    app.require_subcommand(1);

    CommonFlags enhance_flags, fuse_flags, verify_flags, bench_flags;
    std::string input_image, rgb_tensor, ir_tensor, suite = "all";
    bool identity_params = false;
    double mutate_haar = 0.0;
    std::vector<std::size_t> sizes = {1u << 14, 1u << 15, 1u << 16, 1u << 17};
    std::size_t repeats = 5;
    std::optional<std::size_t> levels;
    std::optional<std::string> basis, variant, discretization;
    std::optional<double> dropout;
    std::vector<std::size_t> kernels;

    auto* enhance = app.add_subcommand("enhance", "enhance a low-light P6 PPM image");
    enhance->add_option("input", input_image, "input image (binary PPM, maxval 255)")
        ->required();
    add_common(enhance, enhance_flags);
    enhance->add_option("--levels", levels, "wavelet decomposition levels");
    enhance->add_option("--basis", basis, "haar or sym2")
        ->check(CLI::IsMember({"haar", "sym2"}));
    enhance->add_option("--kernels", kernels, "three odd kernel sizes")->expected(3);
    enhance->add_option("--discretization", discretization, "zoh or eulerb")
        ->check(CLI::IsMember({"zoh", "eulerb"}));
    enhance->add_flag("--identity-params", identity_params,
                      "use the identity parameterization instead of seeded random weights");

    auto* fuse = app.add_subcommand("fuse", "fuse RGB and IR feature tensors");
    fuse->add_option("rgb", rgb_tensor, "RGB feature tensor file")->required();
    fuse->add_option("ir", ir_tensor, "IR feature tensor file")->required();
    add_common(fuse, fuse_flags);
    fuse->add_option("--variant", variant, "fusion variant a|b|c|d")
        ->check(CLI::IsMember({"a", "b", "c", "d"}));
    fuse->add_option("--dropout", dropout, "dropout rate in [0,1)");
    fuse->add_option("--discretization", discretization, "zoh or eulerb")
        ->check(CLI::IsMember({"zoh", "eulerb"}));

    auto* verify = app.add_subcommand("verify", "run a verification suite");
    verify->add_option("suite", suite, "reconstruction|ssm|decay|gradients|all")
        ->check(CLI::IsMember({"reconstruction", "ssm", "decay", "gradients", "all"}));
    add_common(verify, verify_flags);
    verify->add_option("--mutate-haar", mutate_haar,
                       "corrupt the Haar low-pass taps by this amount (negative control)");

    auto* bench = app.add_subcommand("bench", "time the PGMF stages across token counts");
    bench->add_option("--sizes", sizes, "token counts, ascending");
    bench->add_option("--repeats", repeats, "samples per measurement");
    add_common(bench, bench_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (enhance->parsed()) {
            RunConfig cfg = resolve_config(enhance_flags);
            cfg.input = input_image;
            if (levels) cfg.levels = *levels;
            if (basis) cfg.basis = wavelet_basis_from_string(*basis);
            if (kernels.size() == 3) cfg.kernels = {kernels[0], kernels[1], kernels[2]};
            if (discretization)
                cfg.discretization = discretization_from_string(*discretization);
            cfg.validate();
            return cmd_enhance(cfg, identity_params);
        }
        if (fuse->parsed()) {
            RunConfig cfg = resolve_config(fuse_flags);
            if (variant) cfg.variant = fusion_variant_from_string(*variant);
            if (dropout) cfg.dropout = *dropout;
            if (discretization)
                cfg.discretization = discretization_from_string(*discretization);
            cfg.validate();
            return cmd_fuse(cfg, rgb_tensor, ir_tensor);
        }
        if (verify->parsed()) {
            return cmd_verify(resolve_config(verify_flags), suite, mutate_haar);
        }
        if (bench->parsed()) {
            return cmd_bench(resolve_config(bench_flags), sizes, repeats);
        }
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

}  // namespace depfusion::cli
