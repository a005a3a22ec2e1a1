#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>

#include "depfusion/cli.hpp"
#include "depfusion/config.hpp"
#include "depfusion/image_io.hpp"
#include "depfusion/tensor_io.hpp"

using namespace depfusion;
namespace fs = std::filesystem;

namespace {

int run_cli(std::initializer_list<const char*> args) {
    std::vector<const char*> argv = {"depfusion"};
    argv.insert(argv.end(), args.begin(), args.end());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::uint8_t> slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("ppm round trip and value mapping") {
    Prng prng(3);
    FeatureMap<float> img(1, 3, 5, 4);
    for (auto& v : img.data) v = static_cast<float>(prng.uniform(0.0, 1.0));
    const auto bytes = encode_ppm(img);
    const auto back = decode_ppm<float>(bytes);
    CHECK(back.same_shape(img));
    CHECK(max_abs_diff(back, img) <= 0.5 / 255.0 + 1e-6);
    // a second encode of the decoded image is byte-identical
    CHECK(encode_ppm(back) == bytes);
}

TEST_CASE("pgm round trip") {
    Prng prng(4);
    FeatureMap<float> img(1, 1, 3, 7);
    for (auto& v : img.data) v = static_cast<float>(prng.uniform(0.0, 1.0));
    const auto bytes = encode_pgm(img);
    const auto back = decode_pgm<float>(bytes);
    CHECK(max_abs_diff(back, img) <= 0.5 / 255.0 + 1e-6);
}

TEST_CASE("ppm parser reports byte offsets") {
    const std::string bad_magic = "P5\n2 2\n255\n";
    std::vector<std::uint8_t> b1(bad_magic.begin(), bad_magic.end());
    CHECK_THROWS_AS(decode_ppm<float>(b1), FormatError);

    const std::string bad_maxval = "P6\n2 2\n127\n";
    std::vector<std::uint8_t> b2(bad_maxval.begin(), bad_maxval.end());
    try {
        decode_ppm<float>(b2);
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(e.byte_offset == 7);  // where the maxval token starts
    }

    const std::string truncated = "P6\n# comment\n4 4\n255\nxx";
    std::vector<std::uint8_t> b3(truncated.begin(), truncated.end());
    CHECK_THROWS_AS(decode_ppm<float>(b3), FormatError);
}

TEST_CASE("config defaults match the reference setup and reject unknown keys") {
    RunConfig cfg;
    CHECK(cfg.levels == 2);
    CHECK(cfg.basis == WaveletBasis::Haar);
    CHECK(cfg.kernels == std::array<std::size_t, 3>{3, 5, 7});
    CHECK(cfg.variant == FusionVariant::D);
    CHECK(cfg.discretization == Discretization::Zoh);
    CHECK(cfg.dropout == 0.0);

    CHECK_THROWS_AS(RunConfig::from_json_text("{\"sedd\": 1}"), InvalidArgument);
    CHECK_THROWS_AS(RunConfig::from_json_text("{\"kernels\": [2,4,6]}"), InvalidArgument);
    CHECK_THROWS_AS(RunConfig::from_json_text("not json"), FormatError);

    auto parsed = RunConfig::from_json_text(
        "{\"seed\": 9, \"basis\": \"sym2\", \"variant\": \"b\", \"kernels\": [5,7,9]}");
    CHECK(parsed.seed == 9);
    CHECK(parsed.basis == WaveletBasis::Sym2);
    CHECK(parsed.variant == FusionVariant::B);

    // round trip through the echo text
    auto echoed = RunConfig::from_json_text(parsed.to_json_text());
    CHECK(echoed.seed == parsed.seed);
    CHECK(echoed.basis == parsed.basis);
}

TEST_CASE("cli enhance: identity parameterization reproduces the image") {
    const auto dir = fresh_dir("depf_cli_identity");
    Prng prng(8);
    FeatureMap<float> img(1, 3, 16, 16);
    for (auto& v : img.data) v = static_cast<float>(prng.uniform(0.0, 1.0));
    save_ppm(dir / "in.ppm", img);

    const std::string in = (dir / "in.ppm").string();
    const std::string out = (dir / "out").string();
    CHECK(run_cli({"enhance", in.c_str(), "--identity-params", "--out", out.c_str()}) == 0);

    const auto original = slurp(dir / "in.ppm");
    const auto enhanced = slurp(dir / "out" / "enhanced.ppm");
    REQUIRE(original.size() == enhanced.size());
    // pixel payload may differ by at most one quantization step
    int worst = 0;
    for (std::size_t i = 15; i < original.size(); ++i)
        worst = std::max(worst, std::abs(int(original[i]) - int(enhanced[i])));
    CHECK(worst <= 1);
    fs::remove_all(dir);
}

TEST_CASE("cli enhance: deterministic bytes for a fixed seed") {
    const auto dir = fresh_dir("depf_cli_det");
    Prng prng(9);
    FeatureMap<float> img(1, 3, 16, 20);
    for (auto& v : img.data) v = static_cast<float>(prng.uniform(0.0, 1.0));
    save_ppm(dir / "in.ppm", img);
    const std::string in = (dir / "in.ppm").string();
    const std::string out1 = (dir / "o1").string(), out2 = (dir / "o2").string();
    CHECK(run_cli({"enhance", in.c_str(), "--seed", "77", "--out", out1.c_str()}) == 0);
    CHECK(run_cli({"enhance", in.c_str(), "--seed", "77", "--out", out2.c_str()}) == 0);
    CHECK(slurp(dir / "o1" / "enhanced.ppm") == slurp(dir / "o2" / "enhanced.ppm"));
    CHECK(slurp(dir / "o1" / "enhanced.dft") == slurp(dir / "o2" / "enhanced.dft"));
    fs::remove_all(dir);
}

TEST_CASE("cli fuse: sidecar invariants and variant sensitivity") {
    const auto dir = fresh_dir("depf_cli_fuse");
    Prng prng(10);
    auto f = random_map<float>(prng, 1, 4, 6, 6);
    auto g = random_map<float>(prng, 1, 4, 6, 6);
    save_tensor(dir / "v.dft", TensorVariant(f));
    save_tensor(dir / "i.dft", TensorVariant(g));
    const std::string v = (dir / "v.dft").string(), i = (dir / "i.dft").string();

    // identical inputs: permutations agree in the sidecar
    const std::string out_same = (dir / "same").string();
    CHECK(run_cli({"fuse", v.c_str(), v.c_str(), "--seed", "3", "--out", out_same.c_str()}) == 0);
    {
        std::ifstream sf(dir / "same" / "fused.json");
        const auto sidecar = nlohmann::json::parse(sf);
        CHECK(sidecar["perm_v"] == sidecar["perm_i"]);
        CHECK(sidecar["variant"] == "d");
    }

    // variant b vs d on the same inputs differ
    const std::string ob = (dir / "ob").string(), od = (dir / "od").string();
    CHECK(run_cli({"fuse", v.c_str(), i.c_str(), "--seed", "3", "--variant", "b", "--out",
                   ob.c_str()}) == 0);
    CHECK(run_cli({"fuse", v.c_str(), i.c_str(), "--seed", "3", "--variant", "d", "--out",
                   od.c_str()}) == 0);
    CHECK(slurp(dir / "ob" / "fused.dft") != slurp(dir / "od" / "fused.dft"));

    // output tensor file round trips bitwise
    const auto fused_bytes = slurp(dir / "od" / "fused.dft");
    const auto reread = read_tensor(fused_bytes);
    CHECK(std::visit([](const auto& m) { return write_tensor(m); }, reread) == fused_bytes);

    // shape mismatch names both shapes
    auto small = random_map<float>(prng, 1, 4, 5, 6);
    save_tensor(dir / "s.dft", TensorVariant(small));
    const std::string s = (dir / "s.dft").string();
    CHECK(run_cli({"fuse", v.c_str(), s.c_str(), "--out", (dir / "x").string().c_str()}) == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli verify: reconstruction suite passes and the negative control fails") {
    const auto dir = fresh_dir("depf_cli_verify");
    const std::string out = dir.string();
    CHECK(run_cli({"verify", "reconstruction", "--seed", "42", "--out", out.c_str()}) == 0);
    {
        std::ifstream rf(dir / "verify_reconstruction.json");
        const auto report = nlohmann::json::parse(rf);
        CHECK(report["pass"].get<bool>());
        CHECK(report["checks"].is_array());
        CHECK(!report["checks"].empty());
        for (const auto& c : report["checks"]) {
            CHECK(c.contains("name"));
            CHECK(c.contains("tolerance"));
            CHECK(c.contains("observed"));
            CHECK(c.contains("pass"));
        }
    }
    CHECK(run_cli({"verify", "reconstruction", "--seed", "42", "--out", out.c_str(),
                   "--mutate-haar", "0.05"}) == 1);
    fs::remove_all(dir);
}

TEST_CASE("cli usage errors exit 2") {
    CHECK(run_cli({"enhance"}) == 2);                       // missing input
    CHECK(run_cli({"verify", "nonsense"}) == 2);            // bad suite
    CHECK(run_cli({"unknown-subcommand"}) == 2);
    const auto dir = fresh_dir("depf_cli_err");
    std::ofstream(dir / "garbage.ppm") << "not a ppm";
    CHECK(run_cli({"enhance", (dir / "garbage.ppm").string().c_str(), "--out",
                   (dir / "o").string().c_str()}) == 2);
    fs::remove_all(dir);
}
