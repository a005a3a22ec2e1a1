#include "depfusion/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace depfusion {

bool known_kernel_combination(const std::array<std::size_t, 3>& kernels) {
    static const std::array<std::array<std::size_t, 3>, 4> combos = {
        std::array<std::size_t, 3>{3, 5, 7}, {5, 7, 9}, {3, 5, 9}, {3, 7, 9}};
    for (const auto& c : combos)
        if (c == kernels) return true;
    return false;
}

void RunConfig::validate() const {
    if (levels < 1) throw InvalidArgument("config: levels must be >= 1");
    if (!known_kernel_combination(kernels))
        throw InvalidArgument(
            "config: kernels must be one of [3,5,7], [5,7,9], [3,5,9], [3,7,9]");
    if (dropout < 0.0 || dropout >= 1.0)
        throw InvalidArgument("config: dropout must lie in [0, 1)");
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("config is not valid JSON: ") + e.what(), e.byte);
    }
    static const std::set<std::string> known = {"seed",     "levels",         "basis",
                                                "kernels",  "variant",        "discretization",
                                                "dropout",  "dtype",          "input",
                                                "output"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw InvalidArgument("config: unknown key \"" + key + "\"");
    RunConfig cfg;
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("levels")) cfg.levels = j["levels"].get<std::size_t>();
    if (j.contains("basis")) cfg.basis = wavelet_basis_from_string(j["basis"].get<std::string>());
    if (j.contains("kernels")) {
        const auto k = j["kernels"].get<std::vector<std::size_t>>();
        if (k.size() != 3) throw InvalidArgument("config: kernels must list three sizes");
        cfg.kernels = {k[0], k[1], k[2]};
    }
    if (j.contains("variant"))
        cfg.variant = fusion_variant_from_string(j["variant"].get<std::string>());
    if (j.contains("discretization"))
        cfg.discretization = discretization_from_string(j["discretization"].get<std::string>());
    if (j.contains("dropout")) cfg.dropout = j["dropout"].get<double>();
    if (j.contains("dtype")) {
        const auto d = j["dtype"].get<std::string>();
        if (d == "f32")
            cfg.dtype = Dtype::F32;
        else if (d == "f64")
            cfg.dtype = Dtype::F64;
        else
            throw InvalidArgument("config: dtype must be f32 or f64");
    }
    if (j.contains("input")) cfg.input = j["input"].get<std::string>();
    if (j.contains("output")) cfg.output = j["output"].get<std::string>();
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open config file " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string RunConfig::to_json_text() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["levels"] = levels;
    j["basis"] = to_string(basis);
    j["kernels"] = kernels;
    j["variant"] = to_string(variant);
    j["discretization"] = to_string(discretization);
    j["dropout"] = dropout;
    j["dtype"] = dtype == Dtype::F32 ? "f32" : "f64";
    j["input"] = input;
    j["output"] = output;
    return j.dump(2);
}

}  // namespace depfusion
