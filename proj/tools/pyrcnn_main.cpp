#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pyramid/commands.hpp"
#include "pyramid/config.hpp"

namespace {

pyramid::RunConfig load(const std::string& path, const std::optional<std::uint64_t>& seed) {
    pyramid::RunConfig cfg = pyramid::load_config(path);
    if (seed) cfg.set_seed(*seed);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pyramid CNN face representation: synth, train, extract, eval"};
    app.require_subcommand(1);

    std::string config;
    std::optional<std::uint64_t> seed;
    std::string model, index, features;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "JSON run configuration")->required();
        sub->add_option("--seed", seed, "override the configured seed");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic face dataset");
    add_common(synth);
    CLI::App* train = app.add_subcommand("train", "greedily train the pyramid");
    add_common(train);
    CLI::App* extract = app.add_subcommand("extract", "write one feature row per index record");
    add_common(extract);
    extract->add_option("model", model, "model file")->required();
    extract->add_option("index", index, "index CSV")->required();
    CLI::App* eval = app.add_subcommand("eval", "score pairs and write the verification report");
    add_common(eval);
    eval->add_option("features", features, "feature CSV")->required();
    eval->add_option("index", index, "index CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const pyramid::RunConfig cfg = load(config, seed);
        if (synth->parsed()) {
            pyramid::cmd_synth(cfg, std::cout);
        } else if (train->parsed()) {
            pyramid::cmd_train(cfg, std::cout);
        } else if (extract->parsed()) {
            pyramid::cmd_extract(cfg, model, index, std::cout);
        } else if (eval->parsed()) {
            pyramid::cmd_eval(cfg, features, index, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
