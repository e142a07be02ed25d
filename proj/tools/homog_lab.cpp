// homog-lab: numerical experiments on random uniformly convex energies.
//   homog-lab <command> --config <path> [--seed N] [--workers N] [--out DIR]

#include <CLI11.hpp>

#include "homog/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Numerical laboratory for effective behavior of random convex energies"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 1;

    const std::vector<std::string> commands = {
        "estimate-effective", "dirichlet-error", "regularity",     "duality-check",
        "variance-decay",     "patching-check",  "cell"};
    for (const auto& name : commands) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "override the config seed")
            ->each([&](const std::string&) { seed_set = true; });
        sub->add_option("--workers", workers, "worker thread count");
    }

    CLI11_PARSE(app, argc, argv);

    std::string command = app.get_subcommands().front()->get_name();
    try {
        auto rc = homog::cli::load_config(command, config_path);
        rc.out_dir = out_dir;
        rc.workers = workers;
        if (seed_set) {
            rc.seed = seed;
            rc.seed_overridden = true;
        }
        return homog::cli::run(rc);
    } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "execution error: " << e.what() << '\n';
        return 2;
    }
}
