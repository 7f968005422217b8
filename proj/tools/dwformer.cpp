// Command-line front end: dataset generation, training, evaluation and
// importance-trace export for the dynamic-window transformer.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dwformer/cli.hpp"
#include "dwformer/config.hpp"

namespace {

std::string config_key_help() {
    std::string out = "Configuration keys (config file and --set):\n";
    for (const dwformer::ConfigKey& k : dwformer::config_keys()) {
        std::string line = "  ";
        line += k.name;
        line.append(line.size() < 24 ? 24 - line.size() : 1, ' ');
        line += k.desc;
        out += line + "\n";
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    using namespace dwformer;

    CLI::App app{"dwformer: dynamic-window transformer training and analysis"};
    app.require_subcommand(0, 1);
    app.footer(config_key_help() +
               "\nExit codes: 0 ok, 2 config error, 3 divergence, 4 checkpoint mismatch.\n"
               "DWFORMER_CONFIG names a config file loaded before any --config/--set.");

    std::string config_file;
    std::vector<std::string> overrides;
    bool dump = false;
    app.add_option("-c,--config", config_file, "config file of key=value lines");
    app.add_option("--set", overrides, "override a config key, e.g. --set train.epochs=5")
        ->take_all();
    app.add_flag("--dump-config", dump, "print the effective config and exit");

    // Frequently used keys as plain flags; all of them map onto config keys.
    std::string data, manifest, out, checkpoint, variant;
    int64_t threads = -1, epochs = -1, seed = -1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->fallthrough(); // accept -c/--set after the subcommand name too
        cmd->add_option("--data", data, "feature file (paths.data)");
        cmd->add_option("--manifest", manifest, "dataset manifest (paths.manifest)");
        cmd->add_option("-o,--out", out, "output path (paths.out)");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic feature file");
    add_common(gen);

    CLI::App* trainc = app.add_subcommand("train", "train a model and write a checkpoint");
    add_common(trainc);
    trainc->add_option("--model", variant, "dwformer | fixed-window | vanilla");
    trainc->add_option("--threads", threads, "worker threads (train.threads)");
    trainc->add_option("--epochs", epochs, "training epochs (train.epochs)");
    trainc->add_option("--seed", seed, "seed (train.seed)");

    CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(evalc);
    evalc->add_option("--checkpoint", checkpoint, "checkpoint path (paths.checkpoint)");

    CLI::App* tracec = app.add_subcommand("trace", "export importance and partition CSVs");
    add_common(tracec);
    tracec->add_option("--checkpoint", checkpoint, "checkpoint path (paths.checkpoint)");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg;
        if (const char* env = std::getenv("DWFORMER_CONFIG"); env && *env)
            load_config_file(cfg, env);
        if (!config_file.empty()) load_config_file(cfg, config_file);
        for (const std::string& ov : overrides) apply_override(cfg, ov);
        if (!data.empty()) cfg.data_path = data;
        if (!manifest.empty()) cfg.manifest_path = manifest;
        if (!out.empty()) cfg.out_path = out;
        if (!checkpoint.empty()) cfg.checkpoint_path = checkpoint;
        if (!variant.empty()) cfg.model.variant = parse_variant(variant);
        if (threads >= 0) cfg.train.threads = threads;
        if (epochs >= 0) cfg.train.epochs = epochs;
        if (seed >= 0) cfg.train.seed = static_cast<uint64_t>(seed);

        if (dump) {
            std::cout << dump_config(cfg);
            return kExitOk;
        }
        if (gen->parsed()) return cmd_gen(cfg);
        if (trainc->parsed()) return cmd_train(cfg);
        if (evalc->parsed()) return cmd_eval(cfg);
        if (tracec->parsed()) return cmd_trace(cfg);
        std::cerr << app.help();
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint mismatch: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
