#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dwformer/checkpoint.hpp"
#include "dwformer/config.hpp"
#include "dwformer/data.hpp"
#include "dwformer/metrics.hpp"
#include "dwformer/model.hpp"
#include "dwformer/trace.hpp"
#include "dwformer/training.hpp"

namespace dwformer {

// Process exit codes shared with the CLI front end.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitDivergence = 3,
    kExitCheckpoint = 4,
};

namespace detail {

inline uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "' for checksumming");
    uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Resolves the train/test datasets from either a manifest or a single
// feature file split by data.test_frac.
inline std::pair<Dataset, Dataset> resolve_datasets(const RunConfig& cfg) {
    if (!cfg.manifest_path.empty()) {
        Dataset train, test;
        int64_t dim = -1;
        for (const ManifestEntry& e : load_manifest(cfg.manifest_path)) {
            FeatureFile file = load_features(e.path);
            if (dim == -1) dim = file.dim;
            if (file.dim != dim)
                throw ConfigError("manifest mixes feature dims " + std::to_string(dim) + " and " +
                                  std::to_string(file.dim));
            Dataset& dst = e.split == Split::train ? train : test;
            for (SampleRecord& rec : file.samples) dst.push_back(std::move(rec));
        }
        return {std::move(train), std::move(test)};
    }
    if (cfg.data_path.empty())
        throw ConfigError("no input data: set paths.data or paths.manifest");
    FeatureFile file = load_features(cfg.data_path);
    return split_dataset(std::move(file.samples), cfg.test_frac, cfg.train.seed);
}

inline void check_data_dim(const Dataset& ds, const ModelConfig& model, bool as_checkpoint) {
    for (const SampleRecord& rec : ds) {
        if (rec.features.dim(1) != model.dim) {
            const std::string msg = "dataset features have dim " +
                                    std::to_string(rec.features.dim(1)) + " but the model expects " +
                                    std::to_string(model.dim);
            if (as_checkpoint) throw CheckpointError(msg);
            throw ConfigError(msg);
        }
        if (rec.label >= model.num_classes) {
            const std::string msg = "dataset label " + std::to_string(rec.label) +
                                    " outside the model's " + std::to_string(model.num_classes) +
                                    " classes";
            if (as_checkpoint) throw CheckpointError(msg);
            throw ConfigError(msg);
        }
    }
}

inline nlohmann::json metrics_json(const MetricsReport& rep) {
    nlohmann::json j;
    j["wa"] = rep.wa;
    j["ua"] = rep.ua;
    j["wf1"] = rep.wf1;
    j["total"] = rep.total;
    j["confusion"] = rep.confusion;
    j["support"] = rep.support;
    return j;
}

inline void write_metrics_files(const std::filesystem::path& dir, const MetricsReport& rep) {
    std::ofstream txt(dir / "metrics.txt");
    txt << rep.summary() << "\n";
    for (size_t c = 0; c < rep.confusion.size(); ++c) {
        txt << "class " << c << ":";
        for (int64_t v : rep.confusion[c]) txt << ' ' << v;
        txt << "\n";
    }
    std::ofstream jf(dir / "metrics.json");
    jf << metrics_json(rep).dump(2) << "\n";
}

} // namespace detail

// gen: write a synthetic feature file, print sample count and checksum.
inline int cmd_gen(const RunConfig& cfg) {
    cfg.validate();
    const std::string out = cfg.out_path.empty() ? "features.dwf" : cfg.out_path;
    SyntheticSpec spec = cfg.synth();
    Dataset ds = generate(spec);
    save_features(out, ds, spec.t_max, spec.dim, spec.num_classes);
    std::cout << "wrote " << ds.size() << " samples to " << out << "\n"
              << "checksum fnv1a:" << detail::hex64(detail::fnv1a_file(out)) << "\n";
    return kExitOk;
}

// train: optimize per the config, write checkpoint + log + metrics.
inline int cmd_train(const RunConfig& cfg) {
    cfg.validate();
    auto [train_set, test_set] = detail::resolve_datasets(cfg);
    if (train_set.empty() || test_set.empty())
        throw ConfigError("need non-empty train and test sets (got " +
                          std::to_string(train_set.size()) + "/" + std::to_string(test_set.size()) +
                          ")");
    detail::check_data_dim(train_set, cfg.model, false);
    detail::check_data_dim(test_set, cfg.model, false);

    const std::filesystem::path dir = cfg.out_path.empty() ? "out" : cfg.out_path;
    std::filesystem::create_directories(dir);

    Model model(cfg.model, cfg.train.seed);
    TrainResult result = train(model, train_set, test_set, cfg.train);

    {
        std::ofstream log(dir / "train.log");
        for (const LogEntry& e : result.log) log << format_log_line(e) << "\n";
    }
    save_checkpoint((dir / "model.ckpt").string(), model);
    detail::write_metrics_files(dir, result.best_eval);

    std::cout << "trained " << variant_name(cfg.model.variant) << " for " << result.epochs_run
              << " epochs (" << result.log.size() << " steps)\n"
              << "best epoch " << result.best_epoch << ": " << result.best_eval.summary() << "\n"
              << "checkpoint " << (dir / "model.ckpt").string() << "\n";
    return kExitOk;
}

// eval: run a checkpoint over a dataset and report metrics.
inline int cmd_eval(const RunConfig& cfg) {
    if (cfg.checkpoint_path.empty()) throw ConfigError("eval needs paths.checkpoint");
    Model model = load_checkpoint(cfg.checkpoint_path);
    auto [train_set, test_set] = detail::resolve_datasets(cfg);
    const Dataset& ds = test_set.empty() ? train_set : test_set;
    detail::check_data_dim(ds, model.config(), true);
    MetricsReport rep = evaluate(model, ds);
    std::cout << rep.summary() << "\n";
    if (!cfg.out_path.empty()) {
        std::filesystem::create_directories(cfg.out_path);
        detail::write_metrics_files(cfg.out_path, rep);
    }
    return kExitOk;
}

// trace: export per-block importance scores and window partitions as CSV.
inline int cmd_trace(const RunConfig& cfg) {
    if (cfg.checkpoint_path.empty()) throw ConfigError("trace needs paths.checkpoint");
    Model model = load_checkpoint(cfg.checkpoint_path);
    auto [train_set, test_set] = detail::resolve_datasets(cfg);
    const Dataset& ds = test_set.empty() ? train_set : test_set;
    detail::check_data_dim(ds, model.config(), true);

    std::vector<SampleTrace> traces;
    traces.reserve(ds.size());
    for (const SampleRecord& rec : ds) traces.push_back(model.forward_sample(rec.features).trace);

    const std::filesystem::path dir = cfg.out_path.empty() ? "out" : cfg.out_path;
    std::filesystem::create_directories(dir);
    std::ofstream imp(dir / "importance.csv");
    const int64_t imp_rows = write_importance_csv(imp, traces);
    std::ofstream part(dir / "partitions.csv");
    const int64_t part_rows = write_partition_csv(part, traces);
    std::cout << "wrote " << imp_rows << " importance rows and " << part_rows
              << " partition rows for " << ds.size() << " samples to " << dir.string() << "\n";
    return kExitOk;
}

} // namespace dwformer
