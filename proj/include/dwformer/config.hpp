#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dwformer/data.hpp"
#include "dwformer/model.hpp"
#include "dwformer/training.hpp"

namespace dwformer {

// Flat configuration for the CLI: model + training + generator settings and
// paths, addressable as "section.key" strings with file and command-line
// overrides.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SyntheticSpec gen; // num_classes/dim are mirrored from model at use time
    double test_frac = 0.2;
    std::string data_path;
    std::string manifest_path;
    std::string out_path;
    std::string checkpoint_path;

    // Generator spec with the class/dim fields sourced from the model config.
    SyntheticSpec synth() const {
        SyntheticSpec s = gen;
        s.num_classes = model.num_classes;
        s.dim = model.dim;
        return s;
    }

    void validate() const {
        model.validate();
        train.validate();
        synth().validate();
        if (test_frac <= 0.0 || test_frac >= 1.0)
            throw ConfigError("data.test_frac must be in (0,1)");
    }
};

namespace detail {

inline int64_t cfg_parse_i64(const std::string& s) {
    int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ConfigError("expected an integer, got '" + s + "'");
    return v;
}

inline double cfg_parse_f64(const std::string& s) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ConfigError("expected a number, got '" + s + "'");
    return v;
}

inline bool cfg_parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("expected a boolean (true/false), got '" + s + "'");
}

inline std::string cfg_fmt_bool(bool b) { return b ? "true" : "false"; }

} // namespace detail

struct ConfigKey {
    const char* name;
    const char* desc;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<ConfigKey>& config_keys() {
    using detail::cfg_fmt_bool;
    using detail::cfg_parse_bool;
    using detail::cfg_parse_f64;
    using detail::cfg_parse_i64;
    static const std::vector<ConfigKey> keys = {
        {"model.dim", "channel width D",
         [](const RunConfig& c) { return std::to_string(c.model.dim); },
         [](RunConfig& c, const std::string& v) { c.model.dim = cfg_parse_i64(v); }},
        {"model.heads", "attention heads H",
         [](const RunConfig& c) { return std::to_string(c.model.heads); },
         [](RunConfig& c, const std::string& v) { c.model.heads = cfg_parse_i64(v); }},
        {"model.blocks", "number of stacked blocks N",
         [](const RunConfig& c) { return std::to_string(c.model.blocks); },
         [](RunConfig& c, const std::string& v) { c.model.blocks = cfg_parse_i64(v); }},
        {"model.ffn_mult", "FFN expansion factor",
         [](const RunConfig& c) { return std::to_string(c.model.ffn_mult); },
         [](RunConfig& c, const std::string& v) { c.model.ffn_mult = cfg_parse_i64(v); }},
        {"model.lambda", "weak-window down-weight in (0,1]",
         [](const RunConfig& c) { return fmt_double(c.model.lambda); },
         [](RunConfig& c, const std::string& v) { c.model.lambda = cfg_parse_f64(v); }},
        {"model.classes", "number of output classes",
         [](const RunConfig& c) { return std::to_string(c.model.num_classes); },
         [](RunConfig& c, const std::string& v) { c.model.num_classes = cfg_parse_i64(v); }},
        {"model.dropout", "dropout rate (0 disables)",
         [](const RunConfig& c) { return fmt_double(c.model.dropout); },
         [](RunConfig& c, const std::string& v) { c.model.dropout = cfg_parse_f64(v); }},
        {"model.pos_encoding", "add sinusoidal position encoding",
         [](const RunConfig& c) { return cfg_fmt_bool(c.model.pos_encoding); },
         [](RunConfig& c, const std::string& v) { c.model.pos_encoding = cfg_parse_bool(v); }},
        {"model.variant", "dwformer | fixed-window | vanilla",
         [](const RunConfig& c) { return std::string(variant_name(c.model.variant)); },
         [](RunConfig& c, const std::string& v) { c.model.variant = parse_variant(v); }},
        {"model.fixed_window", "window length of the fixed-window variant",
         [](const RunConfig& c) { return std::to_string(c.model.fixed_window); },
         [](RunConfig& c, const std::string& v) { c.model.fixed_window = cfg_parse_i64(v); }},
        {"train.epochs", "training epochs",
         [](const RunConfig& c) { return std::to_string(c.train.epochs); },
         [](RunConfig& c, const std::string& v) { c.train.epochs = cfg_parse_i64(v); }},
        {"train.batch", "mini-batch size",
         [](const RunConfig& c) { return std::to_string(c.train.batch_size); },
         [](RunConfig& c, const std::string& v) { c.train.batch_size = cfg_parse_i64(v); }},
        {"train.lr", "base learning rate",
         [](const RunConfig& c) { return fmt_double(c.train.base_lr); },
         [](RunConfig& c, const std::string& v) { c.train.base_lr = cfg_parse_f64(v); }},
        {"train.warmup", "warmup fraction of total steps",
         [](const RunConfig& c) { return fmt_double(c.train.warmup_frac); },
         [](RunConfig& c, const std::string& v) { c.train.warmup_frac = cfg_parse_f64(v); }},
        {"train.momentum", "SGD momentum",
         [](const RunConfig& c) { return fmt_double(c.train.momentum); },
         [](RunConfig& c, const std::string& v) { c.train.momentum = cfg_parse_f64(v); }},
        {"train.seed", "seed for init, shuffling and splits",
         [](const RunConfig& c) { return std::to_string(c.train.seed); },
         [](RunConfig& c, const std::string& v) {
             c.train.seed = static_cast<uint64_t>(cfg_parse_i64(v));
         }},
        {"train.eval_every", "epochs between evaluations",
         [](const RunConfig& c) { return std::to_string(c.train.eval_every); },
         [](RunConfig& c, const std::string& v) { c.train.eval_every = cfg_parse_i64(v); }},
        {"train.threads", "worker threads for batch gradients",
         [](const RunConfig& c) { return std::to_string(c.train.threads); },
         [](RunConfig& c, const std::string& v) { c.train.threads = cfg_parse_i64(v); }},
        {"gen.t_min", "minimum sequence length",
         [](const RunConfig& c) { return std::to_string(c.gen.t_min); },
         [](RunConfig& c, const std::string& v) { c.gen.t_min = cfg_parse_i64(v); }},
        {"gen.t_max", "maximum sequence length",
         [](const RunConfig& c) { return std::to_string(c.gen.t_max); },
         [](RunConfig& c, const std::string& v) { c.gen.t_max = cfg_parse_i64(v); }},
        {"gen.event_min", "minimum event length",
         [](const RunConfig& c) { return std::to_string(c.gen.event_min); },
         [](RunConfig& c, const std::string& v) { c.gen.event_min = cfg_parse_i64(v); }},
        {"gen.event_max", "maximum event length",
         [](const RunConfig& c) { return std::to_string(c.gen.event_max); },
         [](RunConfig& c, const std::string& v) { c.gen.event_max = cfg_parse_i64(v); }},
        {"gen.noise", "background noise sigma",
         [](const RunConfig& c) { return fmt_double(c.gen.noise_sigma); },
         [](RunConfig& c, const std::string& v) { c.gen.noise_sigma = cfg_parse_f64(v); }},
        {"gen.amplitude", "event pattern amplitude",
         [](const RunConfig& c) { return fmt_double(c.gen.amplitude); },
         [](RunConfig& c, const std::string& v) { c.gen.amplitude = cfg_parse_f64(v); }},
        {"gen.per_class", "samples generated per class",
         [](const RunConfig& c) { return std::to_string(c.gen.per_class); },
         [](RunConfig& c, const std::string& v) { c.gen.per_class = cfg_parse_i64(v); }},
        {"gen.seed", "generator seed",
         [](const RunConfig& c) { return std::to_string(c.gen.seed); },
         [](RunConfig& c, const std::string& v) {
             c.gen.seed = static_cast<uint64_t>(cfg_parse_i64(v));
         }},
        {"data.test_frac", "held-out fraction when splitting a single file",
         [](const RunConfig& c) { return fmt_double(c.test_frac); },
         [](RunConfig& c, const std::string& v) { c.test_frac = cfg_parse_f64(v); }},
        {"paths.data", "feature file to read (or write for gen)",
         [](const RunConfig& c) { return c.data_path; },
         [](RunConfig& c, const std::string& v) { c.data_path = v; }},
        {"paths.manifest", "dataset manifest with train/test entries",
         [](const RunConfig& c) { return c.manifest_path; },
         [](RunConfig& c, const std::string& v) { c.manifest_path = v; }},
        {"paths.out", "output file (gen) or directory (train/eval/trace)",
         [](const RunConfig& c) { return c.out_path; },
         [](RunConfig& c, const std::string& v) { c.out_path = v; }},
        {"paths.checkpoint", "model checkpoint to load",
         [](const RunConfig& c) { return c.checkpoint_path; },
         [](RunConfig& c, const std::string& v) { c.checkpoint_path = v; }},
    };
    return keys;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const ConfigKey& k : config_keys()) {
        if (key == k.name) {
            try {
                k.set(cfg, value);
            } catch (const ConfigError& e) {
                throw ConfigError(std::string(k.name) + ": " + e.what());
            }
            return;
        }
    }
    throw ConfigError("unknown configuration key '" + key + "'");
}

// "key=value" override as accepted on the command line.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    set_config_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

// Canonical dump; parsing a dump and dumping again reproduces it byte for byte.
inline std::string dump_config(const RunConfig& cfg) {
    std::string out;
    for (const ConfigKey& k : config_keys()) out += std::string(k.name) + "=" + k.get(cfg) + "\n";
    return out;
}

inline void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + " line " + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        set_config_value(cfg, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    parse_config_text(cfg, text, path);
}

} // namespace dwformer
