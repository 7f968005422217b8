#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dwformer/model.hpp"

namespace dwformer {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const char* what) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(std::string("bad ") + what + " value '" + s + "'");
    return v;
}

} // namespace detail

inline constexpr const char* kCheckpointMagic = "DWFORMER-CKPT";
inline constexpr int kCheckpointVersion = 1;

// Flat versioned container: textual header (magic, version, model config,
// parameter count) followed by binary records of (name, shape, float64 data).
inline void save_checkpoint(const std::string& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    const ModelConfig& c = model.config();
    ParamList params = model.params();
    out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n'
        << "dim " << c.dim << '\n'
        << "heads " << c.heads << '\n'
        << "blocks " << c.blocks << '\n'
        << "ffn_mult " << c.ffn_mult << '\n'
        << "lambda " << detail::fmt_double(c.lambda) << '\n'
        << "classes " << c.num_classes << '\n'
        << "dropout " << detail::fmt_double(c.dropout) << '\n'
        << "pos_encoding " << (c.pos_encoding ? 1 : 0) << '\n'
        << "variant " << variant_name(c.variant) << '\n'
        << "fixed_window " << c.fixed_window << '\n'
        << "params " << params.size() << '\n';
    for (const auto& [name, var] : params) {
        const Tensor& t = var.value();
        const uint32_t name_len = static_cast<uint32_t>(name.size());
        out.write(reinterpret_cast<const char*>(&name_len), sizeof name_len);
        out.write(name.data(), name_len);
        const uint32_t rank = static_cast<uint32_t>(t.rank());
        out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
        for (int64_t d : t.shape) {
            const uint64_t dim = static_cast<uint64_t>(d);
            out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
        }
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw ParseError("short write to '" + path + "'");
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");

    auto offset = [&]() { return std::to_string(static_cast<long long>(in.tellg())); };
    auto header_line = [&](const std::string& key) {
        std::string line;
        if (!std::getline(in, line))
            throw ParseError("truncated checkpoint header at byte " + offset());
        if (line.rfind(key + ' ', 0) != 0)
            throw ParseError("expected '" + key + "' in checkpoint header, got '" + line +
                             "' at byte " + offset());
        return line.substr(key.size() + 1);
    };

    std::string magic_line;
    if (!std::getline(in, magic_line) ||
        magic_line != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion))
        throw ParseError("'" + path + "' is not a version-" + std::to_string(kCheckpointVersion) +
                         " checkpoint");

    ModelConfig cfg;
    cfg.dim = std::stoll(header_line("dim"));
    cfg.heads = std::stoll(header_line("heads"));
    cfg.blocks = std::stoll(header_line("blocks"));
    cfg.ffn_mult = std::stoll(header_line("ffn_mult"));
    cfg.lambda = detail::parse_double(header_line("lambda"), "lambda");
    cfg.num_classes = std::stoll(header_line("classes"));
    cfg.dropout = detail::parse_double(header_line("dropout"), "dropout");
    cfg.pos_encoding = header_line("pos_encoding") == "1";
    cfg.variant = parse_variant(header_line("variant"));
    cfg.fixed_window = std::stoll(header_line("fixed_window"));
    const size_t count = static_cast<size_t>(std::stoull(header_line("params")));

    Model model(cfg, 0);
    ParamList params = model.params();
    if (count != params.size())
        throw CheckpointError("checkpoint lists " + std::to_string(count) + " parameters, model has " +
                              std::to_string(params.size()));
    std::map<std::string, Var> by_name(params.begin(), params.end());

    for (size_t i = 0; i < count; ++i) {
        uint32_t name_len = 0;
        if (!in.read(reinterpret_cast<char*>(&name_len), sizeof name_len))
            throw ParseError("truncated checkpoint at byte " + offset());
        if (name_len > 4096) throw ParseError("implausible name length at byte " + offset());
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len))
            throw ParseError("truncated checkpoint at byte " + offset());
        uint32_t rank = 0;
        if (!in.read(reinterpret_cast<char*>(&rank), sizeof rank))
            throw ParseError("truncated checkpoint at byte " + offset());
        Shape shape;
        for (uint32_t r = 0; r < rank; ++r) {
            uint64_t dim = 0;
            if (!in.read(reinterpret_cast<char*>(&dim), sizeof dim))
                throw ParseError("truncated checkpoint at byte " + offset());
            shape.push_back(static_cast<int64_t>(dim));
        }
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint parameter '" + name + "' not in model");
        Tensor& dst = it->second.mutable_value();
        if (dst.shape != shape)
            throw CheckpointError("parameter '" + name + "' has shape " + shape_str(shape) +
                                  " in checkpoint but " + shape_str(dst.shape) + " in model");
        if (!in.read(reinterpret_cast<char*>(dst.data.data()),
                     static_cast<std::streamsize>(dst.data.size() * sizeof(double))))
            throw ParseError("truncated checkpoint payload at byte " + offset());
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw CheckpointError("checkpoint is missing parameter '" + by_name.begin()->first + "'");
    return model;
}

} // namespace dwformer
