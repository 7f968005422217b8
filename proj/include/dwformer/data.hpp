#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dwformer/error.hpp"
#include "dwformer/tensor.hpp"

namespace dwformer {

constexpr int64_t kUnknownEvent = -1;

struct SampleRecord {
    Tensor features; // [valid_len, dim]
    int label = 0;
    int64_t valid_len = 0;
    int64_t event_begin = kUnknownEvent; // ground-truth span, inclusive
    int64_t event_end = kUnknownEvent;
};

using Dataset = std::vector<SampleRecord>;

// Planted-event benchmark: gaussian background noise plus one class-specific
// channel pattern over a random-length span at a random position. The default
// amplitude keeps single tokens detectable (5:1 against the noise) while
// short events stay weak in the whole-sequence mean, so classifying them
// rewards temporal localization rather than plain pooling.
struct SyntheticSpec {
    int64_t num_classes = 4;
    int64_t t_min = 40;
    int64_t t_max = 64;
    int64_t dim = 64;
    int64_t event_min = 4;
    int64_t event_max = 20;
    double noise_sigma = 0.1;
    double amplitude = 0.5;
    int64_t per_class = 200;
    uint64_t seed = 7;

    void validate() const {
        if (num_classes < 2) throw ConfigError("gen: need at least 2 classes");
        if (t_min < 1 || t_min > t_max)
            throw ConfigError("gen: bad token range [" + std::to_string(t_min) + "," +
                              std::to_string(t_max) + "]");
        if (event_min < 1 || event_min > event_max || event_max > t_min)
            throw ConfigError("gen: event length range [" + std::to_string(event_min) + "," +
                              std::to_string(event_max) + "] must fit in every sequence (t_min " +
                              std::to_string(t_min) + ")");
        if (noise_sigma < 0) throw ConfigError("gen: noise sigma must be >= 0");
        if (per_class < 1) throw ConfigError("gen: per_class must be >= 1");
        if (dim < num_classes)
            throw ConfigError("gen: dim " + std::to_string(dim) + " < classes " +
                              std::to_string(num_classes) + "; class patterns are orthogonal channels");
    }
};

// Deterministic under seed. Values are quantized to float32 so that a
// save/load round trip through the on-disk format is bit-exact.
inline Dataset generate(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    Dataset out;
    out.reserve(static_cast<size_t>(spec.num_classes * spec.per_class));
    for (int64_t c = 0; c < spec.num_classes; ++c) {
        for (int64_t s = 0; s < spec.per_class; ++s) {
            SampleRecord rec;
            rec.label = static_cast<int>(c);
            rec.valid_len = std::uniform_int_distribution<int64_t>(spec.t_min, spec.t_max)(rng);
            const int64_t len =
                std::uniform_int_distribution<int64_t>(spec.event_min, spec.event_max)(rng);
            rec.event_begin =
                std::uniform_int_distribution<int64_t>(0, rec.valid_len - len)(rng);
            rec.event_end = rec.event_begin + len - 1;
            rec.features = Tensor({rec.valid_len, spec.dim});
            for (int64_t t = 0; t < rec.valid_len; ++t)
                for (int64_t d = 0; d < spec.dim; ++d) {
                    double v = spec.noise_sigma > 0 ? noise(rng) : 0.0;
                    if (d == c && t >= rec.event_begin && t <= rec.event_end) v += spec.amplitude;
                    rec.features.at({t, d}) = static_cast<double>(static_cast<float>(v));
                }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feature file: one text header line
//   DWFEAT 1 <count> <t_max> <dim> <classes>
// then per sample: label u16, valid_len u32, event begin/end u32 (0xFFFFFFFF
// for unknown), payload valid_len*dim little-endian float32.
// ---------------------------------------------------------------------------

inline constexpr const char* kFeatureMagic = "DWFEAT";
inline constexpr uint32_t kNoEventSentinel = 0xFFFFFFFFu;

struct FeatureFile {
    Dataset samples;
    int64_t t_max = 0;
    int64_t dim = 0;
    int64_t num_classes = 0;
};

inline void save_features(const std::string& path, const Dataset& ds, int64_t t_max, int64_t dim,
                          int64_t num_classes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << kFeatureMagic << " 1 " << ds.size() << ' ' << t_max << ' ' << dim << ' ' << num_classes
        << '\n';
    std::vector<float> payload;
    for (const SampleRecord& rec : ds) {
        if (rec.features.shape != Shape{rec.valid_len, dim})
            throw ContractError("save_features: sample features " + shape_str(rec.features.shape) +
                                " vs valid_len " + std::to_string(rec.valid_len) + ", dim " +
                                std::to_string(dim));
        const uint16_t label = static_cast<uint16_t>(rec.label);
        const uint32_t valid = static_cast<uint32_t>(rec.valid_len);
        const uint32_t eb =
            rec.event_begin == kUnknownEvent ? kNoEventSentinel : static_cast<uint32_t>(rec.event_begin);
        const uint32_t ee =
            rec.event_end == kUnknownEvent ? kNoEventSentinel : static_cast<uint32_t>(rec.event_end);
        out.write(reinterpret_cast<const char*>(&label), sizeof label);
        out.write(reinterpret_cast<const char*>(&valid), sizeof valid);
        out.write(reinterpret_cast<const char*>(&eb), sizeof eb);
        out.write(reinterpret_cast<const char*>(&ee), sizeof ee);
        payload.resize(rec.features.data.size());
        for (size_t i = 0; i < payload.size(); ++i)
            payload[i] = static_cast<float>(rec.features.data[i]);
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size() * sizeof(float)));
    }
    if (!out) throw ParseError("short write to '" + path + "'");
}

inline FeatureFile load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::string header;
    if (!std::getline(in, header) || header.empty())
        throw ParseError("'" + path + "': empty or missing header at byte 0");
    std::istringstream hs(header);
    std::string magic;
    int version = 0;
    uint64_t count = 0;
    int64_t t_max = 0, dim = 0, classes = 0;
    hs >> magic >> version >> count >> t_max >> dim >> classes;
    if (!hs || magic != kFeatureMagic)
        throw ParseError("'" + path + "': bad header '" + header + "' at byte 0");
    if (version != 1)
        throw ParseError("'" + path + "': unsupported version " + std::to_string(version));
    if (t_max < 1 || dim < 1 || classes < 1)
        throw ParseError("'" + path + "': bad header dimensions '" + header + "'");

    FeatureFile file;
    file.t_max = t_max;
    file.dim = dim;
    file.num_classes = classes;
    file.samples.reserve(count);
    std::vector<float> payload;
    for (uint64_t s = 0; s < count; ++s) {
        const auto at = std::to_string(static_cast<long long>(in.tellg()));
        uint16_t label = 0;
        uint32_t valid = 0, eb = 0, ee = 0;
        if (!in.read(reinterpret_cast<char*>(&label), sizeof label) ||
            !in.read(reinterpret_cast<char*>(&valid), sizeof valid) ||
            !in.read(reinterpret_cast<char*>(&eb), sizeof eb) ||
            !in.read(reinterpret_cast<char*>(&ee), sizeof ee))
            throw ParseError("'" + path + "': truncated record header for sample " +
                             std::to_string(s) + " at byte " + at);
        if (label >= classes)
            throw ParseError("'" + path + "': sample " + std::to_string(s) + " label " +
                             std::to_string(label) + " out of range [0," + std::to_string(classes) +
                             ") at byte " + at);
        if (valid < 1 || static_cast<int64_t>(valid) > t_max)
            throw ParseError("'" + path + "': sample " + std::to_string(s) + " valid_len " +
                             std::to_string(valid) + " outside [1," + std::to_string(t_max) +
                             "] at byte " + at);
        const size_t want = static_cast<size_t>(valid) * static_cast<size_t>(dim);
        payload.resize(want);
        in.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(want * sizeof(float)));
        if (static_cast<size_t>(in.gcount()) != want * sizeof(float))
            throw ParseError("'" + path + "': sample " + std::to_string(s) + " payload needs " +
                             std::to_string(want * sizeof(float)) + " bytes (valid_len " +
                             std::to_string(valid) + " x dim " + std::to_string(dim) +
                             " x 4), got " + std::to_string(in.gcount()) + " at byte " + at);
        SampleRecord rec;
        rec.label = label;
        rec.valid_len = valid;
        if (eb == kNoEventSentinel || ee == kNoEventSentinel) {
            rec.event_begin = rec.event_end = kUnknownEvent;
        } else {
            rec.event_begin = eb;
            rec.event_end = ee;
            if (rec.event_begin > rec.event_end || rec.event_end >= rec.valid_len)
                throw ParseError("'" + path + "': sample " + std::to_string(s) + " event span [" +
                                 std::to_string(rec.event_begin) + "," + std::to_string(rec.event_end) +
                                 "] outside [0," + std::to_string(rec.valid_len) + ") at byte " + at);
        }
        rec.features = Tensor({rec.valid_len, dim});
        for (size_t i = 0; i < want; ++i) rec.features.data[i] = static_cast<double>(payload[i]);
        file.samples.push_back(std::move(rec));
    }
    if (in.peek() != std::ifstream::traits_type::eof())
        throw ParseError("'" + path + "': trailing bytes after " + std::to_string(count) +
                         " samples at byte " + std::to_string(static_cast<long long>(in.tellg())));
    return file;
}

// ---------------------------------------------------------------------------
// Manifest: plain text, one "train|test <path>" entry per line, '#' comments.
// Relative paths resolve against the manifest's directory.
// ---------------------------------------------------------------------------

enum class Split { train, test };

struct ManifestEntry {
    std::string path;
    Split split;
};

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open manifest '" + path + "'");
    const auto base = std::filesystem::path(path).parent_path();
    std::vector<ManifestEntry> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string split, file;
        if (!(ls >> split)) continue;
        if (!(ls >> file) || (split != "train" && split != "test"))
            throw ParseError("manifest '" + path + "' line " + std::to_string(lineno) +
                             ": expected 'train|test <path>', got '" + line + "'");
        std::filesystem::path p(file);
        if (p.is_relative()) p = base / p;
        out.push_back({p.string(), split == "train" ? Split::train : Split::test});
    }
    if (out.empty()) throw ParseError("manifest '" + path + "' lists no datasets");
    return out;
}

// Seeded shuffle split into (train, test).
inline std::pair<Dataset, Dataset> split_dataset(Dataset ds, double test_frac, uint64_t seed) {
    if (test_frac <= 0.0 || test_frac >= 1.0)
        throw ConfigError("split: test fraction must be in (0,1), got " + std::to_string(test_frac));
    std::mt19937_64 rng(seed);
    std::vector<size_t> idx(ds.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    const size_t n_test = static_cast<size_t>(std::llround(test_frac * static_cast<double>(ds.size())));
    Dataset train, test;
    for (size_t i = 0; i < idx.size(); ++i)
        (i < n_test ? test : train).push_back(std::move(ds[idx[i]]));
    return {std::move(train), std::move(test)};
}

} // namespace dwformer
