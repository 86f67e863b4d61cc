#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "featlift/featlift.hpp"
#include "featlift/io.hpp"
#include "json.hpp"

namespace featlift::cli {

namespace fs = std::filesystem;

inline const std::vector<std::string> kLevels = {"whole", "part", "subpart"};

// "" for single-level data, otherwise one of kLevels.
inline std::vector<std::string> expand_levels(const std::string& level) {
    if (level.empty()) return {""};
    if (level == "all") return kLevels;
    for (const auto& l : kLevels) {
        if (l == level) return {level};
    }
    throw InputError("unknown level '" + level + "' (expected whole, part, subpart or all)");
}

inline fs::path feature_file(const fs::path& dir, const std::string& view_id, const std::string& level) {
    return dir / (level.empty() ? view_id + ".fmap" : view_id + "_" + level + ".fmap");
}

// scene.ply -> scene_whole.ply for a named level.
inline fs::path level_output(const fs::path& out, const std::string& level) {
    if (level.empty()) return out;
    fs::path p = out;
    p.replace_filename(out.stem().string() + "_" + level + out.extension().string());
    return p;
}

inline std::vector<double> parse_doubles(const std::string& text, std::size_t expected, const std::string& what) {
    std::vector<double> out;
    std::string token;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == ',') {
            try {
                std::size_t used = 0;
                out.push_back(std::stod(token, &used));
                if (used != token.size()) throw std::invalid_argument(token);
            } catch (const std::exception&) {
                throw InputError(what + ": cannot parse '" + token + "' as a number");
            }
            token.clear();
        } else {
            token += text[i];
        }
    }
    if (expected && out.size() != expected) {
        throw InputError(what + ": expected " + std::to_string(expected) + " comma-separated values, got " +
                         std::to_string(out.size()));
    }
    return out;
}

// Bytes up to and including the "end_header" line of a PLY file.
inline std::size_t ply_header_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::size_t bytes = 0;
    while (std::getline(in, line)) {
        bytes += line.size() + 1;
        if (line == "end_header" || line == "end_header\r") return bytes;
    }
    throw InputError("'" + path.string() + "' has no PLY header");
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_;
};

inline const io::Camera& find_camera(const std::vector<io::Camera>& cams, const std::string& id) {
    for (const auto& c : cams) {
        if (c.id == id) return c;
    }
    throw InputError("no camera with id '" + id + "' in the cameras file");
}

// Synthetic-scene options shared by `synth`, `oracle-compare` and `bench`.
// A JSON spec file is applied first, then any flag given explicitly.
struct SynthArgs {
    std::string spec_file;
    std::optional<std::string> layout;
    std::optional<std::size_t> n_gaussians;
    std::optional<int> n_views;
    std::optional<int> dim;
    std::optional<std::uint64_t> seed;
    std::optional<double> opacity_min, opacity_max, overlap, hidden_fraction;
    std::optional<int> layers, width, height;
    std::optional<std::string> features;
};

inline Layout parse_layout(const std::string& s) {
    if (s == "grid") return Layout::Grid;
    if (s == "random") return Layout::Random;
    if (s == "stacked" || s == "stacked-pairs") return Layout::StackedPairs;
    if (s == "occluder") return Layout::Occluder;
    throw InputError("unknown layout '" + s + "' (expected grid, random, stacked or occluder)");
}

inline std::string layout_name(Layout l) {
    switch (l) {
        case Layout::Grid: return "grid";
        case Layout::Random: return "random";
        case Layout::StackedPairs: return "stacked";
        case Layout::Occluder: return "occluder";
    }
    return "grid";
}

inline FeatureKind parse_feature_kind(const std::string& s) {
    if (s == "random") return FeatureKind::RandomUnit;
    if (s == "onehot") return FeatureKind::OneHot;
    throw InputError("unknown feature kind '" + s + "' (expected random or onehot)");
}

inline nlohmann::json spec_to_json(const SynthSpec& s) {
    return {{"layout", layout_name(s.layout)},
            {"n_gaussians", s.n_gaussians},
            {"n_views", s.n_views},
            {"dim", s.feature_dim},
            {"seed", s.seed},
            {"opacity_min", s.opacity_min},
            {"opacity_max", s.opacity_max},
            {"overlap", s.overlap},
            {"hidden_fraction", s.hidden_fraction},
            {"layers", s.layers},
            {"width", s.width},
            {"height", s.height},
            {"features", s.features == FeatureKind::OneHot ? "onehot" : "random"}};
}

SynthSpec resolve_spec(const SynthArgs& args, SynthSpec base = {});

}  // namespace featlift::cli
