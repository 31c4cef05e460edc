#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cakit/conceptattn.hpp"

namespace cakit {

// CAS1 score interchange format, little-endian:
//   magic "CAS1"
//   u64 header_len, header bytes (canonical JSON provenance)
//   n * r float64 scores, pixel-major (pixel row-major over the grid,
//   concepts contiguous per pixel)
// This is the bridge format: files produced by external tools evaluate
// identically to in-memory maps.
struct ScoreFile {
    std::string config_hash;
    std::vector<std::string> concepts;
    std::vector<std::string> background;
    SaliencyMap map;
};

inline nlohmann::json score_file_header(const ScoreFile& sf) {
    return {{"config_hash", sf.config_hash},
            {"concepts", sf.concepts},
            {"background", sf.background},
            {"img_h", sf.map.img_h},
            {"img_w", sf.map.img_w},
            {"layers", sf.map.layers_used},
            {"timestep", sf.map.timestep},
            {"space", to_string(sf.map.space)},
            {"softmax", sf.map.softmax},
            {"head_agg", to_string(sf.map.head_agg)}};
}

inline void save_scores(const ScoreFile& sf, std::ostream& os) {
    size_t n = static_cast<size_t>(sf.map.img_h) * sf.map.img_w;
    if (sf.map.scores.rows != n || sf.map.scores.cols != sf.concepts.size())
        throw shape_error("save_scores: map " + sf.map.scores.shape_str() + " vs grid " +
                          std::to_string(n) + " x " + std::to_string(sf.concepts.size()));
    os.write("CAS1", 4);
    std::string header = score_file_header(sf).dump();
    uint64_t len = header.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(header.data(), header.size());
    os.write(reinterpret_cast<const char*>(sf.map.scores.data.data()),
             sf.map.scores.data.size() * sizeof(double));
}

inline void save_scores(const ScoreFile& sf, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open for writing: " + path);
    save_scores(sf, os);
    if (!os) throw data_error("write failed: " + path);
}

inline ScoreFile load_scores(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CAS1", 4) != 0)
        throw data_error("score file: bad magic (expected CAS1)");
    uint64_t len = 0;
    if (!is.read(reinterpret_cast<char*>(&len), sizeof(len)))
        throw data_error("score file: truncated header length");
    std::string header(len, '\0');
    if (!is.read(header.data(), len)) throw data_error("score file: truncated header");
    nlohmann::json j = nlohmann::json::parse(header);

    ScoreFile sf;
    sf.config_hash = j.at("config_hash");
    sf.concepts = j.at("concepts").get<std::vector<std::string>>();
    sf.background = j.at("background").get<std::vector<std::string>>();
    sf.map.img_h = j.at("img_h");
    sf.map.img_w = j.at("img_w");
    sf.map.layers_used = j.at("layers").get<std::vector<int>>();
    sf.map.timestep = j.at("timestep");
    sf.map.space = saliency_space_from_string(j.at("space"));
    sf.map.softmax = j.at("softmax");
    sf.map.head_agg = head_agg_from_string(j.at("head_agg"));

    size_t n = static_cast<size_t>(sf.map.img_h) * sf.map.img_w;
    sf.map.scores = Matrix(n, sf.concepts.size());
    if (!is.read(reinterpret_cast<char*>(sf.map.scores.data.data()),
                 sf.map.scores.data.size() * sizeof(double)))
        throw data_error("score file: truncated score payload");
    if (!sf.map.scores.is_finite()) throw data_error("score file: non-finite scores");
    return sf;
}

inline ScoreFile load_scores(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open score file: " + path);
    return load_scores(is);
}

}  // namespace cakit
