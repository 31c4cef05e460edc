#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cakit/ablation.hpp"
#include "cakit/planted.hpp"
#include "cakit/saliency_io.hpp"
#include "cakit/segeval.hpp"
#include "cakit/weights_io.hpp"

namespace cakit {

// Parse "all", "3", "2-5", or "1,3,5" into a layer subset.
inline std::vector<int> parse_layer_subset(const std::string& text, int n_layers) {
    std::vector<int> out;
    if (text == "all" || text.empty()) return out;  // empty = all downstream
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        size_t dash = part.find('-');
        if (dash != std::string::npos && dash > 0) {
            int lo = std::stoi(part.substr(0, dash));
            int hi = std::stoi(part.substr(dash + 1));
            for (int l = lo; l <= hi; ++l) out.push_back(l);
        } else {
            out.push_back(std::stoi(part));
        }
    }
    for (int l : out)
        if (l < 0 || l >= n_layers)
            throw data_error("layer " + std::to_string(l) + " outside model depth " +
                             std::to_string(n_layers));
    return out;
}

inline std::vector<std::string> split_commas(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

inline uint64_t default_seed() {
    if (const char* env = std::getenv("CA_KIT_SEED")) return std::strtoull(env, nullptr, 10);
    return 0;
}

// Fixed seeded linear lift from a grayscale pixel to a d_model token:
//   token = (pixel / 255) * L + B
// with L and B drawn from seed kPixelLiftSeed, streams "pixel_lift.scale"
// and "pixel_lift.bias", entries scaled by 1/sqrt(d_model). External
// producers can reproduce token inputs from this recipe alone.
inline constexpr uint64_t kPixelLiftSeed = 0xCA51;

inline Matrix lift_image_to_tokens(const PgmImage& img, int d_model) {
    Rng rng(kPixelLiftSeed);
    double s = 1.0 / std::sqrt(static_cast<double>(d_model));
    auto ls = rng.stream("pixel_lift.scale");
    Matrix lift = gaussian_matrix(1, d_model, ls, s);
    auto bs = rng.stream("pixel_lift.bias");
    Matrix bias = gaussian_matrix(1, d_model, bs, s);
    Matrix tokens(img.pixels.size(), d_model);
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        double v = img.pixels[i] / 255.0;
        for (int j = 0; j < d_model; ++j) tokens(i, j) = v * lift(0, j) + bias(0, j);
    }
    return tokens;
}

inline Matrix synthetic_tokens(const ModelConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    auto stream = rng.stream("synthetic_image");
    return gaussian_matrix(cfg.n_image_tokens(), cfg.d_model,
                           stream, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
}

// ---- gen-weights -----------------------------------------------------------

inline std::string cmd_gen_weights(const ModelConfig& config, uint64_t seed,
                                   const std::string& out_path) {
    MMDiTWeights w = init_weights(config, seed);
    save_weights(w, out_path);
    return config_hash(w);
}

// ---- run -------------------------------------------------------------------

struct RunSpec {
    std::string weights_path;
    std::vector<std::string> prompt;
    ConceptVocabulary vocab;
    RunParams params;
    uint64_t seed = 0;
    std::string out_dir;
};

struct RunResult {
    SaliencyMap map;
    std::string scores_path;
    std::vector<std::string> pgm_paths;
};

inline RunResult cmd_run(const RunSpec& spec, const Matrix& x0) {
    MMDiTWeights w = load_weights(spec.weights_path);
    SaliencyMap map = compute_saliency(spec.prompt, x0, w, spec.vocab, spec.params, Rng(spec.seed));

    std::filesystem::create_directories(spec.out_dir);
    RunResult result;
    result.map = map;
    for (size_t c = 0; c < spec.vocab.size(); ++c) {
        Matrix plane(map.scores.rows, 1);
        for (size_t i = 0; i < plane.rows; ++i) plane(i, 0) = map.scores(i, c);
        std::string path = spec.out_dir + "/saliency_" + spec.vocab.concepts[c] + ".pgm";
        write_pgm(score_plane_to_pgm(plane, map.img_h, map.img_w), path);
        result.pgm_paths.push_back(path);
    }
    ScoreFile sf;
    sf.config_hash = config_hash(w);
    sf.concepts = spec.vocab.concepts;
    sf.background.assign(spec.vocab.background.begin(), spec.vocab.background.end());
    sf.map = map;
    result.scores_path = spec.out_dir + "/scores.cas1";
    save_scores(sf, result.scores_path);
    return result;
}

// ---- eval ------------------------------------------------------------------

// Dataset manifest: JSON-lines, one record per sample:
//   {"id": ..., "scores_path": ..., "mask_path": ...,
//    "target_concept": ...,            (single-object mode)
//    "label_map": {"cat": 1, ...}}     (multi-class mode; background
//                                       concepts default to label 0)
inline std::vector<SegmentationSample> load_manifest(const std::string& path, bool multiclass) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open manifest: " + path);
    std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };

    std::vector<SegmentationSample> samples;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        SegmentationSample s;
        s.id = j.at("id");
        try {
            ScoreFile sf = load_scores(resolve(j.at("scores_path")));
            s.map = sf.map;
            s.concepts = sf.concepts;
            s.gt = GroundTruthMask::from_pgm(read_pgm(resolve(j.at("mask_path"))));
            if (multiclass) {
                nlohmann::json lm = j.at("label_map");
                for (const std::string& concept_name : s.concepts) {
                    if (lm.contains(concept_name)) {
                        s.label_map.push_back(lm.at(concept_name).get<int>());
                    } else if (std::find(sf.background.begin(), sf.background.end(), concept_name) !=
                               sf.background.end()) {
                        s.label_map.push_back(0);
                    } else {
                        throw data_error("concept \"" + concept_name + "\" missing from label map");
                    }
                }
            } else {
                std::string target = j.at("target_concept");
                auto it = std::find(s.concepts.begin(), s.concepts.end(), target);
                if (it == s.concepts.end())
                    throw data_error("target concept \"" + target + "\" not in score file");
                s.target_concept = static_cast<int>(it - s.concepts.begin());
            }
            s.check_shapes();
        } catch (const std::exception& e) {
            throw data_error("sample \"" + s.id + "\": " + e.what());
        }
        samples.push_back(std::move(s));
    }
    if (samples.empty()) throw data_error("manifest is empty: " + path);
    return samples;
}

inline MetricsReport cmd_eval(const std::string& manifest_path, bool multiclass,
                              const std::string& json_path, const std::string& csv_path) {
    std::vector<SegmentationSample> samples = load_manifest(manifest_path, multiclass);
    MetricsReport report =
        multiclass ? evaluate_multiclass(samples) : evaluate_single_object(samples);
    if (!json_path.empty()) {
        std::ofstream os(json_path);
        if (!os) throw data_error("cannot open for writing: " + json_path);
        os << report_to_json(report).dump(2) << "\n";
    }
    if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        if (!os) throw data_error("cannot open for writing: " + csv_path);
        os << report_to_csv(report);
    }
    return report;
}

// ---- ablate ----------------------------------------------------------------

struct AblateSpec {
    std::string weights_path;
    ConceptVocabulary vocab;
    std::vector<std::string> prompt;
    RunParams params;
    uint64_t seed = 0;
    int n_scenes = 4;
    double sigma = 0.1;
    std::vector<double> timesteps;
};

// Scenes are planted deterministically from the seed; ablation cells then
// recompute saliency and metrics on them.
inline AblationGrid cmd_ablate(SweepAxis axis, const AblateSpec& spec,
                               const std::string& csv_path) {
    MMDiTWeights w = load_weights(spec.weights_path);
    Rng rng(spec.seed);
    auto noise = rng.stream("planted_scenes");
    std::vector<PlantedScene> scenes;
    for (int i = 0; i < spec.n_scenes; ++i)
        scenes.push_back(make_planted_scene(w, spec.vocab, spec.sigma, noise));

    AblationInputs inputs{w,           spec.vocab, spec.prompt, std::move(scenes),
                          spec.params, rng,        spec.timesteps};
    AblationGrid grid = run_ablation(axis, inputs);
    if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        if (!os) throw data_error("cannot open for writing: " + csv_path);
        os << ablation_to_csv(grid);
    }
    return grid;
}

// ---- demo-planted ----------------------------------------------------------

struct DemoResult {
    MetricsReport report;
    SaliencyMap map;
    GroundTruthMask gt;
    std::vector<int> pred_labels;
};

inline ConceptVocabulary demo_vocabulary() {
    return ConceptVocabulary({"cat", "sky", "grass", "dog"});
}

// Desk-scale planted recovery demo. Uses aligned weights (see
// init_weights_aligned) so cross-modal projections preserve the planted
// geometry; real checkpoints provide that alignment through training.
inline DemoResult cmd_demo_planted(uint64_t seed, double sigma, const std::string& out_dir) {
    ModelConfig config;
    MMDiTWeights w = init_weights_aligned(config, seed);
    ConceptVocabulary vocab = demo_vocabulary();
    Rng rng(seed);
    auto noise = rng.stream("planted_scenes");
    PlantedScene scene = make_planted_scene(w, vocab, sigma, noise);

    RunParams params;  // t = 0, output space, softmax on, concat heads, all layers
    SaliencyMap map = compute_saliency({"field", "sky"}, scene.x0, w, vocab, params, rng);

    SegmentationSample sample;
    sample.id = "planted";
    sample.map = map;
    sample.concepts = vocab.concepts;
    sample.gt = scene.gt;
    sample.label_map = scene.label_map;

    DemoResult result;
    result.report = evaluate_multiclass({sample});
    result.map = map;
    result.gt = scene.gt;
    result.pred_labels = multiclass_argmax(map);
    for (int& p : result.pred_labels) p = scene.label_map[p];

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_pgm(scene.gt.to_pgm(), out_dir + "/gt_mask.pgm");
        GroundTruthMask pred_mask = scene.gt;
        pred_mask.labels = result.pred_labels;
        write_pgm(pred_mask.to_pgm(), out_dir + "/pred_mask.pgm");
        for (size_t c = 0; c < vocab.size(); ++c) {
            Matrix plane(map.scores.rows, 1);
            for (size_t i = 0; i < plane.rows; ++i) plane(i, 0) = map.scores(i, c);
            write_pgm(score_plane_to_pgm(plane, map.img_h, map.img_w),
                      out_dir + "/saliency_" + vocab.concepts[c] + ".pgm");
        }
        ScoreFile sf;
        sf.config_hash = config_hash(w);
        sf.concepts = vocab.concepts;
        sf.map = map;
        save_scores(sf, out_dir + "/scores.cas1");
        std::ofstream os(out_dir + "/report.json");
        os << report_to_json(result.report).dump(2) << "\n";
        std::ofstream cs(out_dir + "/report.csv");
        cs << report_to_csv(result.report);
    }
    return result;
}

}  // namespace cakit
