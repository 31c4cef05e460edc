#pragma once

#include <string>
#include <vector>

#include "cakit/planted.hpp"
#include "cakit/segeval.hpp"

namespace cakit {

enum class SweepAxis { space_softmax, ca_sa, layers, timesteps };

inline SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "space-softmax") return SweepAxis::space_softmax;
    if (s == "ca-sa") return SweepAxis::ca_sa;
    if (s == "layers") return SweepAxis::layers;
    if (s == "timesteps") return SweepAxis::timesteps;
    throw data_error("unknown sweep axis: \"" + s + "\"");
}

struct AblationRow {
    std::string key;
    MetricsReport report;
};

struct AblationGrid {
    SweepAxis axis = SweepAxis::space_softmax;
    std::vector<AblationRow> rows;
};

struct AblationInputs {
    const MMDiTWeights& weights;
    ConceptVocabulary vocab;
    std::vector<std::string> prompt;
    std::vector<PlantedScene> scenes;
    RunParams params;
    Rng rng;
    std::vector<double> timesteps;  // only for the timestep sweep
};

namespace detail {

// Multi-class Acc/mIoU plus a planted-scene mAP: mean AP over non-background
// concept planes against their ground-truth regions.
inline MetricsReport evaluate_scenes(const std::vector<PlantedScene>& scenes,
                                     const std::vector<SaliencyMap>& maps,
                                     const ConceptVocabulary& vocab) {
    std::vector<SegmentationSample> samples;
    for (size_t i = 0; i < scenes.size(); ++i) {
        SegmentationSample s;
        s.id = "scene" + std::to_string(i);
        s.map = maps[i];
        s.concepts = vocab.concepts;
        s.gt = scenes[i].gt;
        s.label_map = scenes[i].label_map;
        samples.push_back(std::move(s));
    }
    MetricsReport report = evaluate_multiclass(samples);

    double ap_sum = 0.0;
    size_t ap_count = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        for (size_t c = 0; c < vocab.size(); ++c) {
            int label = scenes[i].label_map[c];
            if (label == 0) continue;
            GroundTruthMask binary = samples[i].gt;
            for (int& v : binary.labels)
                if (v != kIgnoreLabel) v = v == label ? 1 : 0;
            auto ap = average_precision(samples[i].concept_plane(c), binary);
            if (ap) {
                ap_sum += *ap;
                ++ap_count;
            }
        }
    }
    if (ap_count > 0) report.map = ap_sum / ap_count;
    return report;
}

}  // namespace detail

// Sweep one axis, recomputing saliency and metrics per cell. Row order is
// fixed: 6 rows for space x softmax, 4 rows for CA x SA, one row per layer
// plus "all", one row per requested timestep.
inline AblationGrid run_ablation(SweepAxis axis, const AblationInputs& in) {
    if (in.scenes.empty()) throw data_error("run_ablation: no scenes");
    AblationGrid grid;
    grid.axis = axis;

    auto maps_for = [&](const RunParams& params) {
        std::vector<SaliencyMap> maps;
        for (const PlantedScene& scene : in.scenes)
            maps.push_back(compute_saliency(in.prompt, scene.x0, in.weights, in.vocab, params,
                                            in.rng));
        return maps;
    };

    switch (axis) {
        case SweepAxis::space_softmax: {
            const SaliencySpace spaces[] = {SaliencySpace::cross_attention, SaliencySpace::value,
                                            SaliencySpace::output};
            for (SaliencySpace space : spaces) {
                for (bool softmax : {false, true}) {
                    RunParams params = in.params;
                    params.space = space;
                    params.softmax = softmax;
                    grid.rows.push_back({to_string(space) + (softmax ? ",on" : ",off"),
                                         detail::evaluate_scenes(in.scenes, maps_for(params),
                                                                 in.vocab)});
                }
            }
            break;
        }
        case SweepAxis::ca_sa: {
            const ConceptAttnMode modes[] = {ConceptAttnMode::none, ConceptAttnMode::self_only,
                                             ConceptAttnMode::cross_only, ConceptAttnMode::both};
            for (ConceptAttnMode mode : modes) {
                RunParams params = in.params;
                params.attn_mode = mode;
                grid.rows.push_back({to_string(mode),
                                     detail::evaluate_scenes(in.scenes, maps_for(params),
                                                             in.vocab)});
            }
            break;
        }
        case SweepAxis::layers: {
            for (int l = 0; l < in.weights.config.n_layers; ++l) {
                RunParams params = in.params;
                params.layers = {l};
                grid.rows.push_back({"layer" + std::to_string(l),
                                     detail::evaluate_scenes(in.scenes, maps_for(params),
                                                             in.vocab)});
            }
            RunParams params = in.params;
            params.layers = all_layers(in.weights.config);
            grid.rows.push_back(
                {"all", detail::evaluate_scenes(in.scenes, maps_for(params), in.vocab)});
            break;
        }
        case SweepAxis::timesteps: {
            if (in.timesteps.empty()) throw data_error("run_ablation: no timesteps requested");
            for (double t : in.timesteps) {
                RunParams params = in.params;
                params.timestep = t;
                char key[32];
                std::snprintf(key, sizeof(key), "t=%g", t);
                grid.rows.push_back(
                    {key, detail::evaluate_scenes(in.scenes, maps_for(params), in.vocab)});
            }
            break;
        }
    }
    return grid;
}

inline std::string ablation_to_csv(const AblationGrid& grid) {
    std::string out = "row,acc,miou,map\n";
    char line[160];
    for (const AblationRow& row : grid.rows) {
        std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f\n", row.key.c_str(),
                      row.report.acc, row.report.miou, row.report.map.value_or(0.0));
        out += line;
    }
    return out;
}

}  // namespace cakit
