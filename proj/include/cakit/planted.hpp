#pragma once

#include <string>
#include <vector>

#include "cakit/conceptattn.hpp"
#include "cakit/segeval.hpp"

namespace cakit {

// A synthetic scene whose image tokens are the assigned concept's embedding
// plus sigma * noise. Regions are horizontal bands, one per concept, with
// ground-truth labels 1..r.
struct PlantedScene {
    Matrix x0;            // n x d image tokens
    GroundTruthMask gt;
    std::vector<int> label_map;  // concept index -> gt label
};

inline PlantedScene make_planted_scene(const MMDiTWeights& w, const ConceptVocabulary& vocab,
                                       double sigma, RngStream& noise) {
    if (sigma < 0.0) throw data_error("planted scene: sigma must be >= 0");
    const ModelConfig& cfg = w.config;
    int r = static_cast<int>(vocab.size());
    Matrix concept_rows = w.embed(vocab.concepts);

    PlantedScene scene;
    scene.x0 = Matrix(cfg.n_image_tokens(), cfg.d_model);
    scene.gt = GroundTruthMask(cfg.img_h, cfg.img_w);
    for (int row = 0; row < cfg.img_h; ++row) {
        int concept_idx = std::min(row * r / cfg.img_h, r - 1);
        for (int col = 0; col < cfg.img_w; ++col) {
            size_t pixel = static_cast<size_t>(row) * cfg.img_w + col;
            scene.gt.labels[pixel] = concept_idx + 1;
            for (int j = 0; j < cfg.d_model; ++j)
                scene.x0(pixel, j) = concept_rows(concept_idx, j) + sigma * noise.gaussian();
        }
    }
    for (int c = 0; c < r; ++c)
        scene.label_map.push_back(vocab.is_background(c) ? 0 : c + 1);
    return scene;
}

struct RunParams {
    double timestep = 0.0;
    double schedule_len = kDefaultScheduleLen;
    std::vector<int> layers;  // empty = all
    SaliencySpace space = SaliencySpace::output;
    bool softmax = true;
    HeadAgg head_agg = HeadAgg::concat;
    ConceptAttnMode attn_mode = ConceptAttnMode::both;
};

inline std::vector<int> all_layers(const ModelConfig& cfg) {
    std::vector<int> out(cfg.n_layers);
    for (int i = 0; i < cfg.n_layers; ++i) out[i] = i;
    return out;
}

// Forward + concept stream + layer aggregation for one set of image tokens.
inline SaliencyMap compute_saliency(const std::vector<std::string>& prompt, const Matrix& x0,
                                    const MMDiTWeights& w, const ConceptVocabulary& vocab,
                                    const RunParams& params, const Rng& rng) {
    std::vector<LayerTrace> traces =
        forward_with_trace(prompt, x0, params.timestep, params.schedule_len, w, rng);
    std::vector<ConceptTrace> ctraces = run_concept_stream(vocab, traces, w, params.attn_mode);
    SaliencyStack stack =
        build_saliency_stack(traces, ctraces, params.space, params.softmax, params.head_agg);
    std::vector<int> layers = params.layers.empty() ? all_layers(w.config) : params.layers;
    return aggregate_layers(stack, layers, w.config.img_h, w.config.img_w);
}

}  // namespace cakit
