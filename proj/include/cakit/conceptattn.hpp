#pragma once

#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cakit/mmdit.hpp"

namespace cakit {

struct ConceptVocabulary {
    std::vector<std::string> concepts;          // ordered, r entries
    std::set<std::string> background;           // subset flagged as background

    ConceptVocabulary() = default;
    ConceptVocabulary(std::vector<std::string> c, std::set<std::string> bg = {})
        : concepts(std::move(c)), background(std::move(bg)) {
        if (concepts.empty()) throw data_error("concept vocabulary must not be empty");
        std::set<std::string> seen;
        for (const auto& s : concepts)
            if (!seen.insert(s).second) throw data_error("duplicate concept: \"" + s + "\"");
        for (const auto& s : background)
            if (!seen.count(s))
                throw data_error("background concept \"" + s + "\" not in vocabulary");
    }

    size_t size() const { return concepts.size(); }
    bool is_background(size_t idx) const { return background.count(concepts[idx]) > 0; }
};

struct ConceptState {
    Matrix c;       // r x d_model
    int layer = 0;
};

struct ConceptTrace {
    int layer = 0;
    int n_heads = 1;
    Matrix q_c, k_c, v_c, o_c;  // r x d, head-concatenated

    Matrix head(const Matrix& m, int h) const {
        size_t hd = m.cols / n_heads;
        return col_slice(m, h * hd, (h + 1) * hd);
    }
};

inline ConceptState init_concepts(const ConceptVocabulary& vocab, const MMDiTWeights& w) {
    ConceptState state;
    state.c = w.embed(vocab.concepts);
    state.layer = 0;
    return state;
}

// Projections for the concept tokens reuse the prompt stream's parameters:
// the same LinearWeights instances, not copies.
inline std::tuple<Matrix, Matrix, Matrix> concept_projections(const ConceptState& state,
                                                              const LayerWeights& lw,
                                                              const Matrix& cond) {
    Modulation mod = compute_modulation(lw.txt, cond);
    Matrix h = modulate(state.c, mod.gamma_attn, mod.beta_attn);
    return {linear(h, lw.txt.q), linear(h, lw.txt.k), linear(h, lw.txt.v)};
}

// Which key/value slots the concept queries may attend over. `both` is the
// standard configuration (image cross attention + concept self attention);
// the rest back the CA/SA ablation grid. `none` bypasses attention entirely
// and forwards the concept values.
enum class ConceptAttnMode { both, cross_only, self_only, none };

inline std::string to_string(ConceptAttnMode m) {
    switch (m) {
        case ConceptAttnMode::both: return "ca+sa";
        case ConceptAttnMode::cross_only: return "ca";
        case ConceptAttnMode::self_only: return "sa";
        case ConceptAttnMode::none: return "none";
    }
    return "?";
}

// Concept queries attend over concatenated [image; concept] keys/values.
// Prompt keys and values are never included, and nothing flows back into the
// image or prompt streams.
inline Matrix one_directional_attention(const Matrix& q_c, const Matrix& k_c, const Matrix& v_c,
                                        const LayerTrace& trace,
                                        ConceptAttnMode mode = ConceptAttnMode::both) {
    if (mode == ConceptAttnMode::none) return v_c;
    if (trace.k_x.cols != k_c.cols)
        throw shape_error("one_directional_attention: width mismatch k_x=" +
                          trace.k_x.shape_str() + " k_c=" + k_c.shape_str());
    Matrix keys, values;
    switch (mode) {
        case ConceptAttnMode::both:
            keys = vstack(trace.k_x, k_c);
            values = vstack(trace.v_x, v_c);
            break;
        case ConceptAttnMode::cross_only:
            keys = trace.k_x;
            values = trace.v_x;
            break;
        case ConceptAttnMode::self_only:
            keys = k_c;
            values = v_c;
            break;
        case ConceptAttnMode::none:
            break;
    }
    return multi_head_attention(q_c, keys, values, trace.n_heads);
}

// Two-step gated residual update with the prompt stream's projection, MLP,
// and modulation parameters:
//   c <- c + alpha1 * (P o_c)
//   c <- c + alpha2 * MLP((1 + gamma) lnorm(c) + beta)
inline ConceptState concept_residual_update(const ConceptState& state, const Matrix& o_c,
                                            const LayerWeights& lw, const Matrix& cond) {
    Modulation mod = compute_modulation(lw.txt, cond);
    ConceptState next;
    next.c = gated_add(state.c, mod.alpha_attn, linear(o_c, lw.txt.out));
    next.c = gated_add(next.c, mod.alpha_mlp,
                       mlp_forward(modulate(next.c, mod.gamma_mlp, mod.beta_mlp), lw.txt));
    next.layer = state.layer + 1;
    return next;
}

// Thread the concept state through every layer against cached traces.
inline std::vector<ConceptTrace> run_concept_stream(const ConceptVocabulary& vocab,
                                                    const std::vector<LayerTrace>& traces,
                                                    const MMDiTWeights& w,
                                                    ConceptAttnMode mode = ConceptAttnMode::both) {
    if (static_cast<int>(traces.size()) != w.config.n_layers)
        throw data_error("run_concept_stream: got " + std::to_string(traces.size()) +
                         " traces for " + std::to_string(w.config.n_layers) + " layers");
    for (size_t i = 0; i < traces.size(); ++i)
        if (traces[i].layer != static_cast<int>(i))
            throw data_error("run_concept_stream: traces out of order at index " +
                             std::to_string(i));

    ConceptState state = init_concepts(vocab, w);
    std::vector<ConceptTrace> out;
    out.reserve(traces.size());
    for (const LayerTrace& trace : traces) {
        Matrix cond = timestep_embedding(trace.timestep, w.config.d_model);
        const LayerWeights& lw = w.layers[trace.layer];
        ConceptTrace ct;
        ct.layer = trace.layer;
        ct.n_heads = trace.n_heads;
        std::tie(ct.q_c, ct.k_c, ct.v_c) = concept_projections(state, lw, cond);
        ct.o_c = one_directional_attention(ct.q_c, ct.k_c, ct.v_c, trace, mode);
        state = concept_residual_update(state, ct.o_c, lw, cond);
        out.push_back(std::move(ct));
    }
    return out;
}

// Bit-exact guard for the one-directional design: the forward pass must be
// unaffected by running the concept stream against its traces.
inline bool non_interference_check(const std::vector<std::string>& tokens, const Matrix& x0,
                                   double t, double T, const MMDiTWeights& w, const Rng& rng,
                                   const ConceptVocabulary& vocab) {
    std::vector<LayerTrace> plain = forward_with_trace(tokens, x0, t, T, w, rng);
    std::vector<LayerTrace> traced = forward_with_trace(tokens, x0, t, T, w, rng);
    run_concept_stream(vocab, traced, w);
    if (plain.size() != traced.size()) return false;
    for (size_t i = 0; i < plain.size(); ++i) {
        const LayerTrace& a = plain[i];
        const LayerTrace& b = traced[i];
        if (!(a.o_x == b.o_x && a.o_p == b.o_p && a.x_next == b.x_next && a.p_next == b.p_next))
            return false;
    }
    return true;
}

enum class SaliencySpace { cross_attention, value, output };
enum class HeadAgg { concat, mean };

inline std::string to_string(SaliencySpace s) {
    switch (s) {
        case SaliencySpace::cross_attention: return "ca";
        case SaliencySpace::value: return "value";
        case SaliencySpace::output: return "output";
    }
    return "?";
}

inline std::string to_string(HeadAgg h) {
    return h == HeadAgg::concat ? "concat" : "mean";
}

inline SaliencySpace saliency_space_from_string(const std::string& s) {
    if (s == "ca" || s == "cross_attention") return SaliencySpace::cross_attention;
    if (s == "value") return SaliencySpace::value;
    if (s == "output") return SaliencySpace::output;
    throw data_error("unknown saliency space: \"" + s + "\"");
}

inline HeadAgg head_agg_from_string(const std::string& s) {
    if (s == "concat") return HeadAgg::concat;
    if (s == "mean") return HeadAgg::mean;
    throw data_error("unknown head aggregation: \"" + s + "\"");
}

// Softmax across the r concepts at each pixel (rows of an n x r matrix).
// The per-concept-across-pixels axis is exposed for exploration but is not
// the default anywhere.
enum class SoftmaxAxis { concepts, pixels };

namespace detail {

inline Matrix pairwise_scores(const Matrix& img_side, const Matrix& concept_side, int n_heads,
                              HeadAgg head_agg) {
    if (head_agg == HeadAgg::concat) return matmul(img_side, transpose(concept_side));
    // mean over per-head n x r products
    size_t hd = img_side.cols / n_heads;
    Matrix acc(img_side.rows, concept_side.rows);
    for (int h = 0; h < n_heads; ++h) {
        Matrix part = matmul(col_slice(img_side, h * hd, (h + 1) * hd),
                             transpose(col_slice(concept_side, h * hd, (h + 1) * hd)));
        acc = add(acc, part);
    }
    return scale(acc, 1.0 / n_heads);
}

}  // namespace detail

// Raw per-layer saliency scores, n x r. Space selects which cached vectors
// are projected against each other; the softmax flag normalizes each pixel's
// scores across concepts.
inline Matrix saliency_scores(const LayerTrace& trace, const ConceptTrace& ctrace,
                              SaliencySpace space, bool softmax, HeadAgg head_agg,
                              SoftmaxAxis axis = SoftmaxAxis::concepts) {
    if (trace.layer != ctrace.layer)
        throw data_error("saliency_scores: layer mismatch " + std::to_string(trace.layer) +
                         " vs " + std::to_string(ctrace.layer));
    Matrix scores;
    switch (space) {
        case SaliencySpace::output:
            scores = detail::pairwise_scores(trace.o_x, ctrace.o_c, trace.n_heads, head_agg);
            break;
        case SaliencySpace::value:
            scores = detail::pairwise_scores(trace.v_x, ctrace.v_c, trace.n_heads, head_agg);
            break;
        case SaliencySpace::cross_attention:
            // concept queries against image keys, transposed to n x r
            scores = transpose(
                detail::pairwise_scores(ctrace.q_c, trace.k_x, trace.n_heads, head_agg));
            break;
    }
    if (softmax) {
        if (axis == SoftmaxAxis::concepts) {
            scores = row_softmax(scores, 1.0);
        } else {
            scores = transpose(row_softmax(transpose(scores), 1.0));
        }
    }
    return scores;
}

struct SaliencyStack {
    std::vector<Matrix> per_layer;  // each n x r
    SaliencySpace space = SaliencySpace::output;
    bool softmax = true;
    HeadAgg head_agg = HeadAgg::concat;
    double timestep = 0.0;
};

inline SaliencyStack build_saliency_stack(const std::vector<LayerTrace>& traces,
                                          const std::vector<ConceptTrace>& ctraces,
                                          SaliencySpace space, bool softmax, HeadAgg head_agg) {
    if (traces.size() != ctraces.size())
        throw data_error("build_saliency_stack: trace count mismatch");
    SaliencyStack stack;
    stack.space = space;
    stack.softmax = softmax;
    stack.head_agg = head_agg;
    stack.timestep = traces.empty() ? 0.0 : traces.front().timestep;
    for (size_t i = 0; i < traces.size(); ++i)
        stack.per_layer.push_back(saliency_scores(traces[i], ctraces[i], space, softmax, head_agg));
    return stack;
}

struct SaliencyMap {
    int img_h = 0;
    int img_w = 0;
    Matrix scores;                  // n x r
    std::vector<int> layers_used;
    SaliencySpace space = SaliencySpace::output;
    bool softmax = true;
    HeadAgg head_agg = HeadAgg::concat;
    double timestep = 0.0;

    size_t n_concepts() const { return scores.cols; }
    double at(int row, int col, size_t concept_idx) const {
        return scores(static_cast<size_t>(row) * img_w + col, concept_idx);
    }
};

// Arithmetic mean of the selected per-layer score matrices.
inline SaliencyMap aggregate_layers(const SaliencyStack& stack, const std::vector<int>& layers,
                                    int img_h, int img_w) {
    if (layers.empty()) throw data_error("aggregate_layers: empty layer subset");
    SaliencyMap map;
    map.img_h = img_h;
    map.img_w = img_w;
    map.space = stack.space;
    map.softmax = stack.softmax;
    map.head_agg = stack.head_agg;
    map.timestep = stack.timestep;
    map.layers_used = layers;
    for (int l : layers) {
        if (l < 0 || l >= static_cast<int>(stack.per_layer.size()))
            throw data_error("aggregate_layers: layer " + std::to_string(l) + " out of range");
        if (map.scores.data.empty())
            map.scores = stack.per_layer[l];
        else
            map.scores = add(map.scores, stack.per_layer[l]);
    }
    map.scores = scale(map.scores, 1.0 / static_cast<double>(layers.size()));
    return map;
}

// Elementwise mean across frames (video aggregation).
inline SaliencyMap aggregate_frames(const std::vector<SaliencyMap>& frames) {
    if (frames.empty()) throw data_error("aggregate_frames: empty frame list");
    SaliencyMap out = frames.front();
    for (size_t f = 1; f < frames.size(); ++f) {
        if (!frames[f].scores.same_shape(out.scores) || frames[f].space != out.space ||
            frames[f].softmax != out.softmax || frames[f].head_agg != out.head_agg)
            throw data_error("aggregate_frames: inconsistent frame " + std::to_string(f));
        out.scores = add(out.scores, frames[f].scores);
    }
    out.scores = scale(out.scores, 1.0 / static_cast<double>(frames.size()));
    return out;
}

// The classical baseline: prompt queries against image keys, softmaxed over
// the image axis per prompt token, returned as n x l.
inline Matrix raw_prompt_cross_attention(const LayerTrace& trace) {
    Matrix probs = row_softmax(matmul(trace.q_p, transpose(trace.k_x)), 1.0);  // l x n
    return transpose(probs);
}

}  // namespace cakit
