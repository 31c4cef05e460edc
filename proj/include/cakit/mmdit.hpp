#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cakit/matrix.hpp"
#include "cakit/rng.hpp"

namespace cakit {

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 6;
    int img_h = 16;
    int img_w = 16;
    int prompt_len = 8;
    int mlp_ratio = 4;
    int vocab_size = 0;  // filled from the token list at init

    int n_image_tokens() const { return img_h * img_w; }
    int head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
            throw shape_error("config: d_model (" + std::to_string(d_model) +
                              ") must be positive and divisible by n_heads (" +
                              std::to_string(n_heads) + ")");
        if (n_layers < 1) throw shape_error("config: n_layers must be >= 1");
        if (img_h < 1 || img_w < 1) throw shape_error("config: image grid must be >= 1x1");
        if (prompt_len < 1) throw shape_error("config: prompt_len must be >= 1");
        if (mlp_ratio < 1) throw shape_error("config: mlp_ratio must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"d_model", d_model},   {"n_heads", n_heads},       {"n_layers", n_layers},
                {"img_h", img_h},       {"img_w", img_w},           {"prompt_len", prompt_len},
                {"mlp_ratio", mlp_ratio}, {"vocab_size", vocab_size}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.d_model = j.at("d_model");
        c.n_heads = j.at("n_heads");
        c.n_layers = j.at("n_layers");
        c.img_h = j.at("img_h");
        c.img_w = j.at("img_w");
        c.prompt_len = j.at("prompt_len");
        c.mlp_ratio = j.at("mlp_ratio");
        c.vocab_size = j.at("vocab_size");
        return c;
    }
};

struct LinearWeights {
    Matrix w;  // in x out
    Matrix b;  // 1 x out
};

// y = x W + b, bias broadcast over rows.
inline Matrix linear(const Matrix& x, const LinearWeights& lw) {
    Matrix out = matmul(x, lw.w);
    if (lw.b.cols != out.cols)
        throw shape_error("linear: bias width " + lw.b.shape_str() + " vs output " + out.shape_str());
    for (size_t i = 0; i < out.rows; ++i)
        for (size_t j = 0; j < out.cols; ++j) out(i, j) += lw.b(0, j);
    return out;
}

// One modality's parameters inside an MMAttn layer. The modulation head maps
// a conditioning vector to six d_model-wide blocks:
//   gamma_attn, beta_attn, alpha_attn, gamma_mlp, beta_mlp, alpha_mlp.
struct StreamWeights {
    LinearWeights q, k, v;
    LinearWeights out;           // post-attention projection P
    LinearWeights mlp_fc1, mlp_fc2;
    LinearWeights mod;           // d_model -> 6 * d_model
};

struct LayerWeights {
    StreamWeights img;
    StreamWeights txt;
};

struct Modulation {
    Matrix gamma_attn, beta_attn, alpha_attn;
    Matrix gamma_mlp, beta_mlp, alpha_mlp;
};

inline Modulation compute_modulation(const StreamWeights& sw, const Matrix& cond) {
    Matrix raw = linear(cond, sw.mod);  // 1 x 6d
    size_t d = raw.cols / 6;
    Modulation m;
    m.gamma_attn = col_slice(raw, 0, d);
    m.beta_attn = col_slice(raw, d, 2 * d);
    m.alpha_attn = col_slice(raw, 2 * d, 3 * d);
    m.gamma_mlp = col_slice(raw, 3 * d, 4 * d);
    m.beta_mlp = col_slice(raw, 4 * d, 5 * d);
    m.alpha_mlp = col_slice(raw, 5 * d, 6 * d);
    return m;
}

// (1 + gamma) * layer_norm(x) + beta, rowwise broadcast.
inline Matrix modulate(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
    Matrix out = layer_norm(x);
    for (size_t i = 0; i < out.rows; ++i)
        for (size_t j = 0; j < out.cols; ++j)
            out(i, j) = (1.0 + gamma(0, j)) * out(i, j) + beta(0, j);
    return out;
}

// residual + alpha * update, alpha broadcast over rows.
inline Matrix gated_add(const Matrix& residual, const Matrix& alpha, const Matrix& update) {
    if (!residual.same_shape(update))
        throw shape_error("gated_add: shape mismatch " + residual.shape_str() + " vs " +
                          update.shape_str());
    Matrix out = residual;
    for (size_t i = 0; i < out.rows; ++i)
        for (size_t j = 0; j < out.cols; ++j) out(i, j) += alpha(0, j) * update(i, j);
    return out;
}

inline Matrix mlp_forward(const Matrix& h, const StreamWeights& sw) {
    return linear(gelu(linear(h, sw.mlp_fc1)), sw.mlp_fc2);
}

struct MMDiTWeights {
    ModelConfig config;
    std::vector<LayerWeights> layers;
    Matrix embedding_table;  // vocab_size x d_model
    Matrix pos_embed;        // n x d_model
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> token_index;

    int lookup(const std::string& token) const {
        auto it = token_index.find(token);
        if (it == token_index.end())
            throw data_error("unknown token: \"" + token + "\"");
        return it->second;
    }

    Matrix embed(const std::vector<std::string>& toks) const {
        Matrix out(toks.size(), config.d_model);
        for (size_t i = 0; i < toks.size(); ++i) {
            int row = lookup(toks[i]);
            for (int j = 0; j < config.d_model; ++j)
                out(i, j) = embedding_table(row, j);
        }
        return out;
    }
};

// Built-in single-token vocabulary: enough common object/background words for
// desk-scale experiments. Callers can pass their own list to init_weights.
inline const std::vector<std::string>& builtin_tokens() {
    static const std::vector<std::string> tokens = {
        "background", "grass",  "sky",    "ground", "tree",   "water",  "cat",    "dog",
        "bird",       "horse",  "cow",    "sheep",  "person", "car",    "bike",   "boat",
        "plane",      "train",  "bus",    "chair",  "table",  "sofa",   "plant",  "bottle",
        "screen",     "flower", "sun",    "moon",   "cloud",  "rock",   "sand",   "snow",
        "road",       "wall",   "window", "door",   "house",  "fence",  "hill",   "river",
        "fish",       "dragon", "castle", "bridge", "field",  "forest", "city",   "beach",
    };
    return tokens;
}

namespace detail {

inline LinearWeights init_linear(const Rng& rng, const std::string& name, size_t in, size_t out,
                                 double scale) {
    LinearWeights lw;
    auto ws = rng.stream(name + ".w");
    lw.w = gaussian_matrix(in, out, ws, scale);
    auto bs = rng.stream(name + ".b");
    lw.b = gaussian_matrix(1, out, bs, scale);
    return lw;
}

inline StreamWeights init_stream(const Rng& rng, const std::string& prefix, const ModelConfig& cfg) {
    double s = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    size_t d = cfg.d_model;
    size_t hidden = d * cfg.mlp_ratio;
    StreamWeights sw;
    sw.q = init_linear(rng, prefix + ".q", d, d, s);
    sw.k = init_linear(rng, prefix + ".k", d, d, s);
    sw.v = init_linear(rng, prefix + ".v", d, d, s);
    sw.out = init_linear(rng, prefix + ".out", d, d, s);
    sw.mlp_fc1 = init_linear(rng, prefix + ".mlp_fc1", d, hidden, s);
    sw.mlp_fc2 = init_linear(rng, prefix + ".mlp_fc2", hidden, d, s);
    sw.mod = init_linear(rng, prefix + ".mod", d, 6 * d, s);
    return sw;
}

}  // namespace detail

inline MMDiTWeights init_weights(const ModelConfig& config, uint64_t seed,
                                 const std::vector<std::string>& tokens = builtin_tokens()) {
    ModelConfig cfg = config;
    cfg.vocab_size = static_cast<int>(tokens.size());
    cfg.validate();
    Rng rng(seed);
    MMDiTWeights w;
    w.config = cfg;
    w.tokens = tokens;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (!w.token_index.emplace(tokens[i], static_cast<int>(i)).second)
            throw data_error("duplicate token in vocabulary: \"" + tokens[i] + "\"");
    }
    double s = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    auto es = rng.stream("embedding_table");
    w.embedding_table = gaussian_matrix(tokens.size(), cfg.d_model, es, s);
    auto ps = rng.stream("pos_embed");
    w.pos_embed = gaussian_matrix(cfg.n_image_tokens(), cfg.d_model, ps, s);
    for (int l = 0; l < cfg.n_layers; ++l) {
        std::string prefix = "layer" + std::to_string(l);
        LayerWeights lw;
        lw.img = detail::init_stream(rng, prefix + ".img", cfg);
        lw.txt = detail::init_stream(rng, prefix + ".txt", cfg);
        w.layers.push_back(std::move(lw));
    }
    return w;
}

// Demo variant with the two modality streams tied and Q == K. Random
// independent projections destroy any geometric alignment between the image
// and concept sides, so planted-scene demos use these aligned weights: tied
// streams make inner products across modalities track input similarity, and
// a symmetric q/k map makes attention cluster same-content tokens.
// Gates are damped so the residual streams stay near their inputs and every
// layer keeps the layer-0 geometry; positional embeddings are shrunk so they
// perturb rather than drown the token content.
inline MMDiTWeights init_weights_aligned(const ModelConfig& config, uint64_t seed,
                                         const std::vector<std::string>& tokens = builtin_tokens()) {
    MMDiTWeights w = init_weights(config, seed, tokens);
    const double mod_damp = 0.05;
    const double pos_damp = 0.2;
    for (auto& layer : w.layers) {
        layer.img.q = layer.img.k;
        for (double& v : layer.img.mod.w.data) v *= mod_damp;
        for (double& v : layer.img.mod.b.data) v *= mod_damp;
        layer.txt = layer.img;
    }
    for (double& v : w.pos_embed.data) v *= pos_damp;
    return w;
}

// Sinusoidal timestep embedding, 1 x d_model.
inline Matrix timestep_embedding(double t, int d_model) {
    Matrix out(1, d_model);
    int half = d_model / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        out(0, i) = std::sin(t * freq);
        out(0, half + i) = std::cos(t * freq);
    }
    return out;
}

// Rectified-flow noising: (1 - t/T) * x0 + (t/T) * eps, eps standard normal
// drawn entrywise from the stream.
inline Matrix noise_image(const Matrix& x0, double t, double T, RngStream& noise) {
    if (!(t >= 0.0 && t <= T))
        throw data_error("noise_image: timestep " + std::to_string(t) + " outside [0, " +
                         std::to_string(T) + "]");
    if (!x0.is_finite()) throw data_error("noise_image: non-finite input");
    double u = t / T;
    Matrix out(x0.rows, x0.cols);
    for (size_t i = 0; i < out.data.size(); ++i) {
        double eps = noise.gaussian();
        out.data[i] = (1.0 - u) * x0.data[i] + u * eps;
    }
    return out;
}

// Per-layer capture of both streams. q/k/v/o are stored head-concatenated
// (full d_model width); head h occupies columns [h*head_dim, (h+1)*head_dim).
struct LayerTrace {
    int layer = 0;
    int n_heads = 1;
    double timestep = 0.0;
    Matrix q_x, k_x, v_x, o_x;  // n x d
    Matrix q_p, k_p, v_p, o_p;  // l x d
    Matrix x_next, p_next;

    Matrix head(const Matrix& m, int h) const {
        size_t hd = m.cols / n_heads;
        return col_slice(m, h * hd, (h + 1) * hd);
    }
};

// Joint multi-head attention over stacked rows; returns head-concatenated
// outputs. Scale is 1/sqrt(head_dim).
inline Matrix multi_head_attention(const Matrix& q, const Matrix& k, const Matrix& v, int n_heads) {
    if (q.cols != k.cols || k.cols != v.cols || k.rows != v.rows)
        throw shape_error("attention: inconsistent shapes q=" + q.shape_str() + " k=" +
                          k.shape_str() + " v=" + v.shape_str());
    if (q.cols % n_heads != 0)
        throw shape_error("attention: width " + std::to_string(q.cols) + " not divisible by " +
                          std::to_string(n_heads) + " heads");
    size_t hd = q.cols / n_heads;
    Matrix out(q.rows, q.cols);
    for (int h = 0; h < n_heads; ++h) {
        Matrix qh = col_slice(q, h * hd, (h + 1) * hd);
        Matrix kh = col_slice(k, h * hd, (h + 1) * hd);
        Matrix vh = col_slice(v, h * hd, (h + 1) * hd);
        Matrix probs = row_softmax(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(hd)));
        Matrix oh = matmul(probs, vh);
        for (size_t i = 0; i < oh.rows; ++i)
            for (size_t j = 0; j < hd; ++j) out(i, h * hd + j) = oh(i, j);
    }
    return out;
}

// One dual-stream MMAttn layer. Image and prompt tokens jointly attend over
// the concatenated token axis; residual streams stay separate per modality.
inline std::tuple<Matrix, Matrix, LayerTrace> mm_attention_layer(const Matrix& x, const Matrix& p,
                                                                 const LayerWeights& lw,
                                                                 const Matrix& cond, int n_heads) {
    if (x.cols != p.cols)
        throw shape_error("mm_attention_layer: width mismatch x=" + x.shape_str() + " p=" +
                          p.shape_str());
    Modulation mod_x = compute_modulation(lw.img, cond);
    Modulation mod_p = compute_modulation(lw.txt, cond);

    Matrix hx = modulate(x, mod_x.gamma_attn, mod_x.beta_attn);
    Matrix hp = modulate(p, mod_p.gamma_attn, mod_p.beta_attn);

    LayerTrace trace;
    trace.n_heads = n_heads;
    trace.q_x = linear(hx, lw.img.q);
    trace.k_x = linear(hx, lw.img.k);
    trace.v_x = linear(hx, lw.img.v);
    trace.q_p = linear(hp, lw.txt.q);
    trace.k_p = linear(hp, lw.txt.k);
    trace.v_p = linear(hp, lw.txt.v);

    Matrix o = multi_head_attention(vstack(trace.q_x, trace.q_p), vstack(trace.k_x, trace.k_p),
                                    vstack(trace.v_x, trace.v_p), n_heads);
    trace.o_x = row_slice(o, 0, x.rows);
    trace.o_p = row_slice(o, x.rows, o.rows);

    Matrix x_next = gated_add(x, mod_x.alpha_attn, linear(trace.o_x, lw.img.out));
    Matrix p_next = gated_add(p, mod_p.alpha_attn, linear(trace.o_p, lw.txt.out));

    x_next = gated_add(x_next, mod_x.alpha_mlp,
                       mlp_forward(modulate(x_next, mod_x.gamma_mlp, mod_x.beta_mlp), lw.img));
    p_next = gated_add(p_next, mod_p.alpha_mlp,
                       mlp_forward(modulate(p_next, mod_p.gamma_mlp, mod_p.beta_mlp), lw.txt));

    trace.x_next = x_next;
    trace.p_next = p_next;
    return {x_next, p_next, trace};
}

// Full forward pass: embed prompt tokens, add positional embeddings to the
// image tokens, apply rectified-flow noise, run every MMAttn layer, and
// return one trace per layer.
inline std::vector<LayerTrace> forward_with_trace(const std::vector<std::string>& tokens,
                                                  const Matrix& x0, double t, double T,
                                                  const MMDiTWeights& w, const Rng& rng) {
    const ModelConfig& cfg = w.config;
    if (static_cast<int>(x0.rows) != cfg.n_image_tokens() ||
        static_cast<int>(x0.cols) != cfg.d_model)
        throw shape_error("forward: image tokens " + x0.shape_str() + ", expected " +
                          std::to_string(cfg.n_image_tokens()) + "x" + std::to_string(cfg.d_model));
    if (tokens.empty() || static_cast<int>(tokens.size()) > cfg.prompt_len)
        throw data_error("forward: prompt length " + std::to_string(tokens.size()) +
                         " outside [1, " + std::to_string(cfg.prompt_len) + "]");
    Matrix p = w.embed(tokens);
    Matrix x = add(x0, w.pos_embed);
    auto noise = rng.stream("noise");
    x = noise_image(x, t, T, noise);
    Matrix cond = timestep_embedding(t, cfg.d_model);

    std::vector<LayerTrace> traces;
    traces.reserve(cfg.n_layers);
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto [x_next, p_next, trace] = mm_attention_layer(x, p, w.layers[l], cond, cfg.n_heads);
        trace.layer = l;
        trace.timestep = t;
        traces.push_back(std::move(trace));
        x = std::move(x_next);
        p = std::move(p_next);
    }
    return traces;
}

inline constexpr double kDefaultScheduleLen = 1000.0;

}  // namespace cakit
