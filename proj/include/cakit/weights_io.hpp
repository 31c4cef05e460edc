#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cakit/mmdit.hpp"

namespace cakit {

// CAW1 weight container, little-endian throughout:
//   magic "CAW1"
//   u64 header_len, header bytes (canonical JSON: {"config": ..., "tokens": [...]})
//   u64 tensor_count
//   per tensor: u32 name_len, name, u32 ndims, u64 dims..., float64 payload
// Tensors appear in a fixed canonical order so identical weights serialize
// byte-identically.

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw data_error("weight file: truncated");
    return v;
}

inline void write_tensor(std::ostream& os, const std::string& name, const Matrix& m) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), name.size());
    write_pod<uint32_t>(os, 2);
    write_pod<uint64_t>(os, m.rows);
    write_pod<uint64_t>(os, m.cols);
    os.write(reinterpret_cast<const char*>(m.data.data()), m.data.size() * sizeof(double));
}

inline std::pair<std::string, Matrix> read_tensor(std::istream& is) {
    uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw data_error("weight file: truncated tensor name");
    uint32_t ndims = read_pod<uint32_t>(is);
    if (ndims != 2) throw data_error("weight file: tensor \"" + name + "\" has ndims != 2");
    uint64_t rows = read_pod<uint64_t>(is);
    uint64_t cols = read_pod<uint64_t>(is);
    Matrix m(rows, cols);
    if (!is.read(reinterpret_cast<char*>(m.data.data()), m.data.size() * sizeof(double)))
        throw data_error("weight file: truncated tensor \"" + name + "\"");
    return {name, std::move(m)};
}

// Canonical (name, matrix) flattening used for both save and load.
template <typename Fn>
void for_each_tensor(MMDiTWeights& w, Fn&& fn) {
    fn("embedding_table", w.embedding_table);
    fn("pos_embed", w.pos_embed);
    for (size_t l = 0; l < w.layers.size(); ++l) {
        std::string p = "layer" + std::to_string(l);
        auto stream = [&](const std::string& sp, StreamWeights& sw) {
            auto lin = [&](const std::string& lp, LinearWeights& lw) {
                fn(lp + ".w", lw.w);
                fn(lp + ".b", lw.b);
            };
            lin(sp + ".q", sw.q);
            lin(sp + ".k", sw.k);
            lin(sp + ".v", sw.v);
            lin(sp + ".out", sw.out);
            lin(sp + ".mlp_fc1", sw.mlp_fc1);
            lin(sp + ".mlp_fc2", sw.mlp_fc2);
            lin(sp + ".mod", sw.mod);
        };
        stream(p + ".img", w.layers[l].img);
        stream(p + ".txt", w.layers[l].txt);
    }
}

}  // namespace detail

inline std::string weights_header_json(const MMDiTWeights& w) {
    nlohmann::json header;
    header["config"] = w.config.to_json();
    header["tokens"] = w.tokens;
    return header.dump();  // nlohmann objects are key-sorted: canonical
}

// FNV-1a hash of the canonical header, as fixed-width hex.
inline std::string config_hash(const MMDiTWeights& w) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(weights_header_json(w))));
    return std::string(buf);
}

inline void save_weights(const MMDiTWeights& w, std::ostream& os) {
    os.write("CAW1", 4);
    std::string header = weights_header_json(w);
    detail::write_pod<uint64_t>(os, header.size());
    os.write(header.data(), header.size());

    size_t count = 0;
    detail::for_each_tensor(const_cast<MMDiTWeights&>(w),
                            [&](const std::string&, Matrix&) { ++count; });
    detail::write_pod<uint64_t>(os, count);
    detail::for_each_tensor(const_cast<MMDiTWeights&>(w), [&](const std::string& name, Matrix& m) {
        detail::write_tensor(os, name, m);
    });
}

inline void save_weights(const MMDiTWeights& w, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open for writing: " + path);
    save_weights(w, os);
    if (!os) throw data_error("write failed: " + path);
}

inline MMDiTWeights load_weights(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CAW1", 4) != 0)
        throw data_error("weight file: bad magic (expected CAW1)");
    uint64_t header_len = detail::read_pod<uint64_t>(is);
    std::string header(header_len, '\0');
    if (!is.read(header.data(), header_len)) throw data_error("weight file: truncated header");
    nlohmann::json j = nlohmann::json::parse(header);

    MMDiTWeights w;
    w.config = ModelConfig::from_json(j.at("config"));
    w.config.validate();
    w.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (static_cast<int>(w.tokens.size()) != w.config.vocab_size)
        throw data_error("weight file: token list size does not match vocab_size");
    for (size_t i = 0; i < w.tokens.size(); ++i)
        w.token_index.emplace(w.tokens[i], static_cast<int>(i));
    w.layers.resize(w.config.n_layers);

    uint64_t count = detail::read_pod<uint64_t>(is);
    std::vector<std::pair<std::string, Matrix>> tensors;
    tensors.reserve(count);
    for (uint64_t i = 0; i < count; ++i) tensors.push_back(detail::read_tensor(is));

    size_t idx = 0;
    detail::for_each_tensor(w, [&](const std::string& name, Matrix& dst) {
        if (idx >= tensors.size())
            throw data_error("weight file: missing tensor \"" + name + "\"");
        auto& [got_name, got] = tensors[idx++];
        if (got_name != name)
            throw data_error("weight file: expected tensor \"" + name + "\", found \"" + got_name +
                             "\"");
        dst = std::move(got);
    });
    if (idx != tensors.size()) throw data_error("weight file: extra tensors present");

    // shape check against config
    size_t d = w.config.d_model;
    auto expect = [&](const Matrix& m, size_t r, size_t c, const std::string& what) {
        if (m.rows != r || m.cols != c)
            throw data_error("weight file: " + what + " has shape " + m.shape_str() +
                             ", expected " + std::to_string(r) + "x" + std::to_string(c));
    };
    expect(w.embedding_table, w.tokens.size(), d, "embedding_table");
    expect(w.pos_embed, w.config.n_image_tokens(), d, "pos_embed");
    for (auto& layer : w.layers) {
        for (StreamWeights* sw : {&layer.img, &layer.txt}) {
            auto expect_linear = [&](const LinearWeights& lw, size_t in, size_t out,
                                     const std::string& what) {
                expect(lw.w, in, out, what + ".w");
                expect(lw.b, 1, out, what + ".b");
            };
            expect_linear(sw->q, d, d, "q");
            expect_linear(sw->k, d, d, "k");
            expect_linear(sw->v, d, d, "v");
            expect_linear(sw->out, d, d, "out");
            expect_linear(sw->mlp_fc1, d, d * w.config.mlp_ratio, "mlp_fc1");
            expect_linear(sw->mlp_fc2, d * w.config.mlp_ratio, d, "mlp_fc2");
            expect_linear(sw->mod, d, 6 * d, "mod");
        }
    }
    return w;
}

inline MMDiTWeights load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open weight file: " + path);
    return load_weights(is);
}

}  // namespace cakit
