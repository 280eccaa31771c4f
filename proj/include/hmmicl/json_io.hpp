#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "hmmicl/attention.hpp"
#include "hmmicl/hmm.hpp"
#include "hmmicl/rng.hpp"

namespace hmmicl {

using nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    json data = json::array();
    for (double v : m.data()) data.push_back(v);
    j["data"] = std::move(data);  // row-major
    return j;
}

inline Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto& data = j.at("data");
    if (data.size() != m.rows() * m.cols()) throw ShapeError("matrix_from_json: data length mismatch");
    auto d = m.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = data[i].get<double>();
    return m;
}

inline json hmm_to_json(const LowRankHmm& hmm) {
    json j;
    j["num_hidden"] = hmm.num_hidden;
    j["num_obs"] = hmm.num_obs;
    j["rank"] = hmm.rank;
    j["psi"] = matrix_to_json(hmm.psi);
    j["w"] = matrix_to_json(hmm.w);
    j["emission"] = matrix_to_json(hmm.emission);
    j["initial"] = hmm.initial;
    j["seed"] = hmm.seed;
    j["generator_name"] = std::string(kGeneratorName);
    return j;
}

inline LowRankHmm hmm_from_json(const json& j) {
    LowRankHmm hmm;
    hmm.num_hidden = j.at("num_hidden").get<int>();
    hmm.num_obs = j.at("num_obs").get<int>();
    hmm.rank = j.at("rank").get<int>();
    hmm.psi = matrix_from_json(j.at("psi"));
    hmm.w = matrix_from_json(j.at("w"));
    hmm.emission = matrix_from_json(j.at("emission"));
    hmm.initial = j.at("initial").get<Vector>();
    hmm.seed = j.at("seed").get<std::uint64_t>();
    hmm.validate();
    return hmm;
}

inline json stack_to_json(const TransformerStack& stack) {
    json j;
    j["width"] = stack.width;
    j["generator_name"] = std::string(kGeneratorName);
    json layers = json::array();
    for (const auto& layer : stack.layers) {
        json jl;
        if (const auto* att = std::get_if<AttentionLayer>(&layer)) {
            jl["type"] = "attention";
            json heads = json::array();
            for (const auto& h : att->heads) {
                json jh;
                jh["activation"] = to_string(h.activation);
                jh["q"] = matrix_to_json(h.q);
                jh["k"] = matrix_to_json(h.k);
                jh["v"] = matrix_to_json(h.v);
                heads.push_back(std::move(jh));
            }
            jl["heads"] = std::move(heads);
        } else {
            const auto& enc = std::get<VecEncoder>(layer);
            jl["type"] = "vec_encoder";
            jl["p"] = enc.p;
            jl["m"] = enc.m;
            jl["source_starts"] = enc.source_starts;
            jl["target_start"] = enc.target_start;
        }
        layers.push_back(std::move(jl));
    }
    j["layers"] = std::move(layers);
    return j;
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "softmax") return Activation::softmax;
    if (s == "relu") return Activation::relu;
    if (s == "hardmax") return Activation::hardmax;
    throw DimensionError("unknown activation tag: " + s);
}

inline TransformerStack stack_from_json(const json& j) {
    TransformerStack stack;
    stack.width = j.at("width").get<int>();
    for (const auto& jl : j.at("layers")) {
        const std::string type = jl.at("type").get<std::string>();
        if (type == "attention") {
            AttentionLayer att;
            for (const auto& jh : jl.at("heads")) {
                HeadWeights h;
                h.activation = activation_from_string(jh.at("activation").get<std::string>());
                h.q = matrix_from_json(jh.at("q"));
                h.k = matrix_from_json(jh.at("k"));
                h.v = matrix_from_json(jh.at("v"));
                att.heads.push_back(std::move(h));
            }
            stack.layers.push_back(std::move(att));
        } else if (type == "vec_encoder") {
            VecEncoder enc;
            enc.p = jl.at("p").get<int>();
            enc.m = jl.at("m").get<int>();
            enc.source_starts = jl.at("source_starts").get<std::vector<int>>();
            enc.target_start = jl.at("target_start").get<int>();
            stack.layers.push_back(enc);
        } else {
            throw DimensionError("unknown stack layer type: " + type);
        }
    }
    return stack;
}

inline void write_json_file(const json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    json j;
    f >> j;
    return j;
}

} // namespace hmmicl
