#pragma once

#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "san/formats.hpp"
#include "san/model.hpp"

namespace san {

// Weight container: 8-byte magic "SANW0001", a 64-bit little-endian unsigned
// manifest byte length, a JSON manifest (config, policy, ordered tensor
// records with name/shape/byte offset), then one raw blob of little-endian
// 32-bit IEEE-754 values in manifest order, row-major. Values are stored in
// 32 bits and widened to 64 on load.

inline constexpr char kWeightMagic[8] = {'S', 'A', 'N', 'W', '0', '0', '0', '1'};

namespace detail {

inline void append_u64_le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint64_t read_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

inline void append_f32_le(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float read_f32_le(const unsigned char* p) {
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers},
                          {"heads", c.heads},           {"d_model", c.d_model},
                          {"d_k", c.d_k},               {"d_v", c.d_v},
                          {"d_ff", c.d_ff},             {"vocab", c.vocab},
                          {"max_len", c.max_len}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_k = j.at("d_k").get<int>();
    c.d_v = j.at("d_v").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.max_len = j.at("max_len").get<int>();
    return c;
}

}  // namespace detail

inline void save_weights(const ModelParams& params, const std::string& path) {
    nlohmann::json manifest;
    manifest["config"] = detail::config_to_json(params.config);
    manifest["policy"] = {{"self", params.policy.self_blocks},
                          {"encdec", params.policy.encdec_blocks},
                          {"enc", params.policy.enc_blocks}};

    nlohmann::json tensors = nlohmann::json::array();
    uint64_t offset = 0;
    std::string blob;
    params.for_each_tensor([&](const std::string& name, const Mat& m) {
        tensors.push_back({{"name", name},
                           {"shape", std::vector<int>{m.rows, m.cols}},
                           {"offset", offset}});
        for (double v : m.data) detail::append_f32_le(blob, static_cast<float>(v));
        offset += m.data.size() * 4;
    });
    manifest["tensors"] = std::move(tensors);

    const std::string mtext = manifest.dump();
    std::string out;
    out.reserve(16 + mtext.size() + blob.size());
    out.append(kWeightMagic, 8);
    detail::append_u64_le(out, mtext.size());
    out += mtext;
    out += blob;
    write_file_atomic(path, out);
}

inline ModelParams load_weights(const std::string& path) {
    const std::string raw = read_file(path);
    const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());
    if (raw.size() < 16 || std::memcmp(raw.data(), kWeightMagic, 8) != 0)
        throw FormatError(path + ": bad magic");
    const uint64_t mlen = detail::read_u64_le(bytes + 8);
    if (16 + mlen > raw.size()) throw FormatError(path + ": manifest length overruns file");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(raw.substr(16, mlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": manifest: " + e.what());
    }

    ModelConfig cfg;
    SharingPolicy policy;
    try {
        cfg = detail::config_from_json(manifest.at("config"));
        policy.self_blocks = manifest.at("policy").at("self").get<std::vector<int>>();
        policy.encdec_blocks =
            manifest.at("policy").at("encdec").get<std::vector<int>>();
        policy.enc_blocks = manifest.at("policy").at("enc").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": manifest: " + e.what());
    }
    try {
        cfg.validate();
        policy.validate(cfg);
    } catch (const ConfigError& e) {
        throw FormatError(path + ": " + e.what());
    }

    // Rebuild the skeleton, then check the manifest names/shapes against the
    // tensor list the config+policy dictate. Seed is irrelevant: every value
    // is overwritten from the blob.
    ModelParams params = build(cfg, policy, 0);

    struct Rec {
        std::string name;
        int rows, cols;
        uint64_t offset;
    };
    std::vector<Rec> recs;
    try {
        for (const auto& t : manifest.at("tensors")) {
            auto shape = t.at("shape").get<std::vector<int>>();
            if (shape.size() != 2) throw FormatError(path + ": tensor shape rank != 2");
            recs.push_back({t.at("name").get<std::string>(), shape[0], shape[1],
                            t.at("offset").get<uint64_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": manifest tensors: " + e.what());
    }

    const unsigned char* blob = bytes + 16 + mlen;
    const uint64_t blob_len = raw.size() - 16 - mlen;
    size_t idx = 0;
    uint64_t expect_offset = 0;
    params.for_each_tensor([&](const std::string& name, Mat& m) {
        if (idx >= recs.size())
            throw FormatError(path + ": manifest missing tensor " + name);
        const Rec& r = recs[idx++];
        if (r.name != name)
            throw FormatError(path + ": tensor presence mismatch: expected " + name +
                              ", manifest has " + r.name +
                              " (policy/config disagree with file)");
        if (r.rows != m.rows || r.cols != m.cols)
            throw FormatError(path + ": shape mismatch for " + name + ": file " +
                              std::to_string(r.rows) + "x" + std::to_string(r.cols) +
                              ", expected " + shape_str(m));
        if (r.offset != expect_offset)
            throw FormatError(path + ": non-contiguous offset for " + name);
        const uint64_t bytes_needed = m.data.size() * 4;
        if (r.offset + bytes_needed > blob_len)
            throw FormatError(path + ": blob too short for " + name);
        for (size_t i = 0; i < m.data.size(); ++i)
            m.data[i] = static_cast<double>(detail::read_f32_le(blob + r.offset + 4 * i));
        expect_offset += bytes_needed;
    });
    if (idx != recs.size())
        throw FormatError(path + ": manifest has " + std::to_string(recs.size() - idx) +
                          " unexpected trailing tensors");
    if (expect_offset != blob_len)
        throw FormatError(path + ": blob length " + std::to_string(blob_len) +
                          " != manifest total " + std::to_string(expect_offset));
    return params;
}

}  // namespace san
