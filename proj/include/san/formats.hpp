#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "san/divergence.hpp"
#include "san/model.hpp"

namespace san {

// All file writes are whole-file atomic: write a temp sibling, then rename.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw InputError("short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string format_fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Sharing-policy file
// ---------------------------------------------------------------------------

// On-disk policy: block lists plus the thresholds that produced them. A
// missing or empty list means "no sharing" and resolves to all-ones for the
// target stack depth.
struct PolicyFile {
    std::vector<int> self_blocks;
    std::vector<int> encdec_blocks;
    std::vector<int> enc_blocks;
    std::optional<double> theta_self;
    std::optional<double> theta_encdec;

    static PolicyFile from_policy(const SharingPolicy& p) {
        PolicyFile f;
        f.self_blocks = p.self_blocks;
        f.encdec_blocks = p.encdec_blocks;
        f.enc_blocks = p.enc_blocks;
        return f;
    }

    SharingPolicy resolve(const ModelConfig& cfg) const {
        SharingPolicy p;
        p.self_blocks =
            self_blocks.empty() ? SharingPolicy::all_ones(cfg.dec_layers) : self_blocks;
        p.encdec_blocks = encdec_blocks.empty() ? SharingPolicy::all_ones(cfg.dec_layers)
                                                : encdec_blocks;
        p.enc_blocks =
            enc_blocks.empty() ? SharingPolicy::all_ones(cfg.enc_layers) : enc_blocks;
        p.validate(cfg);
        return p;
    }
};

inline std::string policy_to_json(const PolicyFile& f) {
    nlohmann::json j;
    j["self"] = f.self_blocks;
    j["encdec"] = f.encdec_blocks;
    j["enc"] = f.enc_blocks;
    if (f.theta_self) j["theta_self"] = *f.theta_self;
    if (f.theta_encdec) j["theta_encdec"] = *f.theta_encdec;
    return j.dump(2) + "\n";
}

inline PolicyFile parse_policy_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("policy file: ") + e.what());
    }
    PolicyFile f;
    try {
        if (j.contains("self")) f.self_blocks = j["self"].get<std::vector<int>>();
        if (j.contains("encdec")) f.encdec_blocks = j["encdec"].get<std::vector<int>>();
        if (j.contains("enc")) f.enc_blocks = j["enc"].get<std::vector<int>>();
        if (j.contains("theta_self")) f.theta_self = j["theta_self"].get<double>();
        if (j.contains("theta_encdec"))
            f.theta_encdec = j["theta_encdec"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("policy file: ") + e.what());
    }
    return f;
}

// ---------------------------------------------------------------------------
// JsMatrix export/import
// ---------------------------------------------------------------------------

// CSV: M rows x M columns, 6 decimal places, no header.
inline std::string jsmatrix_to_csv(const JsMatrix& m) {
    std::string out;
    for (int i = 0; i < m.layers; ++i) {
        for (int j = 0; j < m.layers; ++j) {
            if (j) out += ",";
            out += format_fixed6(m.values.at(i, j));
        }
        out += "\n";
    }
    return out;
}

inline JsMatrix parse_jsmatrix_csv(const std::string& text,
                                   const std::string& kind = "self") {
    std::vector<std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw FormatError("matrix CSV: bad cell '" + cell + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    const int m = static_cast<int>(rows.size());
    if (m == 0) throw FormatError("matrix CSV: empty");
    JsMatrix out(m, kind);
    for (int i = 0; i < m; ++i) {
        if (static_cast<int>(rows[i].size()) != m)
            throw FormatError("matrix CSV: row " + std::to_string(i + 1) + " has " +
                              std::to_string(rows[i].size()) + " cells, expected " +
                              std::to_string(m));
        for (int j = 0; j < m; ++j) out.values.at(i, j) = rows[i][j];
    }
    return out;
}

inline std::string jsmatrix_to_json(const JsMatrix& m) {
    nlohmann::json j;
    j["layers"] = m.layers;
    j["kind"] = m.kind;
    std::vector<std::vector<double>> vals(m.layers, std::vector<double>(m.layers));
    for (int i = 0; i < m.layers; ++i)
        for (int c = 0; c < m.layers; ++c) vals[i][c] = m.values.at(i, c);
    j["values"] = vals;
    return j.dump(2) + "\n";
}

inline JsMatrix parse_jsmatrix_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
        const int m = j.at("layers").get<int>();
        JsMatrix out(m, j.at("kind").get<std::string>());
        auto vals = j.at("values").get<std::vector<std::vector<double>>>();
        if (static_cast<int>(vals.size()) != m) throw FormatError("matrix JSON: shape");
        for (int i = 0; i < m; ++i) {
            if (static_cast<int>(vals[i].size()) != m)
                throw FormatError("matrix JSON: shape");
            for (int c = 0; c < m; ++c) out.values.at(i, c) = vals[i][c];
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("matrix JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Token corpora: JSON Lines, one object per sentence
// ---------------------------------------------------------------------------

struct Sentence {
    std::vector<int> src;
    std::vector<int> tgt;  // may be empty (unlabeled)
    bool has_tgt = false;
};

inline std::vector<Sentence> parse_corpus_jsonl(const std::string& text) {
    std::vector<Sentence> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            Sentence s;
            s.src = j.at("src").get<std::vector<int>>();
            if (j.contains("tgt")) {
                s.tgt = j["tgt"].get<std::vector<int>>();
                s.has_tgt = true;
            }
            out.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (out.empty()) throw FormatError("corpus: no sentences");
    return out;
}

inline std::string corpus_to_jsonl(const std::vector<Sentence>& corpus) {
    std::string out;
    for (const auto& s : corpus) {
        nlohmann::json j;
        j["src"] = s.src;
        if (s.has_tgt) j["tgt"] = s.tgt;
        out += j.dump();
        out += "\n";
    }
    return out;
}

}  // namespace san
