#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fusion.hpp"
#include "rng.hpp"
#include "tensor.hpp"

#include "json.hpp"

namespace qta {

struct FeatureRef {
    std::string file;
    std::size_t row = 0;
};

/// One VQA record. `extra` preserves unknown manifest fields across a
/// round trip.
struct Sample {
    std::string id;
    std::string question;
    std::string question_type;
    std::string answer;
    std::map<std::string, FeatureRef> features;
    nlohmann::json extra = nlohmann::json::object();
};

struct Dataset {
    std::vector<Sample> samples;
    QuestionTypeSet types;
    std::vector<std::string> answers;
    std::map<std::string, Tensor> features;  // source name -> [n x dim], rows match FeatureRef.row

    std::size_t answer_index(const std::string& name) const {
        for (std::size_t i = 0; i < answers.size(); ++i)
            if (answers[i] == name) return i;
        throw std::out_of_range("Dataset: unknown answer " + name);
    }

    Tensor feature_row(const std::string& source, const Sample& s) const {
        const auto it = features.find(source);
        if (it == features.end()) throw std::out_of_range("Dataset: unknown feature source " + source);
        const Tensor& m = it->second;
        const auto ref = s.features.find(source);
        if (ref == s.features.end()) throw std::out_of_range("Dataset: sample lacks source " + source);
        const std::size_t dim = m.extent(1);
        Tensor row({dim});
        for (std::size_t j = 0; j < dim; ++j) row[j] = m.at2(ref->second.row, j);
        return row;
    }
};

// ---- atomic file output ----

inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// ---- feature files: magic "QTAF", version, n, dim (u32 LE), then f32 LE ----

inline constexpr std::uint32_t kFeatureVersion = 1;

inline void append_u32(std::string& out, std::uint32_t v) {
    char b[4];
    b[0] = static_cast<char>(v & 0xff);
    b[1] = static_cast<char>((v >> 8) & 0xff);
    b[2] = static_cast<char>((v >> 16) & 0xff);
    b[3] = static_cast<char>((v >> 24) & 0xff);
    out.append(b, 4);
}

inline std::uint32_t read_u32(const std::string& buf, std::size_t& off) {
    if (off + 4 > buf.size()) throw std::runtime_error("truncated binary file");
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + off);
    off += 4;
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

inline void save_features(const std::filesystem::path& path, const Tensor& rows) {
    if (rows.ndim() != 2) throw std::invalid_argument("save_features: need n x dim");
    std::string out;
    out += "QTAF";
    append_u32(out, kFeatureVersion);
    append_u32(out, static_cast<std::uint32_t>(rows.extent(0)));
    append_u32(out, static_cast<std::uint32_t>(rows.extent(1)));
    for (std::size_t i = 0; i < rows.numel(); ++i) {
        const float f = static_cast<float>(rows[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        append_u32(out, bits);
    }
    atomic_write(path, out);
}

inline Tensor load_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 16 || buf.compare(0, 4, "QTAF") != 0)
        throw std::runtime_error("bad feature file magic: " + path.string());
    std::size_t off = 4;
    const std::uint32_t version = read_u32(buf, off);
    if (version != kFeatureVersion) throw std::runtime_error("unsupported feature file version");
    const std::uint32_t n = read_u32(buf, off);
    const std::uint32_t dim = read_u32(buf, off);
    if (buf.size() - off != std::size_t(n) * dim * 4)
        throw std::runtime_error("feature file size does not match declared n x dim: " + path.string());
    Tensor out({n, dim});
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const std::uint32_t bits = read_u32(buf, off);
        float f;
        std::memcpy(&f, &bits, 4);
        out[i] = static_cast<double>(f);
    }
    return out;
}

// ---- manifest: JSONL, one sample per line ----

inline nlohmann::json sample_to_json(const Sample& s) {
    nlohmann::json j = s.extra;
    j["id"] = s.id;
    j["question"] = s.question;
    j["question_type"] = s.question_type;
    j["answer"] = s.answer;
    nlohmann::json feats = nlohmann::json::object();
    for (const auto& [src, ref] : s.features) feats[src] = {{"file", ref.file}, {"row", ref.row}};
    j["features"] = feats;
    return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
    Sample s;
    s.id = j.at("id").get<std::string>();
    s.question = j.at("question").get<std::string>();
    s.question_type = j.at("question_type").get<std::string>();
    s.answer = j.at("answer").get<std::string>();
    for (auto it = j.at("features").begin(); it != j.at("features").end(); ++it)
        s.features[it.key()] = {it.value().at("file").get<std::string>(), it.value().at("row").get<std::size_t>()};
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k != "id" && k != "question" && k != "question_type" && k != "answer" && k != "features")
            s.extra[k] = it.value();
    }
    return s;
}

inline void save_manifest(const std::vector<Sample>& samples, const std::filesystem::path& path) {
    std::string out;
    for (const auto& s : samples) out += sample_to_json(s).dump() + "\n";
    atomic_write(path, out);
}

inline std::vector<Sample> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<Sample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw std::runtime_error("malformed manifest line " + std::to_string(lineno));
        try {
            out.push_back(sample_from_json(j));
        } catch (const std::exception& e) {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---- synthetic routing data ----

enum class DistractorMode { noise, misleading };

struct SyntheticConfig {
    std::size_t n_types = 6;
    std::size_t n_answers = 4;  // per type
    std::size_t dim_a = 32;
    std::size_t dim_b = 32;
    std::size_t samples_per_type = 600;
    double sigma = 0.1;
    DistractorMode distractor = DistractorMode::misleading;
    double absurd_rho = 0.0;  // fraction of absurd questions reusing the color template
    std::uint64_t seed = 0;
};

inline nlohmann::json synthetic_to_json(const SyntheticConfig& c) {
    return {{"n_types", c.n_types},
            {"n_answers", c.n_answers},
            {"dim_a", c.dim_a},
            {"dim_b", c.dim_b},
            {"samples_per_type", c.samples_per_type},
            {"sigma", c.sigma},
            {"distractor", c.distractor == DistractorMode::misleading ? "misleading" : "noise"},
            {"absurd_rho", c.absurd_rho},
            {"seed", c.seed}};
}

inline SyntheticConfig synthetic_from_json(const nlohmann::json& j) {
    SyntheticConfig c;
    c.n_types = j.value("n_types", c.n_types);
    c.n_answers = j.value("n_answers", c.n_answers);
    c.dim_a = j.value("dim_a", c.dim_a);
    c.dim_b = j.value("dim_b", c.dim_b);
    c.samples_per_type = j.value("samples_per_type", c.samples_per_type);
    c.sigma = j.value("sigma", c.sigma);
    const std::string d = j.value("distractor", "misleading");
    if (d == "misleading")
        c.distractor = DistractorMode::misleading;
    else if (d == "noise")
        c.distractor = DistractorMode::noise;
    else
        throw std::invalid_argument("unknown distractor mode: " + d);
    c.absurd_rho = j.value("absurd_rho", c.absurd_rho);
    c.seed = j.value("seed", c.seed);
    return c;
}

inline std::vector<std::string> default_type_names(std::size_t n) {
    static const std::vector<std::string> pool{"color", "absurd", "count", "scene", "sport", "position"};
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(i < pool.size() ? pool[i] : "type" + std::to_string(i));
    return out;
}

/// Designated source per type alternates A, B, A, B, ...
inline std::string designated_source(std::size_t type_index) { return type_index % 2 == 0 ? "srcA" : "srcB"; }

inline std::string question_template(const std::string& type_name) { return "what " + type_name + " is shown"; }

struct GeneratedData {
    Dataset train;
    Dataset test;
};

/// Routing testbed: the answer is decodable only from the type-designated
/// channel, so gating has something real to learn.
inline GeneratedData gen_routing(const SyntheticConfig& cfg) {
    const std::size_t n_global = cfg.n_types * cfg.n_answers;
    if (cfg.dim_a < n_global || cfg.dim_b < n_global)
        throw std::invalid_argument("gen_routing: feature dims must be >= n_types * n_answers for distinct patterns");
    if (cfg.absurd_rho < 0.0 || cfg.absurd_rho > 1.0) throw std::invalid_argument("gen_routing: rho outside [0,1]");

    QuestionTypeSet types{default_type_names(cfg.n_types)};
    types.validate();
    if (cfg.absurd_rho > 0.0) {
        bool has_absurd = false, has_color = false;
        for (const auto& n : types.names) {
            has_absurd = has_absurd || n == "absurd";
            has_color = has_color || n == "color";
        }
        if (!has_absurd || !has_color)
            throw std::invalid_argument("gen_routing: rho > 0 requires absurd and color designated types");
    }

    std::vector<std::string> answers;
    for (std::size_t t = 0; t < cfg.n_types; ++t)
        for (std::size_t j = 0; j < cfg.n_answers; ++j)
            answers.push_back(types.names[t] + "_a" + std::to_string(j));

    const std::size_t total = cfg.n_types * cfg.samples_per_type;
    Tensor feat_a({total, cfg.dim_a});
    Tensor feat_b({total, cfg.dim_b});
    std::vector<Sample> all(total);

    const Rng base(cfg.seed, Rng::stream_id("gen"));

    std::size_t color_type = std::size_t(-1), absurd_type = std::size_t(-1);
    for (std::size_t t = 0; t < cfg.n_types; ++t) {
        if (types.names[t] == "color") color_type = t;
        if (types.names[t] == "absurd") absurd_type = t;
    }

    for (std::size_t t = 0; t < cfg.n_types; ++t) {
        // biased question count is exact: the first k samples of the type
        const std::size_t k_bias =
            (t == absurd_type && cfg.absurd_rho > 0.0)
                ? static_cast<std::size_t>(std::llround(cfg.absurd_rho * static_cast<double>(cfg.samples_per_type)))
                : 0;
        for (std::size_t i = 0; i < cfg.samples_per_type; ++i) {
            const std::size_t g = t * cfg.samples_per_type + i;
            Rng rng = base.split(g);

            const std::size_t ans = i % cfg.n_answers;  // balanced within +-1 per (type, answer)
            const std::size_t global_ans = t * cfg.n_answers + ans;

            Sample& s = all[g];
            s.id = "s" + std::to_string(g);
            s.question_type = types.names[t];
            s.answer = answers[global_ans];
            s.question = (i < k_bias) ? question_template(types.names[color_type]) : question_template(types.names[t]);
            s.features["srcA"] = {"", g};
            s.features["srcB"] = {"", g};

            const bool a_designated = designated_source(t) == "srcA";
            auto fill = [&](Tensor& mat, std::size_t dim, bool designated) {
                if (designated) {
                    for (std::size_t j = 0; j < dim; ++j)
                        mat.at2(g, j) = (j == global_ans ? 1.0 : 0.0) + cfg.sigma * rng.normal();
                } else if (cfg.distractor == DistractorMode::misleading) {
                    std::size_t wrong = rng.uniform_int(cfg.n_answers - 1);
                    if (wrong >= ans) ++wrong;  // uniform over wrong answers of the same type
                    const std::size_t wrong_global = t * cfg.n_answers + wrong;
                    for (std::size_t j = 0; j < dim; ++j)
                        mat.at2(g, j) = (j == wrong_global ? 1.0 : 0.0) + cfg.sigma * rng.normal();
                } else {
                    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
                    for (std::size_t j = 0; j < dim; ++j) mat.at2(g, j) = scale * rng.normal();
                }
            };
            fill(feat_a, cfg.dim_a, a_designated);
            fill(feat_b, cfg.dim_b, !a_designated);
        }
    }
    // stratified 80/20 split, shuffled per type
    GeneratedData out;
    out.train.types = out.test.types = types;
    out.train.answers = out.test.answers = answers;

    std::vector<std::size_t> train_rows, test_rows;
    const Rng split_base(cfg.seed, Rng::stream_id("split"));
    for (std::size_t t = 0; t < cfg.n_types; ++t) {
        std::vector<std::size_t> idx(cfg.samples_per_type);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = t * cfg.samples_per_type + i;
        Rng r = split_base.split(t);
        r.shuffle(idx);
        const std::size_t n_train = (cfg.samples_per_type * 4) / 5;
        for (std::size_t i = 0; i < idx.size(); ++i) (i < n_train ? train_rows : test_rows).push_back(idx[i]);
    }

    auto build = [&](Dataset& ds, const std::vector<std::size_t>& rows) {
        Tensor a({rows.size(), cfg.dim_a});
        Tensor b({rows.size(), cfg.dim_b});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            Sample s = all[rows[i]];
            s.features["srcA"].row = i;
            s.features["srcB"].row = i;
            for (std::size_t j = 0; j < cfg.dim_a; ++j) a.at2(i, j) = feat_a.at2(rows[i], j);
            for (std::size_t j = 0; j < cfg.dim_b; ++j) b.at2(i, j) = feat_b.at2(rows[i], j);
            ds.samples.push_back(std::move(s));
        }
        ds.features["srcA"] = std::move(a);
        ds.features["srcB"] = std::move(b);
    };
    build(out.train, train_rows);
    build(out.test, test_rows);
    return out;
}

/// Absurd-bias variant: fraction rho of the absurd type's questions reuse
/// the color template verbatim. Visual channels are untouched; the lexical
/// overlap is the only signal collision.
inline GeneratedData gen_absurd_bias(const SyntheticConfig& cfg) {
    if (cfg.absurd_rho <= 0.0 || cfg.absurd_rho > 1.0)
        throw std::invalid_argument("gen_absurd_bias: rho must be in (0, 1]");
    return gen_routing(cfg);
}

// ---- dataset directory layout ----

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir, const std::string& split) {
    std::filesystem::create_directories(dir);
    std::vector<Sample> samples = ds.samples;
    for (auto& s : samples)
        for (auto& [src, ref] : s.features) ref.file = split + "_" + src + ".qtaf";
    save_manifest(samples, dir / (split + ".jsonl"));
    for (const auto& [src, mat] : ds.features) save_features(dir / (split + "_" + src + ".qtaf"), mat);

    nlohmann::json meta;
    meta["types"] = ds.types.names;
    meta["answers"] = ds.answers;
    atomic_write(dir / (split + "_meta.json"), meta.dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir, const std::string& split) {
    Dataset ds;
    ds.samples = load_manifest(dir / (split + ".jsonl"));

    const std::filesystem::path meta_path = dir / (split + "_meta.json");
    if (std::filesystem::exists(meta_path)) {
        std::ifstream in(meta_path);
        nlohmann::json meta = nlohmann::json::parse(in);
        ds.types.names = meta.at("types").get<std::vector<std::string>>();
        ds.answers = meta.at("answers").get<std::vector<std::string>>();
    } else {
        for (const auto& s : ds.samples) {
            if (std::find(ds.types.names.begin(), ds.types.names.end(), s.question_type) == ds.types.names.end())
                ds.types.names.push_back(s.question_type);
            if (std::find(ds.answers.begin(), ds.answers.end(), s.answer) == ds.answers.end())
                ds.answers.push_back(s.answer);
        }
    }

    for (const auto& s : ds.samples)
        for (const auto& [src, ref] : s.features)
            if (!ds.features.count(src)) ds.features[src] = load_features(dir / ref.file);
    return ds;
}

}  // namespace qta
