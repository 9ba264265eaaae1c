#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "data.hpp"
#include "encoders.hpp"
#include "fusion.hpp"
#include "metrics.hpp"
#include "sketch.hpp"

#include "json.hpp"

namespace qta {

enum class Architecture { CAT1, CAT1L, CATL, CAT2, CATL_QTA, CAT_QT, CATL_QT, MCB_QTA, CATL_QTA_M };
enum class TextVariant { plain, plus_n, plus_w };

inline const char* arch_name(Architecture a) {
    switch (a) {
        case Architecture::CAT1: return "CAT1";
        case Architecture::CAT1L: return "CAT1L";
        case Architecture::CATL: return "CATL";
        case Architecture::CAT2: return "CAT2";
        case Architecture::CATL_QTA: return "CATL-QTA";
        case Architecture::CAT_QT: return "CAT-QT";
        case Architecture::CATL_QT: return "CATL-QT";
        case Architecture::MCB_QTA: return "MCB-QTA";
        case Architecture::CATL_QTA_M: return "CATL-QTA-M";
    }
    return "?";
}

inline Architecture arch_from_name(const std::string& s) {
    for (Architecture a : {Architecture::CAT1, Architecture::CAT1L, Architecture::CATL, Architecture::CAT2,
                           Architecture::CATL_QTA, Architecture::CAT_QT, Architecture::CATL_QT, Architecture::MCB_QTA,
                           Architecture::CATL_QTA_M})
        if (s == arch_name(a)) return a;
    throw std::invalid_argument("unknown architecture: " + s);
}

inline const char* variant_name(TextVariant v) {
    switch (v) {
        case TextVariant::plain: return "plain";
        case TextVariant::plus_n: return "N";
        case TextVariant::plus_w: return "W";
    }
    return "?";
}

inline TextVariant variant_from_name(const std::string& s) {
    if (s == "plain") return TextVariant::plain;
    if (s == "N") return TextVariant::plus_n;
    if (s == "W") return TextVariant::plus_w;
    throw std::invalid_argument("unknown text variant: " + s);
}

inline bool arch_uses_lstm(Architecture a) {
    switch (a) {
        case Architecture::CAT1L:
        case Architecture::CATL:
        case Architecture::CATL_QTA:
        case Architecture::CATL_QT:
        case Architecture::MCB_QTA:
        case Architecture::CATL_QTA_M: return true;
        default: return false;
    }
}

inline bool arch_uses_pretrained_text(Architecture a) {
    return a == Architecture::CAT1 || a == Architecture::CAT2 || a == Architecture::CAT_QT;
}

inline bool arch_single_source(Architecture a) { return a == Architecture::CAT1 || a == Architecture::CAT1L; }

inline bool arch_has_qta(Architecture a) {
    return a == Architecture::CATL_QTA || a == Architecture::MCB_QTA || a == Architecture::CATL_QTA_M;
}

inline bool arch_has_qt(Architecture a) { return a == Architecture::CAT_QT || a == Architecture::CATL_QT; }

inline bool arch_has_type_head(Architecture a) { return a == Architecture::CATL_QTA_M; }

/// Desk-scale defaults; full-scale values (1024 hidden, 300-dim embedding,
/// 8192 MLP units, b = 8000) stay configurable.
struct ModelDims {
    std::size_t lstm_hidden = 64;
    std::size_t embed_dim = 32;
    std::size_t pretrained_dim = 32;
    std::size_t mlp_hidden = 128;
    std::size_t sketch_b = 64;
    std::size_t type_embed = 32;
};

struct ModelSpec {
    Architecture arch = Architecture::CATL;
    TextVariant variant = TextVariant::plain;
    ModelDims dims;
    std::uint64_t seed = 0;

    void validate() const {
        if (variant != TextVariant::plain && !arch_uses_lstm(arch))
            throw std::invalid_argument(std::string("text variant on non-LSTM architecture ") + arch_name(arch));
        if (variant != TextVariant::plain && arch == Architecture::MCB_QTA)
            throw std::invalid_argument("MCB-QTA takes the plain LSTM text feature");
    }

    nlohmann::json to_json() const {
        return {{"arch", arch_name(arch)},
                {"variant", variant_name(variant)},
                {"lstm_hidden", dims.lstm_hidden},
                {"embed_dim", dims.embed_dim},
                {"pretrained_dim", dims.pretrained_dim},
                {"mlp_hidden", dims.mlp_hidden},
                {"sketch_b", dims.sketch_b},
                {"type_embed", dims.type_embed},
                {"seed", seed}};
    }

    static ModelSpec from_json(const nlohmann::json& j) {
        ModelSpec s;
        s.arch = arch_from_name(j.at("arch").get<std::string>());
        s.variant = variant_from_name(j.value("variant", "plain"));
        s.dims.lstm_hidden = j.value("lstm_hidden", s.dims.lstm_hidden);
        s.dims.embed_dim = j.value("embed_dim", s.dims.embed_dim);
        s.dims.pretrained_dim = j.value("pretrained_dim", s.dims.pretrained_dim);
        s.dims.mlp_hidden = j.value("mlp_hidden", s.dims.mlp_hidden);
        s.dims.sketch_b = j.value("sketch_b", s.dims.sketch_b);
        s.dims.type_embed = j.value("type_embed", s.dims.type_embed);
        s.seed = j.value("seed", std::uint64_t(0));
        return s;
    }
};

struct Model {
    ModelSpec spec;
    Vocab vocab;
    QuestionTypeSet types;
    std::vector<std::string> answers;
    std::vector<std::string> sources;               // source names in concat order
    std::map<std::string, std::size_t> source_dims;

    EmbeddingTable lstm_embed;        // trainable
    EmbeddingTable pretrained_embed;  // frozen stand-in for Word2Vec/NMT
    LstmParams lstm;
    QtaWeights qta;
    TypeEmbedding type_emb;
    ad::Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    ad::Var type_w, type_b;
    SketchParams sk_img, sk_txt;

    BlockBounds blocks;
    std::vector<std::string> block_names;

    std::vector<std::pair<std::string, ad::Var>> params;  // trainable, in fixed order

    std::size_t visual_dim() const {
        std::size_t m = 0;
        for (const auto& s : sources) m += source_dims.at(s);
        return m;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, p] : params) n += p->value.numel();
        return n;
    }

    std::vector<ad::Var> param_list() const {
        std::vector<ad::Var> out;
        for (const auto& [name, p] : params) out.push_back(p);
        return out;
    }
};

/// Parameter tensors are seeded per name, so architectures that share a
/// submodule initialize it identically for the same seed.
inline Rng param_rng(std::uint64_t seed, const std::string& name) {
    return Rng(seed, Rng::stream_id("param")).split(Rng::stream_id(name.c_str()));
}

inline Model build_model(const ModelSpec& spec, const Vocab& vocab, const QuestionTypeSet& types,
                         const std::vector<std::string>& answers,
                         const std::map<std::string, std::size_t>& source_dims) {
    spec.validate();
    types.validate();
    if (answers.size() < 2) throw std::invalid_argument("build_model: need at least 2 answers");

    Model m;
    m.spec = spec;
    m.vocab = vocab;
    m.types = types;
    m.answers = answers;
    m.source_dims = source_dims;
    for (const auto& [src, dim] : source_dims) m.sources.push_back(src);
    if (arch_single_source(spec.arch)) m.sources.resize(1);

    std::size_t off = 0;
    for (const auto& s : m.sources) {
        m.blocks.emplace_back(off, off + source_dims.at(s));
        m.block_names.push_back(s);
        off += source_dims.at(s);
    }
    const std::size_t M = off;

    auto track = [&](const std::string& name, ad::Var v) {
        m.params.emplace_back(name, v);
        return v;
    };

    std::size_t text_dim = 0;
    if (arch_uses_lstm(spec.arch)) {
        m.lstm_embed = make_embedding_table(vocab.size(), spec.dims.embed_dim, true,
                                            param_rng(spec.seed, "lstm_embed"));
        track("lstm_embed", m.lstm_embed.table);
        m.lstm = make_lstm(spec.dims.embed_dim, spec.dims.lstm_hidden, 2, param_rng(spec.seed, "lstm"));
        for (std::size_t l = 0; l < m.lstm.layers.size(); ++l) {
            track("lstm.l" + std::to_string(l) + ".wx", m.lstm.layers[l].wx);
            track("lstm.l" + std::to_string(l) + ".wh", m.lstm.layers[l].wh);
            track("lstm.l" + std::to_string(l) + ".b", m.lstm.layers[l].b);
        }
        text_dim += spec.dims.lstm_hidden;
    }
    if (arch_uses_pretrained_text(spec.arch) || spec.variant != TextVariant::plain) {
        m.pretrained_embed = make_embedding_table(vocab.size(), spec.dims.pretrained_dim, false,
                                                  param_rng(spec.seed, "pretrained_embed"));
        text_dim += spec.dims.pretrained_dim;
    }

    std::size_t visual_out = M;
    if (arch_has_qta(spec.arch)) {
        m.qta = make_qta_weights(M, types.size());
        track("qta.w", m.qta.w);
    }
    if (spec.arch == Architecture::MCB_QTA) {
        m.sk_img = make_sketch_params(M, spec.dims.sketch_b, Rng::mix(spec.seed ^ Rng::stream_id("sk_img")));
        m.sk_txt = make_sketch_params(spec.dims.lstm_hidden, spec.dims.sketch_b,
                                      Rng::mix(spec.seed ^ Rng::stream_id("sk_txt")));
        visual_out = spec.dims.sketch_b;
    }

    std::size_t mlp_in = visual_out + text_dim;
    if (arch_has_qt(spec.arch)) {
        m.type_emb = make_type_embedding(types.size(), spec.dims.type_embed, param_rng(spec.seed, "type_emb"));
        track("type_emb", m.type_emb.rows);
        mlp_in += spec.dims.type_embed;
    }

    const std::size_t hid = spec.dims.mlp_hidden;
    const double r1 = 1.0 / std::sqrt(static_cast<double>(mlp_in));
    const double r2 = 1.0 / std::sqrt(static_cast<double>(hid));
    m.mlp_w1 = track("mlp.w1", ad::make_param(param_rng(spec.seed, "mlp.w1").uniform_tensor({hid, mlp_in}, -r1, r1)));
    m.mlp_b1 = track("mlp.b1", ad::make_param(Tensor::zeros({hid})));
    m.mlp_w2 = track("mlp.w2",
                     ad::make_param(param_rng(spec.seed, "mlp.w2").uniform_tensor({answers.size(), hid}, -r2, r2)));
    m.mlp_b2 = track("mlp.b2", ad::make_param(Tensor::zeros({answers.size()})));

    if (arch_has_type_head(spec.arch)) {
        const double rt = 1.0 / std::sqrt(static_cast<double>(spec.dims.lstm_hidden));
        m.type_w = track("type_head.w", ad::make_param(param_rng(spec.seed, "type_head.w")
                                                           .uniform_tensor({types.size(), spec.dims.lstm_hidden},
                                                                           -rt, rt)));
        m.type_b = track("type_head.b", ad::make_param(Tensor::zeros({types.size()})));
    }
    return m;
}

struct SampleInput {
    std::vector<std::size_t> tokens;
    std::map<std::string, Tensor> feats;  // per-source vectors
    std::size_t q_type = 0;               // ground-truth type index
    std::size_t answer = 0;               // target answer index
};

struct ForwardOut {
    ad::Var answer_logits;
    ad::Var type_logits;        // null unless the model has a type head
    std::size_t gate_type = 0;  // type index actually used for gating
};

/// Lowest index wins ties, so inference is deterministic.
inline std::size_t argmax_index(const Tensor& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.numel(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

/// use_predicted_type only applies to the multi-task model: at inference the
/// gate consumes the argmax of the type head; at training it consumes the
/// ground truth (no gradient flows through the selection either way).
inline ForwardOut forward(const Model& m, const SampleInput& in, bool use_predicted_type) {
    const ModelSpec& spec = m.spec;
    ForwardOut out;

    TextFeature text{};
    ad::Var lstm_h;
    if (arch_uses_lstm(spec.arch)) {
        TextFeature lf = lstm_forward(in.tokens, m.lstm_embed, m.lstm);
        lstm_h = lf.value;
        text = lf;
        if (spec.variant != TextVariant::plain)
            text = concat_text(lf, embed_sum(in.tokens, m.pretrained_embed));
    } else {
        text = embed_sum(in.tokens, m.pretrained_embed);
    }

    if (arch_has_type_head(spec.arch))
        out.type_logits = ad::add(ad::matmul(m.type_w, lstm_h), m.type_b);

    out.gate_type = in.q_type;
    if (use_predicted_type && out.type_logits) out.gate_type = argmax_index(out.type_logits->value);
    if (out.gate_type >= m.types.size()) throw std::out_of_range("forward: type index out of range");

    std::vector<ad::Var> source_vars;
    for (const auto& src : m.sources) {
        const auto it = in.feats.find(src);
        if (it == in.feats.end()) throw std::invalid_argument("forward: sample lacks feature source " + src);
        if (it->second.numel() != m.source_dims.at(src))
            throw std::invalid_argument("forward: feature dim mismatch for " + src);
        source_vars.push_back(ad::constant(it->second));
    }

    ad::Var visual;
    if (spec.arch == Architecture::MCB_QTA) {
        // desk-scale vectors are C x 1 x 1 spatial maps
        std::vector<ad::Var> maps;
        for (auto& v : source_vars) maps.push_back(ad::make_op(Tensor({v->value.numel(), 1, 1}, v->value.raw()),
                                                               {v}, [](ad::Node& self) {
                                                                   self.parents[0]->accumulate(
                                                                       Tensor(self.parents[0]->value.shape(),
                                                                              self.grad.raw()));
                                                               }));
        ad::Var fused = mcb_qta_fuse(maps[0], maps[1], text.value, out.gate_type, m.qta, m.sk_img, m.sk_txt);
        visual = ad::make_op(Tensor({fused->value.numel()}, fused->value.raw()), {fused}, [](ad::Node& self) {
            self.parents[0]->accumulate(Tensor(self.parents[0]->value.shape(), self.grad.raw()));
        });
    } else {
        ConcatVisual cv = concat_visual(source_vars);
        visual = cv.feature;
        if (arch_has_qta(spec.arch)) visual = qta_gate(visual, out.gate_type, m.qta);
        if (arch_has_qt(spec.arch)) visual = qt_concat(visual, out.gate_type, m.type_emb);
    }

    ad::Var x = ad::concat({visual, text.value});
    ad::Var h = ad::relu(ad::add(ad::matmul(m.mlp_w1, x), m.mlp_b1));
    out.answer_logits = ad::add(ad::matmul(m.mlp_w2, h), m.mlp_b2);
    return out;
}

/// (1 - lambda) * answer CE + lambda * type CE; lambda is only consulted
/// when a type head exists.
inline ad::Var model_loss(const ForwardOut& out, std::size_t answer_target, std::size_t type_target, double lambda) {
    ad::Var ans = ad::cross_entropy_logits(out.answer_logits, answer_target);
    if (!out.type_logits || lambda == 0.0) return ans;
    ad::Var type = ad::cross_entropy_logits(out.type_logits, type_target);
    return ad::add(ad::scale(ans, 1.0 - lambda), ad::scale(type, lambda));
}

inline std::size_t predict_type(const Model& m, const SampleInput& in) {
    if (!arch_has_type_head(m.spec.arch)) throw std::invalid_argument("predict_type: model has no type head");
    ForwardOut out = forward(m, in, true);
    return argmax_index(out.type_logits->value);
}

// ---- training ----

enum class Optimizer { sgd, adam };

struct TrainConfig {
    Optimizer optimizer = Optimizer::adam;
    double lr = 1e-3;
    std::size_t epochs = 10;
    std::size_t batch = 32;
    double lambda = 0.2;  // multi-task mixing weight, CATL-QTA-M only
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"optimizer", optimizer == Optimizer::adam ? "adam" : "sgd"}, {"lr", lr},       {"epochs", epochs},
                {"batch", batch},                                            {"lambda", lambda}, {"seed", seed}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        const std::string opt = j.value("optimizer", "adam");
        if (opt == "adam")
            c.optimizer = Optimizer::adam;
        else if (opt == "sgd")
            c.optimizer = Optimizer::sgd;
        else
            throw std::invalid_argument("unknown optimizer: " + opt);
        c.lr = j.value("lr", 1e-3);
        c.epochs = j.value("epochs", std::size_t(10));
        c.batch = j.value("batch", std::size_t(32));
        c.lambda = j.value("lambda", 0.2);
        c.seed = j.value("seed", std::uint64_t(0));
        return c;
    }
};

inline SampleInput sample_input(const Model& m, const Dataset& ds, const Sample& s) {
    SampleInput in;
    in.tokens = tokenize(s.question, m.vocab);
    for (const auto& src : m.sources) in.feats[src] = ds.feature_row(src, s);
    in.q_type = m.types.index_of(s.question_type);
    bool found = false;
    for (std::size_t i = 0; i < m.answers.size(); ++i)
        if (m.answers[i] == s.answer) {
            in.answer = i;
            found = true;
            break;
        }
    if (!found) throw std::out_of_range("sample answer not in model answer vocabulary: " + s.answer);
    return in;
}

struct AdamState {
    std::vector<Tensor> m, v;
    std::size_t t = 0;
};

inline void optimizer_step(const Model& model, const TrainConfig& cfg, AdamState& state) {
    const auto& params = model.params;
    if (cfg.optimizer == Optimizer::sgd) {
        for (const auto& [name, p] : params) {
            if (p->grad.numel() == 0) continue;
            for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] -= cfg.lr * p->grad[i];
        }
        return;
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (state.m.empty()) {
        for (const auto& [name, p] : params) {
            state.m.push_back(Tensor::zeros(p->value.shape()));
            state.v.push_back(Tensor::zeros(p->value.shape()));
        }
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        ad::Var p = params[pi].second;
        if (p->grad.numel() == 0) continue;
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double g = p->grad[i];
            state.m[pi][i] = b1 * state.m[pi][i] + (1.0 - b1) * g;
            state.v[pi][i] = b2 * state.v[pi][i] + (1.0 - b2) * g * g;
            p->value[i] -= cfg.lr * (state.m[pi][i] / c1) / (std::sqrt(state.v[pi][i] / c2) + eps);
        }
    }
}

/// One deterministic training run; returns mean per-sample loss per epoch.
/// Aborts with a diagnostic on non-finite loss.
inline std::vector<double> train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
    if (ds.samples.empty()) throw std::invalid_argument("train: empty dataset");
    std::vector<SampleInput> inputs;
    inputs.reserve(ds.samples.size());
    for (const auto& s : ds.samples) inputs.push_back(sample_input(model, ds, s));

    AdamState state;
    std::vector<double> curve;
    const Rng shuffle_base(cfg.seed, Rng::stream_id("shuffle"));
    std::vector<std::size_t> order(inputs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng r = shuffle_base.split(epoch);
        r.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            for (const auto& [name, p] : model.params) p->zero_grad();
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const SampleInput& in = inputs[order[k]];
                ForwardOut out = forward(model, in, false);
                ad::Var loss = model_loss(out, in.answer, in.q_type, cfg.lambda);
                ad::Var scaled = ad::scale(loss, 1.0 / static_cast<double>(end - start));
                ad::backward(scaled);
                batch_loss += loss->value[0];
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
            optimizer_step(model, cfg, state);
            epoch_loss += batch_loss;
        }
        curve.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    for (const auto& [name, p] : model.params) p->zero_grad();
    return curve;
}

struct Predictions {
    std::vector<std::size_t> answer_pred, answer_target;
    std::vector<std::size_t> type_pred, type_target;  // type_pred empty unless type head
};

inline Predictions predict_dataset(const Model& model, const Dataset& ds) {
    Predictions out;
    const bool multi = arch_has_type_head(model.spec.arch);
    for (const auto& s : ds.samples) {
        SampleInput in = sample_input(model, ds, s);
        ForwardOut f = forward(model, in, multi);
        out.answer_pred.push_back(argmax_index(f.answer_logits->value));
        out.answer_target.push_back(in.answer);
        out.type_target.push_back(in.q_type);
        if (multi) out.type_pred.push_back(argmax_index(f.type_logits->value));
    }
    return out;
}

// ---- checkpoint: magic "QTAC", version, length-prefixed JSON, blobs ----

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t vocab_hash(const Vocab& v) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < v.size(); ++i) {
        for (char c : v.token(i)) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ull;
        h = (h ^ i) * 0x100000001b3ull;
    }
    return h;
}

inline void save_model(const Model& m, const std::filesystem::path& path) {
    nlohmann::json meta;
    meta["spec"] = m.spec.to_json();
    meta["types"] = m.types.names;
    meta["answers"] = m.answers;
    meta["sources"] = m.sources;
    meta["source_dims"] = m.source_dims;
    meta["vocab"] = m.vocab.to_json();
    meta["vocab_hash"] = vocab_hash(m.vocab);
    meta["seed"] = m.spec.seed;
    const std::string meta_str = meta.dump();

    std::string out;
    out += "QTAC";
    append_u32(out, kCheckpointVersion);
    append_u32(out, static_cast<std::uint32_t>(meta_str.size()));
    out += meta_str;

    // frozen tables are serialized too; a checkpoint is self-contained
    std::vector<std::pair<std::string, ad::Var>> blobs = m.params;
    if (m.pretrained_embed.table) blobs.emplace_back("pretrained_embed", m.pretrained_embed.table);

    append_u32(out, static_cast<std::uint32_t>(blobs.size()));
    for (const auto& [name, p] : blobs) {
        append_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        append_u32(out, static_cast<std::uint32_t>(p->value.ndim()));
        for (std::size_t d = 0; d < p->value.ndim(); ++d)
            append_u32(out, static_cast<std::uint32_t>(p->value.extent(d)));
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const float f = static_cast<float>(p->value[i]);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            append_u32(out, bits);
        }
    }
    atomic_write(path, out);
}

inline Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || buf.compare(0, 4, "QTAC") != 0)
        throw std::runtime_error("bad checkpoint magic: " + path.string());
    std::size_t off = 4;
    if (read_u32(buf, off) != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
    const std::uint32_t meta_len = read_u32(buf, off);
    if (off + meta_len > buf.size()) throw std::runtime_error("truncated checkpoint metadata");
    nlohmann::json meta = nlohmann::json::parse(buf.substr(off, meta_len));
    off += meta_len;

    ModelSpec spec = ModelSpec::from_json(meta.at("spec"));
    Vocab vocab = Vocab::from_json(meta.at("vocab"));
    QuestionTypeSet types{meta.at("types").get<std::vector<std::string>>()};
    std::map<std::string, std::size_t> source_dims = meta.at("source_dims").get<std::map<std::string, std::size_t>>();
    Model m = build_model(spec, vocab, types, meta.at("answers").get<std::vector<std::string>>(), source_dims);

    std::map<std::string, ad::Var> by_name;
    for (const auto& [name, p] : m.params) by_name[name] = p;
    if (m.pretrained_embed.table) by_name["pretrained_embed"] = m.pretrained_embed.table;

    const std::uint32_t n_blobs = read_u32(buf, off);
    for (std::uint32_t bi = 0; bi < n_blobs; ++bi) {
        const std::uint32_t name_len = read_u32(buf, off);
        if (off + name_len > buf.size()) throw std::runtime_error("truncated checkpoint blob name");
        const std::string name = buf.substr(off, name_len);
        off += name_len;
        const std::uint32_t ndim = read_u32(buf, off);
        Shape shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(read_u32(buf, off));
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint blob for unknown parameter: " + name);
        if (it->second->value.shape() != shape)
            throw std::runtime_error("checkpoint blob shape mismatch for " + name);
        for (std::size_t i = 0; i < it->second->value.numel(); ++i) {
            const std::uint32_t bits = read_u32(buf, off);
            float f;
            std::memcpy(&f, &bits, 4);
            it->second->value[i] = static_cast<double>(f);
        }
    }
    return m;
}

}  // namespace qta
