#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <unordered_map>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"

#include "json.hpp"

namespace qta {

/// Token/id bijection with reserved ids 0=PAD, 1=UNK. Ids are assigned in
/// first-occurrence order so a rebuilt vocab over the same corpus is stable.
class Vocab {
public:
    static constexpr std::size_t PAD = 0;
    static constexpr std::size_t UNK = 1;

    Vocab() : tokens_{"<pad>", "<unk>"} {}

    std::size_t add(const std::string& token) {
        auto it = map_.find(token);
        if (it != map_.end()) return it->second;
        const std::size_t id = tokens_.size();
        map_.emplace(token, id);
        tokens_.push_back(token);
        return id;
    }

    std::size_t id(const std::string& token) const {
        auto it = map_.find(token);
        return it == map_.end() ? UNK : it->second;
    }

    const std::string& token(std::size_t id) const { return tokens_.at(id); }
    std::size_t size() const { return tokens_.size(); }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [tok, id] : map_) j[tok] = id;
        return j;
    }

    static Vocab from_json(const nlohmann::json& j) {
        Vocab v;
        std::vector<std::pair<std::string, std::size_t>> entries;
        for (auto it = j.begin(); it != j.end(); ++it) entries.emplace_back(it.key(), it.value().get<std::size_t>());
        std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
        for (const auto& [tok, id] : entries) {
            if (v.add(tok) != id) throw std::runtime_error("Vocab::from_json: non-contiguous ids");
        }
        return v;
    }

private:
    std::unordered_map<std::string, std::size_t> map_;
    std::vector<std::string> tokens_;
};

/// Lowercase, split on whitespace, strip trailing punctuation.
inline std::vector<std::string> tokenize_words(const std::string& question) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        while (!cur.empty() && std::ispunct(static_cast<unsigned char>(cur.back()))) cur.pop_back();
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
    };
    for (char ch : question) {
        if (std::isspace(static_cast<unsigned char>(ch)))
            flush();
        else
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    flush();
    if (out.empty()) throw std::invalid_argument("tokenize: empty question");
    return out;
}

inline std::vector<std::size_t> tokenize(const std::string& question, const Vocab& vocab) {
    std::vector<std::size_t> ids;
    for (const auto& w : tokenize_words(question)) ids.push_back(vocab.id(w));
    return ids;
}

inline std::vector<std::size_t> tokenize_grow(const std::string& question, Vocab& vocab) {
    std::vector<std::size_t> ids;
    for (const auto& w : tokenize_words(question)) ids.push_back(vocab.add(w));
    return ids;
}

/// V x d embedding matrix. Frozen tables stand in for pretrained features:
/// they never require grad, so no gradient ever reaches them.
struct EmbeddingTable {
    ad::Var table;  // [V x d]
    std::size_t dim = 0;
    bool trainable = false;
};

inline EmbeddingTable make_embedding_table(std::size_t vocab_size, std::size_t d, bool trainable, Rng rng) {
    Tensor m = rng.uniform_tensor({vocab_size, d}, -0.5, 0.5);
    for (std::size_t j = 0; j < d; ++j) m[Vocab::PAD * d + j] = 0.0;  // PAD row contributes zeros
    EmbeddingTable t;
    t.table = trainable ? ad::make_param(std::move(m)) : ad::constant(std::move(m));
    t.dim = d;
    t.trainable = trainable;
    return t;
}

enum class TextProvenance { lstm, pretrained_sum, concat };

struct TextFeature {
    ad::Var value;
    TextProvenance tag = TextProvenance::pretrained_sum;
};

/// Sum of embedding rows over the token sequence; PAD ids are skipped.
inline TextFeature embed_sum(const std::vector<std::size_t>& tokens, const EmbeddingTable& table) {
    if (tokens.empty()) throw std::invalid_argument("embed_sum: empty token sequence");
    ad::Var acc;
    for (std::size_t id : tokens) {
        if (id == Vocab::PAD) continue;
        if (id >= table.table->value.extent(0)) throw std::out_of_range("embed_sum: token id out of range");
        ad::Var r = ad::row(table.table, id);
        acc = acc ? ad::add(acc, r) : r;
    }
    if (!acc) acc = ad::constant(Tensor::zeros({table.dim}));
    return {acc, TextProvenance::pretrained_sum};
}

/// One LSTM layer: gate order i, f, g, o stacked along the first axis.
struct LstmLayer {
    ad::Var wx;  // [4H x in]
    ad::Var wh;  // [4H x H]
    ad::Var b;   // [4H]
};

struct LstmParams {
    std::size_t hidden = 0;
    std::vector<LstmLayer> layers;  // two layers throughout this repo
};

inline LstmParams make_lstm(std::size_t input_dim, std::size_t hidden, std::size_t n_layers, Rng rng) {
    LstmParams p;
    p.hidden = hidden;
    const double r = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::size_t in = input_dim;
    for (std::size_t l = 0; l < n_layers; ++l) {
        LstmLayer layer;
        layer.wx = ad::make_param(rng.uniform_tensor({4 * hidden, in}, -r, r));
        layer.wh = ad::make_param(rng.uniform_tensor({4 * hidden, hidden}, -r, r));
        Tensor b = rng.uniform_tensor({4 * hidden}, -r, r);
        for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] += 1.0;  // forget gate bias
        layer.b = ad::make_param(std::move(b));
        p.layers.push_back(std::move(layer));
        in = hidden;
    }
    return p;
}

inline std::vector<ad::Var> lstm_param_list(const LstmParams& p) {
    std::vector<ad::Var> out;
    for (const auto& l : p.layers) {
        out.push_back(l.wx);
        out.push_back(l.wh);
        out.push_back(l.b);
    }
    return out;
}

/// Standard cell: i,f,o sigmoid gates, g tanh candidate,
/// c = f*c' + i*g, h = o*tanh(c). Returns the sequence of hidden states.
inline std::vector<ad::Var> lstm_layer_forward(const LstmLayer& layer, const std::vector<ad::Var>& inputs,
                                               std::size_t H) {
    std::vector<ad::Var> hs;
    ad::Var h = ad::constant(Tensor::zeros({H}));
    ad::Var c = ad::constant(Tensor::zeros({H}));
    for (const auto& x : inputs) {
        ad::Var z = ad::add(ad::add(ad::matmul(layer.wx, x), ad::matmul(layer.wh, h)), layer.b);
        ad::Var i = ad::sigmoid(ad::slice(z, 0, H));
        ad::Var f = ad::sigmoid(ad::slice(z, H, H));
        ad::Var g = ad::vtanh(ad::slice(z, 2 * H, H));
        ad::Var o = ad::sigmoid(ad::slice(z, 3 * H, H));
        c = ad::add(ad::mul(f, c), ad::mul(i, g));
        h = ad::mul(o, ad::vtanh(c));
        hs.push_back(h);
    }
    return hs;
}

/// Last hidden state of the top layer, the learned question feature.
inline TextFeature lstm_forward(const std::vector<std::size_t>& tokens, const EmbeddingTable& table,
                                const LstmParams& params) {
    if (tokens.empty()) throw std::invalid_argument("lstm_forward: empty token sequence");
    for (std::size_t id : tokens)
        if (id == Vocab::PAD) throw std::invalid_argument("lstm_forward: PAD inside sequence");
    std::vector<ad::Var> seq;
    for (std::size_t id : tokens) seq.push_back(ad::row(table.table, id));
    for (const auto& layer : params.layers) seq = lstm_layer_forward(layer, seq, params.hidden);
    TextFeature out;
    out.value = seq.back();
    out.tag = TextProvenance::lstm;
    return out;
}

/// [lstm, pretrained] in that order; an absent pretrained channel passes
/// the lstm feature through unchanged.
inline TextFeature concat_text(const TextFeature& lstm_out, const TextFeature& pretrained) {
    if (!pretrained.value || pretrained.value->value.numel() == 0) return lstm_out;
    if (!lstm_out.value || lstm_out.value->value.numel() == 0) return pretrained;
    return {ad::concat({lstm_out.value, pretrained.value}), TextProvenance::concat};
}

}  // namespace qta
