#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "data.hpp"
#include "metrics.hpp"
#include "models.hpp"

#include "json.hpp"

namespace qta::runner {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitCheckFailed = 3;

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("malformed JSON in " + path.string());
    return j;
}

inline std::string format_curve_csv(const std::vector<double>& curve) {
    std::string out = "epoch,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, curve[i]);
        out += buf;
    }
    return out;
}

/// gen-data: synthesize routing datasets from the "synthetic" section of a
/// run config, writing train/test splits plus the fully-resolved config.
inline int cmd_gen_data(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                        const std::uint64_t* seed_override = nullptr) {
    try {
        nlohmann::json cfg_json = load_json_file(config_path);
        SyntheticConfig cfg = synthetic_from_json(cfg_json.value("synthetic", nlohmann::json::object()));
        if (seed_override) cfg.seed = *seed_override;

        GeneratedData gen = cfg.absurd_rho > 0.0 ? gen_absurd_bias(cfg) : gen_routing(cfg);
        std::filesystem::create_directories(out_dir);
        save_dataset(gen.train, out_dir, "train");
        save_dataset(gen.test, out_dir, "test");

        nlohmann::json resolved = cfg_json;
        resolved["synthetic"] = synthetic_to_json(cfg);
        atomic_write(out_dir / "resolved_config.json", resolved.dump(2) + "\n");
        return kExitOk;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "gen-data: %s\n", e.what());
        return kExitData;
    }
}

inline Model build_model_for_dataset(const ModelSpec& spec, const Dataset& train) {
    Vocab vocab;
    for (const auto& s : train.samples) tokenize_grow(s.question, vocab);
    std::map<std::string, std::size_t> dims;
    for (const auto& [src, mat] : train.features) dims[src] = mat.extent(1);
    return build_model(spec, vocab, train.types, train.answers, dims);
}

/// train: fit the configured model on <data>/train, writing checkpoint,
/// loss curve CSV, and the resolved config.
inline int cmd_train(const std::filesystem::path& config_path, const std::filesystem::path& data_dir,
                     const std::filesystem::path& out_dir) {
    nlohmann::json cfg_json;
    ModelSpec spec;
    TrainConfig tc;
    try {
        cfg_json = load_json_file(config_path);
        spec = ModelSpec::from_json(cfg_json.value("model", nlohmann::json::object()));
        tc = TrainConfig::from_json(cfg_json.value("train", nlohmann::json::object()));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "train: %s\n", e.what());
        return kExitUsage;
    }
    try {
        Dataset train_ds = load_dataset(data_dir, "train");
        Model model = build_model_for_dataset(spec, train_ds);
        std::vector<double> curve = train(model, train_ds, tc);

        std::filesystem::create_directories(out_dir);
        save_model(model, out_dir / "checkpoint.qtac");
        atomic_write(out_dir / "loss_curve.csv", format_curve_csv(curve));
        nlohmann::json resolved = cfg_json;
        resolved["model"] = spec.to_json();
        resolved["train"] = tc.to_json();
        atomic_write(out_dir / "resolved_config.json", resolved.dump(2) + "\n");
        return kExitOk;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "train: %s\n", e.what());
        return kExitData;
    }
}

inline Predictions predict_parallel(const Model& model, const Dataset& ds, std::size_t threads) {
    if (threads <= 1) return predict_dataset(model, ds);
    const std::size_t n = ds.samples.size();
    Predictions out;
    out.answer_pred.resize(n);
    out.answer_target.resize(n);
    out.type_target.resize(n);
    const bool multi = arch_has_type_head(model.spec.arch);
    if (multi) out.type_pred.resize(n);
    std::vector<std::thread> pool;
    std::vector<std::string> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) {
                    SampleInput in = sample_input(model, ds, ds.samples[i]);
                    ForwardOut f = forward(model, in, multi);
                    out.answer_pred[i] = argmax_index(f.answer_logits->value);
                    out.answer_target[i] = in.answer;
                    out.type_target[i] = in.q_type;
                    if (multi) out.type_pred[i] = argmax_index(f.type_logits->value);
                }
            } catch (const std::exception& e) {
                errors[t] = e.what();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error(e);
    return out;
}

/// eval: run a checkpoint over <data>/<split>; writes the EvalReport JSON
/// at --report and the confusion matrix next to it. Type-head models get a
/// question-type confusion, others an answer confusion.
inline int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                    const std::filesystem::path& report_path, const std::string& split = "test",
                    std::size_t threads = 1) {
    try {
        Model model = load_model(checkpoint);
        Dataset ds = load_dataset(data_dir, split);
        Predictions preds = predict_parallel(model, ds, threads);

        std::vector<std::size_t> type_idx = preds.type_target;
        EvalReport report = evaluate(preds.answer_pred, preds.answer_target, type_idx, model.types);

        nlohmann::json rj = report.to_json();
        if (!preds.type_pred.empty()) {
            EvalReport type_report = evaluate(preds.type_pred, preds.type_target, type_idx, model.types);
            rj["type_overall_acc"] = type_report.overall_acc;
            rj["type_per_type_acc"] = type_report.per_type_acc;
        }
        if (report_path.has_parent_path()) std::filesystem::create_directories(report_path.parent_path());
        atomic_write(report_path, rj.dump(2) + "\n");

        std::filesystem::path conf_path = report_path;
        conf_path.replace_extension();
        conf_path += "_confusion.json";
        if (!preds.type_pred.empty()) {
            ConfusionMatrix cm = confusion(preds.type_pred, preds.type_target, model.types.size());
            atomic_write(conf_path, cm.to_json(model.types).dump(2) + "\n");
        } else {
            ConfusionMatrix cm = confusion(preds.answer_pred, preds.answer_target, model.answers.size());
            QuestionTypeSet ans{model.answers};
            atomic_write(conf_path, cm.to_json(ans).dump(2) + "\n");
        }
        return kExitOk;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "eval: %s\n", e.what());
        return kExitData;
    }
}

/// norms: the gated-vs-raw feature norm diagnostic as CSV.
inline int cmd_norms(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                     const std::filesystem::path& out_csv, const std::string& split = "test") {
    try {
        Model model = load_model(checkpoint);
        if (!arch_has_qta(model.spec.arch)) {
            std::fprintf(stderr, "norms: %s has no gating weights\n", arch_name(model.spec.arch));
            return kExitData;
        }
        Dataset ds = load_dataset(data_dir, split);
        std::vector<Tensor> feats;
        std::vector<std::size_t> type_idx;
        for (const auto& s : ds.samples) {
            Tensor cat({model.visual_dim()});
            std::size_t off = 0;
            for (const auto& src : model.sources) {
                Tensor row = ds.feature_row(src, s);
                for (std::size_t j = 0; j < row.numel(); ++j) cat[off + j] = row[j];
                off += row.numel();
            }
            feats.push_back(std::move(cat));
            type_idx.push_back(model.types.index_of(s.question_type));
        }
        NormReport nr = norm_report(model.qta.w->value, model.blocks, model.block_names, feats, type_idx, model.types);
        if (out_csv.has_parent_path()) std::filesystem::create_directories(out_csv.parent_path());
        atomic_write(out_csv, nr.to_csv());
        return kExitOk;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "norms: %s\n", e.what());
        return kExitData;
    }
}

// ---- verification suites (cmd_check) ----

struct CheckResult {
    bool ok = true;
    double max_err = 0.0;

    void fold(bool pass, double err) {
        ok = ok && pass;
        max_err = std::max(max_err, err);
    }
};

inline CheckResult check_fft(std::size_t trials) {
    CheckResult r;
    Rng rng(1234, Rng::stream_id("check-fft"));
    for (std::size_t len = 1; len <= 64; ++len) {
        ComplexVector x(len);
        for (auto& v : x) v = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
        ComplexVector rt = ifft1(fft1(x));
        double err = 0;
        for (std::size_t i = 0; i < len; ++i) err = std::max(err, std::abs(rt[i] - x[i]));
        r.fold(err < 1e-9, err);
    }
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t n = 1 + rng.uniform_int(64);
        ComplexVector x(n), y(n), z(n);
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
            y[i] = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
            z[i] = a * x[i] + b * y[i];
        }
        ComplexVector lhs = fft1(z), fx = fft1(x), fy = fft1(y);
        double err = 0;
        for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(lhs[i] - (a * fx[i] + b * fy[i])));
        r.fold(err < 1e-9, err);
    }
    return r;
}

inline CheckResult check_mcb_oracle(std::size_t trials) {
    CheckResult r;
    Rng rng(99, Rng::stream_id("check-mcb"));
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t n1 = 1 + rng.uniform_int(16);
        const std::size_t n2 = 1 + rng.uniform_int(16);
        const std::size_t b = 1 + rng.uniform_int(16);
        SketchParams pa = make_sketch_params(n1, b, 2 * t);
        SketchParams pv = make_sketch_params(n2, b, 2 * t + 1);
        const std::size_t H = 1 + rng.uniform_int(2), W = 1 + rng.uniform_int(2);
        Tensor img = rng.uniform_tensor({n1, H, W}, -1, 1);
        Tensor txt = rng.uniform_tensor({n2}, -1, 1);
        Tensor fused = mcb_fuse(img, txt, pa, pv);
        double err = 0;
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
                Tensor chan({n1});
                for (std::size_t c = 0; c < n1; ++c) chan[c] = img[(c * H + h) * W + w];
                Tensor direct = outer_sketch_direct(chan, txt, pa, pv);
                for (std::size_t k = 0; k < b; ++k)
                    err = std::max(err, std::abs(fused[(k * H + h) * W + w] - direct[k]));
            }
        r.fold(err < 1e-9, err);
    }
    return r;
}

inline CheckResult check_sketch(std::size_t draws) {
    CheckResult r;
    Rng rng(7, Rng::stream_id("check-sketch"));
    const std::size_t n = 64, b = 32;
    Tensor a = rng.uniform_tensor({n}, -1, 1);
    Tensor v = rng.uniform_tensor({n}, -1, 1);
    const double truth = dot(a, v);
    double sum = 0, sumsq = 0;
    for (std::size_t d = 0; d < draws; ++d) {
        SketchParams p = make_sketch_params(n, b, 5000 + d);
        const double est = dot(count_sketch(a, p), count_sketch(v, p));
        sum += est;
        sumsq += est * est;
    }
    const double mean = sum / static_cast<double>(draws);
    const double se = std::sqrt((sumsq / static_cast<double>(draws) - mean * mean) / static_cast<double>(draws));
    const double dev = std::abs(mean - truth);
    r.fold(dev <= 3.0 * se, dev / std::max(se, 1e-300));

    // linearity, exact up to rounding
    SketchParams p = make_sketch_params(n, b, 11);
    Tensor lhs = count_sketch(add(scale(a, 1.5), scale(v, -2.0)), p);
    Tensor rhs = add(scale(count_sketch(a, p), 1.5), scale(count_sketch(v, p), -2.0));
    double lerr = 0;
    for (std::size_t i = 0; i < b; ++i) lerr = std::max(lerr, std::abs(lhs[i] - rhs[i]));
    r.fold(lerr < 1e-12, lerr);
    return r;
}

inline CheckResult check_grad(double eps) {
    CheckResult r;
    Rng rng(3, Rng::stream_id("check-grad"));
    const double tol = 1e-4;

    {  // MLP head
        ad::Var w1 = ad::make_param(rng.uniform_tensor({6, 5}, -0.5, 0.5));
        ad::Var b1 = ad::make_param(rng.uniform_tensor({6}, -0.1, 0.1));
        ad::Var w2 = ad::make_param(rng.uniform_tensor({3, 6}, -0.5, 0.5));
        ad::Var b2 = ad::make_param(rng.uniform_tensor({3}, -0.1, 0.1));
        Tensor x = rng.uniform_tensor({5}, -1, 1);
        auto fn = [&] {
            ad::Var h = ad::relu(ad::add(ad::matmul(w1, ad::constant(x)), b1));
            return ad::cross_entropy_logits(ad::add(ad::matmul(w2, h), b2), 1);
        };
        const double e = ad::grad_check(fn, {w1, b1, w2, b2}, eps);
        r.fold(e < tol, e);
    }
    {  // 2-layer LSTM, len 3, H = 4
        Vocab vocab;
        vocab.add("a");
        vocab.add("b");
        vocab.add("c");
        EmbeddingTable table = make_embedding_table(vocab.size(), 3, true, rng.split(1));
        LstmParams lstm = make_lstm(3, 4, 2, rng.split(2));
        std::vector<std::size_t> tokens{2, 3, 4};
        std::vector<ad::Var> params = lstm_param_list(lstm);
        params.push_back(table.table);
        Tensor probe = rng.uniform_tensor({4}, -1, 1);
        auto fn = [&] { return ad::sum(ad::mul(lstm_forward(tokens, table, lstm).value, ad::constant(probe))); };
        const double e = ad::grad_check(fn, params, eps);
        r.fold(e < tol, e);
    }
    {  // qta_gate and qt_concat
        QtaWeights w = make_qta_weights(5, 3);
        w.w->value = rng.uniform_tensor({5, 3}, -1, 1);
        ad::Var f = ad::make_param(rng.uniform_tensor({5}, -1, 1));
        Tensor probe = rng.uniform_tensor({5}, -1, 1);
        auto fn = [&] { return ad::sum(ad::mul(qta_gate(f, 1, w), ad::constant(probe))); };
        const double e = ad::grad_check(fn, {f, w.w}, eps);
        r.fold(e < tol, e);

        TypeEmbedding emb = make_type_embedding(3, 4, rng.split(3));
        Tensor probe2 = rng.uniform_tensor({9}, -1, 1);
        auto fn2 = [&] { return ad::sum(ad::mul(qt_concat(f, 2, emb), ad::constant(probe2))); };
        const double e2 = ad::grad_check(fn2, {f, emb.rows}, eps);
        r.fold(e2 < tol, e2);
    }
    {  // full MCB-QTA toy model end to end
        Vocab vocab;
        vocab.add("what");
        vocab.add("color");
        ModelSpec spec;
        spec.arch = Architecture::MCB_QTA;
        spec.dims = {4, 4, 4, 6, 8, 4};  // H=4, d=4, b=8
        spec.seed = 1;
        QuestionTypeSet types{{"color", "absurd"}};
        Model model = build_model(spec, vocab, types, {"a0", "a1", "a2"}, {{"srcA", 3}, {"srcB", 3}});
        SampleInput in;
        in.tokens = {2, 3};
        in.feats["srcA"] = rng.uniform_tensor({3}, -1, 1);
        in.feats["srcB"] = rng.uniform_tensor({3}, -1, 1);
        in.q_type = 1;
        in.answer = 2;
        auto fn = [&] { return model_loss(forward(model, in, false), in.answer, in.q_type, 0.0); };
        const double e = ad::grad_check(fn, model.param_list(), eps);
        r.fold(e < tol, e);
    }
    {  // full CATL-QTA-M toy model with mixed loss
        Vocab vocab;
        vocab.add("what");
        vocab.add("count");
        ModelSpec spec;
        spec.arch = Architecture::CATL_QTA_M;
        spec.dims = {4, 4, 4, 6, 8, 4};
        spec.seed = 2;
        QuestionTypeSet types{{"color", "count"}};
        Model model = build_model(spec, vocab, types, {"a0", "a1", "a2"}, {{"srcA", 3}, {"srcB", 3}});
        SampleInput in;
        in.tokens = {2, 3};
        in.feats["srcA"] = rng.uniform_tensor({3}, -1, 1);
        in.feats["srcB"] = rng.uniform_tensor({3}, -1, 1);
        in.q_type = 1;
        in.answer = 0;
        auto fn = [&] { return model_loss(forward(model, in, false), in.answer, in.q_type, 0.2); };
        const double e = ad::grad_check(fn, model.param_list(), eps);
        r.fold(e < tol, e);
    }
    return r;
}

/// check: run one verification suite, print measured errors, exit 3 on
/// failure.
inline int cmd_check(const std::string& suite, std::size_t trials, double eps) {
    CheckResult r;
    try {
        if (suite == "fft")
            r = check_fft(trials);
        else if (suite == "sketch")
            r = check_sketch(trials);
        else if (suite == "grad")
            r = check_grad(eps);
        else if (suite == "mcb-oracle")
            r = check_mcb_oracle(trials);
        else {
            std::fprintf(stderr, "check: unknown suite %s\n", suite.c_str());
            return kExitUsage;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "check: %s\n", e.what());
        return kExitCheckFailed;
    }
    std::printf("%s: %s (max error %.3g)\n", suite.c_str(), r.ok ? "PASS" : "FAIL", r.max_err);
    return r.ok ? kExitOk : kExitCheckFailed;
}

}  // namespace qta::runner
