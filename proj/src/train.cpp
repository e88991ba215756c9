#include "cpmt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "cpmt/errors.hpp"
#include "cpmt/ops.hpp"

namespace cpmt {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor focal_loss(const Tensor& logits, std::size_t label, double gamma) {
    if (!(gamma >= 0.0)) throw ParameterError("focal loss gamma must be >= 0");
    if (logits.rank() != 1) throw DimensionError("focal_loss expects [C] logits, got " + shape_str(logits.shape()));
    const std::size_t C = logits.numel();
    if (label >= C) throw DataError("label " + std::to_string(label) + " out of range for " + std::to_string(C) + " classes");
    const auto z = logits.data();
    const double mx = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - mx);
    std::vector<double> p(C);
    for (std::size_t j = 0; j < C; ++j) p[j] = std::exp(z[j] - mx) / denom;
    double q = 0.0;
    for (std::size_t j = 0; j < C; ++j)
        if (j != label) q += p[j];
    const double log_floor = std::log(1e-12);
    const double raw_logp = z[label] - mx - std::log(denom);
    const bool clamped = raw_logp < log_floor;
    const double logp = clamped ? log_floor : raw_logp;
    const double qg = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    const double loss = -qg * logp;
    const double pt = p[label];
    return Tensor::from_op({1}, {loss}, {logits},
                           [p, q, qg, logp, pt, gamma, label, clamped, C](std::span<const double> g,
                                                                         std::span<double* const> pg) {
                               if (!pg[0]) return;
                               // d/dz_j of q^gamma is -gamma q^(gamma-1) p_t (delta - p_j).
                               const double dq = (gamma == 0.0 || q == 0.0) ? 0.0 : gamma * std::pow(q, gamma - 1.0);
                               for (std::size_t j = 0; j < C; ++j) {
                                   const double delta = (j == label ? 1.0 : 0.0) - p[j];
                                   double d = dq * pt * delta * logp;
                                   if (!clamped) d -= qg * delta;
                                   pg[0][j] += g[0] * d;
                               }
                           });
}

AdamW::AdamW(const ParamList& params, double lr_, double wd) : lr(lr_), weight_decay(wd) {
    for (const auto& [name, t] : params) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

double AdamW::step(const ParamList& params, double max_norm) {
    if (params.size() != m_.size()) throw ConfigError("optimizer was built for a different parameter list");
    double sq = 0.0;
    for (const auto& [name, t] : params)
        for (double g : t.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    const double clip = (max_norm > 0.0 && norm > max_norm) ? max_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i].second;
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j] * clip;
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            const double mhat = m[j] / bc1, vhat = v[j] / bc2;
            w[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[j]);
        }
    }
    return norm;
}

void AdamW::save_state(std::vector<std::pair<std::string, Tensor>>& out, const ParamList& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
        out.emplace_back("adam.m." + params[i].first, Tensor::from(params[i].second.shape(), m_[i]));
        out.emplace_back("adam.v." + params[i].first, Tensor::from(params[i].second.shape(), v_[i]));
    }
}

void AdamW::load_state(const Checkpoint& ck, const ParamList& params, std::size_t steps) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto m = ck.at("adam.m." + params[i].first).data();
        const auto v = ck.at("adam.v." + params[i].first).data();
        if (m.size() != m_[i].size() || v.size() != v_[i].size())
            throw FormatError("optimizer state for " + params[i].first + " has the wrong size");
        m_[i].assign(m.begin(), m.end());
        v_[i].assign(v.begin(), v.end());
    }
    t_ = steps;
}

void AdamW::snap_state() {
    for (auto* bank : {&m_, &v_})
        for (auto& vec : *bank)
            for (auto& x : vec) x = static_cast<float>(x);
}

std::vector<Example> prepare_examples(const CPMTModel& model, const std::vector<Fragment>& fragments, LLMClient* llm) {
    std::vector<Example> out;
    out.reserve(fragments.size());
    for (const auto& f : fragments) {
        Example e{&f, {}};
        if (llm && f.context && !model.cfg.ablations.no_llm)
            e.verbal = model.verbal_tokens(collect_reasoning(*llm, *f.context));
        out.push_back(std::move(e));
    }
    return out;
}

json EpochLog::to_json() const {
    return {{"epoch", epoch},          {"train_loss", train_loss}, {"valid_macro_f1", valid_macro_f1},
            {"valid_accuracy", valid_accuracy}, {"grad_norm", grad_norm}, {"seconds", seconds}};
}

EpochLog EpochLog::from_json(const json& j) {
    EpochLog e;
    e.epoch = j.at("epoch");
    e.train_loss = j.at("train_loss");
    e.valid_macro_f1 = j.at("valid_macro_f1");
    e.valid_accuracy = j.at("valid_accuracy");
    e.grad_norm = j.value("grad_norm", 0.0);
    e.seconds = j.value("seconds", 0.0);
    return e;
}

Predictions predict(const CPMTModel& model, const std::vector<Example>& examples) {
    NoGradGuard guard;
    Predictions p;
    const ForwardContext ctx;
    for (const auto& e : examples) {
        const Tensor logits = model.forward(e.fragment->persons, e.verbal, ctx);
        const auto z = logits.data();
        p.y_true.push_back(e.fragment->label);
        p.y_pred.push_back(static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()));
        p.logits.emplace_back(z.begin(), z.end());
    }
    return p;
}

EvalReport evaluate(const CPMTModel& model, const std::vector<Example>& examples) {
    const auto p = predict(model, examples);
    return metrics(p.y_true, p.y_pred, model.cfg.num_classes);
}

namespace {

struct Progress {
    std::size_t epochs_done = 0;
    std::vector<EpochLog> curve;
    std::size_t best_epoch = 0;
    double best_valid = -1.0;
};

json progress_json(const Progress& p, std::size_t adam_steps, const TrainConfig& tcfg) {
    json curve = json::array();
    for (const auto& e : p.curve) curve.push_back(e.to_json());
    return {{"epochs_done", p.epochs_done}, {"curve", curve}, {"best_epoch", p.best_epoch},
            {"best_valid_macro_f1", p.best_valid}, {"adam_steps", adam_steps}, {"train", to_json(tcfg)}};
}

void save_state(const std::string& path, const CPMTModel& model, const AdamW& opt, const Progress& p,
                const TrainConfig& tcfg) {
    Checkpoint ck;
    ck.meta = {{"config", to_json(model.cfg)}, {"progress", progress_json(p, opt.steps(), tcfg)}};
    const auto params = model.parameters();
    for (const auto& [name, t] : params) ck.tensors.emplace_back(name, t.detach());
    opt.save_state(ck.tensors, params);
    write_checkpoint(path, ck);
}

}  // namespace

TrainResult train(CPMTModel& model, const std::vector<Example>& train_set, const std::vector<Example>& valid_set,
                  const TrainConfig& tcfg, const TrainOptions& opts) {
    tcfg.validate();
    if (train_set.empty()) throw DataError("training split is empty");
    const ParamList params = model.parameters();
    AdamW opt(params, tcfg.learning_rate, tcfg.weight_decay);
    Progress prog;
    std::vector<std::vector<double>> best_params;
    const auto snapshot = [&] {
        best_params.clear();
        for (const auto& [n, t] : params) best_params.emplace_back(t.data().begin(), t.data().end());
    };

    std::string last_path, best_path;
    if (!opts.checkpoint_dir.empty()) {
        fs::create_directories(opts.checkpoint_dir);
        last_path = (fs::path(opts.checkpoint_dir) / "last.ckpt").string();
        best_path = (fs::path(opts.checkpoint_dir) / "best.ckpt").string();
        if (opts.resume && fs::exists(last_path)) {
            const Checkpoint ck = read_checkpoint(last_path);
            const json& pj = ck.meta.at("progress");
            if (pj.at("train") != to_json(tcfg))
                throw ConfigError("cannot resume from " + last_path + ": training config differs");
            if (ck.meta.at("config") != to_json(model.cfg))
                throw ConfigError("cannot resume from " + last_path + ": model config differs");
            load_parameters(model, ck);
            opt.load_state(ck, params, pj.at("adam_steps"));
            prog.epochs_done = pj.at("epochs_done");
            for (const auto& e : pj.at("curve")) prog.curve.push_back(EpochLog::from_json(e));
            prog.best_epoch = pj.at("best_epoch");
            prog.best_valid = pj.at("best_valid_macro_f1");
            if (fs::exists(best_path)) {
                const Checkpoint best = read_checkpoint(best_path);
                for (const auto& [n, t] : params) {
                    const auto d = best.at(n).data();
                    best_params.emplace_back(d.begin(), d.end());
                }
            }
        }
    }
    if (best_params.empty()) snapshot();
    if (!last_path.empty() && !fs::exists(last_path)) save_state(last_path, model, opt, prog, tcfg);

    std::size_t run_this_call = 0;
    while (prog.epochs_done < tcfg.epochs) {
        if (opts.stop_after && run_this_call >= opts.stop_after) break;
        const auto t0 = std::chrono::steady_clock::now();
        const std::size_t epoch = prog.epochs_done;
        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(Rng::derive(tcfg.seed, 2 * epoch));
        shuffle_rng.shuffle(order);
        Rng dropout_rng(Rng::derive(tcfg.seed, 2 * epoch + 1));
        const ForwardContext ctx{true, model.cfg.dropout_rate, &dropout_rng};

        double loss_sum = 0.0, norm_sum = 0.0;
        std::size_t n_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
            for (const auto& [n, t] : params) Tensor(t).zero_grad();
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const Example& ex = train_set[order[b]];
                const Tensor logits = model.forward(ex.fragment->persons, ex.verbal, ctx);
                const Tensor loss = focal_loss(logits, ex.fragment->label, tcfg.gamma);
                const double lv = loss.item();
                if (!std::isfinite(lv))
                    throw NumericError("non-finite loss in epoch " + std::to_string(epoch + 1) + " on fragment " +
                                       ex.fragment->id +
                                       (last_path.empty() ? "" : "; last finite state kept at " + last_path));
                loss_sum += lv;
                scale(loss, inv).backward();
            }
            norm_sum += opt.step(params, tcfg.grad_clip);
            ++n_steps;
        }
        snap_parameters(model);
        opt.snap_state();

        EpochLog log;
        log.epoch = epoch + 1;
        log.train_loss = loss_sum / static_cast<double>(train_set.size());
        log.grad_norm = norm_sum / static_cast<double>(n_steps);
        const bool has_valid = !valid_set.empty();
        if (has_valid) {
            const auto rep = evaluate(model, valid_set);
            log.valid_macro_f1 = rep.macro_f1;
            log.valid_accuracy = rep.accuracy;
        }
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        prog.curve.push_back(log);
        prog.epochs_done = epoch + 1;
        ++run_this_call;
        if (!has_valid || log.valid_macro_f1 > prog.best_valid) {
            prog.best_valid = has_valid ? log.valid_macro_f1 : prog.best_valid;
            prog.best_epoch = epoch + 1;
            snapshot();
            if (!best_path.empty()) save_model(best_path, model, {{"epoch", epoch + 1}, {"valid_macro_f1", log.valid_macro_f1}});
        }
        if (!last_path.empty()) save_state(last_path, model, opt, prog, tcfg);
        if (opts.verbose)
            std::cerr << "epoch " << log.epoch << " loss " << log.train_loss << " valid macro-F1 " << log.valid_macro_f1
                      << " (" << log.seconds << " s)\n";
        if (opts.on_epoch) opts.on_epoch(log);
    }

    TrainResult r;
    r.curve = prog.curve;
    r.best_epoch = prog.best_epoch;
    r.best_valid_macro_f1 = prog.best_valid;
    r.final_train_loss = prog.curve.empty() ? 0.0 : prog.curve.back().train_loss;
    r.completed = prog.epochs_done >= tcfg.epochs;
    if (r.completed) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor p = params[i].second;
            std::copy(best_params[i].begin(), best_params[i].end(), p.mutable_data().begin());
        }
        r.train_report = evaluate(model, train_set);
    }
    return r;
}

}  // namespace cpmt
