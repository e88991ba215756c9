#include "cpmt/metrics.hpp"

#include "cpmt/errors.hpp"
#include "cpmt/rng.hpp"

namespace cpmt {

using nlohmann::json;

namespace {

EvalReport from_confusion(std::vector<std::vector<std::size_t>> conf) {
    const std::size_t C = conf.size();
    EvalReport r;
    r.confusion = std::move(conf);
    r.per_class_f1.assign(C, 0.0);
    r.precision.assign(C, 0.0);
    r.recall.assign(C, 0.0);
    std::size_t correct = 0;
    std::vector<std::size_t> support(C, 0), predicted(C, 0);
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j) {
            support[i] += r.confusion[i][j];
            predicted[j] += r.confusion[i][j];
            r.n += r.confusion[i][j];
        }
    for (std::size_t c = 0; c < C; ++c) {
        const double tp = static_cast<double>(r.confusion[c][c]);
        correct += r.confusion[c][c];
        r.precision[c] = predicted[c] ? tp / static_cast<double>(predicted[c]) : 0.0;
        r.recall[c] = support[c] ? tp / static_cast<double>(support[c]) : 0.0;
        const double denom = r.precision[c] + r.recall[c];
        r.per_class_f1[c] = denom > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / denom : 0.0;
        r.macro_f1 += r.per_class_f1[c] / static_cast<double>(C);
        if (r.n) r.weighted_f1 += r.per_class_f1[c] * static_cast<double>(support[c]) / static_cast<double>(r.n);
    }
    r.accuracy = r.n ? static_cast<double>(correct) / static_cast<double>(r.n) : 0.0;
    return r;
}

}  // namespace

EvalReport metrics(const std::vector<std::size_t>& y_true, const std::vector<std::size_t>& y_pred, std::size_t C) {
    if (y_true.size() != y_pred.size())
        throw DimensionError("metrics: " + std::to_string(y_true.size()) + " labels vs " +
                             std::to_string(y_pred.size()) + " predictions");
    if (y_true.empty()) throw DataError("metrics needs at least one example");
    if (C < 2) throw ConfigError("metrics needs at least two classes");
    std::vector<std::vector<std::size_t>> conf(C, std::vector<std::size_t>(C, 0));
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] >= C || y_pred[i] >= C)
            throw DataError("label out of range at position " + std::to_string(i) + " (C = " + std::to_string(C) + ")");
        ++conf[y_true[i]][y_pred[i]];
    }
    return from_confusion(std::move(conf));
}

json EvalReport::to_json() const {
    return {{"accuracy", accuracy}, {"weighted_f1", weighted_f1}, {"macro_f1", macro_f1},
            {"per_class_f1", per_class_f1}, {"precision", precision},     {"recall", recall},
            {"confusion", confusion},       {"n", n}};
}

EvalReport EvalReport::from_json(const json& j) {
    EvalReport r;
    r.accuracy = j.at("accuracy");
    r.weighted_f1 = j.at("weighted_f1");
    r.macro_f1 = j.at("macro_f1");
    r.per_class_f1 = j.at("per_class_f1").get<std::vector<double>>();
    r.precision = j.value("precision", std::vector<double>(r.per_class_f1.size(), 0.0));
    r.recall = j.value("recall", std::vector<double>(r.per_class_f1.size(), 0.0));
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    r.n = j.at("n");
    return r;
}

double metric_value(const EvalReport& r, Metric m) {
    switch (m) {
        case Metric::accuracy: return r.accuracy;
        case Metric::macro_f1: return r.macro_f1;
        case Metric::weighted_f1: return r.weighted_f1;
    }
    return 0.0;
}

Metric parse_metric(const std::string& name) {
    if (name == "accuracy") return Metric::accuracy;
    if (name == "macro_f1") return Metric::macro_f1;
    if (name == "weighted_f1") return Metric::weighted_f1;
    throw ConfigError("unknown metric '" + name + "' (expected accuracy, macro_f1 or weighted_f1)");
}

BootstrapResult paired_bootstrap(const std::vector<std::size_t>& y_true, const std::vector<std::size_t>& pred_a,
                                 const std::vector<std::size_t>& pred_b, std::size_t C, Metric metric, std::size_t B,
                                 double alpha, std::size_t comparisons, std::uint64_t seed) {
    if (pred_a.size() != y_true.size() || pred_b.size() != y_true.size())
        throw DimensionError("paired_bootstrap: prediction vectors must match the label count");
    if (y_true.empty()) throw DataError("paired_bootstrap needs at least one example");
    if (B < 100) throw ConfigError("paired_bootstrap needs B >= 100");
    if (comparisons == 0) throw ConfigError("comparisons must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    Rng rng(seed);
    const std::size_t n = y_true.size();
    std::vector<std::size_t> t(n), a(n), b(n);
    std::size_t not_better = 0;
    for (std::size_t rep = 0; rep < B; ++rep) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = rng.index(n);
            t[i] = y_true[k];
            a[i] = pred_a[k];
            b[i] = pred_b[k];
        }
        if (metric_value(metrics(t, a, C), metric) <= metric_value(metrics(t, b, C), metric)) ++not_better;
    }
    BootstrapResult r;
    r.p_value = static_cast<double>(not_better) / static_cast<double>(B);
    r.threshold = alpha / static_cast<double>(comparisons);
    r.significant = r.p_value < r.threshold;
    return r;
}

EvalReport dyad_average(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw DataError("dyad_average needs at least one report");
    const std::size_t C = reports[0].num_classes();
    EvalReport out;
    out.per_class_f1.assign(C, 0.0);
    out.precision.assign(C, 0.0);
    out.recall.assign(C, 0.0);
    out.confusion.assign(C, std::vector<std::size_t>(C, 0));
    const double w = 1.0 / static_cast<double>(reports.size());
    for (const auto& r : reports) {
        if (r.num_classes() != C || r.confusion.size() != C)
            throw DimensionError("dyad_average: reports disagree on the class count");
        out.accuracy += w * r.accuracy;
        out.weighted_f1 += w * r.weighted_f1;
        out.macro_f1 += w * r.macro_f1;
        for (std::size_t c = 0; c < C; ++c) {
            out.per_class_f1[c] += w * r.per_class_f1[c];
            out.precision[c] += w * r.precision[c];
            out.recall[c] += w * r.recall[c];
            for (std::size_t j = 0; j < C; ++j) out.confusion[c][j] += r.confusion[c][j];
        }
        out.n += r.n;
    }
    return out;
}

}  // namespace cpmt
