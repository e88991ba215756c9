#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <json.hpp>

namespace cpmt {

struct EvalReport {
    double accuracy = 0.0;
    double weighted_f1 = 0.0;
    double macro_f1 = 0.0;
    std::vector<double> per_class_f1;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
    std::size_t n = 0;

    std::size_t num_classes() const { return per_class_f1.size(); }
    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
};

// Per-class F1 with 0/0 := 0; weighted F1 uses true-class support.
EvalReport metrics(const std::vector<std::size_t>& y_true, const std::vector<std::size_t>& y_pred, std::size_t C);

enum class Metric { accuracy, macro_f1, weighted_f1 };
double metric_value(const EvalReport& r, Metric m);
Metric parse_metric(const std::string& name);

struct BootstrapResult {
    double p_value = 1.0;
    double threshold = 0.05;  // alpha / comparisons
    bool significant = false;
};

// p = fraction of resamples in which metric(A) <= metric(B).
BootstrapResult paired_bootstrap(const std::vector<std::size_t>& y_true, const std::vector<std::size_t>& pred_a,
                                 const std::vector<std::size_t>& pred_b, std::size_t C, Metric metric,
                                 std::size_t B = 1000, double alpha = 0.05, std::size_t comparisons = 1,
                                 std::uint64_t seed = 0);

// Unweighted mean of every score; confusion matrices summed.
EvalReport dyad_average(const std::vector<EvalReport>& reports);

}  // namespace cpmt
