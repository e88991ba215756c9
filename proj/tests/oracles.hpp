#pragma once

// Reference computations written independently of the library, shared by the
// unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

struct Scores {
    double accuracy = 0.0, macro_f1 = 0.0, weighted_f1 = 0.0;
    std::vector<double> f1;
    std::vector<std::vector<std::size_t>> confusion;
};

// Counts true positives, false positives and false negatives by direct
// enumeration of the pairs.
inline Scores brute_force_scores(const std::vector<std::size_t>& y, const std::vector<std::size_t>& p, std::size_t C) {
    Scores s;
    s.confusion.assign(C, std::vector<std::size_t>(C, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ++s.confusion[y[i]][p[i]];
        correct += y[i] == p[i];
    }
    s.accuracy = static_cast<double>(correct) / static_cast<double>(y.size());
    for (std::size_t c = 0; c < C; ++c) {
        double tp = 0, fp = 0, fn = 0, support = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (y[i] == c && p[i] == c) tp += 1;
            if (y[i] != c && p[i] == c) fp += 1;
            if (y[i] == c && p[i] != c) fn += 1;
            if (y[i] == c) support += 1;
        }
        // F1 = 2TP / (2TP + FP + FN), 0 when the class never occurs.
        const double f1 = tp + fp + fn == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
        s.f1.push_back(f1);
        s.macro_f1 += f1 / static_cast<double>(C);
        s.weighted_f1 += f1 * support / static_cast<double>(y.size());
    }
    return s;
}

// -log softmax(z)[t] via log-sum-exp.
inline double cross_entropy(const std::vector<double>& z, std::size_t t) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return -(z[t] - m - std::log(s));
}

}  // namespace oracle
