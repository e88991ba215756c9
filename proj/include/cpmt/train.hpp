#pragma once

// Focal loss, AdamW, and the epoch loop with best-on-valid selection and
// resumable checkpoints.

#include <functional>
#include <string>
#include <vector>

#include "cpmt/metrics.hpp"
#include "cpmt/model.hpp"

namespace cpmt {

// -(1 - p_t)^gamma log p_t with p_t = softmax(logits)[label]; log p_t is
// clamped at log(1e-12). Returns a [1] tensor.
Tensor focal_loss(const Tensor& logits, std::size_t label, double gamma);

class AdamW {
public:
    double lr;
    double weight_decay;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamW(const ParamList& params, double lr, double weight_decay);

    // Clips the global gradient norm to max_norm (0 disables), updates every
    // parameter and returns the pre-clip norm.
    double step(const ParamList& params, double max_norm = 0.0);
    std::size_t steps() const { return t_; }

    void save_state(std::vector<std::pair<std::string, Tensor>>& out, const ParamList& params) const;
    void load_state(const class Checkpoint& ck, const ParamList& params, std::size_t steps);
    void snap_state();

private:
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

// One fragment ready for the model: streams plus verbal token ids.
struct Example {
    const Fragment* fragment = nullptr;
    std::vector<std::size_t> verbal;
};

// Queries the LLM client (when given and the model uses verbal memory) for
// every fragment that carries a prompt context.
std::vector<Example> prepare_examples(const CPMTModel& model, const std::vector<Fragment>& fragments,
                                      LLMClient* llm);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double valid_macro_f1 = 0.0;
    double valid_accuracy = 0.0;
    double grad_norm = 0.0;
    double seconds = 0.0;

    nlohmann::json to_json() const;
    static EpochLog from_json(const nlohmann::json& j);
};

struct TrainOptions {
    std::string checkpoint_dir;  // empty: keep everything in memory
    bool resume = true;
    std::size_t stop_after = 0;  // stop (as if interrupted) after this many epochs in this call; 0 = no limit
    bool verbose = false;
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochLog> curve;
    std::size_t best_epoch = 0;
    double best_valid_macro_f1 = -1.0;
    double final_train_loss = 0.0;
    bool completed = false;
    EvalReport train_report;  // of the retained (best) parameters
};

// Trains in place. On completion the model holds the best-on-valid parameters
// (last epoch when `valid` is empty). Throws NumericError on a non-finite loss
// after saving the last finite state.
TrainResult train(CPMTModel& model, const std::vector<Example>& train_set, const std::vector<Example>& valid_set,
                  const TrainConfig& tcfg, const TrainOptions& opts = {});

struct Predictions {
    std::vector<std::size_t> y_true;
    std::vector<std::size_t> y_pred;
    std::vector<std::vector<double>> logits;
};

Predictions predict(const CPMTModel& model, const std::vector<Example>& examples);
EvalReport evaluate(const CPMTModel& model, const std::vector<Example>& examples);

}  // namespace cpmt
