#pragma once

#include <functional>
#include <utility>
#include <variant>

#include "fedmoe/models.hpp"

namespace fedmoe {

struct SgdConfig {
    double learning_rate = 0.05;
};

struct AdamWConfig {
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    void validate() const;
};

struct AdamWState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;
};

/// One optimizer with its buffers: plain SGD or AdamW.
class OptimizerState {
public:
    static OptimizerState sgd(SgdConfig cfg);
    static OptimizerState adamw(AdamWConfig cfg);

    /// In-place update of `params` from `grad` (gradient of the mean loss).
    void apply(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad);

    bool is_sgd() const { return std::holds_alternative<SgdConfig>(config_); }
    const AdamWState& adamw_state() const { return adam_; }

private:
    explicit OptimizerState(std::variant<SgdConfig, AdamWConfig> c) : config_(c) {}

    std::variant<SgdConfig, AdamWConfig> config_;
    AdamWState adam_;
};

/// params - lr * grad
void sgd_update(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad, double learning_rate);

/// Decoupled weight decay, bias-corrected moments.
void adamw_update(Eigen::Ref<Eigen::VectorXd> params, AdamWState& state, const AdamWConfig& cfg,
                  const Eigen::VectorXd& grad);

/// One mini-batch step on the mean NLL of `batch`.
ModelParams sgd_step(const ModelParams& params, const SgdConfig& cfg, const Dataset& batch);

std::pair<ModelParams, AdamWState> adamw_step(const ModelParams& params, AdamWState state,
                                              const AdamWConfig& cfg, const Dataset& batch);

/// Gradient of a mean loss over the samples at `indices`.
using BatchGradient = std::function<Eigen::VectorXd(const Eigen::VectorXd& params, const std::vector<Index>& indices)>;

/// Generic epoch loop: each epoch shuffles 0..n-1 with `rng` and steps on
/// consecutive batches of at most `batch_size` indices.
void run_minibatch_epochs(Eigen::VectorXd& params, Index n, int epochs, Index batch_size, OptimizerState& opt,
                          Rng& rng, const BatchGradient& grad);

/// E epochs of shuffled mini-batch training on the mean NLL.
ModelParams local_update(const ModelParams& params, const Dataset& train, int epochs, Index batch_size,
                         OptimizerState& opt, Rng& rng);

}  // namespace fedmoe
