#include "fedmoe/optim.hpp"

#include <algorithm>
#include <numeric>

namespace fedmoe {

ModelParams init_params(const ArchSpec& arch, std::uint64_t seed)
{
    arch.validate();
    Rng rng(seed);
    Eigen::VectorXd v(arch.param_count());
    auto fill = [&](Index offset, Index count, Index fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (Index i = 0; i < count; ++i)
            v(offset + i) = (2.0 * uniform01(rng) - 1.0) * bound;
    };
    if (arch.kind == ArchKind::linear_softmax) {
        fill(0, arch.param_count(), arch.input_dim);
    } else {
        const Index first = arch.hidden * arch.input_dim + arch.hidden;
        fill(0, first, arch.input_dim);
        fill(first, arch.param_count() - first, arch.hidden);
    }
    return ModelParams(std::move(v), arch);
}

void AdamWConfig::validate() const
{
    if (!(learning_rate > 0.0))
        throw ConfigError("adamw: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("adamw: betas must be in [0, 1)");
    if (!(eps > 0.0))
        throw ConfigError("adamw: eps must be positive");
    if (!(weight_decay >= 0.0))
        throw ConfigError("adamw: weight decay must be >= 0");
}

OptimizerState OptimizerState::sgd(SgdConfig cfg)
{
    if (!(cfg.learning_rate >= 0.0))
        throw ConfigError("sgd: learning rate must be >= 0");
    return OptimizerState(cfg);
}

OptimizerState OptimizerState::adamw(AdamWConfig cfg)
{
    cfg.validate();
    return OptimizerState(cfg);
}

void OptimizerState::apply(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad)
{
    if (const auto* s = std::get_if<SgdConfig>(&config_))
        sgd_update(params, grad, s->learning_rate);
    else
        adamw_update(params, adam_, std::get<AdamWConfig>(config_), grad);
}

void sgd_update(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad, double learning_rate)
{
    if (grad.size() != params.size())
        throw ShapeError("sgd: gradient length mismatch");
    params -= learning_rate * grad;
}

void adamw_update(Eigen::Ref<Eigen::VectorXd> params, AdamWState& state, const AdamWConfig& cfg,
                  const Eigen::VectorXd& grad)
{
    if (grad.size() != params.size())
        throw ShapeError("adamw: gradient length mismatch");
    if (state.m.size() != params.size()) {
        state.m = Eigen::VectorXd::Zero(params.size());
        state.v = Eigen::VectorXd::Zero(params.size());
        state.step = 0;
    }
    ++state.step;
    params *= 1.0 - cfg.learning_rate * cfg.weight_decay;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    params.array() -= cfg.learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

ModelParams sgd_step(const ModelParams& params, const SgdConfig& cfg, const Dataset& batch)
{
    ModelParams out = params;
    sgd_update(out.values, gradient(params, batch), cfg.learning_rate);
    return out;
}

std::pair<ModelParams, AdamWState> adamw_step(const ModelParams& params, AdamWState state,
                                              const AdamWConfig& cfg, const Dataset& batch)
{
    ModelParams out = params;
    adamw_update(out.values, state, cfg, gradient(params, batch));
    return {std::move(out), std::move(state)};
}

void run_minibatch_epochs(Eigen::VectorXd& params, Index n, int epochs, Index batch_size, OptimizerState& opt,
                          Rng& rng, const BatchGradient& grad)
{
    if (n < 1)
        throw ConfigError("training: empty train set");
    if (epochs < 0 || batch_size < 1)
        throw ConfigError("training: need epochs >= 0 and batch size >= 1");
    std::vector<Index> order(n);
    std::vector<Index> batch;
    for (int e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (Index start = 0; start < n; start += batch_size) {
            batch.assign(order.begin() + start, order.begin() + std::min(n, start + batch_size));
            opt.apply(params, grad(params, batch));
        }
    }
}

ModelParams local_update(const ModelParams& params, const Dataset& train, int epochs, Index batch_size,
                         OptimizerState& opt, Rng& rng)
{
    if (train.empty())
        throw ConfigError("local_update: empty train set");
    if (epochs < 1)
        throw ConfigError("local_update: need at least one epoch");
    ModelParams out = params;
    const ArchSpec arch = params.arch;
    run_minibatch_epochs(out.values, train.size(), epochs, batch_size, opt, rng,
                         [&](const Eigen::VectorXd& w, const std::vector<Index>& idx) {
                             return gradient(ModelParams(w, arch), train.rows(idx));
                         });
    return out;
}

}  // namespace fedmoe
