#include "fedmoe/moe.hpp"

#include <string>

#include "fedmoe/parallel.hpp"

namespace fedmoe {

void PersonalizationConfig::validate(Index input_dim, Index n_classes, int J) const
{
    local_arch.validate();
    gate_arch.validate();
    local_opt.validate();
    gate_opt.validate();
    if (local_arch.input_dim != input_dim || local_arch.n_outputs != n_classes)
        throw ShapeError("personalization: local arch must map input_dim -> n_classes");
    if (gate_arch.input_dim != input_dim || gate_arch.n_outputs != J + 1)
        throw ShapeError("personalization: gate arch must map input_dim -> J+1");
    if (local_epochs < 0 || gate_epochs < 0)
        throw ConfigError("personalization: epochs must be >= 0");
    if (local_batch < 1 || gate_batch < 1)
        throw ConfigError("personalization: batch sizes must be >= 1");
}

ModelParams train_local_expert(const Dataset& train, const ArchSpec& arch, const AdamWConfig& opt, int epochs,
                               Index batch_size, std::uint64_t seed)
{
    if (train.empty())
        throw ConfigError("train_local_expert: empty train set");
    ModelParams params = init_params(arch, derive_seed(seed, 0, "local-init"));
    if (epochs == 0)
        return params;
    auto state = OptimizerState::adamw(opt);
    Rng rng(derive_seed(seed, 0, "local-shuffle"));
    return local_update(params, train, epochs, batch_size, state, rng);
}

ExpertOutputs expert_outputs(const Eigen::MatrixXd& features, const ModelParams& local,
                             const std::vector<ModelParams>& clusters)
{
    ExpertOutputs out;
    out.reserve(clusters.size() + 1);
    out.push_back(forward(local, features));
    for (const auto& c : clusters) {
        out.push_back(forward(c, features));
        if (out.back().cols() != out.front().cols())
            throw ShapeError("expert_outputs: experts disagree on the number of classes");
    }
    return out;
}

Eigen::MatrixXd mix_experts(const GateOutput& weights, const ExpertOutputs& experts)
{
    if (experts.empty() || weights.cols() != static_cast<Index>(experts.size()))
        throw ShapeError("mix_experts: gate width must equal the number of experts");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(experts.front().rows(), experts.front().cols());
    for (std::size_t e = 0; e < experts.size(); ++e) {
        if (experts[e].rows() != weights.rows() || experts[e].cols() != out.cols())
            throw ShapeError("mix_experts: expert output shape mismatch");
        out += (experts[e].array().colwise() * weights.col(static_cast<Index>(e)).array()).matrix();
    }
    return out;
}

Eigen::MatrixXd moe_inference(const Eigen::MatrixXd& features, const ModelParams& gate, const ModelParams& local,
                              const ClusterModelSet& clusters)
{
    return mix_experts(gate_forward(gate, features), expert_outputs(features, local, clusters.models));
}

Eigen::VectorXd moe_inference(const Eigen::VectorXd& x, const ModelParams& gate, const ModelParams& local,
                              const ClusterModelSet& clusters)
{
    return moe_inference(Eigen::MatrixXd(x.transpose()), gate, local, clusters).row(0).transpose();
}

namespace {

// Probability each expert assigns to the true label, n x (J+1).
Eigen::MatrixXd target_probabilities(const Eigen::VectorXi& labels, const ExpertOutputs& experts,
                                     const std::vector<Index>* rows = nullptr)
{
    const Index n = rows ? static_cast<Index>(rows->size()) : labels.size();
    Eigen::MatrixXd t(n, static_cast<Index>(experts.size()));
    for (Index i = 0; i < n; ++i) {
        const Index r = rows ? (*rows)[i] : i;
        for (std::size_t e = 0; e < experts.size(); ++e)
            t(i, static_cast<Index>(e)) = experts[e](r, labels(r));
    }
    return t;
}

double mixture_loss(const GateOutput& g, const Eigen::MatrixXd& target)
{
    const Eigen::VectorXd q = (g.array() * target.array()).rowwise().sum();
    return -q.array().max(kProbFloor).log().mean();
}

Eigen::VectorXd mixture_gradient(const ModelParams& gate, const Eigen::MatrixXd& x, const Eigen::MatrixXd& target)
{
    const GateOutput g = gate_forward(gate, x);
    const Eigen::MatrixXd joint = (g.array() * target.array()).matrix();
    const Eigen::VectorXd q = joint.rowwise().sum();
    // d(-log q)/dz_e = g_e - g_e t_e / q ; zero where the floor is active
    Eigen::MatrixXd dz(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
        if (q(i) < kProbFloor)
            dz.row(i).setZero();
        else
            dz.row(i) = g.row(i) - joint.row(i) / q(i);
    }
    dz /= static_cast<double>(g.rows());
    return backward(gate, x, dz);
}

void check_experts(const ModelParams& gate, Index n, const ExpertOutputs& experts)
{
    if (gate.arch.n_outputs != static_cast<Index>(experts.size()))
        throw ShapeError("gate: output width " + std::to_string(gate.arch.n_outputs) + " does not match " +
                         std::to_string(experts.size()) + " experts");
    for (const auto& e : experts)
        if (e.rows() != n)
            throw ShapeError("gate: expert outputs must cover every sample");
}

}  // namespace

double gate_loss(const ModelParams& gate, const Eigen::MatrixXd& features, const Eigen::VectorXi& labels,
                 const ExpertOutputs& experts)
{
    check_experts(gate, features.rows(), experts);
    return mixture_loss(gate_forward(gate, features), target_probabilities(labels, experts));
}

Eigen::VectorXd gate_gradient(const ModelParams& gate, const Eigen::MatrixXd& features,
                              const Eigen::VectorXi& labels, const ExpertOutputs& experts)
{
    check_experts(gate, features.rows(), experts);
    if (features.rows() == 0)
        throw ConfigError("gate_gradient: empty batch");
    return mixture_gradient(gate, features, target_probabilities(labels, experts));
}

ModelParams train_gate(const ModelParams& init, const Dataset& train, const ExpertOutputs& experts,
                       const AdamWConfig& opt, int epochs, Index batch_size, std::uint64_t seed)
{
    check_experts(init, train.size(), experts);
    if (train.empty())
        throw ConfigError("train_gate: empty train set");
    ModelParams gate = init;
    if (epochs == 0)
        return gate;
    const Eigen::MatrixXd target = target_probabilities(train.labels, experts);
    auto state = OptimizerState::adamw(opt);
    Rng rng(derive_seed(seed, 0, "gate-shuffle"));
    const ArchSpec arch = init.arch;
    run_minibatch_epochs(gate.values, train.size(), epochs, batch_size, state, rng,
                         [&](const Eigen::VectorXd& w, const std::vector<Index>& idx) {
                             return mixture_gradient(ModelParams(w, arch), train.features(idx, Eigen::all),
                                                     target(idx, Eigen::all));
                         });
    return gate;
}

PersonalClient personalize_client(const ClientPartition& client, const ClusterModelSet& clusters,
                                  const PersonalizationConfig& cfg, std::uint64_t seed)
{
    PersonalClient out;
    out.client_id = client.client_id;
    out.local = train_local_expert(client.train, cfg.local_arch, cfg.local_opt, cfg.local_epochs, cfg.local_batch,
                                   derive_seed(seed, 0, "local"));
    const ExpertOutputs experts = expert_outputs(client.train.features, out.local, clusters.models);
    const ModelParams init = init_params(cfg.gate_arch, derive_seed(seed, 0, "gate-init"));
    out.gate = train_gate(init, client.train, experts, cfg.gate_opt, cfg.gate_epochs, cfg.gate_batch,
                          derive_seed(seed, 0, "gate"));
    return out;
}

std::vector<PersonalClient> personalize_all(const std::vector<ClientPartition>& clients,
                                            const ClusterModelSet& clusters, const PersonalizationConfig& cfg,
                                            std::uint64_t seed)
{
    if (!clients.empty())
        cfg.validate(clients.front().train.dim(), clusters.models.front().arch.n_outputs, clusters.size());
    std::vector<PersonalClient> out(clients.size());
    parallel_for(clients.size(), cfg.threads, [&](std::size_t i) {
        const auto id = static_cast<std::uint64_t>(clients[i].client_id);
        out[i] = personalize_client(clients[i], clusters, cfg, derive_seed(seed, id, "personalize"));
    });
    return out;
}

}  // namespace fedmoe
