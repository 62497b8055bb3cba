#pragma once

#include <cstdint>
#include <vector>

#include "fedmoe/cluster_fl.hpp"

namespace fedmoe {

/// Per-sample expert weights, ordered [local, cluster 0, ..., cluster J-1].
/// Each row lies on the probability simplex.
using GateOutput = Eigen::MatrixXd;

/// Expert class-probability matrices (n x M each) in gate order.
using ExpertOutputs = std::vector<Eigen::MatrixXd>;

struct PersonalizationConfig {
    ArchSpec local_arch;
    AdamWConfig local_opt{1e-2, 0.9, 0.999, 1e-8, 1e-3};
    int local_epochs = 30;
    Index local_batch = 32;

    ArchSpec gate_arch;
    AdamWConfig gate_opt{1e-2, 0.9, 0.999, 1e-8, 1e-3};
    int gate_epochs = 50;
    Index gate_batch = 32;

    int threads = 1;

    void validate(Index input_dim, Index n_classes, int J) const;
};

/// Trained per-client state. Never leaves the client.
struct PersonalClient {
    int client_id = 0;
    ModelParams local;
    ModelParams gate;
};

/// AdamW training of a fresh local model on the client's train split only.
ModelParams train_local_expert(const Dataset& train, const ArchSpec& arch, const AdamWConfig& opt, int epochs,
                               Index batch_size, std::uint64_t seed);

/// Softmax gate weights for a batch (n x (J+1)).
template <typename Derived>
GateOutput gate_forward(const ModelParams& gate, const Eigen::MatrixBase<Derived>& features)
{
    return forward(gate, features);
}

/// Class probabilities of every expert on `features`, local first.
ExpertOutputs expert_outputs(const Eigen::MatrixXd& features, const ModelParams& local,
                             const std::vector<ModelParams>& clusters);

/// Row-wise convex combination: out(i, :) = sum_e weights(i, e) * experts[e](i, :).
Eigen::MatrixXd mix_experts(const GateOutput& weights, const ExpertOutputs& experts);

/// Personalized prediction: local expert plus every cluster model (early
/// stopped ones included), weighted by the gate.
Eigen::MatrixXd moe_inference(const Eigen::MatrixXd& features, const ModelParams& gate, const ModelParams& local,
                              const ClusterModelSet& clusters);

Eigen::VectorXd moe_inference(const Eigen::VectorXd& x, const ModelParams& gate, const ModelParams& local,
                              const ClusterModelSet& clusters);

/// Mean NLL of the mixture for frozen expert outputs.
double gate_loss(const ModelParams& gate, const Eigen::MatrixXd& features, const Eigen::VectorXi& labels,
                 const ExpertOutputs& experts);

/// Gradient of gate_loss with respect to the gate parameters only.
Eigen::VectorXd gate_gradient(const ModelParams& gate, const Eigen::MatrixXd& features,
                              const Eigen::VectorXi& labels, const ExpertOutputs& experts);

/// AdamW training of the gate against frozen experts, starting from `init`.
ModelParams train_gate(const ModelParams& init, const Dataset& train, const ExpertOutputs& experts,
                       const AdamWConfig& opt, int epochs, Index batch_size, std::uint64_t seed);

/// Local expert, then gate, for one client.
PersonalClient personalize_client(const ClientPartition& client, const ClusterModelSet& clusters,
                                  const PersonalizationConfig& cfg, std::uint64_t seed);

/// personalize_client for every client; seeds derived per client id.
std::vector<PersonalClient> personalize_all(const std::vector<ClientPartition>& clients,
                                            const ClusterModelSet& clusters, const PersonalizationConfig& cfg,
                                            std::uint64_t seed);

}  // namespace fedmoe
