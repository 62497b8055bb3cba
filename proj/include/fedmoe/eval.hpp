#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fedmoe/moe.hpp"

namespace fedmoe {

enum class Method { moe, ifca_select, ensemble, fine_tuned, local };

inline constexpr Method kAllMethods[] = {Method::moe, Method::ifca_select, Method::ensemble, Method::fine_tuned,
                                         Method::local};

std::string method_name(Method m);

struct MethodResult {
    Method method = Method::moe;
    std::vector<double> accuracies;
    double mean = 0.0;
    /// Population standard deviation.
    double stddev = 0.0;
};

MethodResult summarize(Method method, std::vector<double> accuracies);

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
Index argmax(const Eigen::DenseBase<Derived>& row)
{
    Index best = 0;
    for (Index i = 1; i < row.size(); ++i)
        if (row(i) > row(best))
            best = i;
    return best;
}

/// Fraction of rows whose argmax equals the label.
double accuracy(const Eigen::MatrixXd& probs, const Eigen::VectorXi& labels);

using Predictor = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

double accuracy(const Predictor& predict, const Dataset& test);

/// Cluster model with the lowest validation loss over all J models.
int ifca_best_model(const ClientPartition& client, const ClusterModelSet& clusters);

double eval_ifca_select(const ClientPartition& client, const ClusterModelSet& clusters);
double eval_ensemble(const ClientPartition& client, const ClusterModelSet& clusters, const ModelParams& local);
double eval_moe(const ClientPartition& client, const ClusterModelSet& clusters, const PersonalClient& personal);
double eval_local(const ClientPartition& client, const ModelParams& local);

struct FineTuneConfig {
    int epochs = 15;
    Index batch_size = 32;
    double learning_rate = 0.05;
};

/// Copies the validation-best cluster model, runs local SGD, evaluates on test.
double eval_fine_tuned(const ClientPartition& client, const ClusterModelSet& clusters, const FineTuneConfig& cfg,
                       std::uint64_t seed);

/// Mean expert weight per gate slot over a client's test split.
Eigen::VectorXd mean_gate_weights(const ClientPartition& client, const PersonalClient& personal);

/// Sorted (accuracy, cumulative fraction) steps; one step per distinct value.
std::vector<std::pair<double, double>> client_accuracy_cdf(std::vector<double> accuracies);

double inter_client_stddev(const std::vector<double>& accuracies);

/// 100 * (sigma_from - sigma_to) / sigma_from
double percent_reduction(double sigma_from, double sigma_to);

struct UsageHistogram {
    /// Clients per model, sorted descending.
    std::vector<Index> counts;
    /// Model id of each entry in `counts`.
    std::vector<int> models;
    /// Shannon entropy of the usage distribution divided by log J (0 when J = 1).
    double normalized_entropy = 0.0;
};

UsageHistogram cluster_usage(const std::vector<int>& assignments, int J);

}  // namespace fedmoe
