#include "fedmoe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedmoe {

std::string method_name(Method m)
{
    switch (m) {
    case Method::moe: return "moe";
    case Method::ifca_select: return "ifca_select";
    case Method::ensemble: return "ensemble";
    case Method::fine_tuned: return "fine_tuned";
    case Method::local: return "local";
    }
    return "unknown";
}

double inter_client_stddev(const std::vector<double>& accuracies)
{
    if (accuracies.empty())
        return 0.0;
    // shifted by the first value so identical accuracies give exactly zero
    const double n = static_cast<double>(accuracies.size());
    const double shift = accuracies.front();
    double offset = 0.0;
    for (double a : accuracies)
        offset += a - shift;
    offset /= n;
    double ss = 0.0;
    for (double a : accuracies)
        ss += (a - shift - offset) * (a - shift - offset);
    return std::sqrt(ss / n);
}

MethodResult summarize(Method method, std::vector<double> accuracies)
{
    MethodResult r;
    r.method = method;
    if (!accuracies.empty())
        r.mean = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
    r.stddev = inter_client_stddev(accuracies);
    r.accuracies = std::move(accuracies);
    return r;
}

double percent_reduction(double sigma_from, double sigma_to)
{
    if (sigma_from == 0.0)
        throw ConfigError("percent_reduction: reference sigma is zero");
    return 100.0 * (sigma_from - sigma_to) / sigma_from;
}

double accuracy(const Eigen::MatrixXd& probs, const Eigen::VectorXi& labels)
{
    if (labels.size() == 0)
        throw ConfigError("accuracy: empty test set");
    if (probs.rows() != labels.size())
        throw ShapeError("accuracy: one prediction row per label required");
    Index correct = 0;
    for (Index i = 0; i < probs.rows(); ++i)
        correct += argmax(probs.row(i)) == labels(i);
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const Predictor& predict, const Dataset& test)
{
    if (test.empty())
        throw ConfigError("accuracy: empty test set");
    return accuracy(predict(test.features), test.labels);
}

int ifca_best_model(const ClientPartition& client, const ClusterModelSet& clusters)
{
    std::vector<int> all(clusters.size());
    std::iota(all.begin(), all.end(), 0);
    const Dataset& data = client.validation.empty() ? client.train : client.validation;
    return greedy_cluster(data, clusters.models, all);
}

double eval_ifca_select(const ClientPartition& client, const ClusterModelSet& clusters)
{
    const ModelParams& best = clusters.models[ifca_best_model(client, clusters)];
    return accuracy(forward(best, client.test.features), client.test.labels);
}

double eval_ensemble(const ClientPartition& client, const ClusterModelSet& clusters, const ModelParams& local)
{
    const auto experts = expert_outputs(client.test.features, local, clusters.models);
    const GateOutput uniform =
        GateOutput::Constant(client.test.size(), static_cast<Index>(experts.size()), 1.0 / static_cast<double>(experts.size()));
    return accuracy(mix_experts(uniform, experts), client.test.labels);
}

double eval_moe(const ClientPartition& client, const ClusterModelSet& clusters, const PersonalClient& personal)
{
    return accuracy(moe_inference(client.test.features, personal.gate, personal.local, clusters), client.test.labels);
}

double eval_local(const ClientPartition& client, const ModelParams& local)
{
    return accuracy(forward(local, client.test.features), client.test.labels);
}

double eval_fine_tuned(const ClientPartition& client, const ClusterModelSet& clusters, const FineTuneConfig& cfg,
                       std::uint64_t seed)
{
    ModelParams model = clusters.models[ifca_best_model(client, clusters)];
    if (cfg.epochs > 0) {
        auto opt = OptimizerState::sgd({cfg.learning_rate});
        Rng rng(seed);
        model = local_update(model, client.train, cfg.epochs, cfg.batch_size, opt, rng);
    }
    return accuracy(forward(model, client.test.features), client.test.labels);
}

Eigen::VectorXd mean_gate_weights(const ClientPartition& client, const PersonalClient& personal)
{
    return gate_forward(personal.gate, client.test.features).colwise().mean().transpose();
}

std::vector<std::pair<double, double>> client_accuracy_cdf(std::vector<double> accuracies)
{
    std::vector<std::pair<double, double>> out;
    if (accuracies.empty())
        return out;
    std::sort(accuracies.begin(), accuracies.end());
    const double n = static_cast<double>(accuracies.size());
    for (std::size_t i = 0; i < accuracies.size(); ++i) {
        if (i + 1 < accuracies.size() && accuracies[i + 1] == accuracies[i])
            continue;
        out.emplace_back(accuracies[i], static_cast<double>(i + 1) / n);
    }
    return out;
}

UsageHistogram cluster_usage(const std::vector<int>& assignments, int J)
{
    if (J < 1)
        throw ConfigError("cluster_usage: J must be >= 1");
    std::vector<Index> counts(J, 0);
    for (int a : assignments) {
        if (a < 0 || a >= J)
            throw ShapeError("cluster_usage: assignment outside 0..J-1");
        ++counts[a];
    }
    UsageHistogram h;
    h.models.resize(J);
    std::iota(h.models.begin(), h.models.end(), 0);
    std::stable_sort(h.models.begin(), h.models.end(), [&](int a, int b) { return counts[a] > counts[b]; });
    for (int m : h.models)
        h.counts.push_back(counts[m]);

    const double total = static_cast<double>(assignments.size());
    if (J > 1 && total > 0) {
        double entropy = 0.0;
        for (Index c : counts)
            if (c > 0) {
                const double q = static_cast<double>(c) / total;
                entropy -= q * std::log(q);
            }
        h.normalized_entropy = entropy / std::log(static_cast<double>(J));
    }
    return h;
}

}  // namespace fedmoe
