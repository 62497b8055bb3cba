#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "fedmoe/optim.hpp"
#include "fedmoe/synthdata.hpp"

namespace fedmoe {

struct EarlyStopConfig {
    bool enabled = false;
    int patience = 5;
    double min_delta = 1e-3;
};

struct FLConfig {
    int K = 20;
    double C = 0.5;
    int J = 3;
    double epsilon = 0.3;
    int epochs = 3;
    Index batch_size = 32;
    double learning_rate = 0.05;
    int max_rounds = 60;
    EarlyStopConfig early_stop;
    /// Worker threads for client_round calls within a round. Results do not
    /// depend on this value.
    int threads = 1;

    /// ceil(C * K)
    int clients_per_round() const;
    void validate() const;
};

/// Per-model early-stopping bookkeeping.
struct EarlyStopTracker {
    double best = std::numeric_limits<double>::infinity();
    int stale_rounds = 0;
};

struct ClusterModelSet {
    std::vector<ModelParams> models;
    /// Selectable models (J_rem), ascending.
    std::vector<int> active;
    /// Aggregated validation loss of each model for every round it was updated.
    std::vector<std::vector<double>> loss_history;
    std::vector<EarlyStopTracker> trackers;

    int size() const { return static_cast<int>(models.size()); }
    bool is_active(int j) const;

    /// J models initialized with independent seeds; all active.
    static ClusterModelSet initialize(const ArchSpec& arch, int J, std::uint64_t seed);
};

struct ClusterChoice {
    int index = 0;
    bool explored = false;
};

/// ceil(C * K) with a guard against representation error (0.35 * 10 -> 4, 0.3 * 10 -> 3).
int clients_per_round(double C, int K);

/// Uniform K_s-subset of 0..K-1 without replacement, returned ascending.
std::vector<int> select_clients(int K, int K_s, Rng& rng);

/// Epsilon-greedy choice given the total loss of each active model (same order
/// as `active`). One uniform draw decides between exploring (uniform over
/// `active`) and exploiting (argmin, ties to the lowest index); no draw is
/// taken when epsilon is 0.
ClusterChoice pick_cluster(const std::vector<int>& active, const std::vector<double>& losses, double epsilon,
                           Rng& rng);

/// Loss-evaluating form: losses are computed only on the exploit branch.
ClusterChoice estimate_cluster(const Dataset& train, const ClusterModelSet& clusters, double epsilon, Rng& rng);

/// Index of the model with the lowest total loss on `data` among `candidates`.
int greedy_cluster(const Dataset& data, const std::vector<ModelParams>& models, const std::vector<int>& candidates);

struct ClientUpdate {
    int client_id = 0;
    ModelParams params;
    Index n_k = 0;
    ClusterChoice choice;
};

/// Estimate cluster membership, then run local SGD from the chosen model.
ClientUpdate client_round(const ClientPartition& client, const ClusterModelSet& clusters, const FLConfig& cfg,
                          Rng& rng);

/// Sample-count-weighted mean of each model's selectors; returns n_j per model
/// (0 for models nobody selected, which keep their parameters).
std::vector<Index> aggregate(const std::vector<ClientUpdate>& updates, ClusterModelSet& clusters);

/// Feeds one aggregated validation loss per updated model (NaN = not updated
/// this round) and removes models whose loss has not improved by more than
/// min_delta over `patience` consecutive updated rounds. Returns removed ids.
std::vector<int> early_stop_update(ClusterModelSet& clusters, const std::vector<double>& val_losses,
                                   const EarlyStopConfig& cfg);

struct ClientRecord {
    int client_id = 0;
    int cluster = 0;
    bool explored = false;
    Index n_k = 0;
};

struct ModelRecord {
    int model = 0;
    Index n_j = 0;
    int n_clients = 0;
    /// NaN when the model received no update this round.
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    bool active_after = true;
    bool stopped = false;
};

struct RoundRecord {
    int round = 0;
    std::vector<int> selected;
    std::vector<ClientRecord> clients;
    std::vector<ModelRecord> models;
    long downlink = 0;
    long uplink = 0;
};

struct FederationResult {
    ClusterModelSet clusters;
    std::vector<RoundRecord> log;
    long total_downlink = 0;
    long total_uplink = 0;
};

/// Server loop. Round t draws S_t from a server stream, client k in round t
/// trains on a stream derived from (seed, t, k), so parallel and serial runs agree.
FederationResult run_federation(const FLConfig& cfg, const ArchSpec& arch,
                                const std::vector<ClientPartition>& clients, std::uint64_t seed);

/// Greedy (epsilon ignored) assignment of every client over all J models, on train splits.
std::vector<int> final_assignments(const std::vector<ClientPartition>& clients, const ClusterModelSet& clusters);

}  // namespace fedmoe
