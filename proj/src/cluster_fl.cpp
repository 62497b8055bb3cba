#include "fedmoe/cluster_fl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedmoe/parallel.hpp"

namespace fedmoe {

int clients_per_round(double C, int K)
{
    return static_cast<int>(std::ceil(C * K - 1e-9));
}

int FLConfig::clients_per_round() const
{
    return fedmoe::clients_per_round(C, K);
}

void FLConfig::validate() const
{
    if (K < 1)
        throw ConfigError("fl.K must be >= 1");
    if (!(C > 0.0 && C <= 1.0))
        throw ConfigError("fl.C must be in (0, 1], got " + std::to_string(C));
    if (J < 1)
        throw ConfigError("fl.J must be >= 1");
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
        throw ConfigError("fl.epsilon must be in [0, 1], got " + std::to_string(epsilon));
    if (epochs < 1)
        throw ConfigError("fl.E must be >= 1");
    if (batch_size < 1)
        throw ConfigError("fl.B must be >= 1");
    if (!(learning_rate > 0.0))
        throw ConfigError("fl.lr must be positive");
    if (max_rounds < 0)
        throw ConfigError("fl.rounds must be >= 0");
    if (early_stop.patience < 1)
        throw ConfigError("fl.patience must be >= 1");
    if (!(early_stop.min_delta >= 0.0))
        throw ConfigError("fl.min_delta must be >= 0");
}

bool ClusterModelSet::is_active(int j) const
{
    return std::binary_search(active.begin(), active.end(), j);
}

ClusterModelSet ClusterModelSet::initialize(const ArchSpec& arch, int J, std::uint64_t seed)
{
    if (J < 1)
        throw ConfigError("cluster set: J must be >= 1");
    ClusterModelSet set;
    for (int j = 0; j < J; ++j) {
        set.models.push_back(init_params(arch, derive_seed(seed, static_cast<std::uint64_t>(j), "cluster-init")));
        set.active.push_back(j);
    }
    set.loss_history.resize(J);
    set.trackers.resize(J);
    return set;
}

std::vector<int> select_clients(int K, int K_s, Rng& rng)
{
    if (K_s > K)
        throw ConfigError("select_clients: K_s=" + std::to_string(K_s) + " exceeds K=" + std::to_string(K));
    if (K_s < 0)
        throw ConfigError("select_clients: negative K_s");
    std::vector<int> ids(K);
    std::iota(ids.begin(), ids.end(), 0);
    // partial Fisher-Yates
    for (int i = 0; i < K_s; ++i) {
        const auto r = i + static_cast<int>(uniform_index(rng, K - i));
        std::swap(ids[i], ids[r]);
    }
    ids.resize(K_s);
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace {

ClusterChoice exploit(const std::vector<int>& active, const std::vector<double>& losses)
{
    // strict < keeps the first (lowest) index on ties; active is ascending
    std::size_t best = 0;
    for (std::size_t i = 1; i < losses.size(); ++i)
        if (losses[i] < losses[best])
            best = i;
    return {active[best], false};
}

// With epsilon = 0 no draw is taken, so the client stream only feeds the shuffles.
bool explore(double epsilon, Rng& rng)
{
    return epsilon > 0.0 && uniform01(rng) < epsilon;
}

}  // namespace

ClusterChoice pick_cluster(const std::vector<int>& active, const std::vector<double>& losses, double epsilon,
                           Rng& rng)
{
    if (active.empty())
        throw ConfigError("pick_cluster: no active cluster models");
    if (losses.size() != active.size())
        throw ShapeError("pick_cluster: one loss per active model required");
    if (explore(epsilon, rng))
        return {active[uniform_index(rng, static_cast<Index>(active.size()))], true};
    return exploit(active, losses);
}

ClusterChoice estimate_cluster(const Dataset& train, const ClusterModelSet& clusters, double epsilon, Rng& rng)
{
    const auto& active = clusters.active;
    if (active.empty())
        throw ConfigError("estimate_cluster: no active cluster models");
    if (explore(epsilon, rng))
        return {active[uniform_index(rng, static_cast<Index>(active.size()))], true};
    std::vector<double> losses;
    losses.reserve(active.size());
    for (int j : active)
        losses.push_back(total_loss(clusters.models[j], train));
    return exploit(active, losses);
}

int greedy_cluster(const Dataset& data, const std::vector<ModelParams>& models, const std::vector<int>& candidates)
{
    std::vector<double> losses;
    losses.reserve(candidates.size());
    for (int j : candidates)
        losses.push_back(total_loss(models[j], data));
    return exploit(candidates, losses).index;
}

ClientUpdate client_round(const ClientPartition& client, const ClusterModelSet& clusters, const FLConfig& cfg,
                          Rng& rng)
{
    if (client.train.empty())
        throw ConfigError("client_round: client " + std::to_string(client.client_id) + " has no train data");
    ClientUpdate out;
    out.client_id = client.client_id;
    out.choice = estimate_cluster(client.train, clusters, cfg.epsilon, rng);
    out.n_k = client.n_k();
    auto opt = OptimizerState::sgd({cfg.learning_rate});
    out.params = local_update(clusters.models[out.choice.index], client.train, cfg.epochs, cfg.batch_size, opt, rng);
    return out;
}

std::vector<Index> aggregate(const std::vector<ClientUpdate>& updates, ClusterModelSet& clusters)
{
    const int J = clusters.size();
    std::vector<Index> n_j(J, 0);
    std::vector<std::vector<const ClientUpdate*>> members(J);
    for (const auto& u : updates) {
        if (u.choice.index < 0 || u.choice.index >= J)
            throw ShapeError("aggregate: update for unknown cluster model");
        n_j[u.choice.index] += u.n_k;
        members[u.choice.index].push_back(&u);
    }
    for (int j = 0; j < J; ++j) {
        const auto& m = members[j];
        if (m.empty())
            continue;
        const bool identical = std::all_of(m.begin(), m.end(), [&](const ClientUpdate* u) {
            return u->params.values == m.front()->params.values;
        });
        if (identical) {
            clusters.models[j] = m.front()->params;
            continue;
        }
        Eigen::VectorXd w = Eigen::VectorXd::Zero(clusters.models[j].values.size());
        for (const ClientUpdate* u : m)
            w += (static_cast<double>(u->n_k) / static_cast<double>(n_j[j])) * u->params.values;
        clusters.models[j].values = std::move(w);
    }
    return n_j;
}

std::vector<int> early_stop_update(ClusterModelSet& clusters, const std::vector<double>& val_losses,
                                   const EarlyStopConfig& cfg)
{
    if (val_losses.size() != clusters.models.size())
        throw ShapeError("early_stop_update: one loss slot per model required");
    std::vector<int> removed;
    if (!cfg.enabled)
        return removed;
    for (int j : std::vector<int>(clusters.active)) {
        const double loss = val_losses[j];
        if (std::isnan(loss))
            continue;
        auto& tr = clusters.trackers[j];
        if (loss < tr.best - cfg.min_delta) {
            tr.best = loss;
            tr.stale_rounds = 0;
        } else if (++tr.stale_rounds >= cfg.patience) {
            removed.push_back(j);
        }
    }
    for (int j : removed)
        clusters.active.erase(std::find(clusters.active.begin(), clusters.active.end(), j));
    return removed;
}

FederationResult run_federation(const FLConfig& cfg, const ArchSpec& arch,
                                const std::vector<ClientPartition>& clients, std::uint64_t seed)
{
    cfg.validate();
    arch.validate();
    if (static_cast<int>(clients.size()) != cfg.K)
        throw ConfigError("run_federation: got " + std::to_string(clients.size()) + " clients, fl.K=" +
                          std::to_string(cfg.K));
    for (const auto& c : clients) {
        if (c.train.empty())
            throw ConfigError("run_federation: client " + std::to_string(c.client_id) + " has no train data");
        if (c.train.dim() != arch.input_dim)
            throw ShapeError("run_federation: client feature dimension does not match arch");
        if (cfg.early_stop.enabled && c.validation.empty())
            throw ConfigError("run_federation: early stopping needs validation data on every client");
    }

    FederationResult result;
    result.clusters = ClusterModelSet::initialize(arch, cfg.J, seed);
    ClusterModelSet& clusters = result.clusters;
    Rng server(derive_seed(seed, 0, "server"));
    const int K_s = cfg.clients_per_round();

    for (int t = 1; t <= cfg.max_rounds && !clusters.active.empty(); ++t) {
        RoundRecord rec;
        rec.round = t;
        rec.selected = select_clients(cfg.K, K_s, server);
        rec.downlink = static_cast<long>(clusters.active.size()) * K_s;
        rec.uplink = K_s;

        const std::uint64_t round_seed = derive_seed(seed, static_cast<std::uint64_t>(t), "round");
        std::vector<ClientUpdate> updates(rec.selected.size());
        parallel_for(updates.size(), cfg.threads, [&](std::size_t i) {
            const int k = rec.selected[i];
            Rng rng(derive_seed(round_seed, static_cast<std::uint64_t>(k), "client"));
            updates[i] = client_round(clients[k], clusters, cfg, rng);
        });

        const auto n_j = aggregate(updates, clusters);

        // validation loss of each updated model over the validation splits of its selectors
        std::vector<double> val_losses(cfg.J, std::numeric_limits<double>::quiet_NaN());
        std::vector<int> n_clients(cfg.J, 0);
        for (int j = 0; j < cfg.J; ++j) {
            if (n_j[j] == 0)
                continue;
            double loss = 0.0;
            Index count = 0;
            for (std::size_t i = 0; i < updates.size(); ++i) {
                if (updates[i].choice.index != j)
                    continue;
                ++n_clients[j];
                const Dataset& val = clients[rec.selected[i]].validation;
                if (val.empty())
                    continue;
                loss += total_loss(clusters.models[j], val);
                count += val.size();
            }
            if (count > 0) {
                val_losses[j] = loss / static_cast<double>(count);
                clusters.loss_history[j].push_back(val_losses[j]);
            }
        }
        const auto removed = early_stop_update(clusters, val_losses, cfg.early_stop);

        for (const auto& u : updates)
            rec.clients.push_back({u.client_id, u.choice.index, u.choice.explored, u.n_k});
        for (int j = 0; j < cfg.J; ++j) {
            ModelRecord m;
            m.model = j;
            m.n_j = n_j[j];
            m.n_clients = n_clients[j];
            m.val_loss = val_losses[j];
            m.active_after = clusters.is_active(j);
            m.stopped = std::find(removed.begin(), removed.end(), j) != removed.end();
            rec.models.push_back(m);
        }
        result.total_downlink += rec.downlink;
        result.total_uplink += rec.uplink;
        result.log.push_back(std::move(rec));
    }
    return result;
}

std::vector<int> final_assignments(const std::vector<ClientPartition>& clients, const ClusterModelSet& clusters)
{
    std::vector<int> all(clusters.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> out;
    out.reserve(clients.size());
    for (const auto& c : clients)
        out.push_back(greedy_cluster(c.train, clusters.models, all));
    return out;
}

}  // namespace fedmoe
