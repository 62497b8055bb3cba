#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedmoe/config.hpp"

namespace fedmoe {

inline constexpr const char* kManifestSchema = "fedmoe.manifest/1";

/// One (trial, p, J) point of a sweep with its derived seeds.
struct RunSpec {
    int trial = 0;
    double p = 0.2;
    int J = 1;
    std::uint64_t data_seed = 0;
    std::uint64_t federation_seed = 0;
    std::uint64_t personalize_seed = 0;
    std::uint64_t finetune_seed = 0;

    std::string id() const;
};

struct RunOutcome {
    RunSpec spec;
    FederationResult federation;
    std::vector<PersonalClient> personal;
    std::vector<MethodResult> methods;
    /// Greedy assignment per client after the last round.
    std::vector<int> assignments;
    std::vector<int> groups;
    UsageHistogram usage;
    /// Mean gate weight per expert over each client's test split.
    std::vector<Eigen::VectorXd> gate_weights;

    const MethodResult& method(Method m) const;
};

/// Trials outer, then p, then J. Data seeds depend on the trial only, so
/// points within a trial share their base pool.
std::vector<RunSpec> plan_runs(const ExperimentConfig& cfg);

/// Client partitions (already split) for a given majority fraction.
std::vector<ClientPartition> build_partitions(const DataConfig& data, int K, double p, std::uint64_t seed);

/// Data generation, federation, personalization and evaluation of all methods.
RunOutcome run_single(const ExperimentConfig& cfg, const RunSpec& spec);

struct RunOptions {
    std::filesystem::path out_dir;
    /// Runs executed concurrently.
    int parallel = 1;
    std::function<void(const std::string&)> log;
};

/// Writes manifest.json, per-run artifacts under runs/<id>/ and the combined
/// CSVs. Returns 0 when every run succeeds, 1 otherwise.
int run_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

/// Writes the partitions of every (trial, p) point as JSON-lines under out_dir.
void export_data(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// One line per sample: client_id, split, label, features.
void write_partitions_jsonl(std::ostream& os, const std::vector<ClientPartition>& clients);

/// Reads back what write_partitions_jsonl wrote.
std::vector<ClientPartition> read_partitions_jsonl(std::istream& is);

/// One line per (round, client) and per (round, model).
void write_round_log_jsonl(std::ostream& os, const std::vector<RoundRecord>& log);

/// Shortest round-trip decimal form.
std::string format_number(double x);

}  // namespace fedmoe
