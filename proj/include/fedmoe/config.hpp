#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fedmoe/eval.hpp"

namespace fedmoe {

struct DataConfig {
    int n_classes = 10;
    Index dim = 8;
    Index per_client_n = 600;
    double separation = 2.5;
    /// Pool drawn per class before partitioning.
    Index pool_per_class = 4000;
    /// Concept shift uses rotation_deg for the per-group angle step; the
    /// skew's rotation_step is derived from it.
    SkewSpec skew;
    double rotation_deg = 90.0;
    double val_fraction = 0.2;
    double test_fraction = 0.2;
};

struct ModelConfig {
    ArchKind cluster_kind = ArchKind::linear_softmax;
    Index cluster_hidden = 16;
    ArchKind local_kind = ArchKind::linear_softmax;
    Index local_hidden = 16;
    ArchKind gate_kind = ArchKind::linear_softmax;
    Index gate_hidden = 8;
};

struct ExperimentConfig {
    DataConfig data;
    FLConfig fl;
    ModelConfig model;
    /// Optimizer and epoch settings for local experts and gates. The arch
    /// fields are filled in by resolve_archs.
    PersonalizationConfig personal;
    /// 0 means "fl.E * 5".
    int finetune_epochs = 0;
    int trials = 1;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    /// Empty means the single value in data.p / fl.J.
    std::vector<double> sweep_p;
    std::vector<int> sweep_J;

    void validate() const;

    std::vector<double> p_values() const;
    std::vector<int> J_values() const;

    ArchSpec cluster_arch() const;
    ArchSpec local_arch() const;
    ArchSpec gate_arch(int J) const;
    FineTuneConfig finetune() const;
};

/// Parses `key=value` lines ('#' starts a comment). Unknown keys, malformed
/// or out-of-range values and empty values raise ConfigError naming the key.
ExperimentConfig parse_config(std::string_view text);

/// Canonical text form listing every key; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// All recognized keys, in canonical order.
std::vector<std::string> config_keys();

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace fedmoe
