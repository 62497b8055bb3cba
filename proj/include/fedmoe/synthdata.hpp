#pragma once

#include <cstdint>
#include <vector>

#include "fedmoe/core.hpp"

namespace fedmoe {

/// One client's data. Before splitting, every sample sits in `train`.
struct ClientPartition {
    int client_id = 0;
    Dataset train;
    Dataset validation;
    Dataset test;
    /// Ground-truth group (majority-class group or rotation group); -1 when unknown.
    int group = -1;

    Index n_k() const { return train.size(); }
};

enum class SkewKind { iid, label_skew, concept_shift, quantity_skew };

struct SkewSpec {
    SkewKind kind = SkewKind::label_skew;
    /// Majority-class fraction.
    double p = 0.2;
    int n_majority = 2;
    /// Concept shift: client k belongs to group k mod rotation_groups and is
    /// rotated by group * rotation_step radians.
    int rotation_groups = 2;
    double rotation_step = 1.5707963267948966;
    /// Quantity skew: client sizes proportional to rank^-exponent.
    double exponent = 1.0;

    void validate(int n_classes) const;
};

/// Mean of class c: a point on a circle of radius `separation` in
/// coordinates (0, 1), zero elsewhere. Class c occupies circle slot
/// (c % 2) * ceil(M / 2) + c / 2 of M evenly spaced slots.
Eigen::VectorXd class_mean(int c, int n_classes, Index dim, double separation);

/// n_per_class samples per class from unit-variance isotropic Gaussians
/// around class_mean. Class-major order.
Dataset generate_base_dataset(std::uint64_t seed, int n_classes, Index dim, Index n_per_class,
                              double separation);

/// Rotates features by `angle` radians in the plane of coordinates (0, 1).
Dataset apply_concept_shift(const Dataset& samples, double angle);

/// Majority classes of a client under round-robin group assignment:
/// group g = client mod (M / n_majority) owns classes g*n_majority .. g*n_majority+n_majority-1.
std::vector<int> majority_classes(int client, int n_classes, int n_majority);

int majority_group(int client, int n_classes, int n_majority);

/// Per-class sampling probabilities for a client: p split evenly over the
/// majority classes, 1-p split evenly over the rest.
std::vector<double> label_skew_probabilities(int client, int n_classes, int n_majority, double p);

/// Draws per_client_n samples per client with replacement from per-class
/// pools of `samples`, following label_skew_probabilities.
std::vector<ClientPartition> partition_label_skew(const Dataset& samples, int n_classes, int K, double p,
                                                  int n_majority, Index per_client_n, std::uint64_t seed);

/// Client sizes proportional to rank^-exponent (rank 1 = client 0), rounded by
/// largest remainder so they sum to `total`.
std::vector<Index> quantity_skew_sizes(Index total, int K, double exponent);

/// Shuffles `samples` and hands out consecutive blocks of quantity_skew_sizes.
std::vector<ClientPartition> partition_quantity_skew(const Dataset& samples, int K, double exponent,
                                                     std::uint64_t seed);

/// Splits a client's samples (taken from partition.train) into disjoint
/// train/validation/test sets. Stratified by label when every label present
/// has at least 3 samples.
ClientPartition split_train_val_test(const ClientPartition& partition, double val_fraction,
                                     double test_fraction, std::uint64_t seed);

}  // namespace fedmoe
