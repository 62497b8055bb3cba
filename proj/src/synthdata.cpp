#include "fedmoe/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace fedmoe {

namespace {

// Splits `total` into parts proportional to `weights`, summing exactly to
// `total`. Leftover units go to the largest fractional remainders, ties to
// the lower index.
std::vector<Index> largest_remainder(Index total, const std::vector<double>& weights)
{
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<Index> out(weights.size(), 0);
    if (total == 0 || wsum <= 0.0)
        return out;
    std::vector<double> frac(weights.size());
    Index assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double ideal = static_cast<double>(total) * weights[i] / wsum;
        out[i] = static_cast<Index>(std::floor(ideal));
        frac[i] = ideal - static_cast<double>(out[i]);
        assigned += out[i];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned)
        ++out[order[i % order.size()]];
    return out;
}

}  // namespace

void SkewSpec::validate(int n_classes) const
{
    switch (kind) {
    case SkewKind::label_skew:
    case SkewKind::concept_shift:
        if (n_majority < 1 || n_majority >= n_classes)
            throw ConfigError("skew: n_majority must be in [1, n_classes)");
        if (!(p >= static_cast<double>(n_majority) / n_classes - 1e-12 && p <= 1.0))
            throw ConfigError("skew: p must be in [n_majority/n_classes, 1], got " + std::to_string(p));
        if (kind == SkewKind::concept_shift && rotation_groups < 1)
            throw ConfigError("skew: rotation_groups must be >= 1");
        break;
    case SkewKind::quantity_skew:
        if (!(exponent >= 0.0))
            throw ConfigError("skew: quantity exponent must be >= 0");
        break;
    case SkewKind::iid:
        break;
    }
}

Eigen::VectorXd class_mean(int c, int n_classes, Index dim, double separation)
{
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    // even classes fill the first half of the circle, odd classes the second,
    // so classes 2g and 2g+1 sit roughly opposite each other
    const int slot = (c % 2) * ((n_classes + 1) / 2) + c / 2;
    const double theta = 2.0 * std::numbers::pi * slot / n_classes;
    mean(0) = separation * std::cos(theta);
    mean(1) = separation * std::sin(theta);
    return mean;
}

Dataset generate_base_dataset(std::uint64_t seed, int n_classes, Index dim, Index n_per_class,
                              double separation)
{
    if (n_classes < 2)
        throw ConfigError("generate_base_dataset: need at least 2 classes");
    if (dim < 2)
        throw ConfigError("generate_base_dataset: need dim >= 2");
    if (n_per_class < 1)
        throw ConfigError("generate_base_dataset: need n_per_class >= 1");
    if (!(separation > 0.0))
        throw ConfigError("generate_base_dataset: separation must be positive");

    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset out;
    out.features.resize(n_classes * n_per_class, dim);
    out.labels.resize(n_classes * n_per_class);
    Index row = 0;
    for (int c = 0; c < n_classes; ++c) {
        const Eigen::VectorXd mean = class_mean(c, n_classes, dim, separation);
        for (Index i = 0; i < n_per_class; ++i, ++row) {
            for (Index j = 0; j < dim; ++j)
                out.features(row, j) = mean(j) + noise(rng);
            out.labels(row) = c;
        }
    }
    return out;
}

Dataset apply_concept_shift(const Dataset& samples, double angle)
{
    if (samples.dim() < 2)
        throw ShapeError("apply_concept_shift: need dim >= 2");
    Dataset out = samples;
    if (angle == 0.0)
        return out;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    out.features.col(0) = c * samples.features.col(0) - s * samples.features.col(1);
    out.features.col(1) = s * samples.features.col(0) + c * samples.features.col(1);
    return out;
}

int majority_group(int client, int n_classes, int n_majority)
{
    return client % (n_classes / n_majority);
}

std::vector<int> majority_classes(int client, int n_classes, int n_majority)
{
    const int g = majority_group(client, n_classes, n_majority);
    std::vector<int> out(n_majority);
    std::iota(out.begin(), out.end(), g * n_majority);
    return out;
}

std::vector<double> label_skew_probabilities(int client, int n_classes, int n_majority, double p)
{
    std::vector<double> prob(n_classes, (1.0 - p) / (n_classes - n_majority));
    for (int c : majority_classes(client, n_classes, n_majority))
        prob[c] = p / n_majority;
    return prob;
}

std::vector<ClientPartition> partition_label_skew(const Dataset& samples, int n_classes, int K, double p,
                                                  int n_majority, Index per_client_n, std::uint64_t seed)
{
    SkewSpec{SkewKind::label_skew, p, n_majority}.validate(n_classes);
    if (K < 1 || per_client_n < 1)
        throw ConfigError("partition_label_skew: need K >= 1 and per_client_n >= 1");

    std::vector<std::vector<Index>> pools(n_classes);
    for (Index i = 0; i < samples.size(); ++i) {
        const int y = samples.labels(i);
        if (y < 0 || y >= n_classes)
            throw ConfigError("partition_label_skew: label out of range");
        pools[y].push_back(i);
    }

    Rng rng(seed);
    std::vector<ClientPartition> out;
    out.reserve(K);
    for (int k = 0; k < K; ++k) {
        const auto prob = label_skew_probabilities(k, n_classes, n_majority, p);
        std::vector<double> cdf(prob.size());
        std::partial_sum(prob.begin(), prob.end(), cdf.begin());

        std::vector<Index> picks(per_client_n);
        for (auto& pick : picks) {
            const double u = uniform01(rng) * cdf.back();
            // first bucket whose cumulative mass exceeds u; zero-width buckets are skipped
            const int c = std::min(
                static_cast<int>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()), n_classes - 1);
            if (pools[c].empty())
                throw ConfigError("partition_label_skew: no samples of class " + std::to_string(c));
            pick = pools[c][uniform_index(rng, static_cast<Index>(pools[c].size()))];
        }
        ClientPartition part;
        part.client_id = k;
        part.train = samples.rows(picks);
        part.group = majority_group(k, n_classes, n_majority);
        out.push_back(std::move(part));
    }
    return out;
}

std::vector<Index> quantity_skew_sizes(Index total, int K, double exponent)
{
    if (K < 1)
        throw ConfigError("quantity_skew_sizes: need K >= 1");
    if (!(exponent >= 0.0))
        throw ConfigError("quantity_skew_sizes: exponent must be >= 0");
    std::vector<double> w(K);
    for (int r = 0; r < K; ++r)
        w[r] = std::pow(static_cast<double>(r + 1), -exponent);
    return largest_remainder(total, w);
}

std::vector<ClientPartition> partition_quantity_skew(const Dataset& samples, int K, double exponent,
                                                     std::uint64_t seed)
{
    const auto sizes = quantity_skew_sizes(samples.size(), K, exponent);
    std::vector<Index> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<ClientPartition> out;
    out.reserve(K);
    Index offset = 0;
    for (int k = 0; k < K; ++k) {
        std::vector<Index> idx(order.begin() + offset, order.begin() + offset + sizes[k]);
        std::sort(idx.begin(), idx.end());
        offset += sizes[k];
        ClientPartition part;
        part.client_id = k;
        part.train = samples.rows(idx);
        out.push_back(std::move(part));
    }
    return out;
}

ClientPartition split_train_val_test(const ClientPartition& partition, double val_fraction,
                                     double test_fraction, std::uint64_t seed)
{
    if (!(val_fraction > 0.0) || !(test_fraction > 0.0) || !(val_fraction + test_fraction < 1.0))
        throw ConfigError("split: fractions must be positive with sum < 1");

    const Dataset& all = partition.train;
    const Index n = all.size();
    const Index n_val = std::llround(val_fraction * static_cast<double>(n));
    const Index n_test = std::llround(test_fraction * static_cast<double>(n));
    const Index n_train = n - n_val - n_test;
    if (n_val < 1 || n_test < 1 || n_train < 1)
        throw ConfigError("split: client " + std::to_string(partition.client_id) + " with " +
                          std::to_string(n) + " samples yields an empty split");

    Rng rng(seed);
    std::vector<Index> train_idx, val_idx, test_idx;

    const int n_labels = all.labels.size() ? all.labels.maxCoeff() + 1 : 0;
    std::vector<std::vector<Index>> by_label(std::max(n_labels, 0));
    for (Index i = 0; i < n; ++i)
        by_label[all.labels(i)].push_back(i);
    const bool stratified = std::all_of(by_label.begin(), by_label.end(),
                                        [](const auto& v) { return v.empty() || v.size() >= 3; });

    if (stratified) {
        std::vector<double> counts(by_label.size());
        for (std::size_t c = 0; c < by_label.size(); ++c)
            counts[c] = static_cast<double>(by_label[c].size());
        const auto train_c = largest_remainder(n_train, counts);
        std::vector<double> rest(by_label.size());
        for (std::size_t c = 0; c < by_label.size(); ++c)
            rest[c] = counts[c] - static_cast<double>(train_c[c]);
        const auto val_c = largest_remainder(n_val, rest);
        for (std::size_t c = 0; c < by_label.size(); ++c) {
            auto& v = by_label[c];
            std::shuffle(v.begin(), v.end(), rng);
            const auto t_end = v.begin() + train_c[c];
            const auto v_end = t_end + val_c[c];
            train_idx.insert(train_idx.end(), v.begin(), t_end);
            val_idx.insert(val_idx.end(), t_end, v_end);
            test_idx.insert(test_idx.end(), v_end, v.end());
        }
    } else {
        std::vector<Index> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        train_idx.assign(order.begin(), order.begin() + n_train);
        val_idx.assign(order.begin() + n_train, order.begin() + n_train + n_val);
        test_idx.assign(order.begin() + n_train + n_val, order.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    ClientPartition out;
    out.client_id = partition.client_id;
    out.group = partition.group;
    out.train = all.rows(train_idx);
    out.validation = all.rows(val_idx);
    out.test = all.rows(test_idx);
    return out;
}

}  // namespace fedmoe
