#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "fedmoe/optim.hpp"
#include "fedmoe/synthdata.hpp"

using namespace fedmoe;

namespace {

std::vector<Index> label_counts(const Dataset& d, int n_classes)
{
    std::vector<Index> counts(n_classes, 0);
    for (Index i = 0; i < d.size(); ++i)
        ++counts[d.labels(i)];
    return counts;
}

}  // namespace

TEST(BaseDataset, CountsPerClass)
{
    const Dataset d = generate_base_dataset(1, 2, 2, 5, 4.0);
    EXPECT_EQ(d.size(), 10);
    EXPECT_EQ(d.dim(), 2);
    EXPECT_EQ(label_counts(d, 2), (std::vector<Index>{5, 5}));
}

TEST(BaseDataset, SameSeedIsBitwiseIdentical)
{
    EXPECT_EQ(generate_base_dataset(1, 4, 3, 50, 2.0), generate_base_dataset(1, 4, 3, 50, 2.0));
    EXPECT_FALSE(generate_base_dataset(1, 4, 3, 50, 2.0) == generate_base_dataset(2, 4, 3, 50, 2.0));
}

TEST(BaseDataset, WellSeparatedClassesAreLinearlySeparable)
{
    const Dataset train = generate_base_dataset(1, 3, 2, 200, 6.0);
    const Dataset held_out = generate_base_dataset(99, 3, 2, 200, 6.0);
    const ArchSpec arch = ArchSpec::linear(2, 3);
    auto opt = OptimizerState::sgd({0.1});
    Rng rng(7);
    const ModelParams w = local_update(init_params(arch, 3), train, 20, 32, opt, rng);

    const Eigen::MatrixXd p = forward(w, held_out.features);
    Index correct = 0;
    for (Index i = 0; i < held_out.size(); ++i) {
        Index best;
        p.row(i).maxCoeff(&best);
        correct += best == held_out.labels(i);
    }
    EXPECT_GT(static_cast<double>(correct) / held_out.size(), 0.95);
}

TEST(BaseDataset, InvalidDimensionsRaise)
{
    EXPECT_THROW(generate_base_dataset(1, 1, 2, 5, 1.0), ConfigError);
    EXPECT_THROW(generate_base_dataset(1, 3, 1, 5, 1.0), ConfigError);
    EXPECT_THROW(generate_base_dataset(1, 3, 2, 0, 1.0), ConfigError);
    EXPECT_THROW(generate_base_dataset(1, 3, 2, 5, 0.0), ConfigError);
}

TEST(BaseDataset, ClassMeansLieOnTheCircle)
{
    for (int c = 0; c < 10; ++c) {
        const Eigen::VectorXd m = class_mean(c, 10, 5, 2.5);
        EXPECT_NEAR(m.head(2).norm(), 2.5, 1e-12);
        EXPECT_EQ(m.tail(3).norm(), 0.0);
    }
    // majority pairs sit opposite each other
    EXPECT_NEAR((class_mean(0, 10, 2, 1.0) + class_mean(1, 10, 2, 1.0)).norm(), 0.0, 1e-12);
}

TEST(ConceptShift, ZeroAngleIsIdentity)
{
    const Dataset d = generate_base_dataset(3, 3, 4, 20, 2.0);
    EXPECT_EQ(apply_concept_shift(d, 0.0), d);
}

TEST(ConceptShift, HalfTurnTwiceRestoresFeatures)
{
    const Dataset d = generate_base_dataset(3, 3, 4, 20, 2.0);
    const Dataset back = apply_concept_shift(apply_concept_shift(d, std::numbers::pi), std::numbers::pi);
    EXPECT_LE((back.features - d.features).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(back.labels, d.labels);
}

TEST(ConceptShift, QuarterTurnMapsFirstAxisToSecond)
{
    Eigen::MatrixXd x(1, 3);
    x << 1.0, 0.0, 5.0;
    const Dataset out = apply_concept_shift(Dataset(x, Eigen::VectorXi::Zero(1)), std::numbers::pi / 2);
    EXPECT_NEAR(out.features(0, 0), 0.0, 1e-12);
    EXPECT_NEAR(out.features(0, 1), 1.0, 1e-12);
    EXPECT_EQ(out.features(0, 2), 5.0);
}

TEST(ConceptShift, PreservesLabelsAndPlaneNorms)
{
    const Dataset d = generate_base_dataset(5, 4, 3, 30, 3.0);
    const Dataset r = apply_concept_shift(d, 0.7);
    EXPECT_EQ(r.labels, d.labels);
    for (Index i = 0; i < d.size(); ++i) {
        EXPECT_NEAR(r.features.row(i).head(2).norm(), d.features.row(i).head(2).norm(), 1e-9);
        EXPECT_EQ(r.features(i, 2), d.features(i, 2));
    }
}

TEST(ConceptShift, OneDimensionalFeaturesRaise)
{
    EXPECT_THROW(apply_concept_shift(Dataset(Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXi::Zero(2)), 1.0),
                 ShapeError);
}

TEST(LabelSkew, IidFractionGivesEqualClassProbabilities)
{
    const auto prob = label_skew_probabilities(0, 10, 2, 0.2);
    for (double q : prob)
        EXPECT_NEAR(q, 0.1, 1e-15);
}

TEST(LabelSkew, MajorityPairsAreRoundRobin)
{
    EXPECT_EQ(majority_classes(0, 10, 2), (std::vector<int>{0, 1}));
    EXPECT_EQ(majority_classes(1, 10, 2), (std::vector<int>{2, 3}));
    EXPECT_EQ(majority_classes(4, 10, 2), (std::vector<int>{8, 9}));
    EXPECT_EQ(majority_classes(5, 10, 2), (std::vector<int>{0, 1}));
    EXPECT_EQ(majority_group(7, 10, 2), 2);
}

TEST(LabelSkew, PathologicalClientsHoldOnlyTheirMajorityClasses)
{
    const Dataset pool = generate_base_dataset(2, 10, 2, 100, 2.0);
    const auto parts = partition_label_skew(pool, 10, 10, 1.0, 2, 200, 11);
    ASSERT_EQ(parts.size(), 10u);
    for (const auto& part : parts) {
        EXPECT_EQ(part.n_k(), 200);
        const auto maj = majority_classes(part.client_id, 10, 2);
        for (Index i = 0; i < part.train.size(); ++i)
            EXPECT_TRUE(std::find(maj.begin(), maj.end(), part.train.labels(i)) != maj.end());
        EXPECT_EQ(part.group, majority_group(part.client_id, 10, 2));
    }
}

TEST(LabelSkew, ClassCountsPassChiSquareAtOnePercent)
{
    // p = 0.6: majority classes expect 300 each, the other eight 50 each
    const Dataset pool = generate_base_dataset(4, 10, 2, 200, 2.0);
    const auto parts = partition_label_skew(pool, 10, 3, 0.6, 2, 1000, 21);
    for (const auto& part : parts) {
        const auto counts = label_counts(part.train, 10);
        const auto prob = label_skew_probabilities(part.client_id, 10, 2, 0.6);
        double chi2 = 0.0;
        for (int c = 0; c < 10; ++c) {
            const double expected = 1000.0 * prob[c];
            chi2 += (counts[c] - expected) * (counts[c] - expected) / expected;
        }
        // chi-square critical value, 9 degrees of freedom, alpha = 0.01
        EXPECT_LT(chi2, 21.666) << "client " << part.client_id;
    }
}

TEST(LabelSkew, FractionOutOfRangeRaises)
{
    const Dataset pool = generate_base_dataset(2, 10, 2, 10, 2.0);
    EXPECT_THROW(partition_label_skew(pool, 10, 2, 0.1, 2, 10, 1), ConfigError);
    EXPECT_THROW(partition_label_skew(pool, 10, 2, 1.01, 2, 10, 1), ConfigError);
    EXPECT_NO_THROW(partition_label_skew(pool, 10, 2, 0.2, 2, 10, 1));
}

TEST(QuantitySkew, ZeroExponentGivesEqualSizes)
{
    EXPECT_EQ(quantity_skew_sizes(400, 4, 0.0), (std::vector<Index>{100, 100, 100, 100}));
    const Dataset pool = generate_base_dataset(2, 4, 2, 100, 2.0);
    for (const auto& part : partition_quantity_skew(pool, 4, 0.0, 3))
        EXPECT_EQ(part.n_k(), 100);
}

TEST(QuantitySkew, HarmonicWeightsForUnitExponent)
{
    EXPECT_EQ(quantity_skew_sizes(300, 2, 1.0), (std::vector<Index>{200, 100}));
    const auto sizes = quantity_skew_sizes(301, 2, 1.0);
    EXPECT_LE(std::abs(sizes[0] - 2 * sizes[1]), 2);
}

TEST(QuantitySkew, SizesConserveTotalAndPartitionsAreDisjoint)
{
    const Dataset pool = generate_base_dataset(6, 3, 2, 77, 2.0);
    const auto sizes = quantity_skew_sizes(pool.size(), 7, 1.3);
    EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), Index{0}), pool.size());
    EXPECT_TRUE(std::is_sorted(sizes.rbegin(), sizes.rend()));

    const auto parts = partition_quantity_skew(pool, 7, 1.3, 8);
    Index total = 0;
    for (const auto& p : parts)
        total += p.n_k();
    EXPECT_EQ(total, pool.size());
}

TEST(QuantitySkew, NegativeExponentRaises)
{
    EXPECT_THROW(quantity_skew_sizes(10, 2, -1.0), ConfigError);
}

TEST(Split, SixtyTwentyTwenty)
{
    ClientPartition part;
    part.train = generate_base_dataset(1, 4, 2, 25, 2.0);
    const ClientPartition s = split_train_val_test(part, 0.2, 0.2, 5);
    EXPECT_EQ(s.train.size(), 60);
    EXPECT_EQ(s.validation.size(), 20);
    EXPECT_EQ(s.test.size(), 20);
}

TEST(Split, SameSeedSameSplit)
{
    ClientPartition part;
    part.train = generate_base_dataset(1, 4, 2, 25, 2.0);
    const auto a = split_train_val_test(part, 0.2, 0.2, 5);
    const auto b = split_train_val_test(part, 0.2, 0.2, 5);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.validation, b.validation);
    EXPECT_EQ(a.test, b.test);
}

TEST(Split, StratifiedTrainProportionsWithinOneSample)
{
    ClientPartition part;
    const Dataset pool = generate_base_dataset(9, 10, 2, 100, 2.0);
    part.train = partition_label_skew(pool, 10, 1, 0.6, 2, 317, 4).front().train;
    const auto s = split_train_val_test(part, 0.2, 0.2, 6);
    const auto all = label_counts(part.train, 10);
    const auto tr = label_counts(s.train, 10);
    const double share = static_cast<double>(s.train.size()) / part.train.size();
    for (int c = 0; c < 10; ++c)
        EXPECT_LE(std::abs(tr[c] - share * all[c]), 1.0) << "class " << c;
}

TEST(Split, SplitsAreDisjointAndCoverEverySample)
{
    // distinct features identify samples
    Eigen::MatrixXd x(50, 2);
    Eigen::VectorXi y(50);
    for (Index i = 0; i < 50; ++i) {
        x(i, 0) = static_cast<double>(i);
        x(i, 1) = 0.0;
        y(i) = static_cast<int>(i % 2 == 0 ? 0 : (i < 10 ? 1 : 2));
    }
    ClientPartition part;
    part.train = Dataset(x, y);
    const auto s = split_train_val_test(part, 0.3, 0.1, 2);
    std::multiset<double> seen;
    for (const Dataset* d : {&s.train, &s.validation, &s.test})
        for (Index i = 0; i < d->size(); ++i)
            seen.insert(d->features(i, 0));
    EXPECT_EQ(seen.size(), 50u);
    EXPECT_EQ(std::set<double>(seen.begin(), seen.end()).size(), 50u);
}

TEST(Split, RandomFallbackWhenALabelIsRare)
{
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(20, 2);
    Eigen::VectorXi y = Eigen::VectorXi::Zero(20);
    y(0) = 1;  // single sample of label 1
    ClientPartition part;
    part.train = Dataset(x, y);
    const auto s = split_train_val_test(part, 0.25, 0.25, 1);
    EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), 20);
    EXPECT_EQ(s.validation.size(), 5);
}

TEST(Split, EmptySplitRaises)
{
    ClientPartition part;
    part.train = generate_base_dataset(1, 2, 2, 1, 2.0);
    EXPECT_THROW(split_train_val_test(part, 0.2, 0.2, 1), ConfigError);
    part.train = generate_base_dataset(1, 2, 2, 50, 2.0);
    EXPECT_THROW(split_train_val_test(part, 0.6, 0.5, 1), ConfigError);
    EXPECT_THROW(split_train_val_test(part, 0.0, 0.5, 1), ConfigError);
}
