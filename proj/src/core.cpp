#include "fedmoe/core.hpp"

namespace fedmoe {

Dataset::Dataset(Eigen::MatrixXd x, Eigen::VectorXi y) : features(std::move(x)), labels(std::move(y))
{
    if (features.rows() != labels.size())
        throw ShapeError("dataset: feature rows and label count differ");
}

Sample Dataset::sample(Index i) const
{
    return Sample{features.row(i).transpose(), labels(i)};
}

Dataset Dataset::rows(const std::vector<Index>& indices) const
{
    Dataset out;
    out.features = features(indices, Eigen::all);
    out.labels = labels(indices);
    return out;
}

bool operator==(const Dataset& a, const Dataset& b)
{
    return a.features.rows() == b.features.rows() && a.features.cols() == b.features.cols() &&
           a.features == b.features && a.labels == b.labels;
}

Dataset concatenate(const std::vector<Dataset>& parts)
{
    Index n = 0;
    Index d = 0;
    for (const auto& p : parts) {
        if (p.empty())
            continue;
        if (d != 0 && p.dim() != d)
            throw ShapeError("concatenate: feature dimensions differ");
        d = p.dim();
        n += p.size();
    }
    Dataset out;
    out.features.resize(n, d);
    out.labels.resize(n);
    Index row = 0;
    for (const auto& p : parts) {
        if (p.empty())
            continue;
        out.features.middleRows(row, p.size()) = p.features;
        out.labels.segment(row, p.size()) = p.labels;
        row += p.size();
    }
    return out;
}

double uniform01(Rng& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Index uniform_index(Rng& rng, Index n)
{
    return std::uniform_int_distribution<Index>(0, n - 1)(rng);
}

std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::string_view tag)
{
    // FNV-1a over the role tag
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix64(mix64(mix64(master) ^ index) ^ h);
}

}  // namespace fedmoe
