#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "fedmoe/core.hpp"

namespace fedmoe {

enum class ArchKind { linear_softmax, mlp_one_hidden };

/// Classifier architecture. Parameter layout in the flat vector:
///   linear: W (n_outputs x input_dim, column-major), b (n_outputs)
///   mlp:    W1 (hidden x input_dim), b1 (hidden), W2 (n_outputs x hidden), b2 (n_outputs)
/// The hidden layer uses tanh.
struct ArchSpec {
    ArchKind kind = ArchKind::linear_softmax;
    Index input_dim = 2;
    Index n_outputs = 2;
    Index hidden = 0;

    static ArchSpec linear(Index input_dim, Index n_outputs) { return {ArchKind::linear_softmax, input_dim, n_outputs, 0}; }
    static ArchSpec mlp(Index input_dim, Index hidden, Index n_outputs) { return {ArchKind::mlp_one_hidden, input_dim, n_outputs, hidden}; }

    Index param_count() const
    {
        if (kind == ArchKind::linear_softmax)
            return n_outputs * input_dim + n_outputs;
        return hidden * input_dim + hidden + n_outputs * hidden + n_outputs;
    }

    void validate() const
    {
        if (input_dim < 1)
            throw ConfigError("arch: input_dim must be >= 1");
        if (n_outputs < 2)
            throw ConfigError("arch: n_outputs must be >= 2");
        if (kind == ArchKind::mlp_one_hidden && hidden < 1)
            throw ConfigError("arch: mlp hidden width must be >= 1");
    }

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

template <typename Scalar>
struct BasicModelParams {
    Vector<Scalar> values;
    ArchSpec arch;

    BasicModelParams() = default;
    BasicModelParams(Vector<Scalar> v, ArchSpec a) : values(std::move(v)), arch(a)
    {
        if (values.size() != arch.param_count())
            throw ShapeError("model params: length " + std::to_string(values.size()) + " does not match arch (" +
                             std::to_string(arch.param_count()) + ")");
    }

    static BasicModelParams zeros(const ArchSpec& a) { return {Vector<Scalar>::Zero(a.param_count()), a}; }

    friend bool operator==(const BasicModelParams& a, const BasicModelParams& b)
    {
        return a.arch == b.arch && a.values.size() == b.values.size() && a.values == b.values;
    }
};

using ModelParams = BasicModelParams<double>;

/// Floor applied to the target probability inside the NLL.
inline constexpr double kProbFloor = 1e-12;

/// Row-wise numerically stable softmax.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits)
{
    using Scalar = typename Derived::Scalar;
    Matrix<Scalar> out = logits.colwise() - logits.rowwise().maxCoeff();
    out = out.array().exp();
    out.array().colwise() /= out.rowwise().sum().array();
    return out;
}

namespace detail {

template <typename Scalar>
struct LayerViews {
    using ConstMap = Eigen::Map<const Matrix<Scalar>>;
    using ConstVecMap = Eigen::Map<const Vector<Scalar>>;

    static ConstMap weight(const Vector<Scalar>& v, Index offset, Index rows, Index cols)
    {
        return ConstMap(v.data() + offset, rows, cols);
    }
    static ConstVecMap bias(const Vector<Scalar>& v, Index offset, Index n) { return ConstVecMap(v.data() + offset, n); }
};

inline void check_input(const ArchSpec& arch, Index cols)
{
    if (cols != arch.input_dim)
        throw ShapeError("model: feature dimension " + std::to_string(cols) + " does not match arch input " +
                         std::to_string(arch.input_dim));
}

}  // namespace detail

/// Hidden activations of the mlp (n x hidden). Empty for linear models.
template <typename Scalar, typename Derived>
Matrix<Scalar> hidden_activations(const BasicModelParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x)
{
    const ArchSpec& a = params.arch;
    if (a.kind != ArchKind::mlp_one_hidden)
        return {};
    using V = detail::LayerViews<Scalar>;
    const auto w1 = V::weight(params.values, 0, a.hidden, a.input_dim);
    const auto b1 = V::bias(params.values, a.hidden * a.input_dim, a.hidden);
    Matrix<Scalar> pre = x * w1.transpose();
    pre.rowwise() += b1.transpose();
    return pre.array().tanh().matrix();
}

/// Pre-softmax outputs, one row per sample.
template <typename Scalar, typename Derived>
Matrix<Scalar> logits(const BasicModelParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x)
{
    const ArchSpec& a = params.arch;
    detail::check_input(a, x.cols());
    using V = detail::LayerViews<Scalar>;
    if (a.kind == ArchKind::linear_softmax) {
        const auto w = V::weight(params.values, 0, a.n_outputs, a.input_dim);
        const auto b = V::bias(params.values, a.n_outputs * a.input_dim, a.n_outputs);
        Matrix<Scalar> z = x * w.transpose();
        z.rowwise() += b.transpose();
        return z;
    }
    const Index off2 = a.hidden * a.input_dim + a.hidden;
    const auto w2 = V::weight(params.values, off2, a.n_outputs, a.hidden);
    const auto b2 = V::bias(params.values, off2 + a.n_outputs * a.hidden, a.n_outputs);
    Matrix<Scalar> z = hidden_activations(params, x) * w2.transpose();
    z.rowwise() += b2.transpose();
    return z;
}

/// Class probabilities for a batch (n x n_outputs).
template <typename Scalar, typename Derived>
Matrix<Scalar> forward(const BasicModelParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x)
{
    return softmax_rows(logits(params, x));
}

/// Class probabilities for a single feature vector.
template <typename Scalar, typename Derived>
Vector<Scalar> forward_one(const BasicModelParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x)
{
    return forward(params, x.transpose()).row(0).transpose();
}

/// -log(prob[label]) with the probability floored at kProbFloor.
template <typename Derived>
typename Derived::Scalar nll_loss(const Eigen::MatrixBase<Derived>& prob, int label)
{
    using Scalar = typename Derived::Scalar;
    if (label < 0 || label >= prob.size())
        throw ShapeError("nll_loss: label outside probability vector");
    return -std::log(std::max(prob(label), Scalar(kProbFloor)));
}

/// Sum over rows of nll_loss(probs.row(i), labels(i)).
template <typename Derived>
typename Derived::Scalar total_nll(const Eigen::MatrixBase<Derived>& probs, const Eigen::VectorXi& labels)
{
    using Scalar = typename Derived::Scalar;
    Scalar sum(0);
    for (Index i = 0; i < probs.rows(); ++i)
        sum += nll_loss(probs.row(i), labels(i));
    return sum;
}

template <typename Scalar>
Scalar total_loss(const BasicModelParams<Scalar>& params, const Dataset& data)
{
    return total_nll(forward(params, data.features.template cast<Scalar>()), data.labels);
}

template <typename Scalar>
Scalar mean_loss(const BasicModelParams<Scalar>& params, const Dataset& data)
{
    if (data.empty())
        throw ConfigError("mean_loss: empty dataset");
    return total_loss(params, data) / static_cast<Scalar>(data.size());
}

/// Parameter gradient given the gradient of the objective with respect to
/// the logits (n x n_outputs).
template <typename Scalar, typename DX, typename DZ>
Vector<Scalar> backward(const BasicModelParams<Scalar>& params, const Eigen::MatrixBase<DX>& x,
                        const Eigen::MatrixBase<DZ>& dlogits)
{
    const ArchSpec& a = params.arch;
    detail::check_input(a, x.cols());
    if (dlogits.rows() != x.rows() || dlogits.cols() != a.n_outputs)
        throw ShapeError("backward: logit gradient shape mismatch");
    Vector<Scalar> grad(a.param_count());
    using Map = Eigen::Map<Matrix<Scalar>>;

    if (a.kind == ArchKind::linear_softmax) {
        Map(grad.data(), a.n_outputs, a.input_dim) = dlogits.transpose() * x;
        grad.tail(a.n_outputs) = dlogits.colwise().sum().transpose();
        return grad;
    }
    using V = detail::LayerViews<Scalar>;
    const Index off2 = a.hidden * a.input_dim + a.hidden;
    const auto w2 = V::weight(params.values, off2, a.n_outputs, a.hidden);
    const Matrix<Scalar> h = hidden_activations(params, x);

    Map(grad.data() + off2, a.n_outputs, a.hidden) = dlogits.transpose() * h;
    grad.tail(a.n_outputs) = dlogits.colwise().sum().transpose();

    const Matrix<Scalar> dpre = ((dlogits * w2).array() * (Scalar(1) - h.array().square())).matrix();
    Map(grad.data(), a.hidden, a.input_dim) = dpre.transpose() * x;
    grad.segment(a.hidden * a.input_dim, a.hidden) = dpre.colwise().sum().transpose();
    return grad;
}

/// Exact gradient of the mean NLL over a batch.
template <typename Scalar>
Vector<Scalar> gradient(const BasicModelParams<Scalar>& params, const Dataset& batch)
{
    if (batch.empty())
        throw ConfigError("gradient: empty batch");
    const Matrix<Scalar> x = batch.features.template cast<Scalar>();
    Matrix<Scalar> dz = forward(params, x);
    for (Index i = 0; i < batch.size(); ++i) {
        if (batch.labels(i) < 0 || batch.labels(i) >= params.arch.n_outputs)
            throw ShapeError("gradient: label outside model outputs");
        dz(i, batch.labels(i)) -= Scalar(1);
    }
    dz /= static_cast<Scalar>(batch.size());
    return backward(params, x, dz);
}

/// Uniform initialization in +-1/sqrt(fan_in) per layer (weights and biases).
ModelParams init_params(const ArchSpec& arch, std::uint64_t seed);

}  // namespace fedmoe
