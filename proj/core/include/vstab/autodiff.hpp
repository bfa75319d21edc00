#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "vstab/affine.hpp"

namespace vstab {

/// Dense row-major array of doubles with an optional gradient buffer.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double value = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> data);

    std::size_t size() const noexcept { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    /// Allocates (or clears) the gradient buffer.
    void zero_grad() { grad.assign(data.size(), 0.0); }
};

/// Product of the extents; 1 for a scalar (empty shape).
std::size_t shape_size(const std::vector<int>& shape);

/// Handle to a node recorded on a Graph.
struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode tape. Every op evaluates eagerly and records a closure that
/// propagates gradients to its inputs. Parameters are bound by pointer and
/// receive their gradients in Tensor::grad on backward().
class Graph {
public:
    /// Constant input; no gradient flows into it.
    Var constant(Tensor value, std::vector<std::uint8_t> mask = {});
    /// Differentiable leaf whose gradient is written to the node only.
    Var leaf(Tensor value);
    /// Trainable tensor living outside the graph (must outlive it).
    Var param(Tensor& tensor);

    /// x: [C,H,W], w: [O,C,k,k], b: [O]. VALID padding.
    Var conv2d(Var x, Var w, Var b, int stride);
    Var relu(Var x);
    /// [C,H,W] -> [C], mean over the spatial axes.
    Var spatial_mean(Var x);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    /// Elementwise product with a constant of the same size.
    Var mul_const(Var a, const std::vector<double>& c);
    Var sum(Var a);

    /// Mean of (a - b)^2 over all elements.
    Var mse(Var a, Var b);
    /// Mean of (a - b)^2 over positions where both node masks are valid.
    /// Throws EmptyOverlap when none are.
    Var masked_mse(Var a, Var b);

    /// Rigid composition on (theta, dx, dy) triples about a common center:
    /// the result is "apply a, then b".
    Var compose_params(Var a, Var b);

    /// Resamples a single-channel [H,W] image by the rigid transform given as
    /// a (theta, dx, dy) node in pixels about `center`. Bilinear on the
    /// inverse map; taps outside the image read as 0. The output mask marks
    /// pixels whose contributing taps are all in bounds and valid.
    /// Differentiable with respect to both the image and the parameters.
    Var warp(Var image, Var params, const RotationCenter& center);
    /// Same with a fixed matrix; differentiable with respect to the image.
    Var warp_fixed(Var image, const AffineMatrix& m);

    const Tensor& value(Var v) const;
    double scalar(Var v) const;
    /// Per-element validity (empty means all valid).
    const std::vector<std::uint8_t>& mask(Var v) const;
    /// Gradient accumulated on a node by the last backward().
    const std::vector<double>& grad(Var v) const;

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Parameter
    /// gradients are added to their Tensor::grad. Throws GraphNotRecorded if
    /// `loss` is not a scalar node of this graph.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear();

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::vector<std::uint8_t> mask;
        bool requires_grad = false;
        Tensor* param = nullptr;
        std::function<void(Graph&)> backward;
    };

    Var push(Node node);
    Node& node(Var v);
    const Node& node(Var v) const;
    bool needs(Var v) const { return node(v).requires_grad; }
    std::vector<double>& grad_of(Var v);
    Var warp_impl(Var image, Var params, const RotationCenter& center, const AffineMatrix* fixed);

    std::vector<Node> nodes_;
};

}  // namespace vstab
