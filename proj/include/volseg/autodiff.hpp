#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "volseg/tensor.hpp"

namespace volseg::ad {

using NodeId = int32_t;
using Stride3 = std::array<int64_t, 3>;

class Tape;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
};

/// Reverse-mode tape. Creation order is a topological order, so backward()
/// is a single reverse sweep. Nodes whose subgraph contains no trainable
/// leaf carry requires_grad=false and are skipped entirely, which is what
/// makes frozen-encoder training measurably cheaper than full fine-tuning.
class Tape {
public:
    NodeId leaf(Tensor value, bool requires_grad);
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

    /// Gradient of the last backward() w.r.t. node `id`; zeros if untouched.
    const Tensor& grad(NodeId id);

    // --- elementwise / shape ops -------------------------------------------
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId affine(NodeId x, double scale, double shift);
    NodeId leaky_relu(NodeId x, double slope);
    NodeId sigmoid(NodeId x);
    NodeId concat_channels(NodeId a, NodeId b);

    // --- convolution stack -------------------------------------------------
    /// x:[n,ci,z,y,x]  w:[co,ci,kz,ky,kx]  b:[co]; zero padding `pad`.
    NodeId conv3d(NodeId x, NodeId w, NodeId b, Stride3 stride, Stride3 pad);
    /// Upsampling transposed conv with kernel == stride (no output overlap).
    /// x:[n,ci,z,y,x]  w:[ci,co,sz,sy,sx]  b:[co] -> [n,co,z*sz,y*sy,x*sx].
    NodeId conv3d_transpose(NodeId x, NodeId w, NodeId b, Stride3 stride);
    /// Per-(sample,channel) spatial standardization with affine terms.
    NodeId instance_norm(NodeId x, NodeId gamma, NodeId beta, double eps);

    // --- fusion-unit ops ---------------------------------------------------
    NodeId global_avg_pool(NodeId x);                     // [n,c,z,y,x] -> [n,c]
    NodeId linear(NodeId x, NodeId w);                    // [n,fi] x w:[fo,fi] -> [n,fo]
    NodeId feature_norm(NodeId x, NodeId gamma, NodeId beta, double eps);  // [n,f]
    NodeId channel_scale(NodeId x, NodeId s);             // x:[n,c,...] * s:[n,c]

    // --- scalar combination ------------------------------------------------
    NodeId weighted_sum(const std::vector<NodeId>& xs, const std::vector<double>& ws);

    /// Custom node escape hatch used by the loss implementation.
    NodeId custom(Tensor value, std::vector<NodeId> parents,
                  std::function<void(Tape&)> backward_fn);

    void backward(NodeId loss);

    size_t size() const { return nodes_.size(); }

    Tensor& grad_buffer(NodeId id);  // allocates zeros on demand
    Node& node(NodeId id) { return nodes_[id]; }

private:
    NodeId push(Node n);

    std::vector<Node> nodes_;
};

/// Central finite difference of `f` w.r.t. every element of `theta`.
Tensor finite_difference(const std::function<double(const Tensor&)>& f,
                         const Tensor& theta, double step);

/// max over elements of |a-b| / max(|a|,|b|,floor); used by gradient checks.
double max_relative_error(const Tensor& a, const Tensor& b, double abs_floor = 1e-8);

}  // namespace volseg::ad
