#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "pcdistill/types.hpp"

namespace pcdistill::diff {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in a dynamically built reverse-mode graph. Rank <= 2 is enough
/// for this pipeline; scalars are 1x1. Interior nodes keep their parents
/// alive; parameters are leaves that persist across graphs, so their
/// gradients accumulate until an optimizer step zeroes them.
struct Node {
    Mat value;
    Mat grad;  // empty until a backward pass touches this node
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(const Node&)> backprop;  // pull this->grad into parents

    Mat& grad_ref() {
        if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
        return grad;
    }
};

/// Shared handle to a graph node. Cheap to copy; value semantics over a
/// reference-counted body.
class DiffNode {
  public:
    DiffNode() = default;
    explicit DiffNode(NodePtr n) : node_(std::move(n)) {}

    /// Leaf with no gradient (inputs, frozen teacher features).
    static DiffNode constant(Mat v);
    /// Trainable leaf.
    static DiffNode param(Mat v);

    const Mat& value() const { return node_->value; }
    Mat& mutable_value() { return node_->value; }
    const Mat& grad() const;
    bool has_grad() const { return node_ && node_->grad.size() > 0; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    double scalar() const;

    void zero_grad();

    const NodePtr& ptr() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

  private:
    NodePtr node_;
};

// Graph-building operations. Each returns a fresh node; subgraphs whose
// inputs all have requires_grad == false are folded into constants.

/// Row-wise affine map x*W + b (the 1x1 convolution of point networks).
/// x: n x d_in, W: d_in x d_out, b: 1 x d_out.
DiffNode pointwise_linear(const DiffNode& x, const DiffNode& W, const DiffNode& b);

DiffNode matmul(const DiffNode& a, const DiffNode& b);
DiffNode concat_cols(const DiffNode& a, const DiffNode& b);
DiffNode slice_cols(const DiffNode& x, Index start, Index count);
DiffNode add(const DiffNode& a, const DiffNode& b);
DiffNode sub(const DiffNode& a, const DiffNode& b);
DiffNode hadamard(const DiffNode& a, const DiffNode& b);
DiffNode scale(const DiffNode& x, double c);
DiffNode add_scalar(const DiffNode& x, double c);
DiffNode sigmoid(const DiffNode& x);
DiffNode relu(const DiffNode& x);

/// Multiply each row i of x by the scalar g(i, 0) (gate broadcast).
DiffNode scale_rows(const DiffNode& x, const DiffNode& g);

/// y = M * x for a constant resampling matrix M (interpolation weights,
/// nearest-neighbor gathers, global repetition). Backward is M^T * dy.
DiffNode left_apply(const Mat& m, const DiffNode& x);

/// Divide every entry of x by the scalar node s (1x1).
DiffNode div_scalar(const DiffNode& x, const DiffNode& s);

/// Columnwise max over consecutive row groups of size group_size
/// (rows must be a multiple). Gradient routes to the argmax row of each
/// group, lowest row index on ties.
DiffNode group_max_rows(const DiffNode& x, Index group_size);

/// Columnwise max over all rows -> 1 x d.
DiffNode reduce_max_rows(const DiffNode& x);

/// Per-row Euclidean norm -> n x 1. Zero rows get zero gradient.
DiffNode rownorm(const DiffNode& x);

/// Sum of all entries -> 1 x 1.
DiffNode reduce_sum(const DiffNode& x);

/// -log softmax(logits)[label] for a 1 x C logits row.
DiffNode softmax_cross_entropy(const DiffNode& logits, int label);

/// Reverse-mode pass from a scalar root. Interior gradients are reset first,
/// so repeated calls on the same graph are reproducible; leaf gradients
/// accumulate across calls (per-batch accumulation).
void backward(const DiffNode& root);

/// Max relative error between analytic gradients and central finite
/// differences over every coordinate of every parameter:
///   |analytic - fd| / (|analytic| + |fd| + 1e-12).
/// f must rebuild its graph on each call. h must lie in [1e-7, 1e-3].
double grad_check(const std::function<DiffNode()>& f, std::span<DiffNode> params, double h);

}  // namespace pcdistill::diff
