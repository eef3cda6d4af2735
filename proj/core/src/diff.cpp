#include "pcdistill/diff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "pcdistill/errors.hpp"

namespace pcdistill::diff {

namespace {

DiffNode make_node(Mat value, std::vector<NodePtr> parents,
                   std::function<void(const Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {  // constant subgraphs carry no tape
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return DiffNode(n);
}

void check_same_shape(const DiffNode& a, const DiffNode& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

DiffNode DiffNode::constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return DiffNode(n);
}

DiffNode DiffNode::param(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return DiffNode(n);
}

const Mat& DiffNode::grad() const {
    if (!node_ || node_->grad.size() == 0)
        throw StateError("DiffNode::grad: no gradient populated");
    return node_->grad;
}

double DiffNode::scalar() const {
    if (rows() != 1 || cols() != 1)
        throw std::invalid_argument("DiffNode::scalar: node is not 1x1");
    return node_->value(0, 0);
}

void DiffNode::zero_grad() {
    if (node_) node_->grad = Mat::Zero(node_->value.rows(), node_->value.cols());
}

DiffNode pointwise_linear(const DiffNode& x, const DiffNode& W, const DiffNode& b) {
    if (x.cols() != W.rows())
        throw std::invalid_argument("pointwise_linear: x/W shape mismatch");
    if (b.rows() != 1 || b.cols() != W.cols())
        throw std::invalid_argument("pointwise_linear: bias shape mismatch");
    Mat y = x.value() * W.value();
    y.rowwise() += b.value().row(0);
    auto xp = x.ptr(), wp = W.ptr(), bp = b.ptr();
    return make_node(std::move(y), {xp, wp, bp}, [xp, wp, bp](const Node& n) {
        if (xp->requires_grad) xp->grad_ref() += n.grad * wp->value.transpose();
        if (wp->requires_grad) wp->grad_ref() += xp->value.transpose() * n.grad;
        if (bp->requires_grad) bp->grad_ref() += n.grad.colwise().sum();
    });
}

DiffNode matmul(const DiffNode& a, const DiffNode& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimension mismatch");
    auto ap = a.ptr(), bp = b.ptr();
    return make_node(a.value() * b.value(), {ap, bp}, [ap, bp](const Node& n) {
        if (ap->requires_grad) ap->grad_ref() += n.grad * bp->value.transpose();
        if (bp->requires_grad) bp->grad_ref() += ap->value.transpose() * n.grad;
    });
}

DiffNode concat_cols(const DiffNode& a, const DiffNode& b) {
    if (a.rows() != b.rows())
        throw std::invalid_argument("concat_cols: row mismatch");
    Mat y(a.rows(), a.cols() + b.cols());
    y.leftCols(a.cols()) = a.value();
    y.rightCols(b.cols()) = b.value();
    auto ap = a.ptr(), bp = b.ptr();
    const Index ca = a.cols(), cb = b.cols();
    return make_node(std::move(y), {ap, bp}, [ap, bp, ca, cb](const Node& n) {
        if (ap->requires_grad) ap->grad_ref() += n.grad.leftCols(ca);
        if (bp->requires_grad) bp->grad_ref() += n.grad.rightCols(cb);
    });
}

DiffNode slice_cols(const DiffNode& x, Index start, Index count) {
    if (start < 0 || count < 1 || start + count > x.cols())
        throw std::invalid_argument("slice_cols: range out of bounds");
    auto xp = x.ptr();
    return make_node(x.value().middleCols(start, count), {xp},
                     [xp, start, count](const Node& n) {
                         if (xp->requires_grad)
                             xp->grad_ref().middleCols(start, count) += n.grad;
                     });
}

DiffNode add(const DiffNode& a, const DiffNode& b) {
    check_same_shape(a, b, "add");
    auto ap = a.ptr(), bp = b.ptr();
    return make_node(a.value() + b.value(), {ap, bp}, [ap, bp](const Node& n) {
        if (ap->requires_grad) ap->grad_ref() += n.grad;
        if (bp->requires_grad) bp->grad_ref() += n.grad;
    });
}

DiffNode sub(const DiffNode& a, const DiffNode& b) {
    check_same_shape(a, b, "sub");
    auto ap = a.ptr(), bp = b.ptr();
    return make_node(a.value() - b.value(), {ap, bp}, [ap, bp](const Node& n) {
        if (ap->requires_grad) ap->grad_ref() += n.grad;
        if (bp->requires_grad) bp->grad_ref() -= n.grad;
    });
}

DiffNode hadamard(const DiffNode& a, const DiffNode& b) {
    check_same_shape(a, b, "hadamard");
    auto ap = a.ptr(), bp = b.ptr();
    return make_node(a.value().cwiseProduct(b.value()), {ap, bp}, [ap, bp](const Node& n) {
        if (ap->requires_grad) ap->grad_ref() += n.grad.cwiseProduct(bp->value);
        if (bp->requires_grad) bp->grad_ref() += n.grad.cwiseProduct(ap->value);
    });
}

DiffNode scale(const DiffNode& x, double c) {
    auto xp = x.ptr();
    return make_node(x.value() * c, {xp}, [xp, c](const Node& n) {
        if (xp->requires_grad) xp->grad_ref() += n.grad * c;
    });
}

DiffNode add_scalar(const DiffNode& x, double c) {
    auto xp = x.ptr();
    return make_node(x.value().array() + c, {xp}, [xp](const Node& n) {
        if (xp->requires_grad) xp->grad_ref() += n.grad;
    });
}

DiffNode sigmoid(const DiffNode& x) {
    Mat y = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
    auto xp = x.ptr();
    auto yv = std::make_shared<Mat>(y);
    return make_node(std::move(y), {xp}, [xp, yv](const Node& n) {
        if (xp->requires_grad)
            xp->grad_ref() +=
                n.grad.cwiseProduct((yv->array() * (1.0 - yv->array())).matrix());
    });
}

DiffNode relu(const DiffNode& x) {
    auto xp = x.ptr();
    return make_node(x.value().cwiseMax(0.0), {xp}, [xp](const Node& n) {
        if (xp->requires_grad)
            xp->grad_ref() +=
                n.grad.cwiseProduct((xp->value.array() > 0.0).cast<double>().matrix());
    });
}

DiffNode scale_rows(const DiffNode& x, const DiffNode& g) {
    if (g.cols() != 1 || g.rows() != x.rows())
        throw std::invalid_argument("scale_rows: gate must be n x 1");
    Mat y = x.value().array().colwise() * g.value().col(0).array();
    auto xp = x.ptr(), gp = g.ptr();
    return make_node(std::move(y), {xp, gp}, [xp, gp](const Node& n) {
        if (xp->requires_grad)
            xp->grad_ref() += (n.grad.array().colwise() * gp->value.col(0).array()).matrix();
        if (gp->requires_grad)
            gp->grad_ref() += n.grad.cwiseProduct(xp->value).rowwise().sum();
    });
}

DiffNode left_apply(const Mat& m, const DiffNode& x) {
    if (m.cols() != x.rows())
        throw std::invalid_argument("left_apply: resampling matrix/input mismatch");
    auto mp = std::make_shared<Mat>(m);
    auto xp = x.ptr();
    return make_node(m * x.value(), {xp}, [mp, xp](const Node& n) {
        if (xp->requires_grad) xp->grad_ref() += mp->transpose() * n.grad;
    });
}

DiffNode div_scalar(const DiffNode& x, const DiffNode& s) {
    if (s.rows() != 1 || s.cols() != 1)
        throw std::invalid_argument("div_scalar: divisor must be 1x1");
    const double sv = s.value()(0, 0);
    auto xp = x.ptr(), sp = s.ptr();
    return make_node(x.value() / sv, {xp, sp}, [xp, sp, sv](const Node& n) {
        if (xp->requires_grad) xp->grad_ref() += n.grad / sv;
        if (sp->requires_grad)
            sp->grad_ref()(0, 0) -= n.grad.cwiseProduct(xp->value).sum() / (sv * sv);
    });
}

DiffNode group_max_rows(const DiffNode& x, Index group_size) {
    if (group_size < 1 || x.rows() % group_size != 0)
        throw std::invalid_argument("group_max_rows: rows not divisible by group size");
    const Index groups = x.rows() / group_size;
    Mat y(groups, x.cols());
    IMat arg(groups, x.cols());
    for (Index g = 0; g < groups; ++g) {
        for (Index c = 0; c < x.cols(); ++c) {
            Index best = g * group_size;
            double bv = x.value()(best, c);
            for (Index r = 1; r < group_size; ++r) {
                double v = x.value()(g * group_size + r, c);
                if (v > bv) {  // strict: ties route to the lowest row
                    bv = v;
                    best = g * group_size + r;
                }
            }
            y(g, c) = bv;
            arg(g, c) = best;
        }
    }
    auto xp = x.ptr();
    auto argp = std::make_shared<IMat>(std::move(arg));
    return make_node(std::move(y), {xp}, [xp, argp](const Node& n) {
        if (!xp->requires_grad) return;
        Mat& gx = xp->grad_ref();
        for (Index g = 0; g < n.grad.rows(); ++g)
            for (Index c = 0; c < n.grad.cols(); ++c)
                gx((*argp)(g, c), c) += n.grad(g, c);
    });
}

DiffNode reduce_max_rows(const DiffNode& x) {
    if (x.rows() < 1) throw std::invalid_argument("reduce_max_rows: empty input");
    return group_max_rows(x, x.rows());
}

DiffNode rownorm(const DiffNode& x) {
    Mat y(x.rows(), 1);
    for (Index i = 0; i < x.rows(); ++i) y(i, 0) = x.value().row(i).norm();
    auto xp = x.ptr();
    auto yv = std::make_shared<Mat>(y);
    return make_node(std::move(y), {xp}, [xp, yv](const Node& n) {
        if (!xp->requires_grad) return;
        Mat& gx = xp->grad_ref();
        for (Index i = 0; i < gx.rows(); ++i) {
            double norm = (*yv)(i, 0);
            if (norm > 0.0) gx.row(i) += (n.grad(i, 0) / norm) * xp->value.row(i);
        }
    });
}

DiffNode reduce_sum(const DiffNode& x) {
    Mat y(1, 1);
    y(0, 0) = x.value().sum();
    auto xp = x.ptr();
    return make_node(std::move(y), {xp}, [xp](const Node& n) {
        if (xp->requires_grad) xp->grad_ref().array() += n.grad(0, 0);
    });
}

DiffNode softmax_cross_entropy(const DiffNode& logits, int label) {
    if (logits.rows() != 1 || logits.cols() < 2)
        throw std::invalid_argument("softmax_cross_entropy: logits must be 1 x C, C >= 2");
    if (label < 0 || label >= logits.cols())
        throw std::invalid_argument("softmax_cross_entropy: label out of range");
    const double mx = logits.value().maxCoeff();
    Mat shifted = logits.value().array() - mx;
    const double lse = std::log(shifted.array().exp().sum());
    Mat softmax = (shifted.array() - lse).exp();
    Mat y(1, 1);
    y(0, 0) = lse - shifted(0, label);
    auto lp = logits.ptr();
    auto sm = std::make_shared<Mat>(std::move(softmax));
    return make_node(std::move(y), {lp}, [lp, sm, label](const Node& n) {
        if (!lp->requires_grad) return;
        Mat g = *sm;
        g(0, label) -= 1.0;
        lp->grad_ref() += n.grad(0, 0) * g;
    });
}

void backward(const DiffNode& root) {
    if (!root) throw std::invalid_argument("backward: empty node");
    if (root.rows() != 1 || root.cols() != 1)
        throw std::invalid_argument("backward: root must be scalar");

    // Iterative post-order DFS; each node enters the order exactly once.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.ptr().get(), 0);
    seen.insert(root.ptr().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients are owned by this pass; leaves accumulate.
    for (Node* n : order)
        if (n->backprop) n->grad = Mat::Zero(n->value.rows(), n->value.cols());
    root.ptr()->grad_ref()(0, 0) += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->requires_grad) n->backprop(*n);
    }
}

double grad_check(const std::function<DiffNode()>& f, std::span<DiffNode> params, double h) {
    if (h < 1e-7 || h > 1e-3)
        throw std::invalid_argument("grad_check: h must be in [1e-7, 1e-3]");

    for (DiffNode& p : params) p.zero_grad();
    DiffNode root = f();
    backward(root);
    if (!std::isfinite(root.scalar())) throw NumericError("grad_check: non-finite loss");

    std::vector<Mat> analytic;
    analytic.reserve(params.size());
    for (const DiffNode& p : params) analytic.push_back(p.grad());

    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Mat& v = params[pi].mutable_value();
        for (Index r = 0; r < v.rows(); ++r) {
            for (Index c = 0; c < v.cols(); ++c) {
                const double saved = v(r, c);
                v(r, c) = saved + h;
                const double fp = f().scalar();
                v(r, c) = saved - h;
                const double fm = f().scalar();
                v(r, c) = saved;
                if (!std::isfinite(fp) || !std::isfinite(fm))
                    throw NumericError("grad_check: non-finite perturbed loss");
                const double fd = (fp - fm) / (2.0 * h);
                const double a = analytic[pi](r, c);
                const double err = std::abs(a - fd) / (std::abs(a) + std::abs(fd) + 1e-12);
                if (err > max_err) max_err = err;
            }
        }
    }
    return max_err;
}

}  // namespace pcdistill::diff
