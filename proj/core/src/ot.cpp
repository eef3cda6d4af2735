#include "pcdistill/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "pcdistill/errors.hpp"
#include "pcdistill/pointops.hpp"

namespace pcdistill::ot {

namespace {

bool is_uniform(const Vec& w) {
    if (w.size() == 0) return false;
    for (Index i = 1; i < w.size(); ++i)
        if (w(i) != w(0)) return false;
    return true;
}

void require_nonempty(const WeightedFeatureSet& s, const char* op) {
    if (s.size() == 0) throw std::invalid_argument(std::string(op) + ": empty set");
    if (s.weights.size() != s.size())
        throw std::invalid_argument(std::string(op) + ": weight/feature count mismatch");
}

/// Shortest-augmenting-path assignment with dual potentials, O(n^3).
/// Returns the column assigned to each row.
std::vector<Index> solve_assignment(const Mat& cost) {
    const Index n = cost.rows();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<Index> p(n + 1, 0), way(n + 1, 0);
    for (Index i = 1; i <= n; ++i) {
        p[0] = i;
        Index j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            Index i0 = p[j0], j1 = 0;
            double delta = inf;
            for (Index j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (Index j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            Index j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<Index> row_to_col(n);
    for (Index j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace

WeightedFeatureSet WeightedFeatureSet::uniform(Mat features) {
    WeightedFeatureSet s;
    s.weights = Vec::Constant(features.rows(), 1.0 / static_cast<double>(features.rows()));
    s.features = std::move(features);
    return s;
}

double emd_bruteforce(const WeightedFeatureSet& a, const WeightedFeatureSet& b) {
    require_nonempty(a, "emd_bruteforce");
    require_nonempty(b, "emd_bruteforce");
    if (a.size() != b.size())
        throw std::invalid_argument("emd_bruteforce: cardinality mismatch");
    if (a.size() > 8)
        throw std::invalid_argument("emd_bruteforce: N > 8 (factorial blowup)");
    if (!is_uniform(a.weights) || !is_uniform(b.weights))
        throw std::invalid_argument("emd_bruteforce: nonuniform weights unsupported");

    const Index n = a.size();
    const Mat d = pointops::pairwise_dist(a.features, b.features);
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (Index i = 0; i < n; ++i) c += d(i, perm[static_cast<std::size_t>(i)]);
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(n);
}

std::pair<double, TransportPlan> emd_assignment(const WeightedFeatureSet& a,
                                                const WeightedFeatureSet& b) {
    require_nonempty(a, "emd_assignment");
    require_nonempty(b, "emd_assignment");
    if (a.size() != b.size())
        throw std::invalid_argument("emd_assignment: unequal cardinalities unsupported");
    if (!is_uniform(a.weights) || !is_uniform(b.weights))
        throw std::invalid_argument("emd_assignment: nonuniform weights unsupported");

    const Index n = a.size();
    const Mat d = pointops::pairwise_dist(a.features, b.features);
    std::vector<Index> match = solve_assignment(d);

    TransportPlan plan;
    plan.flow = Mat::Zero(n, n);
    double cost = 0.0;
    for (Index i = 0; i < n; ++i) {
        plan.flow(i, match[static_cast<std::size_t>(i)]) = 1.0 / static_cast<double>(n);
        cost += d(i, match[static_cast<std::size_t>(i)]);
    }
    cost /= static_cast<double>(n);
    plan.total_cost = cost;
    return {cost, plan};
}

SinkhornResult sinkhorn(const WeightedFeatureSet& a, const WeightedFeatureSet& b, double eps,
                        int max_iters, double tol) {
    require_nonempty(a, "sinkhorn");
    require_nonempty(b, "sinkhorn");
    if (eps <= 0.0) throw std::invalid_argument("sinkhorn: eps must be positive");
    if (a.weights.minCoeff() <= 0.0 || b.weights.minCoeff() <= 0.0)
        throw std::invalid_argument("sinkhorn: weights must be strictly positive");

    const Index n = a.size(), m = b.size();
    Vec wa = a.weights / a.weights.sum();
    Vec wb = b.weights / b.weights.sum();
    const Mat d = pointops::pairwise_dist(a.features, b.features);

    // Log-domain scaling: logK = -d/eps, f and g are the log scalings.
    Mat logk = -d / eps;
    Vec log_wa = wa.array().log();
    Vec log_wb = wb.array().log();
    Vec f = Vec::Zero(n), g = Vec::Zero(m);

    auto logsumexp_rows = [&](Vec& out) {
        for (Index i = 0; i < n; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (Index j = 0; j < m; ++j) mx = std::max(mx, logk(i, j) + g(j));
            double s = 0.0;
            for (Index j = 0; j < m; ++j) s += std::exp(logk(i, j) + g(j) - mx);
            out(i) = mx + std::log(s);
        }
    };
    auto logsumexp_cols = [&](Vec& out) {
        for (Index j = 0; j < m; ++j) {
            double mx = -std::numeric_limits<double>::infinity();
            for (Index i = 0; i < n; ++i) mx = std::max(mx, logk(i, j) + f(i));
            double s = 0.0;
            for (Index i = 0; i < n; ++i) s += std::exp(logk(i, j) + f(i) - mx);
            out(j) = mx + std::log(s);
        }
    };

    SinkhornResult res;
    Vec lse(n), lse_c(m);
    Mat plan(n, m);
    auto marginal_error = [&]() {
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < m; ++j) plan(i, j) = std::exp(f(i) + logk(i, j) + g(j));
        const double row_err = (plan.rowwise().sum() - wa).cwiseAbs().sum();
        const double col_err = (plan.colwise().sum().transpose() - wb).cwiseAbs().sum();
        return row_err + col_err;
    };

    // Epsilon scaling: anneal from a coarse regularization down to the target,
    // warm-starting the potentials. The final stage is plain log-domain
    // Sinkhorn at `eps` and owns the convergence test, so the reported plan
    // satisfies the marginal tolerance at the requested regularization.
    const double d_max = d.maxCoeff();
    std::vector<double> stages;
    for (double e = d_max / 4.0; e > eps * 4.0; e /= 4.0) stages.push_back(e);
    stages.push_back(eps);

    constexpr int kCheckEvery = 8;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const double stage_eps = stages[s];
        const bool final_stage = s + 1 == stages.size();
        logk = -d / stage_eps;
        // Rescale potentials for the new regularization (f/eps is the dual).
        if (s > 0) {
            f *= stages[s - 1] / stage_eps;
            g *= stages[s - 1] / stage_eps;
        }
        const double stage_tol = final_stage ? tol : std::max(tol, 1e-3);
        for (int it = 1; it <= max_iters; ++it) {
            logsumexp_rows(lse);
            f = log_wa - lse;
            logsumexp_cols(lse_c);
            g = log_wb - lse_c;
            ++res.iterations;
            if (it % kCheckEvery == 0 || it == max_iters) {
                res.marginal_error = marginal_error();
                if (res.marginal_error < stage_tol) {
                    res.converged = final_stage;
                    break;
                }
            }
        }
        if (final_stage && !res.converged) res.marginal_error = marginal_error();
    }
    res.plan.flow = plan;
    res.cost = (d.array() * plan.array()).sum();
    res.plan.total_cost = res.cost;
    return res;
}

double remd(const WeightedFeatureSet& a, const WeightedFeatureSet& b) {
    require_nonempty(a, "remd");
    require_nonempty(b, "remd");
    if (a.weights.sum() <= 0.0 || b.weights.sum() <= 0.0)
        throw std::invalid_argument("remd: weights must have positive sum");
    Vec wa = a.weights / a.weights.sum();
    Vec wb = b.weights / b.weights.sum();
    const Mat d = pointops::pairwise_dist(a.features, b.features);
    // One-sided relaxations solved in closed form: every source ships its
    // whole weight to its nearest target, and vice versa.
    double source_side = 0.0;
    for (Index i = 0; i < a.size(); ++i) source_side += wa(i) * d.row(i).minCoeff();
    double target_side = 0.0;
    for (Index j = 0; j < b.size(); ++j) target_side += wb(j) * d.col(j).minCoeff();
    return std::max(source_side, target_side);
}

SparsePlan fmd_plan(const Mat& pos_s, const Mat& pos_t, Index k, double tau) {
    if (k < 1 || k > pos_t.rows())
        throw std::invalid_argument("fmd_plan: k must be in [1, N_t]");
    if (tau <= 0.0) throw std::invalid_argument("fmd_plan: tau must be positive");

    NeighborIndex nb = pointops::knn(pos_s, pos_t, k);
    SparsePlan plan;
    plan.indices = nb.indices;
    plan.distances = nb.distances;
    plan.weights.resize(pos_s.rows(), k);
    const double inv = 1.0 / (2.0 * tau * tau);
    for (Index i = 0; i < pos_s.rows(); ++i) {
        // Kernel is shift-normalized by the nearest distance before exp so
        // tiny tau cannot underflow the whole row.
        const double d0 = nb.distances(i, 0) * nb.distances(i, 0);
        double total = 0.0;
        for (Index c = 0; c < k; ++c) {
            const double w =
                std::exp(-(nb.distances(i, c) * nb.distances(i, c) - d0) * inv);
            plan.weights(i, c) = w;
            total += w;
        }
        plan.weights.row(i) /= total;
    }
    return plan;
}

double adaptive_tau(const Mat& pos_s, const Mat& pos_t, Index k) {
    if (k < 1 || k > pos_t.rows())
        throw std::invalid_argument("adaptive_tau: k must be in [1, N_t]");
    NeighborIndex nb = pointops::knn(pos_s, pos_t, k);
    return std::max(nb.distances.mean(), 1e-12);
}

diff::DiffNode apc_weights(const diff::DiffNode& f_r, const Mat& f_t) {
    if (f_r.cols() != f_t.cols())
        throw std::invalid_argument("apc_weights: feature dimension mismatch");
    Mat mean_col = f_t.colwise().mean().transpose();  // d x 1
    return diff::relu(diff::matmul(f_r, diff::DiffNode::constant(std::move(mean_col))));
}

diff::DiffNode fmd_loss(const diff::DiffNode& f_r, const Mat& pos_s, const Mat& f_t,
                        const Mat& pos_t, const FmdOptions& opt) {
    if (f_r.cols() != f_t.cols())
        throw std::invalid_argument("fmd_loss: feature dimension mismatch");
    if (f_r.rows() != pos_s.rows())
        throw std::invalid_argument("fmd_loss: student feature/position mismatch");
    if (f_t.rows() != pos_t.rows())
        throw std::invalid_argument("fmd_loss: teacher feature/position mismatch");

    const double tau =
        opt.tau > 0.0 ? opt.tau : adaptive_tau(pos_s, pos_t, opt.k);
    SparsePlan plan = fmd_plan(pos_s, pos_t, opt.k, tau);

    // Plan-weighted teacher barycenter per student point; a constant.
    Mat bary = Mat::Zero(f_r.rows(), f_t.cols());
    for (Index i = 0; i < f_r.rows(); ++i)
        for (Index c = 0; c < opt.k; ++c)
            bary.row(i) += plan.weights(i, c) * f_t.row(plan.indices(i, c));

    diff::DiffNode residual = diff::sub(f_r, diff::DiffNode::constant(std::move(bary)));
    diff::DiffNode per_point = diff::rownorm(residual);
    diff::DiffNode s = apc_weights(f_r, f_t);
    if (opt.normalize_apc)
        s = diff::div_scalar(s, diff::add_scalar(diff::reduce_sum(s), 1e-12));
    return diff::reduce_sum(diff::hadamard(s, per_point));
}

diff::DiffNode fl2_loss(const diff::DiffNode& f_s, const Mat& f_t, const diff::DiffNode& w,
                        const diff::DiffNode& b) {
    if (f_s.rows() != f_t.rows())
        throw std::invalid_argument("fl2_loss: point count mismatch");
    diff::DiffNode projected = diff::pointwise_linear(f_s, w, b);
    if (projected.cols() != f_t.cols())
        throw std::invalid_argument("fl2_loss: adapter output dimension mismatch");
    diff::DiffNode r = diff::sub(projected, diff::DiffNode::constant(f_t));
    return diff::scale(diff::reduce_sum(diff::hadamard(r, r)),
                       1.0 / static_cast<double>(f_s.rows()));
}

diff::DiffNode remd_loss(const diff::DiffNode& f_r, const Mat& f_t) {
    if (f_r.cols() != f_t.cols())
        throw std::invalid_argument("remd_loss: feature dimension mismatch");
    const Index n = f_r.rows(), m = f_t.rows();
    const Mat d = pointops::pairwise_dist(f_r.value(), f_t);

    // Source side: each student row against its nearest teacher row.
    Mat nearest_t(n, f_t.cols());
    for (Index i = 0; i < n; ++i) {
        Index j;
        d.row(i).minCoeff(&j);
        nearest_t.row(i) = f_t.row(j);
    }
    diff::DiffNode src = diff::scale(
        diff::reduce_sum(diff::rownorm(diff::sub(f_r, diff::DiffNode::constant(nearest_t)))),
        1.0 / static_cast<double>(n));

    // Target side: each teacher row against its nearest student row (a
    // constant gather over the student node).
    Mat select = Mat::Zero(m, n);
    for (Index j = 0; j < m; ++j) {
        Index i;
        d.col(j).minCoeff(&i);
        select(j, i) = 1.0;
    }
    diff::DiffNode gathered = diff::left_apply(select, f_r);
    diff::DiffNode tgt = diff::scale(
        diff::reduce_sum(diff::rownorm(diff::sub(gathered, diff::DiffNode::constant(f_t)))),
        1.0 / static_cast<double>(m));

    return src.scalar() >= tgt.scalar() ? src : tgt;
}

}  // namespace pcdistill::ot
