#pragma once

#include "pcdistill/diff.hpp"
#include "pcdistill/types.hpp"

namespace pcdistill::ot {

/// A weighted set of feature vectors. Solver ground distance is Euclidean in
/// feature space; the sparse transport plan below uses position space instead
/// (the two never mix).
struct WeightedFeatureSet {
    Mat features;  // N x d
    Vec weights;   // length N, nonnegative

    static WeightedFeatureSet uniform(Mat features);
    Index size() const { return features.rows(); }
};

/// Dense flow between a source and a target set.
struct TransportPlan {
    Mat flow;  // N_s x N_t, nonnegative
    double total_cost = 0.0;
};

struct SinkhornResult {
    double cost = 0.0;      // transport cost <C, pi>; regularizer excluded
    TransportPlan plan;
    bool converged = false;
    int iterations = 0;
    double marginal_error = 0.0;  // L1 row error + L1 column error at exit
};

/// Sparse row-structured plan: row i of the student couples only with its k
/// nearest teacher points; each weight row sums to 1.
struct SparsePlan {
    IMat indices;   // N x k, teacher indices
    Mat weights;    // N x k, nonnegative, rows sum to 1
    Mat distances;  // N x k, position-space distances
};

/// Exact minimum-cost matching by permutation enumeration. Restricted to
/// uniform weights and |a| = |b| <= 8; serves as the ground-truth oracle.
double emd_bruteforce(const WeightedFeatureSet& a, const WeightedFeatureSet& b);

/// Exact minimum-cost matching via the O(n^3) assignment algorithm for the
/// uniform equal-cardinality case. Plan is a permutation matrix scaled by 1/N.
std::pair<double, TransportPlan> emd_assignment(const WeightedFeatureSet& a,
                                                const WeightedFeatureSet& b);

/// Entropic-regularized transport by log-domain matrix scaling. Weights are
/// normalized to sum 1 internally. Stops when the marginal L1 error drops
/// below tol; non-convergence is flagged, not thrown.
SinkhornResult sinkhorn(const WeightedFeatureSet& a, const WeightedFeatureSet& b, double eps,
                        int max_iters = 2000000, double tol = 1e-9);

/// Relaxed EMD: max of the two one-sided relaxations, each solved in closed
/// form by nearest-neighbor minima. Lower bound on the exact cost.
double remd(const WeightedFeatureSet& a, const WeightedFeatureSet& b);

/// Distance-based transport plan: row i is a Gaussian kernel
/// exp(-d^2 / 2 tau^2) over the k teacher positions nearest to student
/// position i, normalized to sum 1. Distances are Euclidean in POSITION
/// space.
SparsePlan fmd_plan(const Mat& pos_s, const Mat& pos_t, Index k, double tau);

/// Data-adaptive temperature: mean of all kNN distances for this plan
/// (floored at 1e-12 so coincident clouds stay well-defined).
double adaptive_tau(const Mat& pos_s, const Mat& pos_t, Index k);

/// Per-point weights s_i = max(0, <F_r_i, mean_j F_t_j>). Differentiable in
/// F_r; the teacher matrix is a constant.
diff::DiffNode apc_weights(const diff::DiffNode& f_r, const Mat& f_t);

struct FmdOptions {
    Index k = 5;
    double tau = -1.0;  // <= 0 selects the adaptive default
    bool normalize_apc = false;
};

/// Feature mover's distance: sum_i s_i || F_r_i - sum_j pi_ij F_t_j ||_2 with
/// the plan built from positions and s_i from apc_weights. Gradient flows
/// into F_r only.
diff::DiffNode fmd_loss(const diff::DiffNode& f_r, const Mat& pos_s, const Mat& f_t,
                        const Mat& pos_t, const FmdOptions& opt);

/// Index-aligned baseline: mean squared Euclidean row distance between the
/// adapter-projected student feature and the teacher feature. Deliberately
/// position-blind.
diff::DiffNode fl2_loss(const diff::DiffNode& f_s, const Mat& f_t, const diff::DiffNode& w,
                        const diff::DiffNode& b);

/// Differentiable relaxed EMD between a student feature node and a constant
/// teacher matrix, uniform weights. Numerically equal to
/// remd(uniform(F_r), uniform(F_t)); gradient follows the active side and
/// the current nearest-neighbor matching.
diff::DiffNode remd_loss(const diff::DiffNode& f_r, const Mat& f_t);

}  // namespace pcdistill::ot
