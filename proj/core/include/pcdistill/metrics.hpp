#pragma once

#include <vector>

#include "pcdistill/types.hpp"

namespace pcdistill::harness {

/// Classification metrics: overall accuracy, mean per-class accuracy (both in
/// percent) and the confusion matrix (rows: true class, cols: predicted).
/// Classes absent from the labels are excluded from the mAcc mean and listed.
struct Metrics {
    double oa = 0.0;
    double macc = 0.0;
    Eigen::MatrixXi confusion;
    std::vector<int> absent_classes;
};

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                        int num_classes);

}  // namespace pcdistill::harness
