#include "pcdistill/metrics.hpp"

#include <stdexcept>

namespace pcdistill::harness {

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                        int num_classes) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("compute_metrics: length mismatch");
    if (predictions.empty())
        throw std::invalid_argument("compute_metrics: empty inputs");

    Metrics m;
    m.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int t = labels[i], p = predictions[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
            throw std::invalid_argument("compute_metrics: class index out of range");
        m.confusion(t, p) += 1;
        if (t == p) ++correct;
    }
    m.oa = 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());

    double acc_sum = 0.0;
    int present = 0;
    for (int c = 0; c < num_classes; ++c) {
        const int total = m.confusion.row(c).sum();
        if (total == 0) {
            m.absent_classes.push_back(c);
            continue;
        }
        acc_sum += 100.0 * static_cast<double>(m.confusion(c, c)) / static_cast<double>(total);
        ++present;
    }
    m.macc = present > 0 ? acc_sum / static_cast<double>(present) : 0.0;
    return m;
}

}  // namespace pcdistill::harness
