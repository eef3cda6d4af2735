#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pcdistill/diff.hpp"
#include "pcdistill/rng.hpp"

namespace pcdistill::diff {

/// Named trainable parameters plus per-parameter optimizer state. Names are
/// unique; iteration order is the sorted name order, which fixes the
/// checkpoint byte layout and the optimizer update order.
class ParamStore {
  public:
    /// Register a new parameter (throws StateError on duplicate names).
    DiffNode create(const std::string& name, Mat init);

    /// Convenience initializers drawing from the given stream.
    DiffNode create_normal(const std::string& name, Index rows, Index cols, double stddev,
                           Rng& rng);
    DiffNode create_zeros(const std::string& name, Index rows, Index cols);

    DiffNode get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) > 0; }
    std::size_t size() const { return params_.size(); }
    std::int64_t scalar_count() const;

    const std::map<std::string, DiffNode>& all() const { return params_; }

    void zero_grad();

    /// theta -= lr * grad, then zero gradients. Every parameter must carry a
    /// gradient populated by a backward pass (StateError otherwise).
    void sgd_step(double lr);

    /// Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8), then
    /// zero gradients. Same gradient-populated precondition as sgd_step.
    void adam_step(double lr);

    /// Checkpoint I/O: "PDKP", u32 count, then per parameter
    /// u16 name length, name bytes, u32 rows, u32 cols, row-major f64.
    /// Parameters are written in sorted name order. Optimizer state is not
    /// part of the format.
    void save(const std::string& path) const;

    /// Replaces the *values* of already-registered parameters (shape-checked)
    /// and registers any parameter not yet present.
    void load(const std::string& path);

    /// Copies values for every parameter registered here from `other`
    /// (StateError if one is missing, IoError on shape mismatch).
    void copy_values_from(const ParamStore& other);

  private:
    struct AdamState {
        Mat m, v;
    };
    std::map<std::string, DiffNode> params_;
    std::map<std::string, AdamState> adam_;
    std::int64_t adam_t_ = 0;
};

}  // namespace pcdistill::diff
