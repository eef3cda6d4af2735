#include "pcdistill/dataset.hpp"

#include <cmath>
#include <stdexcept>

namespace pcdistill::harness {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Shape extents before normalization. Cylinder and cone share footprint so
// the taper is what separates them.
constexpr double kCylRadius = 0.7, kCylHeight = 1.6;
constexpr double kConeRadius = 0.8, kConeHeight = 1.5;

Eigen::RowVector3d sample_sphere(Rng& rng) {
    // Isotropic direction from three normals.
    Eigen::RowVector3d v(rng.normal(), rng.normal(), rng.normal());
    double n = v.norm();
    while (n < 1e-12) {
        v = Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal());
        n = v.norm();
    }
    return v / n;
}

Eigen::RowVector3d sample_cube(Rng& rng) {
    const std::uint64_t face = rng.index(6);
    const double u = rng.uniform(-1.0, 1.0);
    const double v = rng.uniform(-1.0, 1.0);
    const double s = (face % 2 == 0) ? 1.0 : -1.0;
    switch (face / 2) {
        case 0: return {s, u, v};
        case 1: return {u, s, v};
        default: return {u, v, s};
    }
}

Eigen::RowVector3d sample_cylinder(Rng& rng) {
    const double side_area = 2.0 * kPi * kCylRadius * kCylHeight;
    const double cap_area = kPi * kCylRadius * kCylRadius;
    const double pick = rng.uniform() * (side_area + 2.0 * cap_area);
    if (pick < side_area) {
        const double theta = rng.uniform() * 2.0 * kPi;
        const double z = rng.uniform(-0.5 * kCylHeight, 0.5 * kCylHeight);
        return {kCylRadius * std::cos(theta), kCylRadius * std::sin(theta), z};
    }
    const double z = pick < side_area + cap_area ? 0.5 * kCylHeight : -0.5 * kCylHeight;
    const double r = kCylRadius * std::sqrt(rng.uniform());
    const double theta = rng.uniform() * 2.0 * kPi;
    return {r * std::cos(theta), r * std::sin(theta), z};
}

Eigen::RowVector3d sample_cone(Rng& rng) {
    const double slant = std::sqrt(kConeRadius * kConeRadius + kConeHeight * kConeHeight);
    const double lateral_area = kPi * kConeRadius * slant;
    const double base_area = kPi * kConeRadius * kConeRadius;
    const double apex_z = 0.5 * kConeHeight, base_z = -0.5 * kConeHeight;
    const double pick = rng.uniform() * (lateral_area + base_area);
    const double theta = rng.uniform() * 2.0 * kPi;
    if (pick < lateral_area) {
        const double s = std::sqrt(rng.uniform());  // area grows with radius
        return {s * kConeRadius * std::cos(theta), s * kConeRadius * std::sin(theta),
                apex_z - s * kConeHeight};
    }
    const double r = kConeRadius * std::sqrt(rng.uniform());
    return {r * std::cos(theta), r * std::sin(theta), base_z};
}

}  // namespace

const char* shape_name(ShapeClass c) {
    switch (c) {
        case ShapeClass::sphere: return "sphere";
        case ShapeClass::cube: return "cube";
        case ShapeClass::cylinder: return "cylinder";
        case ShapeClass::cone: return "cone";
    }
    return "?";
}

Eigen::RowVector3d sample_surface_point(ShapeClass c, Rng& rng) {
    switch (c) {
        case ShapeClass::sphere: return sample_sphere(rng);
        case ShapeClass::cube: return sample_cube(rng);
        case ShapeClass::cylinder: return sample_cylinder(rng);
        case ShapeClass::cone: return sample_cone(rng);
    }
    throw std::invalid_argument("sample_surface_point: bad class");
}

Mat sample_surface(ShapeClass c, Index n, Rng& rng) {
    Mat out(n, 3);
    for (Index i = 0; i < n; ++i) out.row(i) = sample_surface_point(c, rng);
    return out;
}

Mat normalize_cloud(Mat cloud) {
    cloud.rowwise() -= cloud.colwise().mean().eval();
    const double scale = cloud.rowwise().norm().maxCoeff();
    if (scale > 0.0) cloud /= scale;
    return cloud;
}

Mat make_cloud(ShapeClass c, Index n, double noise_sigma, Rng& rng) {
    Mat cloud = sample_surface(c, n, rng);
    if (noise_sigma > 0.0)
        for (Index i = 0; i < n; ++i)
            for (Index k = 0; k < 3; ++k) cloud(i, k) += noise_sigma * rng.normal();
    return normalize_cloud(std::move(cloud));
}

namespace {

LabeledClouds gen_split(const DatasetConfig& cfg, int count, std::uint64_t split_tag) {
    LabeledClouds out;
    out.clouds.reserve(static_cast<std::size_t>(count));
    out.labels.reserve(static_cast<std::size_t>(count));
    const std::uint64_t base = seed_combine(cfg.seed, split_tag);
    for (int i = 0; i < count; ++i) {
        const int label = i % kNumClasses;
        Rng rng(seed_combine(base, static_cast<std::uint64_t>(i)));
        out.clouds.push_back(make_cloud(static_cast<ShapeClass>(label), cfg.points_per_cloud,
                                        cfg.noise_sigma, rng));
        out.labels.push_back(label);
    }
    return out;
}

}  // namespace

Dataset gen_dataset(const DatasetConfig& cfg) {
    if (cfg.n_train < 1 || cfg.n_test < 1)
        throw std::invalid_argument("gen_dataset: split sizes must be >= 1");
    if (cfg.points_per_cloud < 1)
        throw std::invalid_argument("gen_dataset: points_per_cloud must be >= 1");
    Dataset ds;
    ds.train = gen_split(cfg, cfg.n_train, 0xdadaULL);
    ds.test = gen_split(cfg, cfg.n_test, 0x7e57ULL);
    return ds;
}

}  // namespace pcdistill::harness
