#pragma once

// Labeled synthetic point clouds for alignment tests.

#include <cmath>
#include <random>

#include "lookalike/cosegment.h"

namespace shapes {

// Chair: seat (0), back (1) on the +y side, four legs (2). No rotation about z maps it to itself.
inline lookalike::LabeledPointCloud chair(int points_per_part, uint64_t seed) {
    struct Box {
        Eigen::Vector3d lo, hi;
        int label;
    };
    const std::vector<Box> parts = {
        {{-0.5, -0.5, 0.45}, {0.5, 0.5, 0.55}, 0},
        {{-0.5, 0.4, 0.55}, {0.5, 0.5, 1.4}, 1},
        {{-0.5, -0.5, 0.0}, {-0.4, -0.4, 0.45}, 2},
        {{0.4, -0.5, 0.0}, {0.5, -0.4, 0.45}, 2},
        {{-0.5, 0.4, 0.0}, {-0.4, 0.5, 0.45}, 2},
        {{0.4, 0.4, 0.0}, {0.5, 0.5, 0.45}, 2},
    };
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    lookalike::LabeledPointCloud cloud;
    cloud.points.resize(static_cast<Eigen::Index>(parts.size()) * points_per_part, 3);
    int row = 0;
    for (const auto& box : parts)
        for (int i = 0; i < points_per_part; ++i, ++row) {
            for (int c = 0; c < 3; ++c) cloud.points(row, c) = box.lo[c] + u(rng) * (box.hi[c] - box.lo[c]);
            cloud.labels.push_back(box.label);
        }
    return cloud;
}

inline lookalike::RigidTransform pose(double yaw_deg, double tilt_deg, Eigen::Vector3d translation) {
    lookalike::RigidTransform t;
    t.rotation = (Eigen::AngleAxisd(yaw_deg * M_PI / 180.0, Eigen::Vector3d::UnitZ()) *
                  Eigen::AngleAxisd(tilt_deg * M_PI / 180.0, Eigen::Vector3d::UnitX()))
                     .toRotationMatrix();
    t.translation = translation;
    return t;
}

// Source moved by `t`, labels dropped, plus isotropic Gaussian noise.
inline lookalike::LabeledPointCloud moved(const lookalike::LabeledPointCloud& source, const lookalike::RigidTransform& t,
                                          double noise_sigma, uint64_t seed) {
    lookalike::LabeledPointCloud out;
    out.points = t.apply(source.points);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, noise_sigma);
    if (noise_sigma > 0)
        for (int i = 0; i < out.points.size(); ++i) out.points.data()[i] += n(rng);
    return out;
}

inline double rotation_error_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    const double c = std::clamp(((a * b.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
}

}  // namespace shapes
