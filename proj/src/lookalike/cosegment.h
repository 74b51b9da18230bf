#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <utility>
#include <vector>

namespace lookalike {

struct LabeledPointCloud {
    Eigen::Matrix<double, Eigen::Dynamic, 3> points;
    std::vector<int> labels;  // empty for unlabeled clouds

    int size() const { return static_cast<int>(points.rows()); }
    bool has_labels() const { return !labels.empty(); }
    void validate() const;  // nonempty, finite, label count matches
};

struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
    Eigen::Matrix<double, Eigen::Dynamic, 3> apply(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points) const;
};

// Static 3D kd-tree over a point set.
class KdTree {
public:
    explicit KdTree(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points);

    // k nearest as (squared distance, index), nearest first; equal distances by index.
    std::vector<std::pair<double, int>> knn(const Eigen::Vector3d& q, int k) const;
    std::pair<double, int> nearest(const Eigen::Vector3d& q) const;

private:
    struct Node {
        int point;
        int axis;
        int left = -1;
        int right = -1;
    };
    int build(std::vector<int>& idx, int lo, int hi, int depth);
    void search(int node, const Eigen::Vector3d& q, int k, std::vector<std::pair<double, int>>& heap) const;

    Eigen::Matrix<double, Eigen::Dynamic, 3> points_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

// Closed-form least-squares rigid fit mapping src[i] onto dst[i].
RigidTransform fit_rigid(const Eigen::Matrix<double, Eigen::Dynamic, 3>& src, const Eigen::Matrix<double, Eigen::Dynamic, 3>& dst);

struct IcpOptions {
    int yaw_bins = 8;
    int max_iters = 60;
    double tol = 1e-10;
};

struct IcpResult {
    RigidTransform transform;  // maps source into the target frame
    double residual = 0.0;     // RMS nearest-neighbor distance after alignment
    int best_bin = 0;
    std::vector<std::vector<double>> traces;  // per bin: residual before each fit, then the final one
};

// Tries `yaw_bins` initial rotations about +z and keeps the lowest residual.
IcpResult icp_align(const LabeledPointCloud& source, const LabeledPointCloud& target, const IcpOptions& options = {});

// Modal label among the k nearest transformed source points; ties by smallest label.
std::vector<int> transfer_labels(const LabeledPointCloud& source, const LabeledPointCloud& target,
                                 const RigidTransform& transform, int k = 5);

// "x y z [label]" per line, '#' comments. Binary files carry a version header.
LabeledPointCloud read_point_cloud(const std::filesystem::path& path);
void write_point_cloud(const std::filesystem::path& path, const LabeledPointCloud& cloud);
void write_point_cloud_binary(const std::filesystem::path& path, const LabeledPointCloud& cloud);

}  // namespace lookalike
