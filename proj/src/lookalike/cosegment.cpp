#include "lookalike/cosegment.h"

#include <algorithm>
#include <cmath>
#include <array>
#include <limits>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "lookalike/errors.h"

namespace lookalike {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

namespace {

constexpr char kBinaryMagic[] = "LOOKALIKE-POINTS 1\n";

bool heap_less(const std::pair<double, int>& x, const std::pair<double, int>& y) { return x < y; }

Eigen::Matrix3d yaw(double angle) {
    return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

bool all_coincide(const Points& p) {
    if (p.rows() == 0) return true;
    const Eigen::RowVector3d first = p.row(0);
    return ((p.rowwise() - first).cwiseAbs().maxCoeff()) <= 1e-12;
}

}  // namespace

void LabeledPointCloud::validate() const {
    if (points.rows() == 0) fail(ErrorKind::Invariant, "point cloud is empty");
    if (!points.allFinite()) fail(ErrorKind::Invariant, "point cloud has non-finite coordinates");
    if (!labels.empty() && static_cast<int>(labels.size()) != points.rows())
        fail(ErrorKind::Invariant, "label count does not match point count");
}

Points RigidTransform::apply(const Points& points) const {
    Points out = points * rotation.transpose();
    out.rowwise() += translation.transpose();
    return out;
}

KdTree::KdTree(const Points& points) : points_(points) {
    std::vector<int> idx(points_.rows());
    std::iota(idx.begin(), idx.end(), 0);
    nodes_.reserve(idx.size());
    root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int lo, int hi, int depth) {
    if (lo >= hi) return -1;
    const int axis = depth % 3;
    const int mid = (lo + hi) / 2;
    std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi, [&](int a, int b) {
        return points_(a, axis) < points_(b, axis) || (points_(a, axis) == points_(b, axis) && a < b);
    });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{idx[mid], axis});
    const int left = build(idx, lo, mid, depth + 1);
    const int right = build(idx, mid + 1, hi, depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

void KdTree::search(int node, const Eigen::Vector3d& q, int k, std::vector<std::pair<double, int>>& heap) const {
    if (node < 0) return;
    const Node& n = nodes_[node];
    const Eigen::Vector3d p = points_.row(n.point).transpose();
    const std::pair<double, int> cand{(p - q).squaredNorm(), n.point};
    if (static_cast<int>(heap.size()) < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), heap_less);
    } else if (cand < heap.front()) {
        std::pop_heap(heap.begin(), heap.end(), heap_less);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), heap_less);
    }
    const double diff = q(n.axis) - p(n.axis);
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    search(near, q, k, heap);
    // <= keeps equal-distance candidates reachable so index tie-breaks stay exact
    if (static_cast<int>(heap.size()) < k || diff * diff <= heap.front().first) search(far, q, k, heap);
}

std::vector<std::pair<double, int>> KdTree::knn(const Eigen::Vector3d& q, int k) const {
    std::vector<std::pair<double, int>> heap;
    if (k <= 0) return heap;
    heap.reserve(k + 1);
    search(root_, q, k, heap);
    std::sort_heap(heap.begin(), heap.end(), heap_less);
    return heap;
}

std::pair<double, int> KdTree::nearest(const Eigen::Vector3d& q) const { return knn(q, 1).front(); }

RigidTransform fit_rigid(const Points& src, const Points& dst) {
    const Eigen::RowVector3d cs = src.colwise().mean();
    const Eigen::RowVector3d cd = dst.colwise().mean();
    const Eigen::Matrix3d h = (src.rowwise() - cs).transpose() * (dst.rowwise() - cd);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
    RigidTransform t;
    t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
    t.translation = cd.transpose() - t.rotation * cs.transpose();
    return t;
}

IcpResult icp_align(const LabeledPointCloud& source, const LabeledPointCloud& target, const IcpOptions& options) {
    source.validate();
    target.validate();
    if (options.yaw_bins < 1) fail(ErrorKind::Precondition, "yaw_bins must be >= 1");
    if (options.max_iters < 1) fail(ErrorKind::Precondition, "max_iters must be >= 1");
    if (all_coincide(source.points) || all_coincide(target.points))
        fail(ErrorKind::DegenerateGeometry, "all points coincide");

    const KdTree tree(target.points);
    const Eigen::Vector3d cs = source.points.colwise().mean().transpose();
    const Eigen::Vector3d ct = target.points.colwise().mean().transpose();
    const int n = source.size();

    auto correspond = [&](const RigidTransform& t, Points* matched) {
        const Points moved = t.apply(source.points);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto [d2, j] = tree.nearest(moved.row(i).transpose());
            sum += d2;
            if (matched) matched->row(i) = target.points.row(j);
        }
        return std::sqrt(sum / n);
    };

    IcpResult best;
    best.residual = std::numeric_limits<double>::infinity();
    Points matched(n, 3);
    for (int b = 0; b < options.yaw_bins; ++b) {
        RigidTransform t;
        t.rotation = yaw(2.0 * M_PI * b / options.yaw_bins);
        t.translation = ct - t.rotation * cs;
        std::vector<double> trace;
        double prev = correspond(t, &matched);
        trace.push_back(prev);
        for (int it = 0; it < options.max_iters; ++it) {
            t = fit_rigid(source.points, matched);
            const double cur = correspond(t, &matched);
            trace.push_back(cur);
            if (prev - cur < options.tol) break;
            prev = cur;
        }
        const double residual = trace.back();
        if (residual < best.residual) {
            best.residual = residual;
            best.transform = t;
            best.best_bin = b;
        }
        best.traces.push_back(std::move(trace));
    }
    return best;
}

std::vector<int> transfer_labels(const LabeledPointCloud& source, const LabeledPointCloud& target,
                                 const RigidTransform& transform, int k) {
    source.validate();
    target.validate();
    if (!source.has_labels()) fail(ErrorKind::Precondition, "source cloud has no labels");
    if (k < 1) fail(ErrorKind::Precondition, "k must be >= 1");
    k = std::min(k, source.size());
    const Points moved = transform.apply(source.points);
    const KdTree tree(moved);
    std::vector<int> out(target.size());
    for (int i = 0; i < target.size(); ++i) {
        const Eigen::Vector3d q = target.points.row(i).transpose();
        // Pull a few extra so that points tied with the k-th can be ordered by label, not index.
        auto cand = tree.knn(q, std::min(source.size(), k + 8));
        std::stable_sort(cand.begin(), cand.end(), [&](const auto& x, const auto& y) {
            if (x.first != y.first) return x.first < y.first;
            return source.labels[x.second] < source.labels[y.second];
        });
        std::map<int, int> votes;
        for (int j = 0; j < k; ++j) ++votes[source.labels[cand[j].second]];
        int label = votes.begin()->first;
        int count = 0;
        for (const auto& [l, c] : votes)
            if (c > count) {
                label = l;
                count = c;
            }
        out[i] = label;
    }
    return out;
}

LabeledPointCloud read_point_cloud(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
    std::string head(sizeof(kBinaryMagic) - 1, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head.size()));
    LabeledPointCloud cloud;
    if (in && head == kBinaryMagic) {
        uint64_t n = 0;
        uint8_t labeled = 0;
        in.read(reinterpret_cast<char*>(&n), sizeof n);
        in.read(reinterpret_cast<char*>(&labeled), sizeof labeled);
        if (!in || n > (1ull << 32)) fail(ErrorKind::Decode, path.string() + ": bad point cloud header");
        cloud.points.resize(static_cast<Eigen::Index>(n), 3);
        std::vector<double> xyz(n * 3);
        in.read(reinterpret_cast<char*>(xyz.data()), static_cast<std::streamsize>(xyz.size() * sizeof(double)));
        for (uint64_t i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) cloud.points(static_cast<Eigen::Index>(i), c) = xyz[i * 3 + c];
        if (labeled) {
            std::vector<int32_t> labels(n);
            in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(n * sizeof(int32_t)));
            cloud.labels.assign(labels.begin(), labels.end());
        }
        if (!in) fail(ErrorKind::Decode, path.string() + ": truncated point cloud");
    } else {
        in.clear();
        in.seekg(0);
        std::vector<std::array<double, 3>> pts;
        std::vector<int> labels;
        std::string line;
        int line_no = 0;
        int columns = -1;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            std::istringstream fields(line);
            std::vector<double> values;
            double v = 0;
            while (fields >> v) values.push_back(v);
            if (!fields.eof()) fail(ErrorKind::Decode, path.string() + ":" + std::to_string(line_no) + ": not a number");
            if (values.empty()) continue;
            if (values.size() != 3 && values.size() != 4)
                fail(ErrorKind::Decode, path.string() + ":" + std::to_string(line_no) + ": expected 3 or 4 columns");
            if (columns >= 0 && static_cast<int>(values.size()) != columns)
                fail(ErrorKind::Decode, path.string() + ":" + std::to_string(line_no) + ": inconsistent column count");
            columns = static_cast<int>(values.size());
            pts.push_back({values[0], values[1], values[2]});
            if (columns == 4) labels.push_back(static_cast<int>(std::lround(values[3])));
        }
        cloud.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
        for (size_t i = 0; i < pts.size(); ++i)
            for (int c = 0; c < 3; ++c) cloud.points(static_cast<Eigen::Index>(i), c) = pts[i][c];
        cloud.labels = std::move(labels);
    }
    cloud.validate();
    return cloud;
}

void write_point_cloud(const std::filesystem::path& path, const LabeledPointCloud& cloud) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.precision(10);
    for (int i = 0; i < cloud.size(); ++i) {
        out << cloud.points(i, 0) << ' ' << cloud.points(i, 1) << ' ' << cloud.points(i, 2);
        if (cloud.has_labels()) out << ' ' << cloud.labels[i];
        out << '\n';
    }
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

void write_point_cloud_binary(const std::filesystem::path& path, const LabeledPointCloud& cloud) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(kBinaryMagic, sizeof(kBinaryMagic) - 1);
    const uint64_t n = static_cast<uint64_t>(cloud.size());
    const uint8_t labeled = cloud.has_labels() ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(&labeled), sizeof labeled);
    for (int i = 0; i < cloud.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            const double v = cloud.points(i, c);
            out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
    if (labeled)
        for (int l : cloud.labels) {
            const int32_t v = l;
            out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace lookalike
