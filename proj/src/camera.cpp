/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: src/camera.cpp
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "jafr/camera.hpp"
#include "jafr/error.hpp"

#include "kdtree.hpp"

#include "Eigen/Geometry"
#include "Eigen/QR"
#include "Eigen/SVD"

#include <cmath>
#include <string>

namespace jafr {

double BoundingBox::side() const
{
    return std::sqrt(area());
}

BoundingBox bounding_box(const Eigen::Matrix2Xd& points)
{
    if (points.cols() == 0)
        throw InvalidArgument("bounding_box of an empty point set");
    const Eigen::Vector2d lo = points.rowwise().minCoeff();
    const Eigen::Vector2d hi = points.rowwise().maxCoeff();
    return {lo.x(), lo.y(), hi.x() - lo.x(), hi.y() - lo.y()};
}

Eigen::Matrix2Xd project(const MappingMatrix& m, const Eigen::Matrix3Xd& points)
{
    return (m.entries.leftCols<3>() * points).colwise() + m.entries.col(3);
}

MappingMatrix fit_mapping(const Eigen::Matrix2Xd& landmarks, const Eigen::Matrix3Xd& points)
{
    const auto l = points.cols();
    if (landmarks.cols() != l)
        throw DimensionError("fit_mapping: " + std::to_string(landmarks.cols()) + " landmarks vs " +
                             std::to_string(l) + " 3D points");
    if (l < 4)
        throw SingularFitError("fit_mapping needs at least 4 points, got " + std::to_string(l),
                               static_cast<int>(l));

    Eigen::MatrixX4d design(l, 4);
    design.leftCols<3>() = points.transpose();
    design.col(3).setOnes();

    Eigen::ColPivHouseholderQR<Eigen::MatrixX4d> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < 4) {
        throw SingularFitError("fit_mapping: homogeneous 3D points have rank " + std::to_string(qr.rank()) +
                                   " (need 4); points are coplanar or coincident",
                               static_cast<int>(qr.rank()));
    }
    const Eigen::Matrix<double, 4, 2> mt = qr.solve(landmarks.transpose());
    MappingMatrix m;
    m.entries = mt.transpose();
    return m;
}

double landmark_visibility(const MappingMatrix& m, const Eigen::Vector3d& normal)
{
    const Eigen::Vector3d m1 = m.row3(0);
    const Eigen::Vector3d m2 = m.row3(1);
    const double n1 = m1.norm();
    const double n2 = m2.norm();
    if (!(n1 > 0.0) || !(n2 > 0.0))
        throw InvalidArgument("invalid mapping: a row of the 2x3 block is zero");
    if (std::abs(normal.norm() - 1.0) > 1e-6)
        throw InvalidArgument("landmark_visibility: normal is not unit length");
    const double s = normal.dot((m1 / n1).cross(m2 / n2));
    const double sgn = s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0);
    return 0.5 * (1.0 + sgn);
}

std::vector<bool> visibility_mask(const MappingMatrix& m, const Eigen::Matrix3Xd& landmark_normals)
{
    std::vector<bool> mask(static_cast<std::size_t>(landmark_normals.cols()));
    for (Eigen::Index i = 0; i < landmark_normals.cols(); ++i)
        mask[static_cast<std::size_t>(i)] = landmark_visibility(m, landmark_normals.col(i)) > 0.5;
    return mask;
}

std::vector<bool> visibility_mask(const MappingMatrix& m, const Shape3D& shape, const ShapePrior& prior)
{
    const auto normals = vertex_normals(shape, prior, prior.landmark_indices);
    return visibility_mask(m, normals.normals);
}

LandmarkSet2D init_landmarks(const Eigen::Matrix2Xd& mean_landmarks_2d, const BoundingBox& bbox)
{
    if (!(bbox.width > 0.0) || !(bbox.height > 0.0))
        throw InvalidArgument("degenerate bounding box (" + std::to_string(bbox.width) + " x " +
                              std::to_string(bbox.height) + ")");
    const BoundingBox tpl = bounding_box(mean_landmarks_2d);
    if (!(tpl.area() > 0.0))
        throw InvalidArgument("landmark template has a degenerate bounding box");
    const double s = std::sqrt(bbox.area() / tpl.area());
    Eigen::Matrix2Xd pts = (s * (mean_landmarks_2d.colwise() - tpl.center())).colwise() + bbox.center();
    return LandmarkSet2D(std::move(pts));
}

LandmarkSet2D init_landmarks(const ShapePrior& prior, const BoundingBox& bbox)
{
    return init_landmarks(prior.mean_landmarks_2d, bbox);
}

ProcrustesResult procrustes_align(const Eigen::Matrix3Xd& a, const Eigen::Matrix3Xd& b, bool with_scale)
{
    if (a.cols() != b.cols())
        throw DimensionError("procrustes_align: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) +
                             " vertices");
    const auto n = a.cols();
    if (n < 3)
        throw InvalidArgument("procrustes_align needs at least 3 vertices");

    const Eigen::Vector3d mu_a = a.rowwise().mean();
    const Eigen::Vector3d mu_b = b.rowwise().mean();
    const Eigen::Matrix3Xd ac = a.colwise() - mu_a;
    const Eigen::Matrix3Xd bc = b.colwise() - mu_b;

    // Non-collinearity: the centred source must span at least a plane.
    Eigen::JacobiSVD<Eigen::Matrix3d> spread(ac * ac.transpose());
    const auto sv = spread.singularValues();
    if (!(sv(1) > 1e-12 * std::max(sv(0), 1e-300)))
        throw InvalidArgument("procrustes_align needs at least 3 non-collinear vertices");

    const Eigen::Matrix3d cov = bc * ac.transpose() / static_cast<double>(n);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0)
        d(2) = -1.0;

    ProcrustesResult out;
    out.transform.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    if (with_scale) {
        const double var_a = ac.squaredNorm() / static_cast<double>(n);
        out.transform.scale = svd.singularValues().dot(d) / var_a;
    }
    out.transform.translation = mu_b - out.transform.scale * out.transform.rotation * mu_a;
    out.aligned = out.transform.apply(a);
    out.mean_distance = (out.aligned - b).colwise().norm().mean();
    return out;
}

ProcrustesResult procrustes_align(const Shape3D& a, const Shape3D& b, bool with_scale)
{
    return procrustes_align(a.vertices, b.vertices, with_scale);
}

namespace {

struct MatchError
{
    double mean = 0.0; ///< mean closest-point distance
    double rms = 0.0;  ///< root mean squared distance; what each Procrustes step minimises
};

MatchError match_nearest(const detail::KdTree3& tree, const Eigen::Matrix3Xd& target, const Eigen::Matrix3Xd& moved,
                         Eigen::Matrix3Xd& matched)
{
    double sum = 0.0, sum_sq = 0.0;
    for (Eigen::Index i = 0; i < moved.cols(); ++i) {
        double d2 = 0.0;
        const int j = tree.nearest(moved.col(i), &d2);
        matched.col(i) = target.col(j);
        sum += std::sqrt(d2);
        sum_sq += d2;
    }
    const double count = static_cast<double>(moved.cols());
    return {sum / count, std::sqrt(sum_sq / count)};
}

} // namespace

IcpResult rigid_icp(const Eigen::Matrix3Xd& a, const Eigen::Matrix3Xd& b, const IcpParams& params)
{
    if (a.cols() == 0 || b.cols() == 0)
        throw InvalidArgument("rigid_icp on an empty shape");

    const detail::KdTree3 tree(b);
    Eigen::Matrix3Xd matched(3, a.cols());

    IcpResult result;
    MatchError current = match_nearest(tree, b, a, matched);
    result.mean_distance = current.mean;
    if (current.rms == 0.0) {
        result.trace.push_back(0.0);
        result.iterations = 1;
        return result;
    }

    Eigen::Matrix3Xd candidate_matches(3, a.cols());
    for (int it = 0; it < params.max_iters; ++it) {
        RigidTransform step;
        try {
            step = procrustes_align(a, matched, false).transform;
        } catch (const InvalidArgument&) {
            break; // all matches collapsed onto a line
        }
        const Eigen::Matrix3Xd moved = step.apply(a);
        const MatchError next = match_nearest(tree, b, moved, candidate_matches);
        if (next.rms > current.rms)
            break;
        result.transform = step;
        result.trace.push_back(next.rms);
        result.iterations = it + 1;
        matched.swap(candidate_matches);
        const double rel = (current.rms - next.rms) / current.rms;
        current = next;
        if (next.rms == 0.0 || rel < params.rel_tol)
            break;
    }
    result.mean_distance = current.mean;
    return result;
}

IcpResult rigid_icp(const Shape3D& a, const Shape3D& b, const IcpParams& params)
{
    return rigid_icp(a.vertices, b.vertices, params);
}

} // namespace jafr
