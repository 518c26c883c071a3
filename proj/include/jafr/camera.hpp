/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: include/jafr/camera.hpp
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
#pragma once

#ifndef JAFR_CAMERA_HPP
#define JAFR_CAMERA_HPP

#include "jafr/shape_model.hpp"

#include "Eigen/Core"

#include <vector>

namespace jafr {

/**
 * Weak-perspective 3D-to-2D map. The left 2x3 block carries rotation and
 * scale (pixels per mm), the last column is the image translation in pixels.
 */
struct MappingMatrix
{
    Eigen::Matrix<double, 2, 4> entries = Eigen::Matrix<double, 2, 4>::Zero();

    /// Leftmost three elements of row r (r = 0 or 1).
    Eigen::Vector3d row3(int r) const { return entries.row(r).head<3>().transpose(); }

    static MappingMatrix orthographic()
    {
        MappingMatrix m;
        m.entries(0, 0) = 1.0;
        m.entries(1, 1) = 1.0;
        return m;
    }
};

/// l image points with a visibility flag each.
struct LandmarkSet2D
{
    Eigen::Matrix2Xd points;
    std::vector<bool> visible;

    LandmarkSet2D() = default;
    explicit LandmarkSet2D(Eigen::Matrix2Xd p)
        : points(std::move(p)), visible(static_cast<std::size_t>(points.cols()), true)
    {
    }
    LandmarkSet2D(Eigen::Matrix2Xd p, std::vector<bool> v) : points(std::move(p)), visible(std::move(v)) {}

    std::size_t size() const { return static_cast<std::size_t>(points.cols()); }

    /// Interleaved (u1, v1, ..., ul, vl).
    Eigen::Map<const Eigen::VectorXd> as_vector() const
    {
        return Eigen::Map<const Eigen::VectorXd>(points.data(), points.size());
    }
};

/// Axis-aligned face box in pixels.
struct BoundingBox
{
    double x = 0.0;
    double y = 0.0;
    double width = 0.0;
    double height = 0.0;

    double area() const { return width * height; }
    /// sqrt(area); the normaliser used by NME.
    double side() const;
    Eigen::Vector2d center() const { return {x + 0.5 * width, y + 0.5 * height}; }
};

/// Tight box around a set of points.
BoundingBox bounding_box(const Eigen::Matrix2Xd& points);

struct RigidTransform
{
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double scale = 1.0;

    Eigen::Matrix3Xd apply(const Eigen::Matrix3Xd& points) const
    {
        return (scale * rotation * points).colwise() + translation;
    }
};

/// M * (p; 1) for every column p.
Eigen::Matrix2Xd project(const MappingMatrix& m, const Eigen::Matrix3Xd& points);

/**
 * Least-squares weak-perspective fit: argmin_M || landmarks - M [points; 1] ||^2.
 * Solved with a column-pivoting QR of the l x 4 design matrix.
 *
 * Throws SingularFitError (carrying the numerical rank) when [points; 1]
 * does not have rank 4, e.g. coplanar or coincident points.
 */
MappingMatrix fit_mapping(const Eigen::Matrix2Xd& landmarks, const Eigen::Matrix3Xd& points);

/**
 * Visibility of a surface point with unit normal \p normal under \p m:
 * 0.5 * (1 + sgn(n . (M1/|M1| x M2/|M2|))), so one of {0, 0.5, 1}.
 */
double landmark_visibility(const MappingMatrix& m, const Eigen::Vector3d& normal);

/// Per landmark of \p prior: visible iff landmark_visibility() > 0.5 (grazing counts as hidden).
std::vector<bool> visibility_mask(const MappingMatrix& m, const Shape3D& shape, const ShapePrior& prior);

/// Same test with precomputed normals (one column per landmark).
std::vector<bool> visibility_mask(const MappingMatrix& m, const Eigen::Matrix3Xd& landmark_normals);

/**
 * Places the prior's mean landmark template into \p bbox: uniform scale
 * sqrt(bbox area / template box area), centres aligned, no rotation. All
 * landmarks are marked visible.
 */
LandmarkSet2D init_landmarks(const ShapePrior& prior, const BoundingBox& bbox);
LandmarkSet2D init_landmarks(const Eigen::Matrix2Xd& mean_landmarks_2d, const BoundingBox& bbox);

struct ProcrustesResult
{
    RigidTransform transform;
    Eigen::Matrix3Xd aligned;     ///< transform applied to A
    double mean_distance = 0.0;   ///< mean per-vertex distance to B, mm
};

/**
 * Closed-form similarity/rigid alignment of A onto B with index
 * correspondence (Kabsch/Umeyama). det(R) = +1 is enforced.
 */
ProcrustesResult procrustes_align(const Eigen::Matrix3Xd& a, const Eigen::Matrix3Xd& b, bool with_scale);
ProcrustesResult procrustes_align(const Shape3D& a, const Shape3D& b, bool with_scale);

struct IcpParams
{
    int max_iters = 50;
    double rel_tol = 1e-6;
};

struct IcpResult
{
    RigidTransform transform;     ///< maps A onto B
    double mean_distance = 0.0;   ///< mean closest-point distance after alignment, mm
    std::vector<double> trace;    ///< RMS closest-point distance after each accepted iteration (non-increasing)
    int iterations = 0;
};

/**
 * Rigid ICP of A onto B without assumed correspondence. Each iteration
 * matches every point of A to its Euclidean nearest neighbour in B (k-d
 * tree) and re-solves the rigid fit in closed form. Stops at max_iters,
 * when the relative change of the mean distance drops below rel_tol, or
 * when an update would increase the mean distance (that update is dropped).
 */
IcpResult rigid_icp(const Eigen::Matrix3Xd& a, const Eigen::Matrix3Xd& b, const IcpParams& params = {});
IcpResult rigid_icp(const Shape3D& a, const Shape3D& b, const IcpParams& params = {});

} // namespace jafr

#endif /* JAFR_CAMERA_HPP */
