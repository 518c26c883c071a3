/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: include/jafr/shape_model.hpp
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

#ifndef JAFR_SHAPE_MODEL_HPP
#define JAFR_SHAPE_MODEL_HPP

#include "Eigen/Core"

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace jafr {

/**
 * A registered 3D face shape with n vertices, in millimetres.
 *
 * Vertices are stored as the columns of a 3 x n matrix. Eigen's
 * column-major storage means the underlying buffer is already the
 * interleaved 3n-vector (x1, y1, z1, ..., xn, yn, zn), which is the layout
 * every regressor in the library works with. See as_vector().
 */
struct Shape3D
{
    Eigen::Matrix3Xd vertices;

    Shape3D() = default;
    explicit Shape3D(Eigen::Matrix3Xd v) : vertices(std::move(v)) {}

    /// Builds a shape from an interleaved 3n-vector.
    static Shape3D from_vector(const Eigen::Ref<const Eigen::VectorXd>& interleaved);

    std::size_t num_vertices() const { return static_cast<std::size_t>(vertices.cols()); }

    Eigen::Map<const Eigen::VectorXd> as_vector() const
    {
        return Eigen::Map<const Eigen::VectorXd>(vertices.data(), vertices.size());
    }
    Eigen::Map<Eigen::VectorXd> as_vector()
    {
        return Eigen::Map<Eigen::VectorXd>(vertices.data(), vertices.size());
    }
};

/**
 * Identity plus expression decomposition of a shape: the expressive shape is
 * identity + expression_offset. Both are interleaved 3n-vectors.
 */
struct ShapeState
{
    Eigen::VectorXd identity;
    Eigen::VectorXd expression_offset;
};

using Triangle = std::array<int, 3>;

/**
 * Everything about the face model that does not change between samples:
 * the mean PEN shape, the 2D landmark template used to initialise a fit,
 * which vertices are landmarks, and the mesh connectivity used for normals.
 *
 * Construct it with make_shape_prior(), which derives adjacency from the
 * triangles and validates the result.
 */
struct ShapePrior
{
    Eigen::VectorXd mean_pen_shape;        ///< 3n, mm
    Eigen::Matrix2Xd mean_landmarks_2d;    ///< 2 x l, pixels (frontal, neutral template)
    std::vector<int> landmark_indices;     ///< l entries in [0, n)
    std::vector<Triangle> triangles;       ///< may be empty when only adjacency is known
    std::vector<std::vector<int>> adjacency;

    std::size_t num_vertices() const { return static_cast<std::size_t>(mean_pen_shape.size() / 3); }
    std::size_t num_landmarks() const { return landmark_indices.size(); }

    /// Throws DimensionError / InvalidArgument if any invariant is broken.
    void validate() const;
};

/**
 * Assembles and validates a prior. Adjacency is built from the triangles
 * (one-ring, neighbours ordered as they are first met). If \p triangles is
 * empty, \p adjacency must be given and is used verbatim as neighbour fans.
 */
ShapePrior make_shape_prior(Eigen::VectorXd mean_pen_shape, Eigen::Matrix2Xd mean_landmarks_2d,
                            std::vector<int> landmark_indices, std::vector<Triangle> triangles,
                            std::vector<std::vector<int>> adjacency = {});

/// Symmetric one-ring adjacency from a triangle list.
std::vector<std::vector<int>> adjacency_from_triangles(std::size_t num_vertices,
                                                       std::span<const Triangle> triangles);

/// identity + expression_offset as an n-vertex shape.
Shape3D compose_shape(const ShapeState& state);

/// full - pen + mean. This is the "expression shape" used as a training target.
Shape3D decompose_expression(const Shape3D& full, const Shape3D& pen, const Shape3D& mean);

/// The 3 x l landmark columns of \p shape, in the prior's landmark order.
Eigen::Matrix3Xd landmark_subshape(const Shape3D& shape, const ShapePrior& prior);
Eigen::Matrix3Xd landmark_subshape(const Shape3D& shape, std::span<const int> indices);

struct NormalsResult
{
    Eigen::Matrix3Xd normals;        ///< unit vectors, one column per requested vertex
    std::vector<int> degenerate;     ///< vertex ids whose neighbourhood had no usable area
};

/**
 * Unit normal at every vertex: area-weighted mean of the incident triangle
 * normals, or of the neighbour-fan cross products when the prior has no
 * triangles. Vertices with a zero average get +z and are listed in
 * NormalsResult::degenerate.
 */
NormalsResult vertex_normals(const Shape3D& shape, const ShapePrior& prior);

/// Same as vertex_normals() but only for the listed vertices (column i <-> vertices[i]).
NormalsResult vertex_normals(const Shape3D& shape, const ShapePrior& prior, std::span<const int> vertices);

/// Elementwise mean. Throws InvalidArgument on an empty list.
Shape3D mean_shape(std::span<const Shape3D> shapes);

} // namespace jafr

#endif /* JAFR_SHAPE_MODEL_HPP */
