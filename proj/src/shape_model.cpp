/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: src/shape_model.cpp
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
#include "jafr/shape_model.hpp"
#include "jafr/error.hpp"

#include "Eigen/Geometry"

#include <algorithm>
#include <cmath>
#include <string>

namespace jafr {

Shape3D Shape3D::from_vector(const Eigen::Ref<const Eigen::VectorXd>& interleaved)
{
    if (interleaved.size() % 3 != 0) {
        throw DimensionError("shape vector length " + std::to_string(interleaved.size()) +
                             " is not a multiple of 3");
    }
    Eigen::Matrix3Xd v(3, interleaved.size() / 3);
    Eigen::Map<Eigen::VectorXd>(v.data(), v.size()) = interleaved;
    return Shape3D(std::move(v));
}

std::vector<std::vector<int>> adjacency_from_triangles(std::size_t num_vertices,
                                                       std::span<const Triangle> triangles)
{
    std::vector<std::vector<int>> adj(num_vertices);
    auto link = [&](int a, int b) {
        auto& list = adj[static_cast<std::size_t>(a)];
        if (std::find(list.begin(), list.end(), b) == list.end())
            list.push_back(b);
    };
    for (const auto& t : triangles) {
        for (int k = 0; k < 3; ++k) {
            const int v = t[k];
            if (v < 0 || static_cast<std::size_t>(v) >= num_vertices)
                throw InvalidArgument("triangle references vertex " + std::to_string(v) + " out of range");
        }
        for (int k = 0; k < 3; ++k) {
            link(t[k], t[(k + 1) % 3]);
            link(t[(k + 1) % 3], t[k]);
        }
    }
    return adj;
}

void ShapePrior::validate() const
{
    if (mean_pen_shape.size() == 0 || mean_pen_shape.size() % 3 != 0)
        throw DimensionError("mean PEN shape must be a non-empty 3n-vector");
    if (!mean_pen_shape.allFinite())
        throw InvalidArgument("mean PEN shape has non-finite coordinates");
    const auto n = num_vertices();
    const auto l = landmark_indices.size();
    if (l == 0)
        throw InvalidArgument("prior has no landmarks");
    if (static_cast<std::size_t>(mean_landmarks_2d.cols()) != l)
        throw DimensionError("mean landmark template has " + std::to_string(mean_landmarks_2d.cols()) +
                             " points, expected " + std::to_string(l));
    std::vector<int> sorted = landmark_indices;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw InvalidArgument("landmark indices are not distinct");
    if (sorted.front() < 0 || static_cast<std::size_t>(sorted.back()) >= n)
        throw InvalidArgument("landmark index out of range [0, " + std::to_string(n) + ")");
    if (adjacency.size() != n)
        throw DimensionError("adjacency has " + std::to_string(adjacency.size()) + " entries, expected " +
                             std::to_string(n));
    for (std::size_t v = 0; v < n; ++v) {
        for (int w : adjacency[v]) {
            if (w < 0 || static_cast<std::size_t>(w) >= n)
                throw InvalidArgument("adjacency of vertex " + std::to_string(v) + " is out of range");
            const auto& back = adjacency[static_cast<std::size_t>(w)];
            if (std::find(back.begin(), back.end(), static_cast<int>(v)) == back.end())
                throw InvalidArgument("adjacency is not symmetric between " + std::to_string(v) + " and " +
                                      std::to_string(w));
        }
    }
    for (int idx : landmark_indices) {
        if (adjacency[static_cast<std::size_t>(idx)].size() < 2)
            throw InvalidArgument("landmark vertex " + std::to_string(idx) + " has fewer than 2 neighbours");
    }
}

ShapePrior make_shape_prior(Eigen::VectorXd mean_pen_shape, Eigen::Matrix2Xd mean_landmarks_2d,
                            std::vector<int> landmark_indices, std::vector<Triangle> triangles,
                            std::vector<std::vector<int>> adjacency)
{
    ShapePrior prior;
    prior.mean_pen_shape = std::move(mean_pen_shape);
    prior.mean_landmarks_2d = std::move(mean_landmarks_2d);
    prior.landmark_indices = std::move(landmark_indices);
    prior.triangles = std::move(triangles);
    if (!prior.triangles.empty())
        prior.adjacency = adjacency_from_triangles(prior.num_vertices(), prior.triangles);
    else
        prior.adjacency = std::move(adjacency);
    prior.validate();
    return prior;
}

Shape3D compose_shape(const ShapeState& state)
{
    if (state.identity.size() != state.expression_offset.size())
        throw DimensionError("identity (" + std::to_string(state.identity.size()) + ") and expression offset (" +
                             std::to_string(state.expression_offset.size()) + ") differ in length");
    return Shape3D::from_vector(state.identity + state.expression_offset);
}

Shape3D decompose_expression(const Shape3D& full, const Shape3D& pen, const Shape3D& mean)
{
    if (full.num_vertices() != pen.num_vertices() || full.num_vertices() != mean.num_vertices())
        throw DimensionError("decompose_expression: vertex counts " + std::to_string(full.num_vertices()) + ", " +
                             std::to_string(pen.num_vertices()) + ", " + std::to_string(mean.num_vertices()));
    return Shape3D(full.vertices - pen.vertices + mean.vertices);
}

Eigen::Matrix3Xd landmark_subshape(const Shape3D& shape, std::span<const int> indices)
{
    const auto n = static_cast<int>(shape.num_vertices());
    Eigen::Matrix3Xd out(3, static_cast<Eigen::Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= n)
            throw InvalidArgument("landmark index " + std::to_string(indices[i]) + " out of range");
        out.col(static_cast<Eigen::Index>(i)) = shape.vertices.col(indices[i]);
    }
    return out;
}

Eigen::Matrix3Xd landmark_subshape(const Shape3D& shape, const ShapePrior& prior)
{
    return landmark_subshape(shape, std::span<const int>(prior.landmark_indices));
}

namespace {

// Unnormalised sum around vertex v: area-weighted triangle normals when
// triangles are available, otherwise the cyclic fan of neighbour cross products.
Eigen::Vector3d accumulate_normal(const Eigen::Matrix3Xd& verts, const ShapePrior& prior, int v,
                                  const std::vector<std::vector<int>>* incident)
{
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    const Eigen::Vector3d p = verts.col(v);
    if (incident) {
        for (int t : (*incident)[static_cast<std::size_t>(v)]) {
            const auto& tri = prior.triangles[static_cast<std::size_t>(t)];
            const Eigen::Vector3d a = verts.col(tri[0]);
            const Eigen::Vector3d b = verts.col(tri[1]);
            const Eigen::Vector3d c = verts.col(tri[2]);
            sum += (b - a).cross(c - a); // |.| = 2 * area
        }
        return sum;
    }
    const auto& nb = prior.adjacency[static_cast<std::size_t>(v)];
    const std::size_t k = nb.size();
    if (k < 2)
        return sum;
    for (std::size_t j = 0; j < k; ++j) {
        // A two-neighbour fan contributes a single cross product, not a closed loop.
        if (k == 2 && j == 1)
            break;
        const Eigen::Vector3d e0 = verts.col(nb[j]) - p;
        const Eigen::Vector3d e1 = verts.col(nb[(j + 1) % k]) - p;
        sum += e0.cross(e1);
    }
    return sum;
}

std::vector<std::vector<int>> incident_triangles(const ShapePrior& prior, std::size_t n)
{
    std::vector<std::vector<int>> inc(n);
    for (std::size_t t = 0; t < prior.triangles.size(); ++t)
        for (int v : prior.triangles[t])
            inc[static_cast<std::size_t>(v)].push_back(static_cast<int>(t));
    return inc;
}

} // namespace

NormalsResult vertex_normals(const Shape3D& shape, const ShapePrior& prior, std::span<const int> vertices)
{
    const auto n = shape.num_vertices();
    if (n != prior.num_vertices())
        throw DimensionError("shape has " + std::to_string(n) + " vertices, prior has " +
                             std::to_string(prior.num_vertices()));
    std::vector<std::vector<int>> incident;
    if (!prior.triangles.empty())
        incident = incident_triangles(prior, n);
    const auto* inc = prior.triangles.empty() ? nullptr : &incident;

    NormalsResult result;
    result.normals.resize(3, static_cast<Eigen::Index>(vertices.size()));
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        const int v = vertices[i];
        if (v < 0 || static_cast<std::size_t>(v) >= n)
            throw InvalidArgument("vertex index " + std::to_string(v) + " out of range");
        const Eigen::Vector3d sum = accumulate_normal(shape.vertices, prior, v, inc);
        const double len = sum.norm();
        if (!(len > 0.0) || !std::isfinite(len)) {
            result.normals.col(static_cast<Eigen::Index>(i)) = Eigen::Vector3d::UnitZ();
            result.degenerate.push_back(v);
        } else {
            result.normals.col(static_cast<Eigen::Index>(i)) = sum / len;
        }
    }
    return result;
}

NormalsResult vertex_normals(const Shape3D& shape, const ShapePrior& prior)
{
    std::vector<int> all(shape.num_vertices());
    for (std::size_t i = 0; i < all.size(); ++i)
        all[i] = static_cast<int>(i);
    return vertex_normals(shape, prior, all);
}

Shape3D mean_shape(std::span<const Shape3D> shapes)
{
    if (shapes.empty())
        throw InvalidArgument("mean_shape of an empty list");
    const auto n = shapes.front().num_vertices();
    Eigen::Matrix3Xd sum = Eigen::Matrix3Xd::Zero(3, static_cast<Eigen::Index>(n));
    for (const auto& s : shapes) {
        if (s.num_vertices() != n)
            throw DimensionError("mean_shape: vertex counts differ (" + std::to_string(s.num_vertices()) + " vs " +
                                 std::to_string(n) + ")");
        sum += s.vertices;
    }
    return Shape3D(sum / static_cast<double>(shapes.size()));
}

} // namespace jafr
