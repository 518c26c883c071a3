/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: include/jafr/synth.hpp
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

#ifndef JAFR_SYNTH_HPP
#define JAFR_SYNTH_HPP

#include "jafr/camera.hpp"
#include "jafr/cascade.hpp"
#include "jafr/features.hpp"
#include "jafr/io.hpp"
#include "jafr/shape_model.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace jafr {

/**
 * Topology of the synthetic face: a rows x cols height-field grid in a
 * frame with x to the subject's left in the image, y down and z towards
 * the camera. extra_vertices (0..2) splits the top corner quads at their
 * centroid, so any vertex count from rows*cols to rows*cols+2 is reachable.
 * The default gives 5996 vertices.
 */
struct SynthFaceConfig
{
    int rows = 74;
    int cols = 81;
    int extra_vertices = 2;
};

struct SynthConfig
{
    std::vector<double> yaws = default_yaws();
    int image_size = 200;
    double face_fraction = 0.7;      ///< projected face height / image side
    double landmark_noise_px = 0.0;  ///< iid Gaussian noise on annotated landmarks
    double shape_noise_mm = 0.0;     ///< iid Gaussian noise on ground-truth vertices
    double bbox_jitter = 0.0;        ///< relative std of box shift and scale
    int subjects = 10;
    int expressions = 1;             ///< non-neutral expressions per subject (plus one neutral)
    std::uint64_t seed = 1;
    SynthFaceConfig face;

    /// -90 to 90 in steps of 10 degrees.
    static std::vector<double> default_yaws();
};

struct SynthFaceParams
{
    double half_width = 70.0;  ///< mm
    double half_height = 95.0;
    double depth = 55.0;
    double nose = 18.0;
    double eye = 7.0;
    double brow = 3.5;
    double lips = 3.5;
    double chin = 5.0;
};

struct SynthExpressionParams
{
    double smile = 0.0;
    double open = 0.0;
    double brow_raise = 0.0;
};

/// Mesh and landmark vertices of the synthetic face topology (68 landmarks).
struct SynthTopology
{
    SynthFaceConfig config;
    Eigen::Matrix2Xd grid_uv;          ///< per-vertex normalised coordinates in [-1, 1]^2
    std::vector<Triangle> triangles;
    std::vector<int> landmark_indices;
    std::size_t num_vertices() const { return static_cast<std::size_t>(grid_uv.cols()); }
};

SynthTopology synth_topology(const SynthFaceConfig& config = {});

/// Neutral face of one identity.
Shape3D synth_pen_shape(const SynthTopology& topo, const SynthFaceParams& identity);
/// Expressive face: the PEN shape plus the expression displacement field.
Shape3D synth_expressive_shape(const SynthTopology& topo, const SynthFaceParams& identity,
                               const SynthExpressionParams& expression);

/// Rotation about the vertical (y) axis by \p yaw_degrees.
Eigen::Matrix3d yaw_rotation(double yaw_degrees);

/// Weak-perspective map s * (first two rows of R) + t.
MappingMatrix yaw_mapping(double yaw_degrees, double scale, const Eigen::Vector2d& translation);

/**
 * Z-buffered Gouraud rendering of a shaded mesh under \p mapping. \p albedo
 * is per vertex in [0, 1]; the camera looks down -z after applying
 * \p rotation. Background is 0.
 */
GrayImage render_shaded(const Shape3D& shape, const std::vector<Triangle>& triangles, const std::vector<double>& albedo,
                        const MappingMatrix& mapping, const Eigen::Matrix3d& rotation, int width, int height);

struct SynthSample
{
    TrainingSample sample;
    Shape3D pen;
    Shape3D expressive;
    MappingMatrix mapping;
    double yaw = 0.0;
    std::string subject;
    int expression = 0; ///< 0 = neutral
};

struct SynthDataset
{
    ShapePrior prior;
    SynthTopology topology;
    std::vector<SynthSample> samples;
};

/**
 * Renders every (PEN, expressive) mesh pair at every yaw of \p cfg: builds
 * the weak-perspective map, projects the landmarks, marks visibility from
 * the surface normals and renders a shaded image. Uses prior.triangles.
 */
std::vector<SynthSample> synth_pose_sweep(const std::vector<Shape3D>& pens, const std::vector<Shape3D>& expressives,
                                          const std::vector<std::string>& subjects,
                                          const std::vector<int>& expression_ids, const ShapePrior& prior,
                                          const SynthConfig& cfg);

/// Mean landmark layout of the frontal (yaw 0) neutral samples.
Eigen::Matrix2Xd frontal_template(const std::vector<SynthSample>& samples);

/**
 * Random identities and expressions on the synthetic topology, swept over
 * the configured yaws. The prior's mean shape averages the PEN shapes and
 * its template averages the frontal neutral landmarks. Bit-identical for a
 * fixed seed.
 */
SynthDataset synth_dataset(const SynthConfig& cfg);

/**
 * Writes images (16-bit PGM), landmark files, meshes, prior.txt and
 * manifest.tsv into \p dir; folds come from kfold_split() with \p folds.
 */
void write_synth_dataset(const SynthDataset& data, const std::filesystem::path& dir, int folds, std::uint64_t seed);

/**
 * Fold id per entry such that every subject lands in exactly one fold and
 * fold sizes, counted in subjects, differ by at most one. Throws
 * InvalidArgument when there are fewer subjects than folds.
 */
std::vector<int> kfold_split(const std::vector<std::string>& subjects, int k, std::uint64_t seed);

/**
 * Feature extractor of the linear world: h = A_u (U* - U) + c_i, where the
 * sample index i is encoded in the single pixel of its 1x1 image.
 */
class LinearWorldFeatures final : public FeatureExtractor
{
public:
    LinearWorldFeatures(Eigen::MatrixXd basis_u, Eigen::MatrixXd offsets, Eigen::MatrixXd targets);
    std::size_t dimension(std::size_t num_landmarks) const override;
    Eigen::VectorXd extract(const GrayImage& image, const LandmarkSet2D& landmarks,
                            const BoundingBox& bbox) const override;

private:
    Eigen::MatrixXd basis_u_; ///< D x 2l, orthonormal columns
    Eigen::MatrixXd offsets_; ///< D x N, orthogonal to basis_u_
    Eigen::MatrixXd targets_; ///< 2l x N ground-truth landmarks
};

struct LinearWorld
{
    ShapePrior prior;
    std::vector<TrainingSample> samples;
    Eigen::MatrixXd landmark_map; ///< W* (2l x D): dU = W* h
    Eigen::MatrixXd shape_map;    ///< G* (6n x 2l): dS = G* dU
    std::vector<MappingMatrix> mappings;
    std::shared_ptr<LinearWorldFeatures> features;
};

/**
 * A dataset on which one cascade stage is exactly solvable: features are an
 * orthogonal encoding of the landmark residual plus a per-sample component
 * in the complementary subspace, shape targets are G* applied to the
 * landmark residual, and every target is consistent with an exact
 * weak-perspective projection of its expressive shape.
 */
LinearWorld synth_linear_world(std::size_t n, std::size_t l, std::size_t num_samples, std::uint64_t seed);

} // namespace jafr

#endif /* JAFR_SYNTH_HPP */
