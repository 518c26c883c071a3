/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: include/jafr/cascade.hpp
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

#ifndef JAFR_CASCADE_HPP
#define JAFR_CASCADE_HPP

#include "jafr/camera.hpp"
#include "jafr/features.hpp"
#include "jafr/shape_model.hpp"

#include "Eigen/Core"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace jafr {

/// Linear landmark regressor R_U: 2l x D, maps a feature vector to a landmark update.
struct LandmarkStage
{
    Eigen::MatrixXd weights;
};

/**
 * Linear shape regressor R_S: 6n x 2l. The top 3n rows give the identity
 * update, the bottom 3n rows the expression-shape update.
 */
struct ShapeStage
{
    Eigen::MatrixXd weights;
};

struct CascadeStage
{
    LandmarkStage landmark;
    ShapeStage shape;
};

enum class RidgeMode : std::uint32_t {
    absolute = 0, ///< lambda used as given
    relative = 1, ///< lambda = factor * trace(Gram) / dim, per stage and per regressor
};

struct CascadeModel
{
    static constexpr std::uint32_t format_version = 1;

    ShapePrior prior;
    FeatureConfig feature_config;
    RidgeMode ridge_mode = RidgeMode::relative;
    double ridge = 1e-3;
    std::vector<CascadeStage> stages;

    std::size_t num_stages() const { return stages.size(); }
    /// Feature length D the landmark regressors expect.
    std::size_t feature_dim() const;
    /// Throws DimensionError / InvalidArgument on inconsistent stages.
    void validate() const;
};

/**
 * One training triplet. \p target holds the ground-truth PEN shape as
 * identity and the expression deformation as expression_offset. Landmarks
 * include anatomically placed positions for hidden points; their
 * visibility flags say which ones count in NME.
 */
struct TrainingSample
{
    GrayImage image;
    BoundingBox bbox;
    ShapeState target;
    LandmarkSet2D target_landmarks;
};

struct TrainOptions
{
    int stages = 5;
    RidgeMode ridge_mode = RidgeMode::relative;
    double ridge = 1e-3;
    FeatureConfig feature_config;
    /// Threads used for feature extraction. Results do not depend on it.
    unsigned workers = 1;
};

/// Training-set errors after a stage (stage 0 = initialisation).
struct StageStats
{
    int stage = 0;
    double nme = 0.0;              ///< mean visible-landmark error / bbox side
    double mae_pen = 0.0;          ///< mean per-vertex distance, mm, no alignment
    double mae_expressive = 0.0;
    double landmark_ridge = 0.0;   ///< lambda actually used
    double shape_ridge = 0.0;
    bool landmark_pseudo_inverse = false; ///< Gram was singular at lambda = 0
};

struct TrainResult
{
    CascadeModel model;
    std::vector<StageStats> stats;
};

/**
 * Closed-form ridge solution of argmin sum_i |dU_i - W h_i|^2 + lambda |W|_F^2.
 * \p features is D x N (one column per sample), \p target_deltas is 2l x N.
 *
 * With lambda = 0 and a singular Gram, the minimum-norm least-squares
 * solution is returned instead. Throws InvalidArgument
 * on non-finite input. \p used_pseudo_inverse, if given, reports that case.
 */
LandmarkStage train_landmark_stage(const Eigen::MatrixXd& features, const Eigen::MatrixXd& target_deltas,
                                   double ridge, bool* used_pseudo_inverse = nullptr);

/**
 * R_S = dS dU^T (dU dU^T + lambda I)^-1 with dU 2l x N and dS 6n x N.
 * With lambda = 0 a singular Gram (N <= 2l or rank-deficient dU) throws
 * SingularFitError.
 */
ShapeStage train_shape_stage(const Eigen::MatrixXd& delta_u, const Eigen::MatrixXd& delta_s, double ridge);

/// factor * trace(X X^T) / rows(X): the relative ridge rule.
double relative_ridge(const Eigen::MatrixXd& x, double factor);

/**
 * Learns K coupled (landmark, shape) stages. Per stage: fit R_U on the
 * current landmark residuals, update landmarks, fit R_S on the predicted
 * landmark updates, update both shapes, refit the weak-perspective map on
 * the expressive shape's landmarks, project to refine the landmarks and
 * recompute visibility.
 *
 * Starts every sample from the mean shape for both identity and expression
 * shape and from init_landmarks() with all points visible. \p extractor
 * overrides the SIFT extractor built from options.feature_config.
 */
TrainResult train_cascade(std::span<const TrainingSample> samples, const ShapePrior& prior,
                          const TrainOptions& options, const FeatureExtractor* extractor = nullptr);

struct IterationTrace
{
    LandmarkSet2D landmarks;
    double identity_delta_norm = 0.0;   ///< |S_Id - mean|
    double expression_offset_norm = 0.0;
};

struct FitResult
{
    LandmarkSet2D landmarks;
    Shape3D pen_shape;
    Shape3D expressive_shape;
    MappingMatrix mapping;
    /// A mapping fit was singular at some iteration and the previous map was reused.
    bool degraded = false;
    std::vector<IterationTrace> trace;
};

/**
 * Runs the frozen cascade on one image. Deterministic: identical inputs
 * give bit-identical results. Safe to call concurrently on a shared model.
 */
FitResult fit(const GrayImage& image, const BoundingBox& bbox, const CascadeModel& model,
              const FeatureExtractor* extractor = nullptr, bool keep_trace = false);

/**
 * Binary model container: header {magic, format_version, K, n, l,
 * descriptor_dim, ridge, feature config}, the prior, then every stage
 * matrix as little-endian float64 in row-major order.
 */
void save_model(const CascadeModel& model, const std::filesystem::path& path);

/// Throws ParseError on a corrupt/truncated file and VersionError on a foreign version.
CascadeModel load_model(const std::filesystem::path& path);

} // namespace jafr

#endif /* JAFR_CASCADE_HPP */
