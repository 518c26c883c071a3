/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: include/jafr/recognition.hpp
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

#ifndef JAFR_RECOGNITION_HPP
#define JAFR_RECOGNITION_HPP

#include "jafr/camera.hpp"
#include "jafr/shape_model.hpp"

#include "Eigen/Core"

#include <span>
#include <string>
#include <vector>

namespace jafr {

/// probes x gallery scores with a label per row and per column.
struct ScoreMatrix
{
    Eigen::MatrixXd scores;
    std::vector<std::string> probe_labels;
    std::vector<std::string> gallery_labels;

    /// Throws DimensionError if the label counts do not match the matrix.
    void validate() const;
};

enum class DistanceMode {
    corresponded, ///< Procrustes on index-matched vertices
    icp,          ///< rigid ICP, no correspondence assumed
};

/// Mean per-vertex distance in mm after rigid alignment of \p probe onto \p gallery.
double shape_distance(const Shape3D& probe, const Shape3D& gallery, DistanceMode mode = DistanceMode::icp);

/// Distances between every probe and gallery shape, row = probe.
ScoreMatrix distance_matrix(std::span<const Shape3D> probes, std::span<const Shape3D> gallery,
                            std::vector<std::string> probe_labels, std::vector<std::string> gallery_labels,
                            DistanceMode mode = DistanceMode::icp, unsigned workers = 1);

enum class NormScope {
    global,  ///< max/min taken over the whole matrix (default)
    per_row, ///< max/min taken per probe
};

/**
 * s = max(D) - d followed by min-max normalisation to [0, 1]. A scope with
 * a constant distance maps to all zeros.
 */
ScoreMatrix distances_to_similarity(const ScoreMatrix& distances, NormScope scope = NormScope::global);

/// w * s2d + (1 - w) * s3d. Throws InvalidArgument if the labels or w disagree.
ScoreMatrix fuse_scores(const ScoreMatrix& s2d, const ScoreMatrix& s3d, double w);

struct IdentificationResult
{
    std::vector<std::size_t> predicted;     ///< gallery column per probe
    std::vector<std::string> predicted_labels;
    double accuracy_percent = 0.0;
};

/// Subject id of a label: everything before the first ':' (the whole label if none).
std::string subject_of(const std::string& label);

/**
 * Argmax per probe row, ties to the lowest gallery index. A probe counts as
 * correct when subject_of() its label equals subject_of() the chosen gallery label.
 */
IdentificationResult rank1_identify(const ScoreMatrix& scores);

struct RocPoint
{
    double threshold;
    double far; ///< imposter scores >= threshold / imposters
    double tar; ///< genuine scores >= threshold / genuines
};

struct VerificationReport
{
    double accuracy_percent = 0.0;
    double eer_percent = 0.0;
    double auc_percent = 0.0;
    double threshold = 0.0; ///< accepts scores >= threshold; maximises TP + TN
    std::vector<RocPoint> roc;
};

/// Higher score means more likely the same person. Throws InvalidArgument on an empty list.
VerificationReport verify_metrics(std::span<const double> genuine, std::span<const double> imposter);

} // namespace jafr

#endif /* JAFR_RECOGNITION_HPP */
