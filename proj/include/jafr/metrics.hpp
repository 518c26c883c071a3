/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: include/jafr/metrics.hpp
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

#ifndef JAFR_METRICS_HPP
#define JAFR_METRICS_HPP

#include "jafr/camera.hpp"
#include "jafr/shape_model.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace jafr {

/// How the estimate is aligned to ground truth before measuring MAE.
enum class AlignMode {
    none,
    rigid,      ///< Procrustes without scale (default; keeps millimetres honest)
    similarity, ///< Procrustes with scale
};

/// Reading of |S* - S^| / n.
enum class MaeNorm {
    per_vertex, ///< sum of per-vertex Euclidean distances / n (default)
    stacked,    ///< 2-norm of the whole 3n difference vector / n
};

struct EvalRecord
{
    std::string id;
    Shape3D gt_shape;   ///< may be empty when only landmarks are evaluated
    Shape3D est_shape;
    LandmarkSet2D gt_landmarks;
    LandmarkSet2D est_landmarks;
    BoundingBox bbox;
    double yaw_degrees = 0.0;
};

/// Error of one sample, after alignment of est onto gt.
double sample_mae(const Shape3D& gt, const Shape3D& est, AlignMode align = AlignMode::rigid,
                  MaeNorm norm = MaeNorm::per_vertex);

/// Mean of sample_mae() over records. Throws InvalidArgument on an empty list.
double mae(std::span<const EvalRecord> records, AlignMode align = AlignMode::rigid,
           MaeNorm norm = MaeNorm::per_vertex);

struct NpdeMap
{
    std::vector<double> values; ///< |z*_j - z^_j| / (z*_max - z*_min), one per vertex
    double mean_percent = 0.0;
    double std_percent = 0.0;   ///< population standard deviation, in %
};

/// Throws InvalidArgument when the ground truth has no depth range.
NpdeMap npde_map(const Shape3D& gt, const Shape3D& est);

/**
 * (1/d)(1/N_v) * sum over landmarks visible in \p gt of the pixel error,
 * with d = sqrt(bbox area). Throws InvalidArgument without visible landmarks.
 */
double sample_nme(const LandmarkSet2D& gt, const LandmarkSet2D& est, const BoundingBox& bbox);

double nme(std::span<const EvalRecord> records);

struct YawBucket
{
    double lo = 0.0;
    double hi = 0.0;
    bool closed_hi = false; ///< include hi itself
    std::string label() const;
    bool contains(double abs_yaw) const;
};

/// [0,30), [30,60), [60,90]
std::vector<YawBucket> default_yaw_buckets();

struct BucketRow
{
    YawBucket bucket;
    std::size_t count = 0;
    std::optional<double> nme; ///< absent for an empty bucket
    std::optional<double> mae;
};

/**
 * Per-yaw-bucket NME/MAE plus the across-bucket mean and sample standard
 * deviation of the populated buckets, i.e. the layout of a
 * "[0,30) | [30,60) | [60,90] | Mean | Std" alignment table.
 */
struct PoseBucketReport
{
    std::vector<BucketRow> rows;
    std::optional<double> nme_mean, nme_std;
    std::optional<double> mae_mean, mae_std;

    /// Aligned plain-text table; NME in percent, MAE in mm.
    std::string format_table(const std::string& method = "Proposed") const;
    /// One line per bucket: bucket,count,nme,mae (empty cell when absent).
    std::string to_csv() const;
};

PoseBucketReport pose_bucket_report(std::span<const EvalRecord> records,
                                    std::span<const YawBucket> buckets = {}, AlignMode align = AlignMode::rigid);

/**
 * MAE per signed-yaw magnitude (|yaw| rounded to the nearest 10 degrees)
 * plus the average, laid out as "+-90 ... 0 | Avg." columns.
 */
std::string format_yaw_mae_table(std::span<const EvalRecord> records, AlignMode align = AlignMode::rigid,
                                 const std::string& method = "Proposed");

/// Mean and sample standard deviation (n - 1). std is 0 for a single value.
std::pair<double, double> mean_and_sample_std(std::span<const double> values);

} // namespace jafr

#endif /* JAFR_METRICS_HPP */
