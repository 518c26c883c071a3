/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: include/jafr/features.hpp
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

#ifndef JAFR_FEATURES_HPP
#define JAFR_FEATURES_HPP

#include "jafr/camera.hpp"

#include "Eigen/Core"

#include <cstddef>
#include <memory>
#include <vector>

namespace jafr {

/// Row-major grey image, intensities in [0, 1]. Pixel (x, y) sits at coordinate (x, y).
struct GrayImage
{
    int width = 0;
    int height = 0;
    std::vector<double> pixels;

    GrayImage() = default;
    GrayImage(int w, int h, double fill = 0.0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill)
    {
    }

    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    /// Intensity at integer (x, y), 0 outside the image.
    double value_or_zero(int x, int y) const
    {
        return (x < 0 || y < 0 || x >= width || y >= height) ? 0.0 : at(x, y);
    }

    /// Bilinear sample; pixels outside the image read as 0.
    double sample(double x, double y) const;
};

/**
 * Descriptor layout. The defaults give the canonical 4x4x8 = 128-dim SIFT
 * descriptor. With patch_scales_with_bbox the window side is
 * round(bbox_side * patch_bbox_ratio) instead of patch_size.
 */
struct FeatureConfig
{
    int patch_size = 32;
    int cells = 4;
    int orientation_bins = 8;
    double clamp = 0.2;
    bool patch_scales_with_bbox = true;
    double patch_bbox_ratio = 1.0 / 6.0;

    std::size_t descriptor_dim() const
    {
        return static_cast<std::size_t>(cells) * static_cast<std::size_t>(cells) *
               static_cast<std::size_t>(orientation_bins);
    }

    /// Patch side to use for a face in \p bbox (at least 4 px).
    int patch_for(const BoundingBox& bbox) const;

    /// Throws InvalidArgument unless the layout is the 128-dim descriptor with a sane patch.
    void validate() const;
};

/**
 * Upright, fixed-scale SIFT descriptor centred at (u, v): gradient
 * orientation histograms over a patch_size^2 window, Gaussian-weighted
 * (sigma = patch/2), trilinear binning into cells x cells x bins, then
 * L2-normalise, clamp, renormalise. A patch without gradients gives zeros.
 */
Eigen::VectorXd sift_descriptor(const GrayImage& image, const Eigen::Vector2d& center, const FeatureConfig& config);
Eigen::VectorXd sift_descriptor(const GrayImage& image, const Eigen::Vector2d& center, const FeatureConfig& config,
                                int patch_size);

/**
 * Concatenated descriptors in landmark order. Blocks of invisible landmarks
 * are exact zeros. The patch side is config.patch_size.
 */
Eigen::VectorXd assemble_features(const GrayImage& image, const LandmarkSet2D& landmarks,
                                  const FeatureConfig& config);
Eigen::VectorXd assemble_features(const GrayImage& image, const LandmarkSet2D& landmarks,
                                  const FeatureConfig& config, int patch_size);

/**
 * Image x landmarks -> fixed-length vector. The cascade only sees this
 * contract, so SIFT can be swapped for another encoder (learned features,
 * or a synthetic one in tests) without touching the regressors.
 */
class FeatureExtractor
{
public:
    virtual ~FeatureExtractor() = default;
    virtual std::size_t dimension(std::size_t num_landmarks) const = 0;
    virtual Eigen::VectorXd extract(const GrayImage& image, const LandmarkSet2D& landmarks,
                                    const BoundingBox& bbox) const = 0;
};

class SiftFeatureExtractor final : public FeatureExtractor
{
public:
    explicit SiftFeatureExtractor(FeatureConfig config);
    std::size_t dimension(std::size_t num_landmarks) const override;
    Eigen::VectorXd extract(const GrayImage& image, const LandmarkSet2D& landmarks,
                            const BoundingBox& bbox) const override;
    const FeatureConfig& config() const { return config_; }

private:
    FeatureConfig config_;
};

struct Heatmap
{
    int width = 0;
    int height = 0;
    std::vector<double> values; ///< row-major

    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// H(p) = 1 / (1 + distance from p to the nearest visible landmark); all zeros if none is visible.
Heatmap heatmap(const LandmarkSet2D& landmarks, int width, int height);

} // namespace jafr

#endif /* JAFR_FEATURES_HPP */
