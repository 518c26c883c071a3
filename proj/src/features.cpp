/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: src/features.cpp
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
#include "jafr/features.hpp"
#include "jafr/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace jafr {

double GrayImage::sample(double x, double y) const
{
    const double fx0 = std::floor(x);
    const double fy0 = std::floor(y);
    const int x0 = static_cast<int>(fx0);
    const int y0 = static_cast<int>(fy0);
    const double ax = x - fx0;
    const double ay = y - fy0;
    return (1.0 - ay) * ((1.0 - ax) * value_or_zero(x0, y0) + ax * value_or_zero(x0 + 1, y0)) +
           ay * ((1.0 - ax) * value_or_zero(x0, y0 + 1) + ax * value_or_zero(x0 + 1, y0 + 1));
}

int FeatureConfig::patch_for(const BoundingBox& bbox) const
{
    if (!patch_scales_with_bbox)
        return patch_size;
    return std::max(4, static_cast<int>(std::lround(bbox.side() * patch_bbox_ratio)));
}

void FeatureConfig::validate() const
{
    if (cells < 1 || orientation_bins < 1)
        throw InvalidArgument("feature config needs at least one cell and one orientation bin");
    if (descriptor_dim() != 128)
        throw InvalidArgument("descriptor dimension is " + std::to_string(descriptor_dim()) + ", expected 128");
    if (patch_size < 4)
        throw InvalidArgument("patch size must be at least 4 px");
    if (!(clamp > 0.0))
        throw InvalidArgument("descriptor clamp must be positive");
    if (patch_scales_with_bbox && !(patch_bbox_ratio > 0.0))
        throw InvalidArgument("patch/bbox ratio must be positive");
}

Eigen::VectorXd sift_descriptor(const GrayImage& image, const Eigen::Vector2d& center, const FeatureConfig& config,
                                int patch_size)
{
    const int cells = config.cells;
    const int bins = config.orientation_bins;
    Eigen::VectorXd desc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config.descriptor_dim()));
    if (!center.allFinite())
        return desc;

    const double patch = static_cast<double>(patch_size);
    const double half = 0.5 * patch;
    const double cell_size = patch / cells;
    const double sigma = 0.5 * patch;
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    constexpr double two_pi = 2.0 * std::numbers::pi;

    auto bin_index = [&](int cy, int cx, int o) { return (cy * cells + cx) * bins + o; };

    for (int ky = 0; ky < patch_size; ++ky) {
        const double dy = -half + 0.5 + ky;
        const double y = center.y() + dy;
        const double cy = (dy + half) / cell_size - 0.5;
        const int cy0 = static_cast<int>(std::floor(cy));
        const double wy1 = cy - cy0;
        for (int kx = 0; kx < patch_size; ++kx) {
            const double dx = -half + 0.5 + kx;
            const double x = center.x() + dx;
            const double gx = 0.5 * (image.sample(x + 1.0, y) - image.sample(x - 1.0, y));
            const double gy = 0.5 * (image.sample(x, y + 1.0) - image.sample(x, y - 1.0));
            const double mag = std::hypot(gx, gy);
            if (mag == 0.0)
                continue;
            const double weight = mag * std::exp(-(dx * dx + dy * dy) * inv_two_sigma2);

            double angle = std::atan2(gy, gx);
            if (angle < 0.0)
                angle += two_pi;
            const double ob = angle / two_pi * bins;
            int o0 = static_cast<int>(std::floor(ob));
            const double wo1 = ob - o0;
            o0 = ((o0 % bins) + bins) % bins;
            const int o1 = (o0 + 1) % bins;

            const double cx = (dx + half) / cell_size - 0.5;
            const int cx0 = static_cast<int>(std::floor(cx));
            const double wx1 = cx - cx0;

            for (int iy = 0; iy < 2; ++iy) {
                const int cyi = cy0 + iy;
                if (cyi < 0 || cyi >= cells)
                    continue;
                const double wy = iy ? wy1 : 1.0 - wy1;
                for (int ix = 0; ix < 2; ++ix) {
                    const int cxi = cx0 + ix;
                    if (cxi < 0 || cxi >= cells)
                        continue;
                    const double w = weight * wy * (ix ? wx1 : 1.0 - wx1);
                    desc(bin_index(cyi, cxi, o0)) += w * (1.0 - wo1);
                    desc(bin_index(cyi, cxi, o1)) += w * wo1;
                }
            }
        }
    }

    double norm = desc.norm();
    if (!(norm > 1e-12))
        return Eigen::VectorXd::Zero(desc.size());
    desc /= norm;
    desc = desc.cwiseMin(config.clamp);
    norm = desc.norm();
    desc /= norm;
    return desc;
}

Eigen::VectorXd sift_descriptor(const GrayImage& image, const Eigen::Vector2d& center, const FeatureConfig& config)
{
    return sift_descriptor(image, center, config, config.patch_size);
}

Eigen::VectorXd assemble_features(const GrayImage& image, const LandmarkSet2D& landmarks,
                                  const FeatureConfig& config, int patch_size)
{
    const auto l = landmarks.size();
    if (landmarks.visible.size() != l)
        throw DimensionError("landmark visibility has " + std::to_string(landmarks.visible.size()) +
                             " flags for " + std::to_string(l) + " points");
    const auto dim = static_cast<Eigen::Index>(config.descriptor_dim());
    Eigen::VectorXd h = Eigen::VectorXd::Zero(dim * static_cast<Eigen::Index>(l));
    for (std::size_t j = 0; j < l; ++j) {
        if (!landmarks.visible[j])
            continue;
        h.segment(static_cast<Eigen::Index>(j) * dim, dim) =
            sift_descriptor(image, landmarks.points.col(static_cast<Eigen::Index>(j)), config, patch_size);
    }
    return h;
}

Eigen::VectorXd assemble_features(const GrayImage& image, const LandmarkSet2D& landmarks,
                                  const FeatureConfig& config)
{
    return assemble_features(image, landmarks, config, config.patch_size);
}

SiftFeatureExtractor::SiftFeatureExtractor(FeatureConfig config) : config_(config)
{
    config_.validate();
}

std::size_t SiftFeatureExtractor::dimension(std::size_t num_landmarks) const
{
    return config_.descriptor_dim() * num_landmarks;
}

Eigen::VectorXd SiftFeatureExtractor::extract(const GrayImage& image, const LandmarkSet2D& landmarks,
                                              const BoundingBox& bbox) const
{
    return assemble_features(image, landmarks, config_, config_.patch_for(bbox));
}

Heatmap heatmap(const LandmarkSet2D& landmarks, int width, int height)
{
    if (width <= 0 || height <= 0)
        throw InvalidArgument("heatmap dimensions must be positive");
    Heatmap h;
    h.width = width;
    h.height = height;
    h.values.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0.0);

    std::vector<Eigen::Vector2d> visible;
    for (std::size_t j = 0; j < landmarks.size(); ++j)
        if (landmarks.visible[j])
            visible.emplace_back(landmarks.points.col(static_cast<Eigen::Index>(j)));
    if (visible.empty())
        return h;

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const Eigen::Vector2d p(x, y);
            double best = std::numeric_limits<double>::infinity();
            for (const auto& u : visible)
                best = std::min(best, (p - u).squaredNorm());
            h.values[static_cast<std::size_t>(y) * width + x] = 1.0 / (1.0 + std::sqrt(best));
        }
    }
    return h;
}

} // namespace jafr
