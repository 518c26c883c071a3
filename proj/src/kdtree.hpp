/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: src/kdtree.hpp
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

#ifndef JAFR_KDTREE_HPP
#define JAFR_KDTREE_HPP

#include "Eigen/Core"

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace jafr::detail {

/**
 * Static 3D k-d tree over the columns of a point matrix, stored implicitly
 * as a permutation (median at the middle of every range). The point
 * matrix must outlive the tree.
 */
class KdTree3
{
public:
    explicit KdTree3(const Eigen::Matrix3Xd& points) : points_(points), order_(points.cols())
    {
        std::iota(order_.begin(), order_.end(), 0);
        build(0, static_cast<int>(order_.size()), 0);
    }

    /// Index of the nearest point to q; ties go to the lowest visit order.
    int nearest(const Eigen::Vector3d& q, double* squared_distance = nullptr) const
    {
        int best = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        search(q, 0, static_cast<int>(order_.size()), 0, best, best_d2);
        if (squared_distance)
            *squared_distance = best_d2;
        return best;
    }

private:
    void build(int lo, int hi, int depth)
    {
        if (hi - lo <= 1)
            return;
        const int axis = depth % 3;
        const int mid = lo + (hi - lo) / 2;
        std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                         [&](int a, int b) { return points_(axis, a) < points_(axis, b); });
        build(lo, mid, depth + 1);
        build(mid + 1, hi, depth + 1);
    }

    void search(const Eigen::Vector3d& q, int lo, int hi, int depth, int& best, double& best_d2) const
    {
        if (lo >= hi)
            return;
        const int mid = lo + (hi - lo) / 2;
        const int idx = order_[static_cast<std::size_t>(mid)];
        const double d2 = (points_.col(idx) - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = idx;
        }
        const int axis = depth % 3;
        const double diff = q(axis) - points_(axis, idx);
        const bool left_first = diff < 0.0;
        if (left_first)
            search(q, lo, mid, depth + 1, best, best_d2);
        else
            search(q, mid + 1, hi, depth + 1, best, best_d2);
        if (diff * diff < best_d2) {
            if (left_first)
                search(q, mid + 1, hi, depth + 1, best, best_d2);
            else
                search(q, lo, mid, depth + 1, best, best_d2);
        }
    }

    const Eigen::Matrix3Xd& points_;
    std::vector<int> order_;
};

} // namespace jafr::detail

#endif /* JAFR_KDTREE_HPP */
