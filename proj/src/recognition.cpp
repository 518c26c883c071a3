/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: src/recognition.cpp
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
#include "jafr/recognition.hpp"
#include "jafr/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <thread>

namespace jafr {

void ScoreMatrix::validate() const
{
    if (static_cast<Eigen::Index>(probe_labels.size()) != scores.rows())
        throw DimensionError("score matrix has " + std::to_string(scores.rows()) + " rows but " +
                             std::to_string(probe_labels.size()) + " probe labels");
    if (static_cast<Eigen::Index>(gallery_labels.size()) != scores.cols())
        throw DimensionError("score matrix has " + std::to_string(scores.cols()) + " columns but " +
                             std::to_string(gallery_labels.size()) + " gallery labels");
    if (!scores.allFinite())
        throw InvalidArgument("score matrix has non-finite entries");
}

double shape_distance(const Shape3D& probe, const Shape3D& gallery, DistanceMode mode)
{
    if (mode == DistanceMode::corresponded)
        return procrustes_align(probe, gallery, false).mean_distance;
    return rigid_icp(probe, gallery).mean_distance;
}

ScoreMatrix distance_matrix(std::span<const Shape3D> probes, std::span<const Shape3D> gallery,
                            std::vector<std::string> probe_labels, std::vector<std::string> gallery_labels,
                            DistanceMode mode, unsigned workers)
{
    ScoreMatrix out;
    out.scores.resize(static_cast<Eigen::Index>(probes.size()), static_cast<Eigen::Index>(gallery.size()));
    out.probe_labels = std::move(probe_labels);
    out.gallery_labels = std::move(gallery_labels);
    if (out.probe_labels.size() != probes.size() || out.gallery_labels.size() != gallery.size())
        throw DimensionError("distance_matrix: label counts do not match the shape lists");

    auto row = [&](std::size_t i) {
        for (std::size_t j = 0; j < gallery.size(); ++j)
            out.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                shape_distance(probes[i], gallery[j], mode);
    };
    workers = std::max(1u, workers);
    if (workers == 1 || probes.size() < 2) {
        for (std::size_t i = 0; i < probes.size(); ++i)
            row(i);
        return out;
    }
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < probes.size(); i += workers)
                    row(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    pool.clear();
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    return out;
}

namespace {

template <typename Block>
void min_max_in_place(Block&& block)
{
    const double mx = block.maxCoeff();
    const double mn = block.minCoeff();
    block = (mx - block.array()).matrix().eval();
    const double range = mx - mn;
    if (!(range > 0.0)) {
        block.setZero();
        return;
    }
    block /= range;
}

} // namespace

ScoreMatrix distances_to_similarity(const ScoreMatrix& distances, NormScope scope)
{
    distances.validate();
    if (distances.scores.size() == 0)
        throw InvalidArgument("empty distance matrix");
    ScoreMatrix out = distances;
    if (scope == NormScope::global) {
        min_max_in_place(out.scores);
    } else {
        for (Eigen::Index r = 0; r < out.scores.rows(); ++r)
            min_max_in_place(out.scores.row(r));
    }
    return out;
}

ScoreMatrix fuse_scores(const ScoreMatrix& s2d, const ScoreMatrix& s3d, double w)
{
    s2d.validate();
    s3d.validate();
    if (!(w >= 0.0 && w <= 1.0))
        throw InvalidArgument("fusion weight must lie in [0, 1]");
    if (s2d.probe_labels != s3d.probe_labels)
        throw InvalidArgument("fuse: probe labels of the two score matrices differ");
    if (s2d.gallery_labels != s3d.gallery_labels)
        throw InvalidArgument("fuse: gallery labels of the two score matrices differ");
    ScoreMatrix out = s2d;
    out.scores = w * s2d.scores + (1.0 - w) * s3d.scores;
    return out;
}

std::string subject_of(const std::string& label)
{
    return label.substr(0, label.find(':'));
}

IdentificationResult rank1_identify(const ScoreMatrix& scores)
{
    scores.validate();
    if (scores.scores.cols() < 1)
        throw InvalidArgument("identification needs at least one gallery column");
    IdentificationResult out;
    std::size_t correct = 0;
    for (Eigen::Index r = 0; r < scores.scores.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < scores.scores.cols(); ++c)
            if (scores.scores(r, c) > scores.scores(r, best))
                best = c;
        const auto b = static_cast<std::size_t>(best);
        out.predicted.push_back(b);
        out.predicted_labels.push_back(scores.gallery_labels[b]);
        if (subject_of(scores.gallery_labels[b]) == subject_of(scores.probe_labels[static_cast<std::size_t>(r)]))
            ++correct;
    }
    if (!out.predicted.empty())
        out.accuracy_percent = 100.0 * static_cast<double>(correct) / static_cast<double>(out.predicted.size());
    return out;
}

VerificationReport verify_metrics(std::span<const double> genuine, std::span<const double> imposter)
{
    if (genuine.empty() || imposter.empty())
        throw InvalidArgument("verification needs at least one genuine and one imposter score");
    std::vector<double> g(genuine.begin(), genuine.end());
    std::vector<double> im(imposter.begin(), imposter.end());
    for (double v : g)
        if (!std::isfinite(v))
            throw InvalidArgument("non-finite genuine score");
    for (double v : im)
        if (!std::isfinite(v))
            throw InvalidArgument("non-finite imposter score");
    std::sort(g.begin(), g.end(), std::greater<>());
    std::sort(im.begin(), im.end(), std::greater<>());

    std::vector<double> thresholds(g);
    thresholds.insert(thresholds.end(), im.begin(), im.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    const double ng = static_cast<double>(g.size());
    const double ni = static_cast<double>(im.size());
    VerificationReport rep;
    rep.roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});

    std::size_t gi = 0, ii = 0;
    // Accept-nothing operating point: every imposter is a true negative.
    std::size_t best_correct = im.size();
    std::size_t best_index = 0; // index into roc
    for (double t : thresholds) {
        while (gi < g.size() && g[gi] >= t)
            ++gi;
        while (ii < im.size() && im[ii] >= t)
            ++ii;
        rep.roc.push_back({t, static_cast<double>(ii) / ni, static_cast<double>(gi) / ng});
        const std::size_t correct = gi + (im.size() - ii);
        if (correct > best_correct) {
            best_correct = correct;
            best_index = rep.roc.size() - 1;
        }
    }

    double auc = 0.0;
    for (std::size_t k = 1; k < rep.roc.size(); ++k)
        auc += 0.5 * (rep.roc[k].far - rep.roc[k - 1].far) * (rep.roc[k].tar + rep.roc[k - 1].tar);

    // FAR - FRR rises from -1 to +1 along the curve; interpolate its zero.
    double eer = 1.0;
    for (std::size_t k = 0; k < rep.roc.size(); ++k) {
        const double dk = rep.roc[k].far - (1.0 - rep.roc[k].tar);
        if (dk == 0.0) {
            eer = rep.roc[k].far;
            break;
        }
        if (k + 1 < rep.roc.size()) {
            const double dn = rep.roc[k + 1].far - (1.0 - rep.roc[k + 1].tar);
            if (dk < 0.0 && dn > 0.0) {
                const double a = dk / (dk - dn);
                const double far = rep.roc[k].far + a * (rep.roc[k + 1].far - rep.roc[k].far);
                const double frr =
                    (1.0 - rep.roc[k].tar) + a * ((1.0 - rep.roc[k + 1].tar) - (1.0 - rep.roc[k].tar));
                eer = 0.5 * (far + frr);
                break;
            }
        }
    }

    // Report the middle of the interval of thresholds with the best accuracy.
    if (best_index == 0) {
        rep.threshold = std::nextafter(thresholds.front(), std::numeric_limits<double>::infinity());
    } else if (best_index == rep.roc.size() - 1) {
        rep.threshold = rep.roc[best_index].threshold;
    } else {
        rep.threshold = 0.5 * (rep.roc[best_index].threshold + rep.roc[best_index + 1].threshold);
    }
    rep.accuracy_percent = 100.0 * static_cast<double>(best_correct) / (ng + ni);
    rep.eer_percent = 100.0 * eer;
    rep.auc_percent = 100.0 * auc;
    return rep;
}

} // namespace jafr
