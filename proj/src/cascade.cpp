/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: src/cascade.cpp
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
#include "jafr/cascade.hpp"
#include "jafr/error.hpp"
#include "jafr/metrics.hpp"

#include "Eigen/Cholesky"
#include "Eigen/Eigenvalues"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

namespace jafr {

std::size_t CascadeModel::feature_dim() const
{
    if (stages.empty())
        return feature_config.descriptor_dim() * prior.num_landmarks();
    return static_cast<std::size_t>(stages.front().landmark.weights.cols());
}

void CascadeModel::validate() const
{
    prior.validate();
    if (stages.empty())
        throw InvalidArgument("cascade model has no stages");
    const auto two_l = static_cast<Eigen::Index>(2 * prior.num_landmarks());
    const auto six_n = static_cast<Eigen::Index>(6 * prior.num_vertices());
    const auto d = static_cast<Eigen::Index>(feature_dim());
    for (std::size_t k = 0; k < stages.size(); ++k) {
        const auto& w = stages[k].landmark.weights;
        const auto& g = stages[k].shape.weights;
        if (w.rows() != two_l || w.cols() != d)
            throw DimensionError("stage " + std::to_string(k + 1) + ": landmark regressor is " +
                                 std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + ", expected " +
                                 std::to_string(two_l) + "x" + std::to_string(d));
        if (g.rows() != six_n || g.cols() != two_l)
            throw DimensionError("stage " + std::to_string(k + 1) + ": shape regressor is " +
                                 std::to_string(g.rows()) + "x" + std::to_string(g.cols()) + ", expected " +
                                 std::to_string(six_n) + "x" + std::to_string(two_l));
        if (!w.allFinite() || !g.allFinite())
            throw InvalidArgument("stage " + std::to_string(k + 1) + " has non-finite weights");
    }
}

namespace {

enum class OnSingular { pseudo_inverse, fail };

// W (m x d) = Y X^T (X X^T + lambda I)^-1 for X d x N, Y m x N. Uses the
// d x d Gram when d <= N and the equivalent N x N dual form otherwise.
Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda, OnSingular policy,
                            bool* used_pinv)
{
    const auto d = x.rows();
    const auto n = x.cols();
    const bool primal = d <= n;
    const auto dim = primal ? d : n;

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dim, dim);
    if (primal)
        gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
    else
        gram.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    gram.diagonal().array() += lambda;

    // Right-hand side of the normal equations, solved for W^T (primal) or
    // for the dual coefficients A with W = A^T X^T.
    const Eigen::MatrixXd rhs = primal ? Eigen::MatrixXd(x * y.transpose()) : Eigen::MatrixXd(y.transpose());
    const double rcond_floor = static_cast<double>(dim) * std::numeric_limits<double>::epsilon();

    Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(gram);
    Eigen::MatrixXd solved;
    if (llt.info() == Eigen::Success && llt.rcond() > rcond_floor) {
        solved = llt.solve(rhs);
        if (used_pinv)
            *used_pinv = false;
    } else {
        gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        const Eigen::VectorXd& ev = eig.eigenvalues();
        const double tol = rcond_floor * std::max(ev.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
        const auto rank = (ev.array() > tol).count();
        if (policy == OnSingular::fail) {
            throw SingularFitError("Gram matrix of size " + std::to_string(dim) + " is singular (numerical rank " +
                                       std::to_string(rank) + ")",
                                   static_cast<int>(rank));
        }
        Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
        for (Eigen::Index i = 0; i < ev.size(); ++i)
            if (ev(i) > tol)
                inv(i) = 1.0 / ev(i);
        const Eigen::MatrixXd& v = eig.eigenvectors();
        solved = v * (inv.asDiagonal() * (v.transpose() * rhs));
        if (used_pinv)
            *used_pinv = true;
    }
    if (primal)
        return solved.transpose();
    return solved.transpose() * x.transpose();
}

void require_finite(const Eigen::MatrixXd& m, const char* what)
{
    if (!m.allFinite())
        throw InvalidArgument(std::string(what) + " has non-finite entries");
}

} // namespace

double relative_ridge(const Eigen::MatrixXd& x, double factor)
{
    if (x.rows() == 0)
        return 0.0;
    return factor * x.squaredNorm() / static_cast<double>(x.rows());
}

LandmarkStage train_landmark_stage(const Eigen::MatrixXd& features, const Eigen::MatrixXd& target_deltas,
                                   double ridge, bool* used_pseudo_inverse)
{
    if (features.cols() != target_deltas.cols())
        throw DimensionError("landmark stage: " + std::to_string(features.cols()) + " feature columns vs " +
                             std::to_string(target_deltas.cols()) + " target columns");
    if (features.cols() < 1)
        throw InvalidArgument("landmark stage needs at least one sample");
    if (!(ridge >= 0.0))
        throw InvalidArgument("ridge must be non-negative");
    require_finite(features, "feature matrix");
    require_finite(target_deltas, "landmark targets");
    return {ridge_solve(features, target_deltas, ridge, OnSingular::pseudo_inverse, used_pseudo_inverse)};
}

ShapeStage train_shape_stage(const Eigen::MatrixXd& delta_u, const Eigen::MatrixXd& delta_s, double ridge)
{
    if (delta_u.cols() != delta_s.cols())
        throw DimensionError("shape stage: " + std::to_string(delta_u.cols()) + " landmark columns vs " +
                             std::to_string(delta_s.cols()) + " shape columns");
    if (delta_u.cols() < 1)
        throw InvalidArgument("shape stage needs at least one sample");
    if (!(ridge >= 0.0))
        throw InvalidArgument("ridge must be non-negative");
    require_finite(delta_u, "landmark updates");
    require_finite(delta_s, "shape targets");
    const auto two_l = delta_u.rows();
    const auto n = delta_u.cols();
    if (ridge == 0.0 && n <= two_l) {
        throw SingularFitError("shape stage Gram is singular: N = " + std::to_string(n) +
                                   " samples must exceed 2l = " + std::to_string(two_l) + " when ridge is 0",
                               static_cast<int>(n));
    }
    try {
        // Always solve in the 2l x 2l primal form so lambda = 0 is the
        // textbook dS dU^T (dU dU^T)^-1.
        Eigen::MatrixXd gram = delta_u * delta_u.transpose();
        gram.diagonal().array() += ridge;
        const double rcond_floor = static_cast<double>(two_l) * std::numeric_limits<double>::epsilon();
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success || !(llt.rcond() > rcond_floor)) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
            const auto& ev = eig.eigenvalues();
            const double tol = rcond_floor * std::max(ev.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
            const auto rank = (ev.array() > tol).count();
            throw SingularFitError("shape stage Gram dU dU^T is rank deficient (rank " + std::to_string(rank) +
                                       " of " + std::to_string(two_l) + ")",
                                   static_cast<int>(rank));
        }
        const Eigen::MatrixXd wt = llt.solve(delta_u * delta_s.transpose());
        return {wt.transpose()};
    } catch (const SingularFitError&) {
        throw;
    }
}

namespace {

struct SampleState
{
    Eigen::VectorXd shape; ///< 6n: [S_Id; S_Exp], S_Exp = mean + expression offset
    LandmarkSet2D landmarks;
    MappingMatrix mapping;
    bool degraded = false;
};

Shape3D expressive_shape(const Eigen::VectorXd& shape, const Eigen::VectorXd& mean)
{
    const auto three_n = mean.size();
    return Shape3D::from_vector(shape.head(three_n) + shape.tail(three_n) - mean);
}

MappingMatrix initial_mapping(const ShapePrior& prior, const LandmarkSet2D& start)
{
    const Shape3D mean = Shape3D::from_vector(prior.mean_pen_shape);
    const Eigen::Matrix3Xd sl = landmark_subshape(mean, prior);
    try {
        return fit_mapping(start.points, sl);
    } catch (const SingularFitError&) {
        // Scaled orthographic guess matching the template extents.
        const Eigen::Vector2d ext3 = sl.topRows<2>().rowwise().maxCoeff() - sl.topRows<2>().rowwise().minCoeff();
        const BoundingBox box = bounding_box(start.points);
        const double s = std::sqrt(box.area() / std::max(ext3.x() * ext3.y(), 1e-12));
        MappingMatrix m;
        m.entries(0, 0) = s;
        m.entries(1, 1) = s;
        const Eigen::Vector2d c3 = sl.topRows<2>().rowwise().mean();
        m.entries.col(3) = start.points.rowwise().mean() - s * c3;
        return m;
    }
}

SampleState initial_state(const ShapePrior& prior, const BoundingBox& bbox)
{
    SampleState s;
    s.shape.resize(2 * prior.mean_pen_shape.size());
    s.shape << prior.mean_pen_shape, prior.mean_pen_shape;
    s.landmarks = init_landmarks(prior, bbox);
    s.mapping = initial_mapping(prior, s.landmarks);
    return s;
}

// Steps (ii) and (iii) of an iteration, given the landmark update.
void apply_update(SampleState& s, const Eigen::VectorXd& delta_u, const Eigen::VectorXd& delta_s,
                  const ShapePrior& prior)
{
    s.shape += delta_s;
    const Eigen::Matrix2Xd u_hat = s.landmarks.points + Eigen::Map<const Eigen::Matrix2Xd>(
                                                            delta_u.data(), 2, s.landmarks.points.cols());
    const Shape3D expr = expressive_shape(s.shape, prior.mean_pen_shape);
    const Eigen::Matrix3Xd sl = landmark_subshape(expr, prior);
    try {
        s.mapping = fit_mapping(u_hat, sl);
    } catch (const SingularFitError&) {
        s.degraded = true;
    }
    s.landmarks.points = project(s.mapping, sl);
    try {
        s.landmarks.visible = visibility_mask(s.mapping, vertex_normals(expr, prior, prior.landmark_indices).normals);
    } catch (const InvalidArgument&) {
        s.degraded = true;
    }
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn)
{
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (count + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        if (lo >= hi)
            break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i)
                fn(i);
        });
    }
}

StageStats measure(std::span<const TrainingSample> samples, const std::vector<SampleState>& states,
                   const ShapePrior& prior, int stage)
{
    StageStats st;
    st.stage = stage;
    double nme_sum = 0.0, pen_sum = 0.0, expr_sum = 0.0;
    std::size_t nme_count = 0;
    const auto three_n = prior.mean_pen_shape.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& t = samples[i];
        const auto& s = states[i];
        if (std::find(t.target_landmarks.visible.begin(), t.target_landmarks.visible.end(), true) !=
            t.target_landmarks.visible.end()) {
            nme_sum += sample_nme(t.target_landmarks, s.landmarks, t.bbox);
            ++nme_count;
        }
        const Shape3D gt_pen = Shape3D::from_vector(t.target.identity);
        const Shape3D gt_expr = compose_shape(t.target);
        pen_sum += sample_mae(gt_pen, Shape3D::from_vector(s.shape.head(three_n)), AlignMode::none);
        expr_sum += sample_mae(gt_expr, expressive_shape(s.shape, prior.mean_pen_shape), AlignMode::none);
    }
    const double n = static_cast<double>(samples.size());
    st.nme = nme_count ? nme_sum / static_cast<double>(nme_count) : 0.0;
    st.mae_pen = pen_sum / n;
    st.mae_expressive = expr_sum / n;
    return st;
}

} // namespace

TrainResult train_cascade(std::span<const TrainingSample> samples, const ShapePrior& prior,
                          const TrainOptions& options, const FeatureExtractor* extractor)
{
    prior.validate();
    if (samples.empty())
        throw InvalidArgument("train_cascade: empty dataset");
    if (options.stages < 1)
        throw InvalidArgument("train_cascade: need at least one stage");
    if (!(options.ridge >= 0.0))
        throw InvalidArgument("train_cascade: ridge must be non-negative");

    std::unique_ptr<SiftFeatureExtractor> sift;
    if (!extractor) {
        sift = std::make_unique<SiftFeatureExtractor>(options.feature_config);
        extractor = sift.get();
    }

    const std::size_t n = prior.num_vertices();
    const std::size_t l = prior.num_landmarks();
    const auto num = samples.size();
    for (std::size_t i = 0; i < num; ++i) {
        const auto& t = samples[i];
        if (static_cast<std::size_t>(t.target.identity.size()) != 3 * n ||
            static_cast<std::size_t>(t.target.expression_offset.size()) != 3 * n)
            throw DimensionError("sample " + std::to_string(i) + ": target shape does not have " + std::to_string(n) +
                                 " vertices");
        if (t.target_landmarks.size() != l || t.target_landmarks.visible.size() != l)
            throw DimensionError("sample " + std::to_string(i) + ": expected " + std::to_string(l) + " landmarks");
    }

    const auto d = static_cast<Eigen::Index>(extractor->dimension(l));
    const auto two_l = static_cast<Eigen::Index>(2 * l);
    const auto six_n = static_cast<Eigen::Index>(6 * n);
    const auto cols = static_cast<Eigen::Index>(num);

    // Ground truth as 6n columns [S*_Id; mean + dS*_Exp].
    Eigen::MatrixXd target_shapes(six_n, cols);
    Eigen::MatrixXd target_landmarks(two_l, cols);
    for (std::size_t i = 0; i < num; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        target_shapes.col(c) << samples[i].target.identity, prior.mean_pen_shape + samples[i].target.expression_offset;
        target_landmarks.col(c) = samples[i].target_landmarks.as_vector();
    }

    std::vector<SampleState> states(num);
    for (std::size_t i = 0; i < num; ++i)
        states[i] = initial_state(prior, samples[i].bbox);

    TrainResult result;
    result.model.prior = prior;
    result.model.feature_config = options.feature_config;
    result.model.ridge_mode = options.ridge_mode;
    result.model.ridge = options.ridge;
    result.stats.push_back(measure(samples, states, prior, 0));

    Eigen::MatrixXd features(d, cols);
    Eigen::MatrixXd residual(two_l, cols);
    Eigen::MatrixXd shape_residual(six_n, cols);
    for (int k = 1; k <= options.stages; ++k) {
        parallel_for(num, options.workers, [&](std::size_t i) {
            const Eigen::VectorXd h = extractor->extract(samples[i].image, states[i].landmarks, samples[i].bbox);
            if (h.size() != d)
                throw DimensionError("feature extractor returned " + std::to_string(h.size()) + " values, expected " +
                                     std::to_string(d));
            features.col(static_cast<Eigen::Index>(i)) = h;
        });
        for (std::size_t i = 0; i < num; ++i)
            residual.col(static_cast<Eigen::Index>(i)) =
                target_landmarks.col(static_cast<Eigen::Index>(i)) - states[i].landmarks.as_vector();

        StageStats stats;
        stats.landmark_ridge =
            options.ridge_mode == RidgeMode::relative ? relative_ridge(features, options.ridge) : options.ridge;
        CascadeStage stage;
        try {
            stage.landmark = train_landmark_stage(features, residual, stats.landmark_ridge,
                                                  &stats.landmark_pseudo_inverse);
        } catch (const Error& e) {
            throw Error("stage " + std::to_string(k) + " landmark regressor: " + e.what());
        }
        const Eigen::MatrixXd delta_u = stage.landmark.weights * features;

        for (std::size_t i = 0; i < num; ++i)
            shape_residual.col(static_cast<Eigen::Index>(i)) =
                target_shapes.col(static_cast<Eigen::Index>(i)) - states[i].shape;
        stats.shape_ridge =
            options.ridge_mode == RidgeMode::relative ? relative_ridge(delta_u, options.ridge) : options.ridge;
        try {
            stage.shape = train_shape_stage(delta_u, shape_residual, stats.shape_ridge);
        } catch (const SingularFitError& e) {
            throw SingularFitError("stage " + std::to_string(k) + " shape regressor: " + e.what(), e.rank());
        }
        const Eigen::MatrixXd delta_s = stage.shape.weights * delta_u;

        for (std::size_t i = 0; i < num; ++i) {
            const auto c = static_cast<Eigen::Index>(i);
            apply_update(states[i], delta_u.col(c), delta_s.col(c), prior);
        }
        result.model.stages.push_back(std::move(stage));

        const StageStats measured = measure(samples, states, prior, k);
        stats.stage = k;
        stats.nme = measured.nme;
        stats.mae_pen = measured.mae_pen;
        stats.mae_expressive = measured.mae_expressive;
        result.stats.push_back(stats);
    }
    return result;
}

FitResult fit(const GrayImage& image, const BoundingBox& bbox, const CascadeModel& model,
              const FeatureExtractor* extractor, bool keep_trace)
{
    std::unique_ptr<SiftFeatureExtractor> sift;
    if (!extractor) {
        sift = std::make_unique<SiftFeatureExtractor>(model.feature_config);
        extractor = sift.get();
    }
    const ShapePrior& prior = model.prior;
    const auto three_n = prior.mean_pen_shape.size();
    SampleState s = initial_state(prior, bbox);

    FitResult result;
    for (const auto& stage : model.stages) {
        const Eigen::VectorXd h = extractor->extract(image, s.landmarks, bbox);
        if (h.size() != stage.landmark.weights.cols())
            throw DimensionError("feature vector has " + std::to_string(h.size()) + " entries, model expects " +
                                 std::to_string(stage.landmark.weights.cols()));
        const Eigen::VectorXd delta_u = stage.landmark.weights * h;
        const Eigen::VectorXd delta_s = stage.shape.weights * delta_u;
        apply_update(s, delta_u, delta_s, prior);
        if (keep_trace) {
            IterationTrace t;
            t.landmarks = s.landmarks;
            t.identity_delta_norm = (s.shape.head(three_n) - prior.mean_pen_shape).norm();
            t.expression_offset_norm = (s.shape.tail(three_n) - prior.mean_pen_shape).norm();
            result.trace.push_back(std::move(t));
        }
    }
    result.landmarks = s.landmarks;
    result.pen_shape = Shape3D::from_vector(s.shape.head(three_n));
    result.expressive_shape = expressive_shape(s.shape, prior.mean_pen_shape);
    result.mapping = s.mapping;
    result.degraded = s.degraded;
    return result;
}

} // namespace jafr
