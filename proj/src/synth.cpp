/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: src/synth.cpp
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
#include "jafr/synth.hpp"
#include "jafr/error.hpp"

#include "Eigen/Geometry"
#include "Eigen/LU"
#include "Eigen/QR"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>

namespace fs = std::filesystem;

namespace jafr {

std::vector<double> SynthConfig::default_yaws()
{
    std::vector<double> y;
    for (int d = -90; d <= 90; d += 10)
        y.push_back(static_cast<double>(d));
    return y;
}

namespace {

double gauss2(double du, double dv, double su, double sv)
{
    return std::exp(-0.5 * (du * du / (su * su) + dv * dv / (sv * sv)));
}

struct LandmarkSpec
{
    double u, v;
    int mirror_of; ///< -1 when placed directly
};

// 68 points in the usual jaw / brows / nose / eyes / mouth order.
std::vector<LandmarkSpec> landmark_layout()
{
    std::vector<LandmarkSpec> pts(68, {0.0, 0.0, -1});
    const double pi = std::numbers::pi;
    for (int k = 0; k <= 8; ++k) {
        const double a = pi * k / 16.0;
        pts[static_cast<std::size_t>(k)] = {-0.86 * std::cos(a), 0.84 * std::sin(a), -1};
    }
    for (int k = 9; k <= 16; ++k)
        pts[static_cast<std::size_t>(k)] = {0.0, 0.0, 16 - k};
    for (int k = 0; k < 5; ++k) {
        const double t = k / 4.0;
        pts[static_cast<std::size_t>(17 + k)] = {-0.62 + 0.46 * t, -0.42 - 0.07 * std::sin(pi * t), -1};
        pts[static_cast<std::size_t>(22 + k)] = {0.0, 0.0, 21 - k};
    }
    for (int k = 0; k < 4; ++k)
        pts[static_cast<std::size_t>(27 + k)] = {0.0, -0.26 + 0.1 * k, -1};
    pts[31] = {-0.16, 0.17, -1};
    pts[32] = {-0.08, 0.20, -1};
    pts[33] = {0.0, 0.22, -1};
    pts[34] = {0.0, 0.0, 32};
    pts[35] = {0.0, 0.0, 31};
    // Eye contour: outer corner, two upper, inner corner, two lower.
    const double eye_a[6] = {pi, 2.0 * pi / 3.0, pi / 3.0, 0.0, -pi / 3.0, -2.0 * pi / 3.0};
    for (int k = 0; k < 6; ++k)
        pts[static_cast<std::size_t>(36 + k)] = {-0.36 + 0.13 * std::cos(eye_a[k]),
                                                 -0.22 - 0.05 * std::sin(eye_a[k]), -1};
    const int eye_mirror[6] = {45, 44, 43, 42, 47, 46};
    for (int k = 0; k < 6; ++k)
        pts[static_cast<std::size_t>(eye_mirror[k])] = {0.0, 0.0, 36 + k};
    // Outer lip 48..59 and inner lip 60..67, clockwise from the left corner.
    auto lip = [&](int first, int count, double ru, double rv) {
        for (int k = 0; k < count; ++k) {
            const double a = pi - 2.0 * pi * k / count;
            const double u = ru * std::cos(a);
            const double v = 0.5 - rv * std::sin(a);
            const int idx = first + k;
            if (u < -1e-9 || std::abs(u) <= 1e-9) {
                pts[static_cast<std::size_t>(idx)] = {std::abs(u) <= 1e-9 ? 0.0 : u, v, -1};
            } else {
                // Mirror partner: same v, index reflected about the vertical.
                const int partner = first + ((count / 2 - k) % count + count) % count;
                pts[static_cast<std::size_t>(idx)] = {0.0, 0.0, partner};
            }
        }
    };
    lip(48, 12, 0.28, 0.09);
    lip(60, 8, 0.17, 0.04);
    return pts;
}

double face_height(const SynthFaceParams& p, double u, double v)
{
    const double au = std::abs(u);
    const double base = p.depth * std::sqrt(std::max(1.0 - 0.94 * u * u, 0.0)) * (1.0 - 0.3 * v * v);
    const double width = 0.06 + 0.08 * std::clamp((v + 0.3) / 0.5, 0.0, 1.0);
    const double nose = p.nose * gauss2(u, v - 0.08, width, 0.17);
    const double eyes = -p.eye * gauss2(au - 0.36, v + 0.22, 0.11, 0.07);
    const double brows = p.brow * gauss2(au - 0.37, v + 0.42, 0.16, 0.035);
    const double lips = p.lips * gauss2(u, v - 0.5, 0.2, 0.06);
    const double chin = p.chin * gauss2(u, v - 0.8, 0.18, 0.1);
    return base + nose + eyes + brows + lips + chin;
}

Eigen::Vector3d expression_field(const SynthExpressionParams& e, double u, double v)
{
    const double au = std::abs(u);
    const double su = u < 0.0 ? -1.0 : (u > 0.0 ? 1.0 : 0.0);
    Eigen::Vector3d d = Eigen::Vector3d::Zero();
    const double corner = gauss2(au - 0.26, v - 0.5, 0.1, 0.1);
    d.x() += 3.0 * e.smile * su * corner;
    d.y() += -6.0 * e.smile * corner;
    d.z() += -2.0 * e.smile * corner + 2.0 * e.smile * gauss2(au - 0.4, v - 0.25, 0.12, 0.12);
    const double jaw = 1.0 / (1.0 + std::exp(-(v - 0.5) / 0.03)) * gauss2(u, 0.0, 0.45, 1.0);
    d.y() += 10.0 * e.open * jaw;
    d.z() += -3.0 * e.open * jaw;
    d.y() += -5.0 * e.brow_raise * gauss2(au - 0.37, v + 0.42, 0.2, 0.08);
    return d;
}

double face_albedo(double u, double v)
{
    const double au = std::abs(u);
    double a = 0.8;
    a -= 0.5 * gauss2(au - 0.36, v + 0.22, 0.08, 0.035);
    a -= 0.45 * gauss2(au - 0.37, v + 0.42, 0.14, 0.025);
    a -= 0.3 * gauss2(u, v - 0.5, 0.22, 0.04);
    a -= 0.35 * gauss2(au - 0.07, v - 0.2, 0.03, 0.02);
    return std::clamp(a, 0.05, 1.0);
}

SynthFaceParams random_identity(std::mt19937_64& rng)
{
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    SynthFaceParams p;
    p.half_width = uni(62.0, 78.0);
    p.half_height = uni(85.0, 105.0);
    p.depth = uni(45.0, 65.0);
    p.nose = uni(12.0, 24.0);
    p.eye = uni(4.0, 10.0);
    p.brow = uni(2.0, 5.0);
    p.lips = uni(2.0, 5.0);
    p.chin = uni(3.0, 8.0);
    return p;
}

SynthExpressionParams random_expression(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    SynthExpressionParams e;
    e.smile = u01(rng);
    e.open = u01(rng);
    e.brow_raise = u01(rng);
    return e;
}

} // namespace

SynthTopology synth_topology(const SynthFaceConfig& config)
{
    if (config.rows < 4 || config.cols < 5 || config.cols % 2 == 0)
        throw InvalidArgument("synthetic face grid needs rows >= 4 and an odd cols >= 5");
    if (config.extra_vertices < 0 || config.extra_vertices > 2)
        throw InvalidArgument("extra_vertices must be 0, 1 or 2");
    SynthTopology t;
    t.config = config;
    const int rows = config.rows, cols = config.cols;
    const int grid_n = rows * cols;
    t.grid_uv.resize(2, grid_n + config.extra_vertices);
    auto id = [cols](int i, int j) { return i * cols + j; };
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            t.grid_uv.col(id(i, j)) << -1.0 + 2.0 * j / (cols - 1), -1.0 + 2.0 * i / (rows - 1);

    const int half = (cols - 1) / 2;
    for (int i = 0; i + 1 < rows; ++i) {
        for (int j = 0; j + 1 < cols; ++j) {
            const int a = id(i, j), b = id(i, j + 1), c = id(i + 1, j), d = id(i + 1, j + 1);
            int extra = -1;
            if (i == 0 && j == 0 && config.extra_vertices >= 1)
                extra = grid_n;
            if (i == 0 && j == cols - 2 && config.extra_vertices >= 2)
                extra = grid_n + 1;
            if (extra >= 0) {
                t.grid_uv.col(extra) = 0.25 * (t.grid_uv.col(a) + t.grid_uv.col(b) + t.grid_uv.col(c) + t.grid_uv.col(d));
                t.triangles.push_back({a, b, extra});
                t.triangles.push_back({b, d, extra});
                t.triangles.push_back({d, c, extra});
                t.triangles.push_back({c, a, extra});
            } else if (j < half) {
                t.triangles.push_back({a, b, c});
                t.triangles.push_back({b, d, c});
            } else {
                t.triangles.push_back({a, b, d});
                t.triangles.push_back({a, d, c});
            }
        }
    }

    // Left-side and midline points pick the nearest free vertex on their
    // side; right-side points take the mirror vertex of their partner.
    const auto layout = landmark_layout();
    std::set<int> used;
    t.landmark_indices.assign(layout.size(), -1);
    for (std::size_t k = 0; k < layout.size(); ++k) {
        const auto& s = layout[k];
        if (s.mirror_of >= 0)
            continue;
        const bool mid = s.u == 0.0;
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j <= half; ++j) {
                if (mid ? j != half : j == half)
                    continue;
                const int v = id(i, j);
                if (used.count(v))
                    continue;
                const double du = t.grid_uv(0, v) - s.u, dv = t.grid_uv(1, v) - s.v;
                const double dist = du * du + dv * dv;
                if (dist < best_d) {
                    best_d = dist;
                    best = v;
                }
            }
        }
        if (best < 0)
            throw InvalidArgument("synthetic grid too small to place 68 distinct landmarks");
        used.insert(best);
        t.landmark_indices[k] = best;
    }
    for (std::size_t k = 0; k < layout.size(); ++k) {
        const auto& s = layout[k];
        if (s.mirror_of < 0)
            continue;
        const int p = t.landmark_indices[static_cast<std::size_t>(s.mirror_of)];
        const int i = p / cols, j = p % cols;
        t.landmark_indices[k] = id(i, cols - 1 - j);
        used.insert(t.landmark_indices[k]);
    }
    if (used.size() != layout.size())
        throw InvalidArgument("synthetic landmark placement produced duplicates");
    return t;
}

Shape3D synth_expressive_shape(const SynthTopology& topo, const SynthFaceParams& identity,
                               const SynthExpressionParams& expression)
{
    const auto n = static_cast<Eigen::Index>(topo.num_vertices());
    Shape3D s;
    s.vertices.resize(3, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double u = topo.grid_uv(0, k), v = topo.grid_uv(1, k);
        s.vertices.col(k) << u * identity.half_width, v * identity.half_height, face_height(identity, u, v);
        s.vertices.col(k) += expression_field(expression, u, v);
    }
    return s;
}

Shape3D synth_pen_shape(const SynthTopology& topo, const SynthFaceParams& identity)
{
    return synth_expressive_shape(topo, identity, SynthExpressionParams{});
}

Eigen::Matrix3d yaw_rotation(double yaw_degrees)
{
    const double a = yaw_degrees * std::numbers::pi / 180.0;
    Eigen::Matrix3d r;
    r << std::cos(a), 0.0, std::sin(a), 0.0, 1.0, 0.0, -std::sin(a), 0.0, std::cos(a);
    return r;
}

MappingMatrix yaw_mapping(double yaw_degrees, double scale, const Eigen::Vector2d& translation)
{
    const Eigen::Matrix3d r = yaw_rotation(yaw_degrees);
    MappingMatrix m;
    m.entries.leftCols<3>() = scale * r.topRows<2>();
    m.entries.col(3) = translation;
    return m;
}

GrayImage render_shaded(const Shape3D& shape, const std::vector<Triangle>& triangles, const std::vector<double>& albedo,
                        const MappingMatrix& mapping, const Eigen::Matrix3d& rotation, int width, int height)
{
    const auto n = shape.vertices.cols();
    if (static_cast<Eigen::Index>(albedo.size()) != n)
        throw DimensionError("render: albedo has " + std::to_string(albedo.size()) + " entries for " +
                             std::to_string(n) + " vertices");
    GrayImage img(width, height, 0.0);
    std::vector<double> zbuf(img.pixels.size(), -std::numeric_limits<double>::infinity());

    const Eigen::Matrix2Xd uv = project(mapping, shape.vertices);
    const Eigen::Matrix3Xd cam = rotation * shape.vertices;

    // Gouraud: shade at vertices with area-weighted normals.
    Eigen::Matrix3Xd normals = Eigen::Matrix3Xd::Zero(3, n);
    for (const auto& t : triangles) {
        const Eigen::Vector3d fn = (cam.col(t[1]) - cam.col(t[0])).cross(cam.col(t[2]) - cam.col(t[0]));
        for (int v : t)
            normals.col(v) += fn;
    }
    const Eigen::Vector3d light = Eigen::Vector3d(0.0, -0.3, 1.0).normalized();
    std::vector<double> shade(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) {
        const double len = normals.col(k).norm();
        const double lambert = len > 0.0 ? std::max(0.0, normals.col(k).dot(light) / len) : 0.0;
        shade[static_cast<std::size_t>(k)] = albedo[static_cast<std::size_t>(k)] * (0.2 + 0.8 * lambert);
    }

    for (const auto& t : triangles) {
        const Eigen::Vector2d p0 = uv.col(t[0]), p1 = uv.col(t[1]), p2 = uv.col(t[2]);
        const double area = (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p2.x() - p0.x()) * (p1.y() - p0.y());
        if (!(area > 0.0))
            continue; // back-facing or degenerate in the image
        const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({p0.x(), p1.x(), p2.x()}))));
        const int x1 = std::min(width - 1, static_cast<int>(std::floor(std::max({p0.x(), p1.x(), p2.x()}))));
        const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({p0.y(), p1.y(), p2.y()}))));
        const int y1 = std::min(height - 1, static_cast<int>(std::floor(std::max({p0.y(), p1.y(), p2.y()}))));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const Eigen::Vector2d p(x, y);
                const double w0 = ((p1.x() - p.x()) * (p2.y() - p.y()) - (p2.x() - p.x()) * (p1.y() - p.y())) / area;
                const double w1 = ((p2.x() - p.x()) * (p0.y() - p.y()) - (p0.x() - p.x()) * (p2.y() - p.y())) / area;
                const double w2 = 1.0 - w0 - w1;
                if (w0 < -1e-12 || w1 < -1e-12 || w2 < -1e-12)
                    continue;
                const double depth = w0 * cam(2, t[0]) + w1 * cam(2, t[1]) + w2 * cam(2, t[2]);
                const std::size_t idx = static_cast<std::size_t>(y) * width + x;
                if (depth <= zbuf[idx])
                    continue;
                zbuf[idx] = depth;
                img.pixels[idx] = w0 * shade[static_cast<std::size_t>(t[0])] +
                                  w1 * shade[static_cast<std::size_t>(t[1])] +
                                  w2 * shade[static_cast<std::size_t>(t[2])];
            }
        }
    }
    return img;
}

std::vector<SynthSample> synth_pose_sweep(const std::vector<Shape3D>& pens, const std::vector<Shape3D>& expressives,
                                          const std::vector<std::string>& subjects,
                                          const std::vector<int>& expression_ids, const ShapePrior& prior,
                                          const SynthConfig& cfg)
{
    prior.validate();
    if (prior.triangles.empty())
        throw InvalidArgument("synth_pose_sweep needs a triangulated prior");
    const std::size_t m = pens.size();
    if (expressives.size() != m || subjects.size() != m || expression_ids.size() != m)
        throw DimensionError("synth_pose_sweep: per-mesh lists differ in length");
    if (cfg.image_size < 16)
        throw InvalidArgument("image size must be at least 16 px");
    const std::size_t n = prior.num_vertices();

    // Albedo follows the mean shape's own (x, y) extent so every identity shares it.
    const Shape3D mean = Shape3D::from_vector(prior.mean_pen_shape);
    const Eigen::Vector3d lo = mean.vertices.rowwise().minCoeff();
    const Eigen::Vector3d hi = mean.vertices.rowwise().maxCoeff();
    std::vector<double> albedo(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto c = static_cast<Eigen::Index>(k);
        const double u = 2.0 * (mean.vertices(0, c) - lo.x()) / std::max(hi.x() - lo.x(), 1e-9) - 1.0;
        const double v = 2.0 * (mean.vertices(1, c) - lo.y()) / std::max(hi.y() - lo.y(), 1e-9) - 1.0;
        albedo[k] = face_albedo(u, v);
    }

    std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<SynthSample> out;
    out.reserve(m * cfg.yaws.size());
    const Eigen::Vector2d center(0.5 * cfg.image_size, 0.5 * cfg.image_size);
    for (std::size_t s = 0; s < m; ++s) {
        if (pens[s].num_vertices() != n || expressives[s].num_vertices() != n)
            throw DimensionError("mesh " + std::to_string(s) + " does not have " + std::to_string(n) + " vertices");
        const auto& pen = pens[s];
        const auto& expr = expressives[s];
        const double extent = pen.vertices.row(1).maxCoeff() - pen.vertices.row(1).minCoeff();
        const double scale = cfg.face_fraction * cfg.image_size / std::max(extent, 1e-9);
        const Eigen::Vector3d centroid = pen.vertices.rowwise().mean();
        const Eigen::Matrix3Xd sl = landmark_subshape(expr, prior);
        for (double yaw : cfg.yaws) {
            const Eigen::Matrix3d r = yaw_rotation(yaw);
            const Eigen::Vector2d t = center - scale * (r.topRows<2>() * centroid);
            SynthSample out_s;
            out_s.mapping = yaw_mapping(yaw, scale, t);
            out_s.yaw = yaw;
            out_s.subject = subjects[s];
            out_s.expression = expression_ids[s];
            out_s.pen = pen;
            out_s.expressive = expr;

            const Eigen::Matrix2Xd clean = project(out_s.mapping, sl);
            LandmarkSet2D lms(clean, visibility_mask(out_s.mapping, expr, prior));
            BoundingBox box = bounding_box(clean);
            if (cfg.landmark_noise_px > 0.0)
                for (Eigen::Index k = 0; k < lms.points.size(); ++k)
                    lms.points.data()[k] += cfg.landmark_noise_px * gauss(rng);
            if (cfg.bbox_jitter > 0.0) {
                const double side = box.side();
                const Eigen::Vector2d c = box.center() + cfg.bbox_jitter * side * Eigen::Vector2d(gauss(rng), gauss(rng));
                const double f = std::exp(cfg.bbox_jitter * gauss(rng));
                box.width *= f;
                box.height *= f;
                box.x = c.x() - 0.5 * box.width;
                box.y = c.y() - 0.5 * box.height;
            }
            out_s.sample.image =
                render_shaded(expr, prior.triangles, albedo, out_s.mapping, r, cfg.image_size, cfg.image_size);
            out_s.sample.bbox = box;
            out_s.sample.target.identity = pen.as_vector();
            out_s.sample.target.expression_offset = expr.as_vector() - pen.as_vector();
            out_s.sample.target_landmarks = std::move(lms);
            out.push_back(std::move(out_s));
        }
    }
    return out;
}

Eigen::Matrix2Xd frontal_template(const std::vector<SynthSample>& samples)
{
    Eigen::Matrix2Xd sum;
    std::size_t count = 0;
    for (const auto& s : samples) {
        if (s.yaw != 0.0 || s.expression != 0)
            continue;
        if (count == 0)
            sum = Eigen::Matrix2Xd::Zero(2, s.sample.target_landmarks.points.cols());
        sum += s.sample.target_landmarks.points;
        ++count;
    }
    if (count == 0)
        throw InvalidArgument("no frontal neutral samples to build a landmark template from");
    return sum / static_cast<double>(count);
}

SynthDataset synth_dataset(const SynthConfig& cfg)
{
    if (cfg.subjects < 1 || cfg.expressions < 0)
        throw InvalidArgument("synth: need at least one subject and a non-negative expression count");
    SynthDataset data;
    data.topology = synth_topology(cfg.face);
    const auto& topo = data.topology;

    std::mt19937_64 rng(cfg.seed);
    std::mt19937_64 noise_rng(cfg.seed ^ 0xA0761D6478BD642FULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Shape3D> pens, exprs, subject_pens;
    std::vector<std::string> subjects;
    std::vector<int> expr_ids;
    char name[32];
    for (int s = 0; s < cfg.subjects; ++s) {
        const SynthFaceParams id = random_identity(rng);
        const Shape3D pen = synth_pen_shape(topo, id);
        subject_pens.push_back(pen);
        std::snprintf(name, sizeof name, "s%03d", s);
        for (int e = 0; e <= cfg.expressions; ++e) {
            const SynthExpressionParams ex = e == 0 ? SynthExpressionParams{} : random_expression(rng);
            Shape3D gt_pen = pen;
            Shape3D gt_expr = synth_expressive_shape(topo, id, ex);
            if (cfg.shape_noise_mm > 0.0) {
                for (Eigen::Index k = 0; k < gt_pen.vertices.size(); ++k) {
                    const double d = cfg.shape_noise_mm * gauss(noise_rng);
                    gt_pen.vertices.data()[k] += d;
                    gt_expr.vertices.data()[k] += d;
                }
            }
            pens.push_back(std::move(gt_pen));
            exprs.push_back(std::move(gt_expr));
            subjects.emplace_back(name);
            expr_ids.push_back(e);
        }
    }

    const Shape3D mean = mean_shape(subject_pens);
    Eigen::Matrix2Xd provisional = landmark_subshape(mean, topo.landmark_indices).topRows<2>();
    data.prior = make_shape_prior(mean.as_vector(), provisional, topo.landmark_indices, topo.triangles);
    data.samples = synth_pose_sweep(pens, exprs, subjects, expr_ids, data.prior, cfg);
    if (std::find(cfg.yaws.begin(), cfg.yaws.end(), 0.0) != cfg.yaws.end())
        data.prior.mean_landmarks_2d = frontal_template(data.samples);
    else
        data.prior.mean_landmarks_2d = provisional;
    return data;
}

std::vector<int> kfold_split(const std::vector<std::string>& subjects, int k, std::uint64_t seed)
{
    if (k < 1)
        throw InvalidArgument("fold count must be positive");
    std::vector<std::string> unique;
    std::set<std::string> seen;
    for (const auto& s : subjects)
        if (seen.insert(s).second)
            unique.push_back(s);
    if (static_cast<int>(unique.size()) < k)
        throw InvalidArgument("cannot split " + std::to_string(unique.size()) + " subjects into " +
                              std::to_string(k) + " folds");
    std::mt19937_64 rng(seed);
    std::shuffle(unique.begin(), unique.end(), rng);
    std::map<std::string, int> fold_of;
    for (std::size_t i = 0; i < unique.size(); ++i)
        fold_of[unique[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    std::vector<int> out;
    out.reserve(subjects.size());
    for (const auto& s : subjects)
        out.push_back(fold_of[s]);
    return out;
}

void write_synth_dataset(const SynthDataset& data, const fs::path& dir, int folds, std::uint64_t seed)
{
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "landmarks");
    fs::create_directories(dir / "meshes");
    write_prior(dir / "prior.txt", data.prior);

    std::vector<std::string> subjects;
    for (const auto& s : data.samples)
        subjects.push_back(s.subject);
    const auto fold_ids = kfold_split(subjects, folds, seed);

    Manifest manifest;
    manifest.base = dir;
    std::set<std::string> written;
    char buf[64];
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const auto& s = data.samples[i];
        ManifestEntry e;
        std::snprintf(buf, sizeof buf, "images/img_%05zu.pgm", i);
        e.image = buf;
        std::snprintf(buf, sizeof buf, "landmarks/lm_%05zu.txt", i);
        e.landmarks = buf;
        e.pen = "meshes/pen_" + s.subject + ".obj";
        std::snprintf(buf, sizeof buf, "meshes/expr_%s_%02d.obj", s.subject.c_str(), s.expression);
        e.expr = buf;
        e.bbox = s.sample.bbox;
        e.yaw = s.yaw;
        e.subject = s.subject;
        e.fold = fold_ids[i];
        write_pgm(dir / e.image, s.sample.image, 65535);
        write_landmarks(dir / e.landmarks, s.sample.target_landmarks);
        if (written.insert(e.pen).second)
            write_mesh(dir / e.pen, s.pen, data.prior.triangles);
        if (written.insert(e.expr).second)
            write_mesh(dir / e.expr, s.expressive, data.prior.triangles);
        manifest.entries.push_back(std::move(e));
    }
    write_manifest(dir / "manifest.tsv", manifest);
}

LinearWorldFeatures::LinearWorldFeatures(Eigen::MatrixXd basis_u, Eigen::MatrixXd offsets, Eigen::MatrixXd targets)
    : basis_u_(std::move(basis_u)), offsets_(std::move(offsets)), targets_(std::move(targets))
{
    if (basis_u_.rows() != offsets_.rows() || basis_u_.cols() != targets_.rows() || offsets_.cols() != targets_.cols())
        throw DimensionError("linear world feature tables are inconsistent");
}

std::size_t LinearWorldFeatures::dimension(std::size_t num_landmarks) const
{
    if (static_cast<Eigen::Index>(2 * num_landmarks) != basis_u_.cols())
        throw DimensionError("linear world was built for " + std::to_string(basis_u_.cols() / 2) + " landmarks");
    return static_cast<std::size_t>(basis_u_.rows());
}

Eigen::VectorXd LinearWorldFeatures::extract(const GrayImage& image, const LandmarkSet2D& landmarks,
                                             const BoundingBox&) const
{
    if (image.pixels.size() != 1)
        throw InvalidArgument("linear world images are 1x1 sample tokens");
    const auto num = offsets_.cols();
    const auto i = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(image.pixels[0] * num)), 0, num - 1);
    return basis_u_ * (targets_.col(i) - landmarks.as_vector()) + offsets_.col(i);
}

LinearWorld synth_linear_world(std::size_t n, std::size_t l, std::size_t num_samples, std::uint64_t seed)
{
    if (l < 4 || n < l || num_samples < 1)
        throw InvalidArgument("linear world needs n >= l >= 4 and at least one sample");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto randn = [&](Eigen::Index r, Eigen::Index c) {
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index k = 0; k < m.size(); ++k)
            m.data()[k] = gauss(rng);
        return m;
    };
    const auto ni = static_cast<Eigen::Index>(n);
    const auto li = static_cast<Eigen::Index>(l);
    const auto big_n = static_cast<Eigen::Index>(num_samples);
    const Eigen::Index d = 128 * li;
    const Eigen::Index two_l = 2 * li;

    LinearWorld w;
    const Eigen::VectorXd mean = 30.0 * randn(3 * ni, 1);
    std::vector<int> idx(l);
    for (std::size_t j = 0; j < l; ++j)
        idx[j] = static_cast<int>(j);
    std::vector<std::vector<int>> ring(n);
    for (std::size_t v = 0; v < n; ++v)
        ring[v] = {static_cast<int>((v + n - 1) % n), static_cast<int>((v + 1) % n)};
    const Shape3D mean_shape3 = Shape3D::from_vector(mean);
    const Eigen::Matrix2Xd tmpl = landmark_subshape(mean_shape3, idx).topRows<2>();
    w.prior = make_shape_prior(mean, tmpl, idx, {}, ring);

    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(randn(d, d)).householderQ();
    const Eigen::MatrixXd a_u = q.leftCols(two_l);
    const Eigen::MatrixXd a_z = q.rightCols(d - two_l);
    w.landmark_map = a_u.transpose();
    w.shape_map = 0.02 * randn(6 * ni, two_l);

    const BoundingBox box{0.0, 0.0, 200.0, 200.0};
    const Eigen::VectorXd u0 = init_landmarks(w.prior, box).as_vector();
    const Eigen::Matrix3Xd mean_l = landmark_subshape(mean_shape3, idx);

    // Expressive landmark coordinates as a linear function of dU:
    // S_L(dU) = mean_L + (G_id,L + G_exp,L) dU.
    Eigen::MatrixXd g_l(3 * li, two_l);
    for (Eigen::Index j = 0; j < li; ++j) {
        const Eigen::Index v = idx[static_cast<std::size_t>(j)];
        g_l.middleRows(3 * j, 3) = w.shape_map.middleRows(3 * v, 3) + w.shape_map.middleRows(3 * ni + 3 * v, 3);
    }

    Eigen::MatrixXd targets(two_l, big_n);
    Eigen::MatrixXd delta_u(two_l, big_n);
    w.mappings.resize(num_samples);
    for (Eigen::Index i = 0; i < big_n; ++i) {
        Eigen::Matrix3d rot = Eigen::HouseholderQR<Eigen::Matrix3d>(Eigen::Matrix3d(randn(3, 3))).householderQ();
        if (rot.determinant() < 0.0)
            rot.col(0) *= -1.0;
        const double s = 1.6 + 0.8 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        MappingMatrix m;
        m.entries.leftCols<3>() = s * rot.topRows<2>();
        m.entries.col(3) = Eigen::Vector2d(100.0, 100.0) + 10.0 * Eigen::Vector2d(gauss(rng), gauss(rng));
        w.mappings[static_cast<std::size_t>(i)] = m;

        // Solve dU = M (mean_L + G_L dU; 1) - U0 for dU.
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(two_l, two_l);
        Eigen::VectorXd r(two_l);
        const Eigen::Matrix<double, 2, 3> m3 = m.entries.leftCols<3>();
        for (Eigen::Index j = 0; j < li; ++j) {
            b.middleRows(2 * j, 2) = m3 * g_l.middleRows(3 * j, 3);
            r.segment<2>(2 * j) = m3 * mean_l.col(j) + m.entries.col(3);
        }
        r -= u0;
        const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(two_l, two_l) - b;
        delta_u.col(i) = lhs.colPivHouseholderQr().solve(r);
        targets.col(i) = u0 + delta_u.col(i);
    }

    const Eigen::MatrixXd offsets = a_z * randn(d - two_l, big_n);
    const Eigen::MatrixXd delta_s = w.shape_map * delta_u;
    w.samples.resize(num_samples);
    for (Eigen::Index i = 0; i < big_n; ++i) {
        auto& s = w.samples[static_cast<std::size_t>(i)];
        s.image = GrayImage(1, 1, (static_cast<double>(i) + 0.5) / static_cast<double>(big_n));
        s.bbox = box;
        s.target.identity = mean + delta_s.col(i).head(3 * ni);
        s.target.expression_offset = delta_s.col(i).tail(3 * ni);
        s.target_landmarks = LandmarkSet2D(Eigen::Map<const Eigen::Matrix2Xd>(targets.col(i).data(), 2, li));
    }
    w.features = std::make_shared<LinearWorldFeatures>(a_u, offsets, targets);
    return w;
}

} // namespace jafr
