/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: tests/acceptance.cpp
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
#include "oracles.hpp"

#include "jafr/camera.hpp"
#include "jafr/cascade.hpp"
#include "jafr/metrics.hpp"
#include "jafr/recognition.hpp"
#include "jafr/shape_model.hpp"
#include "jafr/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace jafr;

namespace {

struct Outcome
{
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// 1. Exact recovery on the linear world.
Outcome linear_world()
{
    const std::size_t n = 60, l = 12;
    const std::size_t num = 4 * std::max<std::size_t>(128 * l, 2 * l);
    const auto t0 = Clock::now();
    const LinearWorld world = synth_linear_world(n, l, num, 7);
    TrainOptions opt;
    opt.stages = 5;
    opt.ridge_mode = RidgeMode::absolute;
    opt.ridge = 0.0;
    const TrainResult r = train_cascade(world.samples, world.prior, opt, world.features.get());
    const double secs = seconds_since(t0);
    const StageStats& last = r.stats.back();
    const double mae = std::max(last.mae_pen, last.mae_expressive);
    Outcome o;
    o.pass = last.nme < 1e-6 && mae < 1e-6 && secs < 60.0;
    o.detail = "NME " + fmt("%.2e", last.nme) + ", shape MAE " + fmt("%.2e", mae) + " mm, " + fmt("%.1f", secs) +
               " s (N=" + std::to_string(num) + ")";
    return o;
}

// 2. Shape regressor against an independent normal-equations implementation.
Outcome shape_stage_oracle()
{
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::mt19937_64 rng(1000 + trial);
        const Eigen::Index l = 4 + trial % 9;
        const Eigen::Index n = 10 + 3 * trial;
        const Eigen::Index num = 2 * l + 5 + trial * 3;
        const Eigen::MatrixXd du = oracle::randn(2 * l, num, rng);
        const Eigen::MatrixXd ds = oracle::randn(6 * n, num, rng, 5.0);
        const Eigen::MatrixXd expected = oracle::shape_regressor(du, ds);
        const ShapeStage got = train_shape_stage(du, ds, 0.0);
        worst = std::max(worst, (got.weights - expected).norm() / expected.norm());
    }
    return {worst < 1e-8, "max relative error " + fmt("%.2e", worst) + " over 20 instances"};
}

// 3. Weak-perspective map recovery.
Outcome mapping_recovery()
{
    double worst = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        MappingMatrix truth;
        truth.entries = oracle::randn(2, 4, rng);
        truth.entries.col(3) *= 50.0;
        const Eigen::Matrix3Xd pts = oracle::randn(3, 68, rng, 40.0);
        Eigen::Matrix2Xd uv(2, 68);
        for (Eigen::Index j = 0; j < 68; ++j)
            for (int r = 0; r < 2; ++r)
                uv(r, j) = truth.entries(r, 0) * pts(0, j) + truth.entries(r, 1) * pts(1, j) +
                           truth.entries(r, 2) * pts(2, j) + truth.entries(r, 3);
        const MappingMatrix est = fit_mapping(uv, pts);
        worst = std::max(worst, (est.entries - truth.entries).cwiseAbs().maxCoeff());
    }
    return {worst < 1e-8, "max entry error " + fmt("%.2e", worst) + " over 100 seeds"};
}

// 4. Visibility of a sphere under frontal and yawed orthographic maps.
Outcome visibility_hemisphere()
{
    // 25 rings x 40 segments; longitudes are offset so no vertex lies on a
    // boundary meridian for yaws that are multiples of 30 degrees.
    const oracle::Sphere sph = oracle::sphere(25, 40, 4.5);
    const Eigen::Index n = sph.vertices.cols();
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        idx[static_cast<std::size_t>(i)] = static_cast<int>(i);
    const ShapePrior prior = make_shape_prior(Shape3D(sph.vertices).as_vector(), sph.vertices.topRows<2>(), idx,
                                              sph.triangles);
    const Shape3D shape(sph.vertices);
    const Eigen::Matrix3Xd normals = vertex_normals(shape, prior).normals;

    std::size_t mismatches = 0, radial_mismatches = 0, checked = 0;
    for (double yaw : {0.0, 30.0, -30.0, 60.0, -60.0, 90.0, -90.0}) {
        const Eigen::Matrix3d rot = oracle::axis_angle(Eigen::Vector3d::UnitY(), yaw);
        MappingMatrix m;
        m.entries.leftCols<3>() = rot.topRows<2>();
        const std::vector<bool> vis = visibility_mask(m, shape, prior);
        for (Eigen::Index i = 0; i < n; ++i) {
            // Camera-frame depth of the rotated normal and of the rotated position.
            const double nz = rot.row(2).dot(normals.col(i));
            const double pz = rot.row(2).dot(sph.vertices.col(i));
            if (vis[static_cast<std::size_t>(i)] != (nz > 0.0))
                ++mismatches;
            const int ring = static_cast<int>(i / 40);
            if (ring > 0 && ring < 24) {
                ++checked;
                if (vis[static_cast<std::size_t>(i)] != (pz > 0.0))
                    ++radial_mismatches;
            }
        }
    }
    Outcome o;
    o.pass = n == 1000 && mismatches == 0 && radial_mismatches == 0;
    o.detail = std::to_string(n) + " vertices, 7 yaws: " + std::to_string(mismatches) + " normal-sign and " +
               std::to_string(radial_mismatches) + "/" + std::to_string(checked) + " radial mismatches";
    return o;
}

// 5. Procrustes and ICP.
Outcome registration()
{
    double worst_proc = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(500 + seed);
        const Eigen::Matrix3Xd a = oracle::randn(3, 200, rng, 50.0);
        const Eigen::Matrix3d r = oracle::random_rotation(rng);
        const Eigen::Vector3d t = oracle::randn(3, 1, rng, 100.0);
        const Eigen::Matrix3Xd b = (r * a).colwise() + t;
        const ProcrustesResult res = procrustes_align(a, b, false);
        worst_proc = std::max(worst_proc, oracle::mean_vertex_distance(res.aligned, b));
    }

    // Irregularly sampled face surface: the regular grid has lattice-shift
    // minima that trap point-to-point ICP.
    const SynthTopology topo = synth_topology({38, 41, 0});
    Shape3D face = synth_pen_shape(topo, {});
    std::mt19937_64 jitter(77);
    face.vertices += oracle::randn(3, face.vertices.cols(), jitter, 1.0);
    double worst_icp = 0.0;
    bool monotone = true;
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(900 + seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Eigen::Vector3d axis(u(rng), u(rng), u(rng));
        axis.normalize();
        Eigen::Vector3d dir(u(rng), u(rng), u(rng));
        dir.normalize();
        const Eigen::Matrix3d r = oracle::axis_angle(axis, 5.0 * (0.5 + 0.5 * std::abs(u(rng))));
        const Eigen::Vector3d t = dir * 2.0 * (0.5 + 0.5 * std::abs(u(rng)));
        const Eigen::Vector3d c = face.vertices.rowwise().mean();
        const Eigen::Matrix3Xd moved = ((r * (face.vertices.colwise() - c)).colwise() + c).colwise() + t;
        const IcpResult res = rigid_icp(moved, face.vertices);
        worst_icp = std::max(worst_icp, res.mean_distance);
        for (std::size_t k = 1; k < res.trace.size(); ++k)
            monotone = monotone && res.trace[k] <= res.trace[k - 1];
    }
    Outcome o;
    o.pass = worst_proc < 1e-9 && worst_icp < 1e-3 && monotone;
    o.detail = "Procrustes residual " + fmt("%.2e", worst_proc) + " mm (100 transforms), ICP " +
               fmt("%.2e", worst_icp) + " mm (20 perturbations), trace " + (monotone ? "monotone" : "NOT monotone");
    return o;
}

// 6. Metric examples.
Outcome metrics_suite()
{
    std::vector<std::string> failed;
    auto expect = [&](const char* name, double got, double want) {
        if (!(std::abs(got - want) <= 1e-12))
            failed.push_back(std::string(name) + "=" + fmt("%.17g", got));
    };
    std::mt19937_64 rng(6);
    const Shape3D gt(oracle::randn(3, 50, rng, 30.0));

    expect("mae(est=gt)", sample_mae(gt, gt, AlignMode::none), 0.0);
    Shape3D shifted = gt;
    shifted.vertices.row(0).array() += 1.0;
    expect("mae(uniform 1 mm)", sample_mae(gt, shifted, AlignMode::none), 1.0);
    Shape3D noisy = gt;
    noisy.vertices += oracle::randn(3, 50, rng, 2.0);
    expect("mae(random)", sample_mae(gt, noisy, AlignMode::none),
           oracle::mean_vertex_distance(gt.vertices, noisy.vertices));

    // Depth range 10: z from 0 to 10.
    Eigen::Matrix3Xd zv = Eigen::Matrix3Xd::Zero(3, 5);
    for (int j = 0; j < 5; ++j)
        zv(2, j) = 2.5 * j;
    const Shape3D zgt(zv);
    const NpdeMap same = npde_map(zgt, zgt);
    expect("npde(est=gt)", *std::max_element(same.values.begin(), same.values.end()), 0.0);
    Shape3D one = zgt;
    one.vertices(2, 3) += 1.0;
    const NpdeMap m1 = npde_map(zgt, one);
    expect("npde(one vertex)", m1.values[3], 0.1);
    expect("npde(other vertices)", m1.values[0] + m1.values[1] + m1.values[2] + m1.values[4], 0.0);
    Shape3D off = zgt;
    off.vertices.row(2).array() += 3.0;
    for (double v : npde_map(zgt, off).values)
        expect("npde(constant offset)", v, 0.3);

    const BoundingBox box{0, 0, 100, 100};
    LandmarkSet2D lg(Eigen::Matrix2Xd::Zero(2, 1));
    LandmarkSet2D le = lg;
    expect("nme(est=gt)", sample_nme(lg, le, box), 0.0);
    le.points(0, 0) = 2.0;
    expect("nme(2 px, 100x100)", sample_nme(lg, le, box), 0.02);

    // Masking: a hidden landmark's error must not enter; unhiding it must.
    LandmarkSet2D g3(oracle::randn(2, 3, rng, 20.0));
    LandmarkSet2D e3 = g3;
    e3.points(1, 0) += 4.0;
    e3.points(0, 2) += 300.0;
    g3.visible = {true, true, false};
    expect("nme(hidden far error)", sample_nme(g3, e3, box), (4.0 / 2.0) / 100.0);
    g3.visible = {true, true, true};
    expect("nme(unhidden)", sample_nme(g3, e3, box), (304.0 / 3.0) / 100.0);

    std::vector<EvalRecord> recs(3);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        recs[i].gt_landmarks = lg;
        recs[i].est_landmarks = LandmarkSet2D(Eigen::Matrix2Xd::Constant(2, 1, 0.0));
        recs[i].est_landmarks.points(0, 0) = 3.0;
        recs[i].bbox = box;
        recs[i].yaw_degrees = 10.0;
    }
    const auto rep = pose_bucket_report(recs);
    std::size_t populated = 0;
    for (const auto& row : rep.rows)
        populated += row.count > 0 ? 1 : 0;
    if (populated != 1)
        failed.push_back("pose buckets populated=" + std::to_string(populated));
    if (!rep.nme_std || *rep.nme_std != 0.0)
        failed.push_back("pose bucket std");

    Outcome o;
    o.pass = failed.empty();
    o.detail = failed.empty() ? "MAE, NPDE, NME and pose-bucket examples exact at 1e-12, masking verified" : "";
    for (const auto& f : failed)
        o.detail += f + "; ";
    return o;
}

// 7. Per-stage training curve on a noisy synthetic sweep.
Outcome convergence_shape()
{
    SynthConfig cfg;
    cfg.subjects = 12;
    cfg.expressions = 1;
    cfg.image_size = 160;
    cfg.landmark_noise_px = 2.0;
    cfg.face = {38, 41, 0};
    const SynthDataset data = synth_dataset(cfg);
    std::vector<TrainingSample> samples;
    for (const auto& s : data.samples)
        samples.push_back(s.sample);
    TrainOptions opt;
    opt.stages = 5;
    const TrainResult r = train_cascade(samples, data.prior, opt);

    double worst = 0.0;
    for (std::size_t k = 1; k < r.stats.size(); ++k) {
        const auto& a = r.stats[k - 1];
        const auto& b = r.stats[k];
        worst = std::max({worst, (b.nme - a.nme) / a.nme, (b.mae_pen - a.mae_pen) / a.mae_pen,
                          (b.mae_expressive - a.mae_expressive) / a.mae_expressive});
    }
    std::ostringstream curve;
    for (const auto& s : r.stats)
        curve << (s.stage ? " " : "") << fmt("%.4f", s.nme);
    Outcome o;
    o.pass = worst <= 1e-3 && r.stats.size() == 6;
    o.detail = std::to_string(samples.size()) + " samples, NME " + curve.str() + ", MAE " +
               fmt("%.2f", r.stats.front().mae_pen) + " -> " + fmt("%.2f", r.stats.back().mae_pen) +
               " mm, max relative increase " + fmt("%.1e", std::max(worst, 0.0));
    return o;
}

// 8. Recognition sanity.
Outcome recognition_sanity()
{
    std::vector<std::string> failed;

    const SynthTopology topo = synth_topology({20, 21, 0});
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.85, 1.15);
    std::vector<Shape3D> shapes;
    std::vector<std::string> labels;
    for (int s = 0; s < 8; ++s) {
        SynthFaceParams p;
        p.half_width *= u(rng);
        p.depth *= u(rng);
        p.nose *= u(rng);
        p.chin *= u(rng);
        shapes.push_back(synth_pen_shape(topo, p));
        labels.push_back("s" + std::to_string(s));
    }
    const ScoreMatrix s3 = distances_to_similarity(distance_matrix(shapes, shapes, labels, labels));
    ScoreMatrix s2 = s3;
    std::uniform_real_distribution<double> low(0.0, 0.5), high(0.6, 1.0);
    for (Eigen::Index i = 0; i < s2.scores.rows(); ++i)
        for (Eigen::Index j = 0; j < s2.scores.cols(); ++j)
            s2.scores(i, j) = i == j ? high(rng) : low(rng);
    for (double w : {0.0, 0.25, 0.5, 0.7, 1.0})
        if (rank1_identify(fuse_scores(s2, s3, w)).accuracy_percent != 100.0)
            failed.push_back("rank-1 at w=" + fmt("%.2f", w));

    // Means 6 sigma apart: the midpoint sits 3 sigma from each distribution.
    std::normal_distribution<double> gen(6.0, 1.0), imp(0.0, 1.0);
    std::vector<double> genuine(2000), imposter(2000);
    for (auto& v : genuine)
        v = gen(rng);
    for (auto& v : imposter)
        v = imp(rng);
    const VerificationReport vr = verify_metrics(genuine, imposter);
    if (!(vr.eer_percent < 1.0))
        failed.push_back("EER " + fmt("%.3f", vr.eer_percent));
    if (!(vr.auc_percent > 99.0))
        failed.push_back("AUC " + fmt("%.3f", vr.auc_percent));

    std::size_t violations = 0;
    for (int trial = 0; trial < 50; ++trial) {
        std::mt19937_64 r2(3000 + trial);
        ScoreMatrix d;
        d.scores = oracle::randn(5, 7, r2).array().abs() * 10.0;
        d.probe_labels.assign(5, "p");
        d.gallery_labels.assign(7, "g");
        const ScoreMatrix s = distances_to_similarity(d);
        for (Eigen::Index a = 0; a < d.scores.size(); ++a)
            for (Eigen::Index b = 0; b < d.scores.size(); ++b)
                if (d.scores(a) < d.scores(b) && !(s.scores(a) > s.scores(b)))
                    ++violations;
    }
    if (violations)
        failed.push_back(std::to_string(violations) + " order violations");

    Outcome o;
    o.pass = failed.empty();
    o.detail = "rank-1 100% at w in {0,.25,.5,.7,1}, EER " + fmt("%.3f", vr.eer_percent) + "%, AUC " +
               fmt("%.3f", vr.auc_percent) + "%, order reversal on 50 matrices";
    for (const auto& f : failed)
        o.detail += "; FAILED " + f;
    return o;
}

struct FullSizeModel
{
    CascadeModel model;
    std::vector<SynthSample> probes;
};

// A K=5 model on the default 5,996-vertex face with 68 landmarks.
const FullSizeModel& full_size_model()
{
    static const FullSizeModel m = [] {
        SynthConfig cfg;
        cfg.subjects = 3;
        cfg.expressions = 1;
        cfg.yaws = {-60, -30, 0, 30, 60};
        cfg.landmark_noise_px = 1.0;
        cfg.seed = 9;
        const SynthDataset data = synth_dataset(cfg);
        std::vector<TrainingSample> samples;
        for (const auto& s : data.samples)
            samples.push_back(s.sample);
        TrainOptions opt;
        opt.stages = 5;
        FullSizeModel out;
        out.model = train_cascade(samples, data.prior, opt).model;
        SynthConfig test = cfg;
        test.seed = 10;
        test.subjects = 2;
        out.probes = synth_dataset(test).samples;
        return out;
    }();
    return m;
}

// 9. Single-threaded fit time.
Outcome throughput()
{
    const FullSizeModel& m = full_size_model();
    const auto& p = m.probes;
    fit(p[0].sample.image, p[0].sample.bbox, m.model); // warm-up
    std::vector<double> ms;
    for (std::size_t i = 0; i < std::min<std::size_t>(p.size(), 20); ++i) {
        const auto t0 = Clock::now();
        const FitResult r = fit(p[i].sample.image, p[i].sample.bbox, m.model);
        ms.push_back(1000.0 * seconds_since(t0));
        if (r.pen_shape.num_vertices() != 5996)
            return {false, "unexpected vertex count"};
    }
    std::sort(ms.begin(), ms.end());
    const double median = ms[ms.size() / 2];
    const double worst = ms.back();
    return {worst <= 200.0,
            "n=5996, l=68, K=5: median " + fmt("%.1f", median) + " ms, max " + fmt("%.1f", worst) + " ms over " +
                std::to_string(ms.size()) + " images"};
}

template <typename A, typename B>
bool same_bits(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        return false;
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const auto x = a(i, j);
            const auto y = b(i, j);
            if (std::memcmp(&x, &y, sizeof x) != 0)
                return false;
        }
    return true;
}

// 10. Save / load round trip.
Outcome serialization()
{
    const FullSizeModel& m = full_size_model();
    const auto path = std::filesystem::temp_directory_path() / "jafr_acceptance_model.bin";
    save_model(m.model, path);
    const CascadeModel loaded = load_model(path);
    std::filesystem::remove(path);

    bool exact = loaded.num_stages() == m.model.num_stages() && loaded.ridge == m.model.ridge &&
                 loaded.ridge_mode == m.model.ridge_mode &&
                 same_bits(loaded.prior.mean_pen_shape, m.model.prior.mean_pen_shape) &&
                 same_bits(loaded.prior.mean_landmarks_2d, m.model.prior.mean_landmarks_2d) &&
                 loaded.prior.landmark_indices == m.model.prior.landmark_indices &&
                 loaded.prior.triangles == m.model.prior.triangles &&
                 loaded.feature_config.patch_size == m.model.feature_config.patch_size &&
                 loaded.feature_config.patch_bbox_ratio == m.model.feature_config.patch_bbox_ratio;
    for (std::size_t k = 0; exact && k < loaded.num_stages(); ++k)
        exact = same_bits(loaded.stages[k].landmark.weights, m.model.stages[k].landmark.weights) &&
                same_bits(loaded.stages[k].shape.weights, m.model.stages[k].shape.weights);

    bool identical = true;
    for (std::size_t i = 0; i < 5 && i < m.probes.size(); ++i) {
        const auto& s = m.probes[i * 3 % m.probes.size()].sample;
        const FitResult a = fit(s.image, s.bbox, m.model);
        const FitResult b = fit(s.image, s.bbox, loaded);
        identical = identical && same_bits(a.landmarks.points, b.landmarks.points) &&
                    a.landmarks.visible == b.landmarks.visible &&
                    same_bits(a.pen_shape.vertices, b.pen_shape.vertices) &&
                    same_bits(a.expressive_shape.vertices, b.expressive_shape.vertices) &&
                    same_bits(a.mapping.entries, b.mapping.entries) && a.degraded == b.degraded;
    }
    return {exact && identical, std::string("weights ") + (exact ? "bit-exact" : "DIFFER") + ", FitResults " +
                                    (identical ? "bit-identical" : "DIFFER") + " on 5 images"};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"linear-world exact recovery", linear_world},
        {"closed-form shape regressor oracle", shape_stage_oracle},
        {"mapping recovery", mapping_recovery},
        {"visibility hemisphere", visibility_hemisphere},
        {"registration", registration},
        {"metrics unit suite", metrics_suite},
        {"convergence shape", convergence_shape},
        {"recognition sanity", recognition_sanity},
        {"throughput", throughput},
        {"serialization", serialization},
    };
    // Optional arguments select criteria by number.
    std::vector<int> only;
    for (int i = 1; i < argc; ++i)
        only.push_back(std::atoi(argv[i]));

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end())
            continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("criterion %2d %-36s %s  %s\n", id, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
