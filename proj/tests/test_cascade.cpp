/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: tests/test_cascade.cpp
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

#include "jafr/cascade.hpp"
#include "jafr/error.hpp"
#include "jafr/metrics.hpp"
#include "jafr/synth.hpp"

#include "doctest.h"

#include <algorithm>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace jafr;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name)
{
    return fs::temp_directory_path() / ("jafr_test_" + name);
}

std::vector<char> slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes)
{
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

SynthConfig small_sweep()
{
    SynthConfig cfg;
    cfg.subjects = 4;
    cfg.expressions = 1;
    cfg.image_size = 120;
    cfg.yaws = {-30, 0, 30};
    cfg.face = {20, 21, 0};
    return cfg;
}

const SynthDataset& sweep_data()
{
    static const SynthDataset d = synth_dataset(small_sweep());
    return d;
}

const TrainResult& sweep_model()
{
    static const TrainResult r = [] {
        std::vector<TrainingSample> s;
        for (const auto& x : sweep_data().samples)
            s.push_back(x.sample);
        TrainOptions opt;
        opt.stages = 3;
        return train_cascade(s, sweep_data().prior, opt);
    }();
    return r;
}

} // namespace

TEST_SUITE("cascade")
{
    TEST_CASE("landmark stage recovers an exact linear map")
    {
        std::mt19937_64 rng(1);
        const Eigen::MatrixXd w = oracle::randn(6, 40, rng);
        const Eigen::MatrixXd h = oracle::randn(40, 80, rng);
        bool pinv = true;
        const LandmarkStage st = train_landmark_stage(h, w * h, 0.0, &pinv);
        CHECK_FALSE(pinv);
        CHECK((st.weights - w).cwiseAbs().maxCoeff() < 1e-6);

        // Linear in the feature vector.
        const Eigen::VectorXd x = oracle::randn(40, 1, rng);
        CHECK(((st.weights * (2.0 * x)) - 2.0 * (st.weights * x)).cwiseAbs().maxCoeff() < 1e-12);

        const LandmarkStage zero = train_landmark_stage(h, Eigen::MatrixXd::Zero(6, 80), 0.1);
        CHECK(zero.weights.isZero(0.0));
    }

    TEST_CASE("landmark stage with one sample has the rank-one ridge form")
    {
        std::mt19937_64 rng(2);
        const Eigen::MatrixXd h = oracle::randn(30, 1, rng);
        const Eigen::MatrixXd du = oracle::randn(4, 1, rng);
        const double lambda = 0.7;
        const LandmarkStage st = train_landmark_stage(h, du, lambda);
        double hh = 0.0;
        for (Eigen::Index i = 0; i < 30; ++i)
            hh += h(i) * h(i);
        for (Eigen::Index r = 0; r < 4; ++r)
            for (Eigen::Index c = 0; c < 30; ++c)
                CHECK(std::abs(st.weights(r, c) - du(r) * h(c) / (hh + lambda)) < 1e-12);
    }

    TEST_CASE("landmark stage falls back to the minimum-norm solution")
    {
        std::mt19937_64 rng(3);
        // Fewer samples than features: the primal Gram is singular.
        const Eigen::MatrixXd h = oracle::randn(50, 10, rng);
        const Eigen::MatrixXd du = oracle::randn(4, 10, rng);
        bool pinv = false;
        const LandmarkStage st = train_landmark_stage(h, du, 0.0, &pinv);
        CHECK((st.weights * h - du).cwiseAbs().maxCoeff() < 1e-9);
        // Minimum norm: rows lie in the span of the samples.
        const Eigen::MatrixXd proj = h * oracle::gauss_jordan_inverse(oracle::matmul(h.transpose(), h)) * h.transpose();
        CHECK((st.weights * proj - st.weights).cwiseAbs().maxCoeff() < 1e-9);

        Eigen::MatrixXd bad = h;
        bad(0, 0) = std::nan("");
        CHECK_THROWS_AS(train_landmark_stage(bad, du, 0.0), InvalidArgument);
        CHECK_THROWS_AS(train_landmark_stage(h, Eigen::MatrixXd::Zero(4, 9), 0.0), DimensionError);
    }

    TEST_CASE("shape stage examples")
    {
        std::mt19937_64 rng(4);
        const Eigen::Index l = 5;
        const Eigen::MatrixXd g = oracle::randn(60, 2 * l, rng);
        const Eigen::MatrixXd du = oracle::randn(2 * l, 4 * l, rng);
        CHECK((train_shape_stage(du, g * du, 0.0).weights - g).cwiseAbs().maxCoeff() < 1e-6);

        // Orthonormal rows: the Gram is the identity.
        const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(2 * l, 3 * l);
        const Eigen::MatrixXd ds = oracle::randn(60, 3 * l, rng);
        CHECK((train_shape_stage(q, ds, 0.0).weights - ds * q.transpose()).cwiseAbs().maxCoeff() < 1e-12);

        Eigen::MatrixXd deficient = oracle::randn(2 * l, 2 * l, rng);
        deficient.row(3) = deficient.row(1);
        CHECK_THROWS_AS(train_shape_stage(deficient, oracle::randn(60, 2 * l, rng), 0.0), SingularFitError);
        CHECK_THROWS_AS(train_shape_stage(oracle::randn(2 * l, l, rng), oracle::randn(60, l, rng), 0.0),
                        SingularFitError);
        CHECK_NOTHROW(train_shape_stage(deficient, oracle::randn(60, 2 * l, rng), 1e-3));
    }

    TEST_CASE("shape stage equals the closed form for random instances")
    {
        for (int t = 0; t < 5; ++t) {
            std::mt19937_64 rng(100 + t);
            const Eigen::MatrixXd du = oracle::randn(8, 20 + t, rng);
            const Eigen::MatrixXd ds = oracle::randn(45, 20 + t, rng, 4.0);
            const Eigen::MatrixXd want = oracle::shape_regressor(du, ds);
            CHECK((train_shape_stage(du, ds, 0.0).weights - want).norm() / want.norm() < 1e-8);
        }
    }

    TEST_CASE("relative ridge rule")
    {
        Eigen::MatrixXd x(2, 3);
        x << 1, 2, 3,
             4, 5, 6;
        CHECK(relative_ridge(x, 0.5) == doctest::Approx(0.5 * 91.0 / 2.0));
    }

    TEST_CASE("linear world: exact recovery, fit on a training sample, determinism")
    {
        const LinearWorld w = synth_linear_world(20, 4, 4 * 128 * 4, 3);
        const LinearWorld again = synth_linear_world(20, 4, 4 * 128 * 4, 3);
        CHECK(again.landmark_map == w.landmark_map);
        CHECK(again.shape_map == w.shape_map);
        CHECK(again.samples[17].target_landmarks.points == w.samples[17].target_landmarks.points);

        TrainOptions opt;
        opt.stages = 3;
        opt.ridge_mode = RidgeMode::absolute;
        opt.ridge = 0.0;
        const TrainResult r = train_cascade(w.samples, w.prior, opt, w.features.get());
        REQUIRE(r.stats.size() == 4);
        CHECK(r.stats.back().nme < 1e-6);
        CHECK(r.stats.back().mae_pen < 1e-6);
        CHECK((r.model.stages[0].landmark.weights - w.landmark_map).cwiseAbs().maxCoeff() < 1e-6);

        for (std::size_t i : {0u, 99u, 1000u}) {
            const TrainingSample& s = w.samples[i];
            const FitResult f = fit(s.image, s.bbox, r.model, w.features.get());
            CHECK((f.landmarks.points - s.target_landmarks.points).cwiseAbs().maxCoeff() < 1e-6);
            const Shape3D pen = Shape3D::from_vector(s.target.identity);
            CHECK((f.pen_shape.vertices - pen.vertices).cwiseAbs().maxCoeff() < 1e-6);
            const FitResult g = fit(s.image, s.bbox, r.model, w.features.get());
            CHECK(std::memcmp(f.expressive_shape.vertices.data(), g.expressive_shape.vertices.data(),
                              sizeof(double) * static_cast<std::size_t>(g.expressive_shape.vertices.size())) == 0);
        }
    }

    TEST_CASE("linear world with too few samples surfaces the singular shape Gram")
    {
        const LinearWorld w = synth_linear_world(10, 4, 8, 5);
        TrainOptions opt;
        opt.stages = 1;
        opt.ridge_mode = RidgeMode::absolute;
        opt.ridge = 0.0;
        CHECK_THROWS_AS(train_cascade(w.samples, w.prior, opt, w.features.get()), SingularFitError);
    }

    TEST_CASE("one sample duplicated is memorised after the first stage")
    {
        // A profile view, far from the frontal start.
        const auto& all = sweep_data().samples;
        const auto it = std::max_element(all.begin(), all.end(), [](const SynthSample& a, const SynthSample& b) {
            return std::abs(a.yaw) < std::abs(b.yaw);
        });
        std::vector<TrainingSample> dup(12, it->sample);
        TrainOptions opt;
        opt.stages = 1;
        const TrainResult r = train_cascade(dup, sweep_data().prior, opt);
        CHECK(r.stats[0].nme > 0.02);
        CHECK(r.stats[1].nme < 1e-3 * r.stats[0].nme);
    }

    TEST_CASE("training curve and worker independence")
    {
        const TrainResult& r = sweep_model();
        for (std::size_t k = 1; k < r.stats.size(); ++k)
            CHECK(r.stats[k].nme <= r.stats[k - 1].nme * (1.0 + 1e-3));

        std::vector<TrainingSample> s;
        for (const auto& x : sweep_data().samples)
            s.push_back(x.sample);
        TrainOptions opt;
        opt.stages = 3;
        opt.workers = 3;
        const TrainResult threaded = train_cascade(s, sweep_data().prior, opt);
        for (std::size_t k = 0; k < 3; ++k)
            CHECK(threaded.model.stages[k].landmark.weights == r.model.stages[k].landmark.weights);
    }

    TEST_CASE("mean face at frontal pose stays near the initialisation")
    {
        const SynthDataset& d = sweep_data();
        const Shape3D mean = Shape3D::from_vector(d.prior.mean_pen_shape);
        SynthConfig cfg = small_sweep();
        cfg.yaws = {0};
        const auto probe = synth_pose_sweep({mean}, {mean}, {"mean"}, {0}, d.prior, cfg);
        REQUIRE(probe.size() == 1);
        const TrainingSample& s = probe[0].sample;
        const FitResult f = fit(s.image, s.bbox, sweep_model().model);
        const LandmarkSet2D init = init_landmarks(d.prior, s.bbox);
        const double worst = (f.landmarks.points - init.points).colwise().norm().maxCoeff();
        CHECK(worst < 1.0);
    }

    TEST_CASE("fit traces and dimension checks")
    {
        const SynthSample& s = sweep_data().samples[4];
        const FitResult f = fit(s.sample.image, s.sample.bbox, sweep_model().model, nullptr, true);
        CHECK(f.trace.size() == 3);
        CHECK(f.pen_shape.num_vertices() == sweep_data().prior.num_vertices());
        CHECK(f.landmarks.size() == 68);
        CHECK_THROWS(fit(s.sample.image, BoundingBox{0, 0, 0, 0}, sweep_model().model));
    }

    TEST_CASE("model files")
    {
        const CascadeModel& m = sweep_model().model;
        const fs::path p = temp_file("model.bin");
        save_model(m, p);
        const CascadeModel back = load_model(p);
        CHECK(back.num_stages() == 3);
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(back.stages[k].landmark.weights == m.stages[k].landmark.weights);
            CHECK(back.stages[k].shape.weights == m.stages[k].shape.weights);
        }
        CHECK(back.prior.mean_pen_shape == m.prior.mean_pen_shape);
        CHECK(back.prior.triangles == m.prior.triangles);

        const auto bytes = slurp(p);
        std::vector<char> cut(bytes.begin(), bytes.end() - 100);
        spit(p, cut);
        CHECK_THROWS_AS(load_model(p), ParseError);

        std::vector<char> foreign = bytes;
        foreign[8] = 99; // version field follows the 8-byte magic
        spit(p, foreign);
        CHECK_THROWS_AS(load_model(p), VersionError);

        std::vector<char> junk = bytes;
        junk[0] = 'X';
        spit(p, junk);
        CHECK_THROWS_AS(load_model(p), ParseError);

        std::vector<char> trailing = bytes;
        trailing.push_back(0);
        spit(p, trailing);
        CHECK_THROWS_AS(load_model(p), ParseError);
        fs::remove(p);
        CHECK_THROWS(load_model(p));
    }
}
