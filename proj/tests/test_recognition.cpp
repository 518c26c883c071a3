/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: tests/test_recognition.cpp
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

#include "jafr/error.hpp"
#include "jafr/recognition.hpp"
#include "jafr/synth.hpp"

#include "doctest.h"

#include <cmath>

using namespace jafr;

namespace {

ScoreMatrix labelled(const Eigen::MatrixXd& m)
{
    ScoreMatrix s;
    s.scores = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        s.probe_labels.push_back("s" + std::to_string(i) + ":probe");
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        s.gallery_labels.push_back("s" + std::to_string(j));
    return s;
}

Shape3D face(double width_scale, double nose_scale)
{
    static const SynthTopology topo = synth_topology({16, 17, 0});
    SynthFaceParams p;
    p.half_width *= width_scale;
    p.nose *= nose_scale;
    return synth_pen_shape(topo, p);
}

} // namespace

TEST_SUITE("recognition")
{
    TEST_CASE("shape distance examples")
    {
        const Shape3D a = face(1.0, 1.0);
        CHECK(shape_distance(a, a, DistanceMode::corresponded) == 0.0);
        CHECK(shape_distance(a, a, DistanceMode::icp) == 0.0);

        std::mt19937_64 rng(1);
        const Eigen::Matrix3d r = oracle::random_rotation(rng);
        const Shape3D moved(Eigen::Matrix3Xd((r * a.vertices).colwise() + Eigen::Vector3d(5, 6, 7)));
        CHECK(shape_distance(moved, a, DistanceMode::corresponded) < 1e-6);

        const Shape3D b = face(1.1, 1.3);
        const double ab = shape_distance(a, b, DistanceMode::corresponded);
        const double ba = shape_distance(b, a, DistanceMode::corresponded);
        CHECK(ab > 0.0);
        CHECK(std::abs(ab - ba) < 1e-9);
    }

    TEST_CASE("distance matrix does not depend on the worker count")
    {
        std::vector<Shape3D> shapes = {face(1.0, 1.0), face(1.05, 0.9), face(0.95, 1.2)};
        const std::vector<std::string> labels = {"a", "b", "c"};
        const ScoreMatrix one = distance_matrix(shapes, shapes, labels, labels, DistanceMode::icp, 1);
        const ScoreMatrix three = distance_matrix(shapes, shapes, labels, labels, DistanceMode::icp, 3);
        CHECK(one.scores == three.scores);
        for (Eigen::Index i = 0; i < 3; ++i)
            CHECK(one.scores(i, i) == 0.0);
        CHECK_THROWS_AS(distance_matrix(shapes, shapes, {"a"}, labels), DimensionError);
    }

    TEST_CASE("distances to similarity")
    {
        Eigen::MatrixXd d(1, 3);
        d << 2, 5, 10;
        const ScoreMatrix s = distances_to_similarity(labelled(d));
        CHECK(s.scores(0, 0) == 1.0);
        CHECK(s.scores(0, 1) == doctest::Approx(0.625).epsilon(1e-15));
        CHECK(s.scores(0, 2) == 0.0);

        const ScoreMatrix flat = distances_to_similarity(labelled(Eigen::MatrixXd::Constant(2, 2, 4.0)));
        CHECK(flat.scores.isZero(0.0));

        std::mt19937_64 rng(2);
        const Eigen::MatrixXd r = oracle::randn(4, 6, rng).array().abs();
        const ScoreMatrix sr = distances_to_similarity(labelled(r));
        Eigen::Index ai, aj, bi, bj;
        r.minCoeff(&ai, &aj);
        sr.scores.maxCoeff(&bi, &bj);
        CHECK(ai == bi);
        CHECK(aj == bj);

        // Per-row scope normalises every probe separately.
        const ScoreMatrix rows = distances_to_similarity(labelled(r), NormScope::per_row);
        for (Eigen::Index i = 0; i < 4; ++i) {
            CHECK(rows.scores.row(i).maxCoeff() == 1.0);
            CHECK(rows.scores.row(i).minCoeff() == 0.0);
        }
        ScoreMatrix empty;
        CHECK_THROWS_AS(distances_to_similarity(empty), InvalidArgument);
    }

    TEST_CASE("score fusion")
    {
        Eigen::MatrixXd a(2, 2), b(2, 2);
        a << 0.9, 0.2,
             0.4, 0.6;
        b << 0.1, 0.8,
             0.5, 1.0;
        const ScoreMatrix sa = labelled(a), sb = labelled(b);
        CHECK(fuse_scores(sa, sb, 0.5).scores.isApprox((a + b) / 2.0, 1e-15));
        CHECK(fuse_scores(sa, sb, 1.0).scores == a);
        const ScoreMatrix w7 = fuse_scores(sa, sb, 0.7);
        CHECK(w7.scores(0, 0) == doctest::Approx(0.66).epsilon(1e-14));
        CHECK(w7.scores(0, 1) == doctest::Approx(0.38).epsilon(1e-14));
        CHECK(w7.scores(1, 0) == doctest::Approx(0.43).epsilon(1e-14));
        CHECK(w7.scores(1, 1) == doctest::Approx(0.72).epsilon(1e-14));
        CHECK(w7.scores.minCoeff() >= 0.0);
        CHECK(w7.scores.maxCoeff() <= 1.0);

        CHECK_THROWS_AS(fuse_scores(sa, sb, 1.5), InvalidArgument);
        ScoreMatrix other = sb;
        other.gallery_labels[0] = "x";
        CHECK_THROWS_AS(fuse_scores(sa, other, 0.5), InvalidArgument);
    }

    TEST_CASE("rank-1 identification")
    {
        CHECK(rank1_identify(labelled(Eigen::MatrixXd::Identity(4, 4))).accuracy_percent == 100.0);

        Eigen::MatrixXd second(3, 3);
        second << 0.8, 0.9, 0.1,
                  0.1, 0.8, 0.9,
                  0.9, 0.1, 0.8;
        CHECK(rank1_identify(labelled(second)).accuracy_percent == 0.0);

        // Ties go to the lowest gallery index.
        Eigen::MatrixXd tie(1, 3);
        tie << 0.5, 0.7, 0.7;
        CHECK(rank1_identify(labelled(tie)).predicted[0] == 1);

        std::mt19937_64 rng(3);
        const Eigen::MatrixXd r = oracle::randn(20, 7, rng);
        const IdentificationResult got = rank1_identify(labelled(r));
        for (Eigen::Index i = 0; i < 20; ++i) {
            std::size_t best = 0;
            for (Eigen::Index j = 1; j < 7; ++j)
                if (r(i, j) > r(i, static_cast<Eigen::Index>(best)))
                    best = static_cast<std::size_t>(j);
            CHECK(got.predicted[static_cast<std::size_t>(i)] == best);
        }
        CHECK(subject_of("s003:expr01") == "s003");
        CHECK(subject_of("plain") == "plain");
    }

    TEST_CASE("identification under a shared increasing transform at the fusion endpoints")
    {
        std::mt19937_64 rng(4);
        const ScoreMatrix a = labelled(oracle::randn(10, 10, rng).array().abs());
        const ScoreMatrix b = labelled(oracle::randn(10, 10, rng).array().abs());
        ScoreMatrix ta = a, tb = b;
        ta.scores = a.scores.array().exp();
        tb.scores = b.scores.array().exp();
        for (double w : {0.0, 1.0})
            CHECK(rank1_identify(fuse_scores(a, b, w)).predicted == rank1_identify(fuse_scores(ta, tb, w)).predicted);
    }

    TEST_CASE("verification metrics")
    {
        const std::vector<double> g = {0.9, 0.8}, i = {0.1, 0.2};
        const VerificationReport r = verify_metrics(g, i);
        CHECK(r.accuracy_percent == 100.0);
        CHECK(r.eer_percent == 0.0);
        CHECK(r.auc_percent == 100.0);
        CHECK(r.threshold > 0.2);
        CHECK(r.threshold < 0.8);

        // Identical distributions: AUC near one half.
        std::mt19937_64 rng(5);
        std::normal_distribution<double> n;
        std::vector<double> a(4000), b(4000);
        for (auto& v : a)
            v = n(rng);
        for (auto& v : b)
            v = n(rng);
        const VerificationReport same = verify_metrics(a, b);
        CHECK(std::abs(same.auc_percent - 50.0) < 2.0);
        CHECK(std::abs(same.eer_percent - 50.0) < 2.0);

        // Hand example: genuine {0.6, 0.4}, imposter {0.5, 0.3}.
        const std::vector<double> g2 = {0.6, 0.4}, i2 = {0.5, 0.3};
        const VerificationReport h = verify_metrics(g2, i2);
        CHECK(h.auc_percent == doctest::Approx(75.0));
        CHECK(h.eer_percent == doctest::Approx(50.0));
        CHECK(h.accuracy_percent == doctest::Approx(75.0));

        const std::vector<double> empty;
        CHECK_THROWS_AS(verify_metrics(empty, i), InvalidArgument);
    }
}
