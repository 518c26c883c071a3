/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: tests/test_io.cpp
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
#include "jafr/io.hpp"
#include "jafr/synth.hpp"

#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

using namespace jafr;
namespace fs = std::filesystem;

namespace {

const fs::path data_dir = JAFR_TEST_DATA_DIR;

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / "jafr_io_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::string message_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST_SUITE("data-io-cli")
{
    TEST_CASE("OBJ reader: polygons, negative indices, ignored records")
    {
        const Mesh m = read_mesh(data_dir / "quad.obj");
        CHECK(m.shape.num_vertices() == 5);
        CHECK(m.shape.vertices(2, 4) == 1.25);
        REQUIRE(m.triangles.size() == 3);
        CHECK(m.triangles[0] == Triangle{0, 1, 2});
        CHECK(m.triangles[1] == Triangle{0, 2, 3});
        CHECK(m.triangles[2] == Triangle{1, 2, 4});
        // Faces feed the adjacency used for normals.
        const auto adj = adjacency_from_triangles(5, m.triangles);
        CHECK(adj[4].size() == 2);
        CHECK_THROWS_AS(read_mesh(data_dir / "quad.obj", 6), DimensionError);
    }

    TEST_CASE("malformed OBJ names the line")
    {
        const std::string msg = message_of([] { read_mesh(data_dir / "bad_vertex.obj"); });
        CHECK(msg.find(":2") != std::string::npos);
        CHECK_THROWS_AS(read_mesh(data_dir / "bad_vertex.obj"), ParseError);
        CHECK_THROWS(read_mesh(data_dir / "does_not_exist.obj"));
    }

    TEST_CASE("ASCII PLY reader")
    {
        const Mesh m = read_mesh(data_dir / "tetra.ply");
        CHECK(m.shape.num_vertices() == 4);
        CHECK(m.triangles.size() == 4);
        CHECK(m.shape.vertices(2, 3) == 1.0);
    }

    TEST_CASE("mesh write and read round trip")
    {
        std::mt19937_64 rng(1);
        const Shape3D s(oracle::randn(3, 50, rng, 80.0));
        const std::vector<Triangle> tris = {{0, 1, 2}, {3, 4, 5}};
        for (const char* name : {"round.obj", "round.ply"}) {
            write_mesh(scratch(name), s, tris);
            const Mesh back = read_mesh(scratch(name));
            CHECK((back.shape.vertices - s.vertices).cwiseAbs().maxCoeff() < 1e-6);
            CHECK(back.triangles == tris);
        }
    }

    TEST_CASE("landmark files")
    {
        const LandmarkSet2D l = read_landmarks(data_dir / "three_landmarks.txt");
        REQUIRE(l.size() == 3);
        CHECK(l.points(0, 0) == 10.5);
        CHECK(l.points(1, 2) == 70.0);
        CHECK(l.visible == std::vector<bool>{true, false, true});
        CHECK_THROWS_AS(read_landmarks(data_dir / "three_landmarks.txt", 4), DimensionError);

        std::mt19937_64 rng(2);
        LandmarkSet2D many(oracle::randn(2, 68, rng, 50.0));
        many.visible[5] = false;
        write_landmarks(scratch("lm68.txt"), many);
        const LandmarkSet2D back = read_landmarks(scratch("lm68.txt"), 68);
        // Nine significant digits.
        CHECK((back.points - many.points).cwiseAbs().maxCoeff() < 1e-8 * many.points.cwiseAbs().maxCoeff());
        CHECK(back.visible == many.visible);

        LandmarkSet2D eighty_four(oracle::randn(2, 84, rng));
        write_landmarks(scratch("lm84.txt"), eighty_four);
        CHECK(read_landmarks(scratch("lm84.txt"), 84).size() == 84);

        LandmarkSet2D short_set(oracle::randn(2, 67, rng));
        write_landmarks(scratch("lm67.txt"), short_set);
        CHECK_THROWS_AS(read_landmarks(scratch("lm67.txt"), 68), DimensionError);

        std::ofstream(scratch("lm_bad.txt")) << "1 2 1\nx 3 1\n";
        CHECK_THROWS_AS(read_landmarks(scratch("lm_bad.txt")), ParseError);
    }

    TEST_CASE("PGM images")
    {
        const GrayImage g = read_image(data_dir / "gray_2x2.pgm");
        REQUIRE(g.width == 2);
        REQUIRE(g.height == 2);
        CHECK(g.at(0, 0) == 0.0);
        CHECK(g.at(1, 0) == 1.0);
        CHECK(g.at(0, 1) == 128.0 / 255.0);
        CHECK(g.at(1, 1) == 64.0 / 255.0);

        const GrayImage w = read_image(data_dir / "wide_16bit.pgm");
        CHECK(w.at(0, 0) == 258.0 / 65535.0);
        CHECK(w.at(1, 0) == 1.0);
        CHECK(w.at(2, 0) == 0.0);

        CHECK_THROWS_AS(read_image(data_dir / "truncated.pgm"), ParseError);
        CHECK_THROWS_AS(read_image(data_dir / "quad.obj"), ParseError);

        // 8-bit P5 is bit-exact for values on the 1/255 grid.
        GrayImage img(5, 3);
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            img.pixels[i] = static_cast<double>(i * 17 % 256) / 255.0;
        write_pgm(scratch("img.pgm"), img);
        CHECK(read_image(scratch("img.pgm")).pixels == img.pixels);
        write_pgm(scratch("img16.pgm"), img, 65535);
        const GrayImage back16 = read_image(scratch("img16.pgm"));
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            CHECK(std::abs(back16.pixels[i] - img.pixels[i]) < 1e-5);
    }

    TEST_CASE("score and pair CSV files")
    {
        const ScoreMatrix s = read_scores_csv(data_dir / "scores.csv");
        CHECK(s.scores.rows() == 2);
        CHECK(s.scores.cols() == 3);
        CHECK(s.gallery_labels[2] == "s003");
        CHECK(s.probe_labels[1] == "s002:a");
        CHECK(s.scores(1, 1) == 0.8);
        write_scores_csv(scratch("scores.csv"), s);
        const ScoreMatrix back = read_scores_csv(scratch("scores.csv"));
        CHECK(back.scores == s.scores);
        CHECK(back.gallery_labels == s.gallery_labels);

        std::ofstream(scratch("ragged.csv")) << "probe,a,b\nx,1\n";
        CHECK_THROWS_AS(read_scores_csv(scratch("ragged.csv")), ParseError);

        const auto pairs = read_pairs_csv(data_dir / "pairs.csv");
        REQUIRE(pairs.size() == 2);
        CHECK(pairs[0].same);
        CHECK_FALSE(pairs[0].score.has_value());
        CHECK_FALSE(pairs[1].same);
        CHECK(*pairs[1].score == 0.25);
    }

    TEST_CASE("mapping text round trip is exact")
    {
        std::mt19937_64 rng(3);
        MappingMatrix m;
        m.entries = oracle::randn(2, 4, rng);
        write_mapping(scratch("map.txt"), m);
        CHECK(read_mapping(scratch("map.txt")).entries == m.entries);
    }

    TEST_CASE("prior files")
    {
        const SynthTopology topo = synth_topology({10, 11, 1});
        const Shape3D face = synth_pen_shape(topo, {});
        std::mt19937_64 rng(4);
        const ShapePrior p = make_shape_prior(face.as_vector(), oracle::randn(2, 68, rng, 30.0),
                                              topo.landmark_indices, topo.triangles);
        write_prior(scratch("prior.txt"), p);
        const ShapePrior q = read_prior(scratch("prior.txt"));
        CHECK(q.mean_pen_shape == p.mean_pen_shape);
        CHECK(q.mean_landmarks_2d == p.mean_landmarks_2d);
        CHECK(q.landmark_indices == p.landmark_indices);
        CHECK(q.triangles == p.triangles);

        // Adjacency-only priors.
        std::vector<std::vector<int>> ring(4);
        for (int i = 0; i < 4; ++i)
            ring[static_cast<std::size_t>(i)] = {(i + 1) % 4, (i + 3) % 4};
        const ShapePrior r = make_shape_prior(oracle::randn(12, 1, rng), oracle::randn(2, 2, rng), {0, 2}, {}, ring);
        write_prior(scratch("ring.txt"), r);
        CHECK(read_prior(scratch("ring.txt")).adjacency == r.adjacency);
    }

    TEST_CASE("manifest files")
    {
        const Manifest m = read_manifest(data_dir / "manifest.tsv");
        REQUIRE(m.entries.size() == 1);
        const ManifestEntry& e = m.entries[0];
        CHECK(e.bbox.width == 2.0);
        CHECK(e.yaw == -30.0);
        CHECK(e.subject == "s001");
        CHECK(e.fold == 3);
        CHECK(fs::exists(m.resolve(e.pen)));
        CHECK_THROWS_AS(read_manifest(data_dir / "manifest_missing.tsv"), ParseError);

        write_manifest(scratch("manifest_copy.tsv"), m);
        std::ifstream in(scratch("manifest_copy.tsv"));
        std::string header;
        std::getline(in, header);
        CHECK(header == "image\tbbox_x\tbbox_y\tbbox_w\tbbox_h\tlandmarks\tpen\texpr\tyaw\tsubject\tfold");
    }

    TEST_CASE("synthetic dataset on disk loads back consistently")
    {
        SynthConfig cfg;
        cfg.subjects = 3;
        cfg.expressions = 1;
        cfg.image_size = 64;
        cfg.yaws = {-90, 0, 90};
        cfg.face = {12, 13, 0};
        const SynthDataset d = synth_dataset(cfg);
        const fs::path dir = scratch("synth");
        fs::remove_all(dir);
        write_synth_dataset(d, dir, 3, 1);
        const Manifest m = read_manifest(dir / "manifest.tsv");
        CHECK(m.entries.size() == d.samples.size());
        const ShapePrior prior = read_prior(dir / "prior.txt");
        const auto loaded = load_samples(m, prior);
        REQUIRE(loaded.size() == d.samples.size());
        for (std::size_t i = 0; i < loaded.size(); ++i) {
            CHECK((loaded[i].expressive.vertices - d.samples[i].expressive.vertices).cwiseAbs().maxCoeff() < 1e-6);
            CHECK(loaded[i].sample.target_landmarks.visible == d.samples[i].sample.target_landmarks.visible);
            const Eigen::VectorXd offset = loaded[i].sample.target.expression_offset;
            const Eigen::VectorXd want = d.samples[i].sample.target.expression_offset;
            CHECK((offset - want).cwiseAbs().maxCoeff() < 1e-5);
        }
        const auto fold0 = load_samples(m, prior, {0}, false);
        CHECK(fold0.size() < loaded.size());
        for (const auto& s : fold0)
            CHECK(s.fold == 0);
    }
}
