/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: include/jafr/io.hpp
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

#ifndef JAFR_IO_HPP
#define JAFR_IO_HPP

#include "jafr/camera.hpp"
#include "jafr/cascade.hpp"
#include "jafr/features.hpp"
#include "jafr/recognition.hpp"
#include "jafr/shape_model.hpp"

#include <filesystem>
#include <ostream>
#include <optional>
#include <string>
#include <vector>

namespace jafr {

struct Mesh
{
    Shape3D shape;
    std::vector<Triangle> triangles;
};

/**
 * Reads an ASCII OBJ (v / f lines; other records ignored) or ASCII PLY,
 * chosen by extension. Polygons are fan-triangulated. Throws ParseError
 * with the offending line number, and DimensionError if \p expected_vertices
 * is nonzero and differs.
 */
Mesh read_mesh(const std::filesystem::path& path, std::size_t expected_vertices = 0);

/// Writes OBJ or PLY (by extension) with 9 significant digits.
void write_mesh(const std::filesystem::path& path, const Shape3D& shape, const std::vector<Triangle>& triangles = {});

/// One line per landmark: "u v visible" with visible 0 or 1.
LandmarkSet2D read_landmarks(const std::filesystem::path& path, std::size_t expected_count = 0);
void write_landmarks(const std::filesystem::path& path, const LandmarkSet2D& landmarks);

/// PGM P2 or P5, 8 or 16 bit. Intensities are divided by maxval.
GrayImage read_image(const std::filesystem::path& path);
/// Writes binary P5; \p maxval is 255 or 65535. Values are clamped to [0, 1].
void write_pgm(const std::filesystem::path& path, const GrayImage& image, int maxval = 255);

/// Header row: "probe" then gallery labels; each further row: probe label then scores.
ScoreMatrix read_scores_csv(const std::filesystem::path& path);
void write_scores_csv(const std::filesystem::path& path, const ScoreMatrix& scores);
void write_scores_csv(std::ostream& os, const ScoreMatrix& scores);

struct VerificationPair
{
    std::string a;
    std::string b;
    bool same = false;
    std::optional<double> score; ///< optional fourth column: an external 2D score
};

/// Lines "path_a,path_b,same[,score]"; an optional header starting with "path_a" is skipped.
std::vector<VerificationPair> read_pairs_csv(const std::filesystem::path& path);

/// Two lines of four numbers, full double precision.
void write_mapping(const std::filesystem::path& path, const MappingMatrix& mapping);
MappingMatrix read_mapping(const std::filesystem::path& path);

/**
 * Text prior file:
 *
 *     jafr-prior 1
 *     vertices <n>          then n lines "x y z"
 *     landmarks <l>         then l lines "vertex_index u v"
 *     triangles <t>         then t lines "a b c"
 *     adjacency <n>         only when t = 0; n lines "k v1 ... vk"
 */
ShapePrior read_prior(const std::filesystem::path& path);
void write_prior(const std::filesystem::path& path, const ShapePrior& prior);

struct ManifestEntry
{
    std::string image;     ///< paths relative to the manifest's directory
    BoundingBox bbox;
    std::string landmarks;
    std::string pen;       ///< PEN (neutral, frontal) mesh
    std::string expr;      ///< expressive mesh of the same sample
    double yaw = 0.0;
    std::string subject;
    int fold = 0;
};

struct Manifest
{
    std::filesystem::path base; ///< directory that relative paths resolve against
    std::vector<ManifestEntry> entries;

    std::filesystem::path resolve(const std::string& p) const;
};

/// Tab-separated, one header line. Throws ParseError if a referenced file is missing.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct LoadedSample
{
    TrainingSample sample;
    Shape3D pen;
    Shape3D expressive;
    double yaw = 0.0;
    std::string subject;
    int fold = 0;
    std::string id; ///< image path as written in the manifest
};

/**
 * Loads the entries whose fold is listed in \p folds (all entries when it
 * is empty). Every mesh and landmark file is checked against the prior's
 * vertex and landmark counts.
 */
std::vector<LoadedSample> load_samples(const Manifest& manifest, const ShapePrior& prior,
                                       const std::vector<int>& folds = {}, bool load_images = true);

} // namespace jafr

#endif /* JAFR_IO_HPP */
