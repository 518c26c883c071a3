/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: src/model_io.cpp
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

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace jafr {

namespace {

constexpr std::array<char, 8> magic = {'J', 'A', 'F', 'R', 'C', 'C', 'R', '\0'};

// Bytes are assembled by shifting, so the file is little-endian on any host.
class Writer
{
public:
    void bytes(const void* p, std::size_t n)
    {
        const auto* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i)
            buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void matrix(const Eigen::MatrixXd& m)
    {
        u64(static_cast<std::uint64_t>(m.rows()));
        u64(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                f64(m(r, c));
    }
    const std::vector<unsigned char>& data() const { return buf_; }

private:
    std::vector<unsigned char> buf_;
};

class Reader
{
public:
    explicit Reader(std::vector<unsigned char> data) : buf_(std::move(data)) {}

    void need(std::size_t n, const char* what) const
    {
        if (buf_.size() - pos_ < n)
            throw ParseError("model file truncated while reading " + std::string(what) + " at byte " +
                             std::to_string(pos_));
    }
    void bytes(void* out, std::size_t n, const char* what)
    {
        need(n, what);
        std::memcpy(out, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32(const char* what)
    {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what)
    {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::int32_t i32(const char* what) { return static_cast<std::int32_t>(u32(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    std::size_t count(const char* what, std::size_t elem_bytes)
    {
        const std::uint64_t n = u64(what);
        if (elem_bytes > 0 && n > (buf_.size() - pos_) / elem_bytes)
            throw ParseError("model file declares " + std::to_string(n) + " " + what + " but is too short");
        return static_cast<std::size_t>(n);
    }
    Eigen::MatrixXd matrix(const char* what)
    {
        const std::uint64_t rows = u64(what);
        const std::uint64_t cols = u64(what);
        if (rows != 0 && cols > (buf_.size() - pos_) / 8 / rows)
            throw ParseError("model file truncated in " + std::string(what) + " (" + std::to_string(rows) + "x" +
                             std::to_string(cols) + ")");
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                m(r, c) = f64(what);
        return m;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
};

} // namespace

void save_model(const CascadeModel& model, const std::filesystem::path& path)
{
    model.validate();
    const auto& prior = model.prior;
    const auto& fc = model.feature_config;
    Writer w;
    w.bytes(magic.data(), magic.size());
    w.u32(CascadeModel::format_version);
    w.u32(static_cast<std::uint32_t>(model.stages.size()));
    w.u64(prior.num_vertices());
    w.u64(prior.num_landmarks());
    w.u64(fc.descriptor_dim());
    w.u32(static_cast<std::uint32_t>(model.ridge_mode));
    w.f64(model.ridge);

    w.i32(fc.patch_size);
    w.i32(fc.cells);
    w.i32(fc.orientation_bins);
    w.f64(fc.clamp);
    w.u32(fc.patch_scales_with_bbox ? 1u : 0u);
    w.f64(fc.patch_bbox_ratio);

    w.matrix(prior.mean_pen_shape);
    w.matrix(prior.mean_landmarks_2d);
    for (int idx : prior.landmark_indices)
        w.i32(idx);
    w.u64(prior.triangles.size());
    for (const auto& t : prior.triangles)
        for (int v : t)
            w.i32(v);
    if (prior.triangles.empty()) {
        for (const auto& nb : prior.adjacency) {
            w.u64(nb.size());
            for (int v : nb)
                w.i32(v);
        }
    }

    for (const auto& s : model.stages) {
        w.matrix(s.landmark.weights);
        w.matrix(s.shape.weights);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
    if (!out)
        throw Error("failed writing " + path.string());
}

CascadeModel load_model(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open model file " + path.string());
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(data));

    std::array<char, 8> m{};
    r.bytes(m.data(), m.size(), "magic");
    if (m != magic)
        throw ParseError(path.string() + " is not a jafr model file");
    const std::uint32_t version = r.u32("version");
    if (version != CascadeModel::format_version)
        throw VersionError("model format version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(CascadeModel::format_version) + ")");

    const std::uint32_t k = r.u32("stage count");
    const std::uint64_t n = r.u64("vertex count");
    const std::uint64_t l = r.u64("landmark count");
    const std::uint64_t ddim = r.u64("descriptor dim");

    CascadeModel model;
    const std::uint32_t mode = r.u32("ridge mode");
    if (mode > 1)
        throw ParseError("unknown ridge mode " + std::to_string(mode));
    model.ridge_mode = static_cast<RidgeMode>(mode);
    model.ridge = r.f64("ridge");

    auto& fc = model.feature_config;
    fc.patch_size = r.i32("feature config");
    fc.cells = r.i32("feature config");
    fc.orientation_bins = r.i32("feature config");
    fc.clamp = r.f64("feature config");
    fc.patch_scales_with_bbox = r.u32("feature config") != 0;
    fc.patch_bbox_ratio = r.f64("feature config");
    if (fc.descriptor_dim() != ddim)
        throw ParseError("descriptor dim " + std::to_string(ddim) + " disagrees with the stored feature config");

    auto& prior = model.prior;
    const Eigen::MatrixXd mean = r.matrix("mean shape");
    if (mean.cols() != 1 || static_cast<std::uint64_t>(mean.rows()) != 3 * n)
        throw ParseError("mean shape does not have 3n entries");
    prior.mean_pen_shape = mean.col(0);
    const Eigen::MatrixXd lms = r.matrix("landmark template");
    if (lms.rows() != 2 || static_cast<std::uint64_t>(lms.cols()) != l)
        throw ParseError("landmark template is not 2 x l");
    prior.mean_landmarks_2d = lms;
    r.need(4 * l, "landmark indices");
    prior.landmark_indices.resize(l);
    for (auto& idx : prior.landmark_indices)
        idx = r.i32("landmark indices");
    const std::size_t num_tris = r.count("triangles", 12);
    prior.triangles.resize(num_tris);
    for (auto& t : prior.triangles)
        for (int& v : t)
            v = r.i32("triangles");
    if (num_tris == 0) {
        prior.adjacency.resize(n);
        for (auto& nb : prior.adjacency) {
            nb.resize(r.count("adjacency", 4));
            for (int& v : nb)
                v = r.i32("adjacency");
        }
    } else {
        for (const auto& t : prior.triangles)
            for (int v : t)
                if (v < 0 || static_cast<std::uint64_t>(v) >= n)
                    throw ParseError("triangle references vertex " + std::to_string(v));
        prior.adjacency = adjacency_from_triangles(n, prior.triangles);
    }

    model.stages.resize(k);
    for (auto& s : model.stages) {
        s.landmark.weights = r.matrix("landmark regressor");
        s.shape.weights = r.matrix("shape regressor");
    }
    if (!r.at_end())
        throw ParseError("trailing bytes after the last stage in " + path.string());

    try {
        model.validate();
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw ParseError(std::string("inconsistent model file: ") + e.what());
    }
    return model;
}

} // namespace jafr
