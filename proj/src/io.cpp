/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: src/io.cpp
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
#include "jafr/io.hpp"
#include "jafr/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string_view>

namespace fs = std::filesystem;

namespace jafr {

namespace {

std::string where(const fs::path& path, std::size_t line)
{
    return path.string() + ":" + std::to_string(line) + ": ";
}

std::vector<std::string_view> split_ws(std::string_view s)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r'))
            ++i;
        const std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r')
            ++i;
        if (i > start)
            out.push_back(s.substr(start, i - start));
    }
    return out;
}

std::vector<std::string> split_on(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::optional<double> to_double(std::string_view s)
{
    if (!s.empty() && s.front() == '+')
        s.remove_prefix(1);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
        return std::nullopt;
    return v;
}

std::optional<long long> to_int(std::string_view s)
{
    long long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        return std::nullopt;
    return v;
}

double need_double(std::string_view s, const fs::path& path, std::size_t line)
{
    const auto v = to_double(s);
    if (!v)
        throw ParseError(where(path, line) + "expected a number, got '" + std::string(s) + "'");
    return *v;
}

long long need_int(std::string_view s, const fs::path& path, std::size_t line)
{
    const auto v = to_int(s);
    if (!v)
        throw ParseError(where(path, line) + "expected an integer, got '" + std::string(s) + "'");
    return *v;
}

std::vector<std::string> read_lines(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        lines.push_back(line);
    return lines;
}

std::ofstream open_out(const fs::path& path, bool binary = false)
{
    std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out)
        throw Error("cannot open " + path.string() + " for writing");
    return out;
}

std::string num(double v, int digits)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string lower_ext(const fs::path& path)
{
    std::string e = path.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
}

void add_polygon(std::vector<Triangle>& tris, const std::vector<int>& poly)
{
    for (std::size_t k = 1; k + 1 < poly.size(); ++k)
        tris.push_back({poly[0], poly[k], poly[k + 1]});
}

Mesh read_obj(const fs::path& path)
{
    const auto lines = read_lines(path);
    std::vector<Eigen::Vector3d> verts;
    std::vector<std::pair<std::vector<int>, std::size_t>> faces;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t ln = i + 1;
        const auto tok = split_ws(lines[i]);
        if (tok.empty() || tok[0].front() == '#')
            continue;
        if (tok[0] == "v") {
            if (tok.size() < 4)
                throw ParseError(where(path, ln) + "vertex line needs three coordinates");
            verts.emplace_back(need_double(tok[1], path, ln), need_double(tok[2], path, ln),
                               need_double(tok[3], path, ln));
        } else if (tok[0] == "f") {
            if (tok.size() < 4)
                throw ParseError(where(path, ln) + "face line needs at least three vertices");
            std::vector<int> poly;
            for (std::size_t k = 1; k < tok.size(); ++k) {
                const auto slash = tok[k].find('/');
                poly.push_back(static_cast<int>(need_int(tok[k].substr(0, slash), path, ln)));
            }
            faces.emplace_back(std::move(poly), ln);
        }
    }
    Mesh m;
    m.shape.vertices.resize(3, static_cast<Eigen::Index>(verts.size()));
    for (std::size_t j = 0; j < verts.size(); ++j)
        m.shape.vertices.col(static_cast<Eigen::Index>(j)) = verts[j];
    const auto n = static_cast<long long>(verts.size());
    for (auto& [poly, ln] : faces) {
        for (int& v : poly) {
            // OBJ indices are 1-based; negative ones count back from the end.
            const long long idx = v > 0 ? v - 1 : n + v;
            if (v == 0 || idx < 0 || idx >= n)
                throw ParseError(where(path, ln) + "face references vertex " + std::to_string(v) + " of " +
                                 std::to_string(n));
            v = static_cast<int>(idx);
        }
        add_polygon(m.triangles, poly);
    }
    return m;
}

Mesh read_ply(const fs::path& path)
{
    const auto lines = read_lines(path);
    if (lines.empty() || split_ws(lines[0]).empty() || split_ws(lines[0])[0] != "ply")
        throw ParseError(where(path, 1) + "missing 'ply' magic");
    std::size_t nv = 0, nf = 0;
    std::size_t i = 1;
    std::string current;
    std::vector<std::string> vprops;
    for (; i < lines.size(); ++i) {
        const std::size_t ln = i + 1;
        const auto tok = split_ws(lines[i]);
        if (tok.empty())
            continue;
        if (tok[0] == "format") {
            if (tok.size() < 2 || tok[1] != "ascii")
                throw ParseError(where(path, ln) + "only ascii PLY is supported");
        } else if (tok[0] == "element") {
            if (tok.size() < 3)
                throw ParseError(where(path, ln) + "malformed element line");
            current = std::string(tok[1]);
            const auto count = static_cast<std::size_t>(need_int(tok[2], path, ln));
            if (current == "vertex")
                nv = count;
            else if (current == "face")
                nf = count;
            else if (count > 0)
                throw ParseError(where(path, ln) + "unsupported element '" + current + "'");
        } else if (tok[0] == "property" && current == "vertex") {
            vprops.emplace_back(tok.back());
        } else if (tok[0] == "end_header") {
            ++i;
            break;
        }
    }
    const auto col = [&](const char* name) {
        const auto it = std::find(vprops.begin(), vprops.end(), name);
        if (it == vprops.end())
            throw ParseError(path.string() + ": vertex element lacks property " + name);
        return static_cast<std::size_t>(it - vprops.begin());
    };
    const std::size_t cx = col("x"), cy = col("y"), cz = col("z");

    Mesh m;
    m.shape.vertices.resize(3, static_cast<Eigen::Index>(nv));
    std::size_t read_v = 0, read_f = 0;
    for (; i < lines.size() && (read_v < nv || read_f < nf); ++i) {
        const std::size_t ln = i + 1;
        const auto tok = split_ws(lines[i]);
        if (tok.empty())
            continue;
        if (read_v < nv) {
            if (tok.size() < vprops.size())
                throw ParseError(where(path, ln) + "vertex line has " + std::to_string(tok.size()) + " values, expected " +
                                 std::to_string(vprops.size()));
            m.shape.vertices.col(static_cast<Eigen::Index>(read_v++)) =
                Eigen::Vector3d(need_double(tok[cx], path, ln), need_double(tok[cy], path, ln),
                                need_double(tok[cz], path, ln));
        } else {
            const auto k = static_cast<std::size_t>(need_int(tok[0], path, ln));
            if (k < 3 || tok.size() != k + 1)
                throw ParseError(where(path, ln) + "malformed face line");
            std::vector<int> poly;
            for (std::size_t j = 1; j <= k; ++j) {
                const long long v = need_int(tok[j], path, ln);
                if (v < 0 || v >= static_cast<long long>(nv))
                    throw ParseError(where(path, ln) + "face references vertex " + std::to_string(v));
                poly.push_back(static_cast<int>(v));
            }
            add_polygon(m.triangles, poly);
            ++read_f;
        }
    }
    if (read_v < nv || read_f < nf)
        throw ParseError(path.string() + ": file ends after " + std::to_string(read_v) + " of " + std::to_string(nv) +
                         " vertices and " + std::to_string(read_f) + " of " + std::to_string(nf) + " faces");
    return m;
}

} // namespace

Mesh read_mesh(const fs::path& path, std::size_t expected_vertices)
{
    const std::string ext = lower_ext(path);
    Mesh m;
    if (ext == ".obj")
        m = read_obj(path);
    else if (ext == ".ply")
        m = read_ply(path);
    else
        throw InvalidArgument("unsupported mesh extension '" + ext + "' for " + path.string());
    if (expected_vertices != 0 && m.shape.num_vertices() != expected_vertices)
        throw DimensionError(path.string() + ": mesh has " + std::to_string(m.shape.num_vertices()) +
                             " vertices, expected " + std::to_string(expected_vertices));
    return m;
}

void write_mesh(const fs::path& path, const Shape3D& shape, const std::vector<Triangle>& triangles)
{
    const std::string ext = lower_ext(path);
    if (ext != ".obj" && ext != ".ply")
        throw InvalidArgument("unsupported mesh extension '" + ext + "' for " + path.string());
    std::ostringstream os;
    const auto& v = shape.vertices;
    if (ext == ".ply") {
        os << "ply\nformat ascii 1.0\nelement vertex " << v.cols()
           << "\nproperty double x\nproperty double y\nproperty double z\nelement face " << triangles.size()
           << "\nproperty list uchar int vertex_indices\nend_header\n";
    }
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        if (ext == ".obj")
            os << "v ";
        os << num(v(0, j), 9) << ' ' << num(v(1, j), 9) << ' ' << num(v(2, j), 9) << '\n';
    }
    for (const auto& t : triangles) {
        if (ext == ".obj")
            os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
        else
            os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    }
    auto out = open_out(path);
    out << os.str();
}

LandmarkSet2D read_landmarks(const fs::path& path, std::size_t expected_count)
{
    const auto lines = read_lines(path);
    std::vector<Eigen::Vector2d> pts;
    std::vector<bool> vis;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t ln = i + 1;
        const auto tok = split_ws(lines[i]);
        if (tok.empty() || tok[0].front() == '#')
            continue;
        if (tok.size() != 3)
            throw ParseError(where(path, ln) + "expected 'u v visible', got " + std::to_string(tok.size()) +
                             " fields");
        pts.emplace_back(need_double(tok[0], path, ln), need_double(tok[1], path, ln));
        if (tok[2] != "0" && tok[2] != "1")
            throw ParseError(where(path, ln) + "visibility must be 0 or 1, got '" + std::string(tok[2]) + "'");
        vis.push_back(tok[2] == "1");
    }
    if (expected_count != 0 && pts.size() != expected_count)
        throw DimensionError(path.string() + ": " + std::to_string(pts.size()) + " landmarks, expected " +
                             std::to_string(expected_count));
    LandmarkSet2D out;
    out.points.resize(2, static_cast<Eigen::Index>(pts.size()));
    for (std::size_t j = 0; j < pts.size(); ++j)
        out.points.col(static_cast<Eigen::Index>(j)) = pts[j];
    out.visible = std::move(vis);
    return out;
}

void write_landmarks(const fs::path& path, const LandmarkSet2D& landmarks)
{
    if (landmarks.visible.size() != landmarks.size())
        throw DimensionError("landmark visibility does not match point count");
    std::ostringstream os;
    for (std::size_t j = 0; j < landmarks.size(); ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        os << num(landmarks.points(0, c), 9) << ' ' << num(landmarks.points(1, c), 9) << ' '
           << (landmarks.visible[j] ? 1 : 0) << '\n';
    }
    auto out = open_out(path);
    out << os.str();
}

GrayImage read_image(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open image " + path.string());
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    auto next_token = [&]() {
        for (;;) {
            while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos])))
                ++pos;
            if (pos < data.size() && data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n')
                    ++pos;
                continue;
            }
            break;
        }
        const std::size_t start = pos;
        while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos])))
            ++pos;
        if (start == pos)
            throw ParseError(path.string() + ": truncated PGM header");
        return std::string_view(data).substr(start, pos - start);
    };
    const auto magic = next_token();
    if (magic != "P2" && magic != "P5")
        throw ParseError(path.string() + ": unsupported image magic '" + std::string(magic) + "' (PGM P2/P5 only)");
    auto header_int = [&](const char* what) {
        const auto t = next_token();
        const auto v = to_int(t);
        if (!v || *v <= 0)
            throw ParseError(path.string() + ": bad PGM " + what + " '" + std::string(t) + "'");
        return *v;
    };
    const long long w = header_int("width");
    const long long h = header_int("height");
    const long long maxval = header_int("maxval");
    if (maxval > 65535)
        throw ParseError(path.string() + ": PGM maxval " + std::to_string(maxval) + " exceeds 65535");

    GrayImage img(static_cast<int>(w), static_cast<int>(h));
    const auto count = static_cast<std::size_t>(w * h);
    const double scale = 1.0 / static_cast<double>(maxval);
    if (magic == "P5") {
        ++pos; // single whitespace after maxval
        const std::size_t bpp = maxval < 256 ? 1 : 2;
        if (data.size() < pos + count * bpp)
            throw ParseError(path.string() + ": truncated P5 payload (" + std::to_string(data.size() - pos) +
                             " of " + std::to_string(count * bpp) + " bytes)");
        for (std::size_t k = 0; k < count; ++k) {
            unsigned v = static_cast<unsigned char>(data[pos + k * bpp]);
            if (bpp == 2)
                v = (v << 8) | static_cast<unsigned char>(data[pos + k * bpp + 1]);
            if (v > maxval)
                throw ParseError(path.string() + ": sample exceeds maxval");
            img.pixels[k] = v * scale;
        }
    } else {
        for (std::size_t k = 0; k < count; ++k) {
            const auto t = next_token();
            const auto v = to_int(t);
            if (!v || *v < 0 || *v > maxval)
                throw ParseError(path.string() + ": bad P2 sample '" + std::string(t) + "'");
            img.pixels[k] = static_cast<double>(*v) * scale;
        }
    }
    return img;
}

void write_pgm(const fs::path& path, const GrayImage& image, int maxval)
{
    if (maxval != 255 && maxval != 65535)
        throw InvalidArgument("PGM maxval must be 255 or 65535");
    std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" +
                      std::to_string(maxval) + "\n";
    for (double p : image.pixels) {
        const auto v = static_cast<unsigned>(std::lround(std::clamp(p, 0.0, 1.0) * maxval));
        if (maxval == 65535)
            out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v & 0xff));
    }
    auto f = open_out(path, true);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

ScoreMatrix read_scores_csv(const fs::path& path)
{
    auto lines = read_lines(path);
    while (!lines.empty() && lines.back().find_first_not_of(" \r\t") == std::string::npos)
        lines.pop_back();
    if (lines.empty())
        throw ParseError(path.string() + ": empty score file");
    ScoreMatrix m;
    auto header = split_on(lines[0], ',');
    m.gallery_labels.assign(header.begin() + 1, header.end());
    const auto cols = m.gallery_labels.size();
    if (cols == 0)
        throw ParseError(where(path, 1) + "header has no gallery labels");
    m.scores.resize(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = split_on(lines[i], ',');
        if (cells.size() != cols + 1)
            throw ParseError(where(path, i + 1) + std::to_string(cells.size() - 1) + " scores, expected " +
                             std::to_string(cols));
        m.probe_labels.push_back(cells[0]);
        for (std::size_t j = 0; j < cols; ++j)
            m.scores(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j)) =
                need_double(cells[j + 1], path, i + 1);
    }
    return m;
}

void write_scores_csv(std::ostream& os, const ScoreMatrix& scores)
{
    scores.validate();
    os << "probe";
    for (const auto& g : scores.gallery_labels)
        os << ',' << g;
    os << '\n';
    for (Eigen::Index r = 0; r < scores.scores.rows(); ++r) {
        os << scores.probe_labels[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < scores.scores.cols(); ++c)
            os << ',' << num(scores.scores(r, c), 17);
        os << '\n';
    }
}

void write_scores_csv(const fs::path& path, const ScoreMatrix& scores)
{
    std::ostringstream os;
    write_scores_csv(os, scores);
    auto out = open_out(path);
    out << os.str();
}

std::vector<VerificationPair> read_pairs_csv(const fs::path& path)
{
    const auto lines = read_lines(path);
    std::vector<VerificationPair> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].find_first_not_of(" \r\t") == std::string::npos)
            continue;
        const auto cells = split_on(lines[i], ',');
        if (out.empty() && !cells.empty() && cells[0] == "path_a")
            continue;
        if (cells.size() != 3 && cells.size() != 4)
            throw ParseError(where(path, i + 1) + "expected path_a,path_b,same[,score]");
        VerificationPair p;
        p.a = cells[0];
        p.b = cells[1];
        if (cells[2] != "0" && cells[2] != "1")
            throw ParseError(where(path, i + 1) + "same flag must be 0 or 1");
        p.same = cells[2] == "1";
        if (cells.size() == 4)
            p.score = need_double(cells[3], path, i + 1);
        out.push_back(std::move(p));
    }
    return out;
}

void write_mapping(const fs::path& path, const MappingMatrix& mapping)
{
    std::ostringstream os;
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 4; ++c)
            os << (c ? " " : "") << num(mapping.entries(r, c), 17);
        os << '\n';
    }
    auto out = open_out(path);
    out << os.str();
}

MappingMatrix read_mapping(const fs::path& path)
{
    const auto lines = read_lines(path);
    MappingMatrix m;
    int row = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto tok = split_ws(lines[i]);
        if (tok.empty())
            continue;
        if (row >= 2 || tok.size() != 4)
            throw ParseError(where(path, i + 1) + "mapping must be two lines of four numbers");
        for (int c = 0; c < 4; ++c)
            m.entries(row, c) = need_double(tok[static_cast<std::size_t>(c)], path, i + 1);
        ++row;
    }
    if (row != 2)
        throw ParseError(path.string() + ": mapping must be two lines of four numbers");
    return m;
}

ShapePrior read_prior(const fs::path& path)
{
    const auto lines = read_lines(path);
    std::size_t i = 0;
    auto next = [&]() -> std::pair<std::vector<std::string_view>, std::size_t> {
        while (i < lines.size()) {
            auto tok = split_ws(lines[i]);
            ++i;
            if (!tok.empty() && tok[0].front() != '#')
                return {tok, i};
        }
        throw ParseError(path.string() + ": unexpected end of prior file");
    };
    auto section = [&](const char* name) {
        auto [tok, ln] = next();
        if (tok.size() != 2 || tok[0] != name)
            throw ParseError(where(path, ln) + "expected '" + name + " <count>'");
        const long long c = need_int(tok[1], path, ln);
        if (c < 0)
            throw ParseError(where(path, ln) + "negative count");
        return static_cast<std::size_t>(c);
    };

    {
        auto [tok, ln] = next();
        if (tok.size() != 2 || tok[0] != "jafr-prior")
            throw ParseError(where(path, ln) + "missing 'jafr-prior' header");
        if (tok[1] != "1")
            throw VersionError(path.string() + ": prior format version " + std::string(tok[1]) + " is not supported");
    }
    const std::size_t n = section("vertices");
    Eigen::VectorXd mean(static_cast<Eigen::Index>(3 * n));
    for (std::size_t j = 0; j < n; ++j) {
        auto [tok, ln] = next();
        if (tok.size() != 3)
            throw ParseError(where(path, ln) + "vertex line needs three coordinates");
        for (int c = 0; c < 3; ++c)
            mean(static_cast<Eigen::Index>(3 * j + c)) = need_double(tok[static_cast<std::size_t>(c)], path, ln);
    }
    const std::size_t l = section("landmarks");
    Eigen::Matrix2Xd tmpl(2, static_cast<Eigen::Index>(l));
    std::vector<int> idx(l);
    for (std::size_t j = 0; j < l; ++j) {
        auto [tok, ln] = next();
        if (tok.size() != 3)
            throw ParseError(where(path, ln) + "landmark line needs 'index u v'");
        idx[j] = static_cast<int>(need_int(tok[0], path, ln));
        tmpl(0, static_cast<Eigen::Index>(j)) = need_double(tok[1], path, ln);
        tmpl(1, static_cast<Eigen::Index>(j)) = need_double(tok[2], path, ln);
    }
    const std::size_t t = section("triangles");
    std::vector<Triangle> tris(t);
    for (auto& tri : tris) {
        auto [tok, ln] = next();
        if (tok.size() != 3)
            throw ParseError(where(path, ln) + "triangle line needs three indices");
        for (int c = 0; c < 3; ++c)
            tri[static_cast<std::size_t>(c)] = static_cast<int>(need_int(tok[static_cast<std::size_t>(c)], path, ln));
    }
    std::vector<std::vector<int>> adj;
    if (t == 0) {
        const std::size_t na = section("adjacency");
        if (na != n)
            throw ParseError(path.string() + ": adjacency has " + std::to_string(na) + " lists for " +
                             std::to_string(n) + " vertices");
        adj.resize(n);
        for (auto& nb : adj) {
            auto [tok, ln] = next();
            const long long k = need_int(tok[0], path, ln);
            if (k < 0 || static_cast<std::size_t>(k) + 1 != tok.size())
                throw ParseError(where(path, ln) + "adjacency line count does not match its entries");
            for (std::size_t c = 1; c < tok.size(); ++c)
                nb.push_back(static_cast<int>(need_int(tok[c], path, ln)));
        }
    }
    try {
        return make_shape_prior(std::move(mean), std::move(tmpl), std::move(idx), std::move(tris), std::move(adj));
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void write_prior(const fs::path& path, const ShapePrior& prior)
{
    prior.validate();
    std::ostringstream os;
    const auto n = prior.num_vertices();
    os << "jafr-prior 1\nvertices " << n << '\n';
    for (std::size_t j = 0; j < n; ++j) {
        const auto b = static_cast<Eigen::Index>(3 * j);
        os << num(prior.mean_pen_shape(b), 17) << ' ' << num(prior.mean_pen_shape(b + 1), 17) << ' '
           << num(prior.mean_pen_shape(b + 2), 17) << '\n';
    }
    os << "landmarks " << prior.num_landmarks() << '\n';
    for (std::size_t j = 0; j < prior.num_landmarks(); ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        os << prior.landmark_indices[j] << ' ' << num(prior.mean_landmarks_2d(0, c), 17) << ' '
           << num(prior.mean_landmarks_2d(1, c), 17) << '\n';
    }
    os << "triangles " << prior.triangles.size() << '\n';
    for (const auto& t : prior.triangles)
        os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    if (prior.triangles.empty()) {
        os << "adjacency " << prior.adjacency.size() << '\n';
        for (const auto& nb : prior.adjacency) {
            os << nb.size();
            for (int v : nb)
                os << ' ' << v;
            os << '\n';
        }
    }
    auto out = open_out(path);
    out << os.str();
}

fs::path Manifest::resolve(const std::string& p) const
{
    const fs::path q(p);
    return q.is_absolute() ? q : base / q;
}

namespace {

constexpr const char* manifest_header = "image\tbbox_x\tbbox_y\tbbox_w\tbbox_h\tlandmarks\tpen\texpr\tyaw\tsubject\tfold";

} // namespace

Manifest read_manifest(const fs::path& path)
{
    const auto lines = read_lines(path);
    Manifest m;
    m.base = path.parent_path();
    bool header_seen = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t ln = i + 1;
        if (lines[i].find_first_not_of(" \r\t") == std::string::npos || lines[i][0] == '#')
            continue;
        const auto cells = split_on(lines[i], '\t');
        if (!header_seen) {
            header_seen = true;
            if (cells[0] == "image")
                continue;
        }
        if (cells.size() != 11)
            throw ParseError(where(path, ln) + std::to_string(cells.size()) + " columns, expected 11");
        ManifestEntry e;
        e.image = cells[0];
        e.bbox = {need_double(cells[1], path, ln), need_double(cells[2], path, ln), need_double(cells[3], path, ln),
                  need_double(cells[4], path, ln)};
        if (!(e.bbox.width > 0.0 && e.bbox.height > 0.0))
            throw ParseError(where(path, ln) + "bounding box must have positive size");
        e.landmarks = cells[5];
        e.pen = cells[6];
        e.expr = cells[7];
        e.yaw = need_double(cells[8], path, ln);
        e.subject = cells[9];
        e.fold = static_cast<int>(need_int(cells[10], path, ln));
        for (const std::string* p : {&e.image, &e.landmarks, &e.pen, &e.expr})
            if (!p->empty() && !fs::exists(m.resolve(*p)))
                throw ParseError(where(path, ln) + "referenced file '" + *p + "' does not exist");
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest)
{
    std::ostringstream os;
    os << manifest_header << '\n';
    for (const auto& e : manifest.entries) {
        os << e.image << '\t' << num(e.bbox.x, 17) << '\t' << num(e.bbox.y, 17) << '\t' << num(e.bbox.width, 17)
           << '\t' << num(e.bbox.height, 17) << '\t' << e.landmarks << '\t' << e.pen << '\t' << e.expr << '\t'
           << num(e.yaw, 17) << '\t' << e.subject << '\t' << e.fold << '\n';
    }
    auto out = open_out(path);
    out << os.str();
}

std::vector<LoadedSample> load_samples(const Manifest& manifest, const ShapePrior& prior, const std::vector<int>& folds,
                                       bool load_images)
{
    const auto n = prior.num_vertices();
    const auto l = prior.num_landmarks();
    std::vector<LoadedSample> out;
    for (const auto& e : manifest.entries) {
        if (!folds.empty() && std::find(folds.begin(), folds.end(), e.fold) == folds.end())
            continue;
        LoadedSample s;
        s.id = e.image;
        s.yaw = e.yaw;
        s.subject = e.subject;
        s.fold = e.fold;
        s.sample.bbox = e.bbox;
        s.sample.target_landmarks = read_landmarks(manifest.resolve(e.landmarks), l);
        if (!e.pen.empty()) {
            s.pen = read_mesh(manifest.resolve(e.pen), n).shape;
            s.expressive = e.expr.empty() ? s.pen : read_mesh(manifest.resolve(e.expr), n).shape;
            s.sample.target.identity = s.pen.as_vector();
            s.sample.target.expression_offset = s.expressive.as_vector() - s.pen.as_vector();
        }
        if (load_images)
            s.sample.image = read_image(manifest.resolve(e.image));
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace jafr
