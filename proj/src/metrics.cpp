/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: src/metrics.cpp
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
#include "jafr/metrics.hpp"
#include "jafr/error.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace jafr {

namespace {

std::string fmt(double v, int precision = 2)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

std::string pad(const std::string& s, std::size_t width)
{
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

} // namespace

double sample_mae(const Shape3D& gt, const Shape3D& est, AlignMode align, MaeNorm norm)
{
    if (gt.num_vertices() != est.num_vertices())
        throw DimensionError("MAE: ground truth has " + std::to_string(gt.num_vertices()) + " vertices, estimate " +
                             std::to_string(est.num_vertices()));
    if (gt.num_vertices() == 0)
        throw InvalidArgument("MAE of an empty shape");
    Eigen::Matrix3Xd aligned = est.vertices;
    if (align != AlignMode::none)
        aligned = procrustes_align(est.vertices, gt.vertices, align == AlignMode::similarity).aligned;
    const Eigen::Matrix3Xd diff = aligned - gt.vertices;
    const double n = static_cast<double>(gt.num_vertices());
    if (norm == MaeNorm::stacked)
        return diff.norm() / n;
    return diff.colwise().norm().sum() / n;
}

double mae(std::span<const EvalRecord> records, AlignMode align, MaeNorm norm)
{
    if (records.empty())
        throw InvalidArgument("MAE over no records");
    double sum = 0.0;
    for (const auto& r : records)
        sum += sample_mae(r.gt_shape, r.est_shape, align, norm);
    return sum / static_cast<double>(records.size());
}

NpdeMap npde_map(const Shape3D& gt, const Shape3D& est)
{
    if (gt.num_vertices() != est.num_vertices())
        throw DimensionError("NPDE: vertex counts differ");
    if (gt.num_vertices() == 0)
        throw InvalidArgument("NPDE of an empty shape");
    const double zmax = gt.vertices.row(2).maxCoeff();
    const double zmin = gt.vertices.row(2).minCoeff();
    if (!(zmax > zmin))
        throw InvalidArgument("NPDE: ground-truth depth range is zero");
    NpdeMap out;
    const auto n = gt.num_vertices();
    out.values.resize(n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        out.values[j] = std::abs(gt.vertices(2, c) - est.vertices(2, c)) / (zmax - zmin);
        sum += out.values[j];
    }
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (double v : out.values)
        var += (v - mean) * (v - mean);
    out.mean_percent = 100.0 * mean;
    out.std_percent = 100.0 * std::sqrt(var / static_cast<double>(n));
    return out;
}

double sample_nme(const LandmarkSet2D& gt, const LandmarkSet2D& est, const BoundingBox& bbox)
{
    if (gt.size() != est.size())
        throw DimensionError("NME: " + std::to_string(gt.size()) + " ground-truth vs " + std::to_string(est.size()) +
                             " estimated landmarks");
    if (gt.visible.size() != gt.size())
        throw DimensionError("NME: visibility flags do not match landmark count");
    const double d = bbox.side();
    if (!(d > 0.0))
        throw InvalidArgument("NME: degenerate bounding box");
    double sum = 0.0;
    std::size_t visible = 0;
    for (std::size_t j = 0; j < gt.size(); ++j) {
        if (!gt.visible[j])
            continue;
        const auto c = static_cast<Eigen::Index>(j);
        sum += (gt.points.col(c) - est.points.col(c)).norm();
        ++visible;
    }
    if (visible == 0)
        throw InvalidArgument("NME: sample has no visible ground-truth landmarks");
    return sum / static_cast<double>(visible) / d;
}

double nme(std::span<const EvalRecord> records)
{
    if (records.empty())
        throw InvalidArgument("NME over no records");
    double sum = 0.0;
    for (const auto& r : records)
        sum += sample_nme(r.gt_landmarks, r.est_landmarks, r.bbox);
    return sum / static_cast<double>(records.size());
}

std::string YawBucket::label() const
{
    return "[" + fmt(lo, 0) + "," + fmt(hi, 0) + (closed_hi ? "]" : ")");
}

bool YawBucket::contains(double abs_yaw) const
{
    return abs_yaw >= lo && (closed_hi ? abs_yaw <= hi : abs_yaw < hi);
}

std::vector<YawBucket> default_yaw_buckets()
{
    return {{0.0, 30.0, false}, {30.0, 60.0, false}, {60.0, 90.0, true}};
}

std::pair<double, double> mean_and_sample_std(std::span<const double> values)
{
    if (values.empty())
        throw InvalidArgument("mean of no values");
    double sum = 0.0;
    for (double v : values)
        sum += v;
    const double mean = sum / static_cast<double>(values.size());
    if (values.size() == 1)
        return {mean, 0.0};
    double var = 0.0;
    for (double v : values)
        var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / static_cast<double>(values.size() - 1))};
}

PoseBucketReport pose_bucket_report(std::span<const EvalRecord> records, std::span<const YawBucket> buckets,
                                    AlignMode align)
{
    const auto defaults = default_yaw_buckets();
    if (buckets.empty())
        buckets = defaults;

    PoseBucketReport report;
    std::vector<double> nmes, maes;
    for (const auto& b : buckets) {
        BucketRow row;
        row.bucket = b;
        double nme_sum = 0.0, mae_sum = 0.0;
        std::size_t with_shape = 0;
        for (const auto& r : records) {
            if (!b.contains(std::abs(r.yaw_degrees)))
                continue;
            ++row.count;
            nme_sum += sample_nme(r.gt_landmarks, r.est_landmarks, r.bbox);
            if (r.gt_shape.num_vertices() > 0) {
                mae_sum += sample_mae(r.gt_shape, r.est_shape, align);
                ++with_shape;
            }
        }
        if (row.count > 0) {
            row.nme = nme_sum / static_cast<double>(row.count);
            nmes.push_back(*row.nme);
        }
        if (with_shape > 0) {
            row.mae = mae_sum / static_cast<double>(with_shape);
            maes.push_back(*row.mae);
        }
        report.rows.push_back(row);
    }
    if (!nmes.empty()) {
        const auto [m, s] = mean_and_sample_std(nmes);
        report.nme_mean = m;
        report.nme_std = s;
    }
    if (!maes.empty()) {
        const auto [m, s] = mean_and_sample_std(maes);
        report.mae_mean = m;
        report.mae_std = s;
    }
    return report;
}

std::string PoseBucketReport::format_table(const std::string& method) const
{
    constexpr std::size_t w = 10;
    std::ostringstream os;
    auto cell = [&](const std::optional<double>& v, double scale) { return pad(v ? fmt(*v * scale) : "-", w); };

    std::string header = std::string("Method");
    header.resize(std::max<std::size_t>(header.size(), 20), ' ');
    os << header;
    for (const auto& r : rows)
        os << pad(r.bucket.label(), w);
    os << pad("Mean", w) << pad("Std", w) << '\n';

    auto line = [&](const std::string& name, auto getter, const std::optional<double>& mean,
                     const std::optional<double>& std_dev, double scale) {
        std::string label = name;
        label.resize(std::max<std::size_t>(label.size(), 20), ' ');
        os << label;
        for (const auto& r : rows)
            os << cell(getter(r), scale);
        os << cell(mean, scale) << cell(std_dev, scale) << '\n';
    };
    line(method + " NME(%)", [](const BucketRow& r) { return r.nme; }, nme_mean, nme_std, 100.0);
    if (mae_mean)
        line(method + " MAE(mm)", [](const BucketRow& r) { return r.mae; }, mae_mean, mae_std, 1.0);
    os << "samples             ";
    for (const auto& r : rows)
        os << pad(std::to_string(r.count), w);
    os << '\n';
    return os.str();
}

std::string PoseBucketReport::to_csv() const
{
    std::ostringstream os;
    os << "bucket,count,nme,mae\n";
    auto num = [](const std::optional<double>& v) { return v ? fmt(*v, 9) : std::string(); };
    for (const auto& r : rows)
        os << r.bucket.label() << ',' << r.count << ',' << num(r.nme) << ',' << num(r.mae) << '\n';
    os << "mean,," << num(nme_mean) << ',' << num(mae_mean) << '\n';
    os << "std,," << num(nme_std) << ',' << num(mae_std) << '\n';
    return os.str();
}

std::string format_yaw_mae_table(std::span<const EvalRecord> records, AlignMode align, const std::string& method)
{
    std::map<int, std::pair<double, std::size_t>, std::greater<>> by_yaw;
    for (int y = 90; y >= 0; y -= 10)
        by_yaw[y] = {0.0, 0};
    double total = 0.0;
    for (const auto& r : records) {
        const int key = static_cast<int>(std::lround(std::abs(r.yaw_degrees) / 10.0)) * 10;
        const double e = sample_mae(r.gt_shape, r.est_shape, align);
        auto& slot = by_yaw[key];
        slot.first += e;
        slot.second += 1;
        total += e;
    }
    constexpr std::size_t w = 8;
    std::ostringstream os;
    std::string header = "Method";
    header.resize(20, ' ');
    os << header;
    for (const auto& [yaw, v] : by_yaw)
        os << pad(yaw == 0 ? "0" : "+-" + std::to_string(yaw), w);
    os << pad("Avg.", w) << '\n';
    std::string name = method;
    name.resize(std::max<std::size_t>(name.size(), 20), ' ');
    os << name;
    for (const auto& [yaw, v] : by_yaw)
        os << pad(v.second ? fmt(v.first / static_cast<double>(v.second)) : "-", w);
    os << pad(records.empty() ? "-" : fmt(total / static_cast<double>(records.size())), w) << '\n';
    return os.str();
}

} // namespace jafr
