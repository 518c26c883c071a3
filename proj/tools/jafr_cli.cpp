/*
 * jafr - joint face alignment and 3D face reconstruction.
 *
 * File: tools/jafr_cli.cpp
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
#include "jafr/io.hpp"
#include "jafr/metrics.hpp"
#include "jafr/recognition.hpp"
#include "jafr/synth.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace jafr;

namespace {

BoundingBox parse_bbox(const std::string& s)
{
    std::vector<double> v;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const std::string tok = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        try {
            std::size_t used = 0;
            v.push_back(std::stod(tok, &used));
            if (used != tok.size())
                throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw InvalidArgument("--bbox expects x,y,w,h; got '" + s + "'");
        }
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    if (v.size() != 4)
        throw InvalidArgument("--bbox expects x,y,w,h; got '" + s + "'");
    return {v[0], v[1], v[2], v[3]};
}

AlignMode parse_align(const std::string& s)
{
    if (s == "none")
        return AlignMode::none;
    if (s == "rigid")
        return AlignMode::rigid;
    if (s == "similarity")
        return AlignMode::similarity;
    throw InvalidArgument("--align must be none, rigid or similarity");
}

std::string fixed(double v, int digits = 6)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void add_config(CLI::App& app)
{
    app.set_config("--config", "", "key = value file; command-line flags take precedence");
}

// Fits every loaded sample; fit() is re-entrant so samples are split across workers.
std::vector<FitResult> fit_all(const std::vector<LoadedSample>& samples, const CascadeModel& model, unsigned workers)
{
    std::vector<FitResult> out(samples.size());
    workers = std::max(1u, workers);
    std::vector<std::exception_ptr> errors(workers);
    auto body = [&](unsigned w) {
        try {
            for (std::size_t i = w; i < samples.size(); i += workers)
                out[i] = fit(samples[i].sample.image, samples[i].sample.bbox, model);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (workers == 1) {
        body(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back(body, w);
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    return out;
}

std::vector<int> fold_filter(int fold)
{
    return fold < 0 ? std::vector<int>{} : std::vector<int>{fold};
}

int cmd_synth(CLI::App& app, int argc, char** argv)
{
    SynthConfig cfg;
    std::string out;
    int folds = 10;
    std::vector<double> yaws;
    app.add_option("--out", out, "output directory")->required();
    app.add_option("--subjects", cfg.subjects, "number of identities")->capture_default_str();
    app.add_option("--expressions", cfg.expressions, "non-neutral expressions per identity")->capture_default_str();
    app.add_option("--image-size", cfg.image_size, "image side in pixels")->capture_default_str();
    app.add_option("--face-fraction", cfg.face_fraction, "projected face height / image side")->capture_default_str();
    app.add_option("--landmark-noise", cfg.landmark_noise_px, "annotation noise std, px")->capture_default_str();
    app.add_option("--shape-noise", cfg.shape_noise_mm, "ground-truth vertex noise std, mm")->capture_default_str();
    app.add_option("--bbox-jitter", cfg.bbox_jitter, "relative box shift/scale std")->capture_default_str();
    app.add_option("--rows", cfg.face.rows, "face grid rows")->capture_default_str();
    app.add_option("--cols", cfg.face.cols, "face grid columns (odd)")->capture_default_str();
    app.add_option("--extra-vertices", cfg.face.extra_vertices, "0..2 split corner quads")->capture_default_str();
    app.add_option("--yaws", yaws, "yaw list in degrees (default -90..90 step 10)")->delimiter(',');
    app.add_option("--folds", folds, "subject-disjoint folds")->capture_default_str();
    app.add_option("--seed", cfg.seed, "random seed")->capture_default_str();
    add_config(app);
    app.parse(argc, argv);
    if (!yaws.empty())
        cfg.yaws = yaws;

    const SynthDataset data = synth_dataset(cfg);
    write_synth_dataset(data, out, folds, cfg.seed);
    std::cout << "wrote " << data.samples.size() << " samples (" << data.prior.num_vertices() << " vertices, "
              << data.prior.num_landmarks() << " landmarks) to " << (fs::path(out) / "manifest.tsv").string() << '\n';
    return 0;
}

int cmd_train(CLI::App& app, int argc, char** argv)
{
    std::string manifest_path, prior_path, out, mode = "relative";
    TrainOptions opt;
    int test_fold = -1;
    bool fixed_patch = false;
    app.add_option("--manifest", manifest_path, "dataset manifest (TSV)")->required()->check(CLI::ExistingFile);
    app.add_option("--prior", prior_path, "prior file (default: prior.txt next to the manifest)");
    app.add_option("--out", out, "model file to write")->required();
    app.add_option("--stages", opt.stages, "cascade stages K")->capture_default_str();
    app.add_option("--ridge", opt.ridge, "ridge factor (relative) or lambda (absolute)")->capture_default_str();
    app.add_option("--ridge-mode", mode, "relative or absolute")->capture_default_str();
    app.add_option("--test-fold", test_fold, "hold out this fold (-1 = train on all)")->capture_default_str();
    app.add_option("--workers", opt.workers, "feature extraction threads")->capture_default_str();
    app.add_option("--patch-size", opt.feature_config.patch_size, "SIFT patch when not bbox-scaled")->capture_default_str();
    app.add_option("--patch-ratio", opt.feature_config.patch_bbox_ratio, "SIFT patch / bbox side")->capture_default_str();
    app.add_flag("--fixed-patch", fixed_patch, "use --patch-size instead of scaling with the box");
    add_config(app);
    app.parse(argc, argv);
    if (mode != "relative" && mode != "absolute")
        throw InvalidArgument("--ridge-mode must be relative or absolute");
    opt.ridge_mode = mode == "relative" ? RidgeMode::relative : RidgeMode::absolute;
    opt.feature_config.patch_scales_with_bbox = !fixed_patch;

    const Manifest manifest = read_manifest(manifest_path);
    const ShapePrior prior = read_prior(prior_path.empty() ? manifest.base / "prior.txt" : fs::path(prior_path));
    std::vector<int> folds;
    if (test_fold >= 0)
        for (const auto& e : manifest.entries)
            if (e.fold != test_fold && std::find(folds.begin(), folds.end(), e.fold) == folds.end())
                folds.push_back(e.fold);
    if (test_fold >= 0 && folds.empty())
        throw InvalidArgument("no training folds left after holding out fold " + std::to_string(test_fold));
    const auto loaded = load_samples(manifest, prior, folds);
    std::vector<TrainingSample> samples;
    for (const auto& s : loaded) {
        if (s.sample.target.identity.size() == 0)
            throw InvalidArgument("training sample " + s.id + " has no ground-truth meshes");
        samples.push_back(s.sample);
    }

    const TrainResult result = train_cascade(samples, prior, opt);
    save_model(result.model, out);
    std::cout << "stage        NME      MAE_pen(mm)  MAE_expr(mm)\n";
    for (const auto& st : result.stats)
        std::cout << st.stage << "  " << fixed(st.nme) << "  " << fixed(st.mae_pen, 4) << "  "
                  << fixed(st.mae_expressive, 4) << '\n';
    std::cout << "trained " << result.model.num_stages() << " stages on " << samples.size() << " samples -> " << out
              << '\n';
    return 0;
}

int cmd_fit(CLI::App& app, int argc, char** argv)
{
    std::string model_path, image_path, bbox_str, prefix;
    app.add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
    app.add_option("--image", image_path, "PGM image")->required()->check(CLI::ExistingFile);
    app.add_option("--bbox", bbox_str, "face box x,y,w,h in pixels")->required();
    app.add_option("--out-prefix", prefix, "output path prefix")->required();
    add_config(app);
    app.parse(argc, argv);

    const CascadeModel model = load_model(model_path);
    const GrayImage image = read_image(image_path);
    const FitResult r = fit(image, parse_bbox(bbox_str), model);
    write_mesh(prefix + "_pen.obj", r.pen_shape, model.prior.triangles);
    write_mesh(prefix + "_expr.obj", r.expressive_shape, model.prior.triangles);
    write_landmarks(prefix + "_landmarks.txt", r.landmarks);
    write_mapping(prefix + "_mapping.txt", r.mapping);
    if (r.degraded)
        std::cerr << "warning: a mapping fit was singular; the previous mapping was reused\n";
    return 0;
}

struct EvalSetup
{
    CascadeModel model;
    std::vector<LoadedSample> samples;
    std::vector<FitResult> fits;
};

EvalSetup run_eval(const std::string& model_path, const std::string& manifest_path, int test_fold, unsigned workers)
{
    EvalSetup s;
    s.model = load_model(model_path);
    const Manifest manifest = read_manifest(manifest_path);
    s.samples = load_samples(manifest, s.model.prior, fold_filter(test_fold));
    if (s.samples.empty())
        throw InvalidArgument("no samples selected from " + manifest_path);
    s.fits = fit_all(s.samples, s.model, workers);
    return s;
}

int cmd_eval_align(CLI::App& app, int argc, char** argv)
{
    std::string model_path, manifest_path, align = "rigid", csv, method = "Proposed";
    int test_fold = -1;
    unsigned workers = 1;
    app.add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
    app.add_option("--manifest", manifest_path, "dataset manifest")->required()->check(CLI::ExistingFile);
    app.add_option("--test-fold", test_fold, "evaluate only this fold (-1 = all)")->capture_default_str();
    app.add_option("--align", align, "MAE alignment: none, rigid, similarity")->capture_default_str();
    app.add_option("--csv", csv, "also write the per-bucket CSV here");
    app.add_option("--method", method, "row label")->capture_default_str();
    app.add_option("--workers", workers, "parallel fits")->capture_default_str();
    add_config(app);
    app.parse(argc, argv);

    const auto setup = run_eval(model_path, manifest_path, test_fold, workers);
    std::vector<EvalRecord> records;
    for (std::size_t i = 0; i < setup.samples.size(); ++i) {
        const auto& s = setup.samples[i];
        EvalRecord r;
        r.id = s.id;
        r.gt_landmarks = s.sample.target_landmarks;
        r.est_landmarks = setup.fits[i].landmarks;
        r.bbox = s.sample.bbox;
        r.yaw_degrees = s.yaw;
        if (s.expressive.num_vertices() > 0) {
            r.gt_shape = s.expressive;
            r.est_shape = setup.fits[i].expressive_shape;
        }
        records.push_back(std::move(r));
    }
    const auto report = pose_bucket_report(records, {}, parse_align(align));
    std::cout << report.format_table(method);
    std::cout << "overall NME(%) " << fixed(100.0 * nme(records), 2) << " over " << records.size() << " samples\n";
    if (!csv.empty()) {
        std::ofstream f(csv);
        if (!f)
            throw Error("cannot write " + csv);
        f << report.to_csv();
    }
    return 0;
}

int cmd_eval_recon(CLI::App& app, int argc, char** argv)
{
    std::string model_path, manifest_path, align = "rigid", norm = "per-vertex", method = "Proposed";
    int test_fold = -1;
    unsigned workers = 1;
    app.add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
    app.add_option("--manifest", manifest_path, "dataset manifest")->required()->check(CLI::ExistingFile);
    app.add_option("--test-fold", test_fold, "evaluate only this fold (-1 = all)")->capture_default_str();
    app.add_option("--align", align, "none, rigid or similarity")->capture_default_str();
    app.add_option("--norm", norm, "MAE reading: per-vertex or stacked")->capture_default_str();
    app.add_option("--method", method, "row label")->capture_default_str();
    app.add_option("--workers", workers, "parallel fits")->capture_default_str();
    add_config(app);
    app.parse(argc, argv);
    if (norm != "per-vertex" && norm != "stacked")
        throw InvalidArgument("--norm must be per-vertex or stacked");
    const MaeNorm mn = norm == "stacked" ? MaeNorm::stacked : MaeNorm::per_vertex;
    const AlignMode am = parse_align(align);

    const auto setup = run_eval(model_path, manifest_path, test_fold, workers);
    std::vector<EvalRecord> pen, expr;
    double npde_mean = 0.0, npde_std = 0.0;
    for (std::size_t i = 0; i < setup.samples.size(); ++i) {
        const auto& s = setup.samples[i];
        if (s.pen.num_vertices() == 0)
            throw InvalidArgument("sample " + s.id + " has no ground-truth meshes");
        EvalRecord rp;
        rp.id = s.id;
        rp.yaw_degrees = s.yaw;
        rp.gt_shape = s.pen;
        rp.est_shape = setup.fits[i].pen_shape;
        pen.push_back(rp);
        EvalRecord re = rp;
        re.gt_shape = s.expressive;
        re.est_shape = setup.fits[i].expressive_shape;
        expr.push_back(re);
        Shape3D aligned = setup.fits[i].expressive_shape;
        if (am != AlignMode::none)
            aligned.vertices =
                procrustes_align(aligned.vertices, s.expressive.vertices, am == AlignMode::similarity).aligned;
        const NpdeMap m = npde_map(s.expressive, aligned);
        npde_mean += m.mean_percent;
        npde_std += m.std_percent;
    }
    const double count = static_cast<double>(pen.size());
    std::cout << "PEN MAE (mm)\n" << format_yaw_mae_table(pen, am, method);
    std::cout << "Expressive MAE (mm)\n" << format_yaw_mae_table(expr, am, method);
    std::cout << "MAE PEN " << fixed(mae(pen, am, mn), 4) << " mm, expressive " << fixed(mae(expr, am, mn), 4)
              << " mm\n";
    std::cout << "NPDE expressive mean " << fixed(npde_mean / count, 2) << "%, std " << fixed(npde_std / count, 2)
              << "%\n";
    return 0;
}

std::pair<std::vector<std::string>, std::vector<Shape3D>> read_shape_list(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open " + path);
    const fs::path base = fs::path(path).parent_path();
    std::vector<std::string> labels;
    std::vector<Shape3D> shapes;
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line[0] == '#')
            continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError(path + ":" + std::to_string(ln) + ": expected label,mesh_path");
        const std::string label = line.substr(0, comma);
        if (ln == 1 && label == "label")
            continue;
        fs::path mesh = line.substr(comma + 1);
        if (mesh.is_relative())
            mesh = base / mesh;
        labels.push_back(label);
        shapes.push_back(read_mesh(mesh).shape);
    }
    return {labels, shapes};
}

DistanceMode parse_mode(const std::string& s)
{
    if (s == "icp")
        return DistanceMode::icp;
    if (s == "corresponded")
        return DistanceMode::corresponded;
    throw InvalidArgument("--mode must be icp or corresponded");
}

int cmd_match_3d(CLI::App& app, int argc, char** argv)
{
    std::string probes, gallery, out, distances, mode = "icp", scope = "global";
    unsigned workers = 1;
    app.add_option("--probes", probes, "CSV of label,mesh_path")->required()->check(CLI::ExistingFile);
    app.add_option("--gallery", gallery, "CSV of label,mesh_path")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out, "similarity score CSV")->required();
    app.add_option("--distances", distances, "also write the raw distance CSV");
    app.add_option("--mode", mode, "icp or corresponded")->capture_default_str();
    app.add_option("--scope", scope, "min-max scope: global or row")->capture_default_str();
    app.add_option("--workers", workers, "parallel probes")->capture_default_str();
    add_config(app);
    app.parse(argc, argv);
    if (scope != "global" && scope != "row")
        throw InvalidArgument("--scope must be global or row");

    auto [pl, ps] = read_shape_list(probes);
    auto [gl, gs] = read_shape_list(gallery);
    const ScoreMatrix d = distance_matrix(ps, gs, pl, gl, parse_mode(mode), workers);
    if (!distances.empty())
        write_scores_csv(distances, d);
    write_scores_csv(out, distances_to_similarity(d, scope == "row" ? NormScope::per_row : NormScope::global));
    return 0;
}

int cmd_fuse(CLI::App& app, int argc, char** argv)
{
    std::string s2d, s3d, out;
    double w = 0.5;
    app.add_option("--scores-2d", s2d, "2D matcher score CSV, already in [0,1]")->required()->check(CLI::ExistingFile);
    app.add_option("--scores-3d", s3d, "3D similarity CSV")->required()->check(CLI::ExistingFile);
    app.add_option("--weight", w, "weight of the 2D scores")->capture_default_str();
    app.add_option("--out", out, "fused score CSV (stdout if omitted)");
    add_config(app);
    app.parse(argc, argv);

    const ScoreMatrix fused = fuse_scores(read_scores_csv(s2d), read_scores_csv(s3d), w);
    if (out.empty())
        write_scores_csv(std::cout, fused);
    else
        write_scores_csv(out, fused);
    return 0;
}

int cmd_identify(CLI::App& app, int argc, char** argv)
{
    std::string scores, out;
    app.add_option("--scores", scores, "probe x gallery score CSV")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out, "per-probe predictions CSV");
    add_config(app);
    app.parse(argc, argv);

    const ScoreMatrix m = read_scores_csv(scores);
    const IdentificationResult r = rank1_identify(m);
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f)
            throw Error("cannot write " + out);
        f << "probe,predicted\n";
        for (std::size_t i = 0; i < r.predicted.size(); ++i)
            f << m.probe_labels[i] << ',' << r.predicted_labels[i] << '\n';
    }
    std::cout << "rank-1 " << fixed(r.accuracy_percent, 2) << "% over " << r.predicted.size() << " probes\n";
    return 0;
}

int cmd_verify(CLI::App& app, int argc, char** argv)
{
    std::string pairs_path, mode = "icp";
    double w = 0.5;
    app.add_option("--pairs", pairs_path, "CSV path_a,path_b,same[,score_2d]")->required()->check(CLI::ExistingFile);
    app.add_option("--mode", mode, "icp or corresponded")->capture_default_str();
    app.add_option("--weight", w, "2D weight when a score column is present")->capture_default_str();
    add_config(app);
    app.parse(argc, argv);

    const auto pairs = read_pairs_csv(pairs_path);
    if (pairs.empty())
        throw InvalidArgument("no pairs in " + pairs_path);
    const fs::path base = fs::path(pairs_path).parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    const DistanceMode dm = parse_mode(mode);

    ScoreMatrix d;
    d.scores.resize(1, static_cast<Eigen::Index>(pairs.size()));
    d.probe_labels = {"pairs"};
    bool has_2d = true;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        d.gallery_labels.push_back(std::to_string(k));
        d.scores(0, static_cast<Eigen::Index>(k)) =
            shape_distance(read_mesh(resolve(pairs[k].a)).shape, read_mesh(resolve(pairs[k].b)).shape, dm);
        has_2d = has_2d && pairs[k].score.has_value();
    }
    ScoreMatrix sim = distances_to_similarity(d);
    if (has_2d) {
        ScoreMatrix s2 = sim;
        for (std::size_t k = 0; k < pairs.size(); ++k)
            s2.scores(0, static_cast<Eigen::Index>(k)) = *pairs[k].score;
        sim = fuse_scores(s2, sim, w);
    }
    std::vector<double> genuine, imposter;
    for (std::size_t k = 0; k < pairs.size(); ++k)
        (pairs[k].same ? genuine : imposter).push_back(sim.scores(0, static_cast<Eigen::Index>(k)));
    const VerificationReport r = verify_metrics(genuine, imposter);
    std::cout << "Accuracy " << fixed(r.accuracy_percent, 2) << "%  EER " << fixed(r.eer_percent, 2) << "%  AUC "
              << fixed(r.auc_percent, 2) << "%  threshold " << fixed(r.threshold, 6) << '\n';
    return 0;
}

const std::map<std::string, std::pair<std::string, int (*)(CLI::App&, int, char**)>>& commands()
{
    static const std::map<std::string, std::pair<std::string, int (*)(CLI::App&, int, char**)>> table = {
        {"synth", {"render a synthetic yaw-sweep dataset", cmd_synth}},
        {"train", {"train the cascaded coupled regressors", cmd_train}},
        {"fit", {"reconstruct landmarks and both 3D shapes from one image", cmd_fit}},
        {"eval-align", {"landmark NME report per yaw bucket", cmd_eval_align}},
        {"eval-recon", {"3D reconstruction MAE / NPDE report", cmd_eval_recon}},
        {"match-3d", {"probe x gallery similarity from 3D shapes", cmd_match_3d}},
        {"fuse", {"weighted sum of 2D and 3D score matrices", cmd_fuse}},
        {"identify", {"rank-1 identification from a score matrix", cmd_identify}},
        {"verify", {"accuracy / EER / AUC over verification pairs", cmd_verify}},
    };
    return table;
}

void usage(std::ostream& os)
{
    os << "usage: jafr <command> [options]   (jafr <command> --help for details)\n\ncommands:\n";
    for (const auto& [name, entry] : commands()) {
        std::string padded = name;
        padded.resize(12, ' ');
        os << "  " << padded << entry.first << '\n';
    }
}

} // namespace

int main(int argc, char** argv)
{
    if (argc < 2) {
        usage(std::cerr);
        return 2;
    }
    const std::string name = argv[1];
    if (name == "-h" || name == "--help") {
        usage(std::cout);
        return 0;
    }
    const auto it = commands().find(name);
    if (it == commands().end()) {
        std::cerr << "jafr: error: unknown command '" << name << "'\n";
        return 2;
    }
    CLI::App app{it->second.first, "jafr " + name};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    try {
        return it->second.second(app, argc - 1, argv + 1);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "jafr " << name << ": error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "jafr " << name << ": error: " << e.what() << '\n';
        return 1;
    }
}
