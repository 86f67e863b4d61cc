// featlift command-line tool. Exit codes: 0 success, 2 input error,
// 3 consistency error, 4 numeric error, 1 anything else.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "cli_common.hpp"

using namespace featlift;
using namespace featlift::cli;
using nlohmann::json;

namespace featlift::cli {

SynthSpec resolve_spec(const SynthArgs& a, SynthSpec s) {
    if (!a.spec_file.empty()) {
        std::ifstream in(a.spec_file);
        if (!in) throw InputError("cannot open spec file '" + a.spec_file + "'");
        json j;
        try {
            in >> j;
            if (j.contains("layout")) s.layout = parse_layout(j["layout"].get<std::string>());
            if (j.contains("n_gaussians")) s.n_gaussians = j["n_gaussians"].get<std::size_t>();
            if (j.contains("n_views")) s.n_views = j["n_views"].get<int>();
            if (j.contains("dim")) s.feature_dim = j["dim"].get<int>();
            if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
            if (j.contains("opacity_min")) s.opacity_min = j["opacity_min"].get<double>();
            if (j.contains("opacity_max")) s.opacity_max = j["opacity_max"].get<double>();
            if (j.contains("overlap")) s.overlap = j["overlap"].get<double>();
            if (j.contains("hidden_fraction")) s.hidden_fraction = j["hidden_fraction"].get<double>();
            if (j.contains("layers")) s.layers = j["layers"].get<int>();
            if (j.contains("width")) s.width = j["width"].get<int>();
            if (j.contains("height")) s.height = j["height"].get<int>();
            if (j.contains("features")) s.features = parse_feature_kind(j["features"].get<std::string>());
        } catch (const json::exception& e) {
            throw InputError("spec file '" + a.spec_file + "': " + e.what());
        }
    }
    if (a.layout) s.layout = parse_layout(*a.layout);
    if (a.n_gaussians) s.n_gaussians = *a.n_gaussians;
    if (a.n_views) s.n_views = *a.n_views;
    if (a.dim) s.feature_dim = *a.dim;
    if (a.seed) s.seed = *a.seed;
    if (a.opacity_min) s.opacity_min = *a.opacity_min;
    if (a.opacity_max) s.opacity_max = *a.opacity_max;
    if (a.overlap) s.overlap = *a.overlap;
    if (a.hidden_fraction) s.hidden_fraction = *a.hidden_fraction;
    if (a.layers) s.layers = *a.layers;
    if (a.width) s.width = *a.width;
    if (a.height) s.height = *a.height;
    if (a.features) s.features = parse_feature_kind(*a.features);
    return s;
}

}  // namespace featlift::cli

namespace {

struct Global {
    int threads = default_thread_count();
    bool deterministic = false;
};

void add_synth_options(CLI::App* sub, SynthArgs& a) {
    sub->add_option("--spec", a.spec_file, "JSON file with synthetic-scene fields; flags override it");
    sub->add_option("--layout", a.layout, "grid | random | stacked | occluder (default grid)");
    sub->add_option("--n-gaussians", a.n_gaussians, "number of Gaussians (default 9)");
    sub->add_option("--views", a.n_views, "number of cameras (default 4)");
    sub->add_option("--dim", a.dim, "feature dimension (default 8)");
    sub->add_option("--seed", a.seed, "random seed (default 0)");
    sub->add_option("--opacity-min", a.opacity_min, "lower opacity bound (default 0.9)");
    sub->add_option("--opacity-max", a.opacity_max, "upper opacity bound (default 0.99)");
    sub->add_option("--overlap", a.overlap, "overlap factor >= 0 (default 0)");
    sub->add_option("--hidden-fraction", a.hidden_fraction, "fraction of Gaussians no view sees (occluder default 0.2)");
    sub->add_option("--layers", a.layers, "coincident copies per grid site (default 1)");
    sub->add_option("--width", a.width, "image width (default 128)");
    sub->add_option("--height", a.height, "image height (default 128)");
    sub->add_option("--features", a.features, "random | onehot (default random)");
}

// ---------------------------------------------------------------- uplift

struct UpliftArgs {
    std::string scene, cameras, features, level, out;
    double occlusion_threshold = 1e-4;
    bool no_weighting = false, no_filter = false;
};

int run_uplift(const UpliftArgs& a, const Global& g) {
    const auto load = io::read_ply(a.scene);
    const auto cams = io::read_cameras(a.cameras);
    if (cams.empty()) throw InputError("cameras file has no cameras");

    UpliftConfig cfg;
    cfg.occlusion_threshold = a.occlusion_threshold;
    cfg.weighted = !a.no_weighting;
    cfg.filter = !a.no_filter;
    cfg.deterministic = g.deterministic;
    cfg.raster.threads = g.threads;

    int peak_dim = 0;
    for (const auto& level : expand_levels(a.level)) {
        const Stopwatch clock;
        std::vector<io::Map> maps;
        for (const auto& cam : cams) {
            const fs::path p = feature_file(a.features, cam.id, level);
            if (!fs::exists(p)) {
                throw ConsistencyError("camera '" + cam.id + "' has no feature map (expected " + p.string() + ")");
            }
            maps.push_back(io::read_feature_map(p));
        }
        const auto result = uplift_scene(load.scene, cams, maps, cfg);
        const fs::path out = level_output(a.out, level);
        io::write_ply(result.scene, out);
        peak_dim = std::max(peak_dim, result.stats.feature_dim);
        json line = {{"level", level.empty() ? "single" : level},
                     {"n_views", result.stats.n_views},
                     {"N", result.stats.n_input},
                     {"M", result.stats.n_output},
                     {"samples", result.stats.samples},
                     {"elapsed_seconds", clock.seconds()},
                     {"peak_feature_dim", peak_dim},
                     {"out", out.string()}};
        std::cout << line.dump() << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
    std::string scene, cameras, view, mode = "color", out, level;
    double occlusion_threshold = 1e-4;
};

int run_render(const RenderArgs& a, const Global& g) {
    const auto scene = io::read_ply(a.scene).scene;
    const auto cams = io::read_cameras(a.cameras);
    RasterSettings rs;
    rs.threads = g.threads;
    fs::create_directories(a.out);
    std::vector<io::Camera> chosen;
    if (a.view.empty()) chosen = cams;
    else chosen.push_back(find_camera(cams, a.view));
    for (const auto& cam : chosen) {
        if (a.mode == "color" || a.mode == "alpha") {
            const auto r = render_color(scene, cam, rs);
            if (a.mode == "color") io::write_png_rgb(r.image, fs::path(a.out) / (cam.id + ".png"));
            else io::write_png_gray(r.alpha, fs::path(a.out) / (cam.id + "_alpha.png"));
        } else if (a.mode == "features") {
            const auto m = render_features(scene, cam, rs, a.occlusion_threshold);
            io::write_feature_map(m, feature_file(a.out, cam.id, a.level));
        } else {
            throw InputError("unknown render mode '" + a.mode + "' (expected color, alpha or features)");
        }
    }
    std::cout << "rendered " << chosen.size() << " view(s) to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- query

struct QueryArgs {
    std::vector<std::string> scenes, maps, canonical;
    std::string cameras, view, embedding, protocol = "dynamic", out_mask, out_relevancy, report, name;
    double occlusion_threshold = 1e-4;
    ThresholdConfig thresholds;
    std::optional<double> fallback;
};

int run_query(QueryArgs a, const Global& g) {
    if (a.scenes.empty() == a.maps.empty()) throw InputError("give either --scene (with --cameras/--view) or --maps");
    std::vector<io::Map> levels;
    if (!a.maps.empty()) {
        for (const auto& m : a.maps) levels.push_back(io::read_feature_map(m));
    } else {
        if (a.cameras.empty() || a.view.empty()) throw InputError("--scene needs --cameras and --view");
        const auto cams = io::read_cameras(a.cameras);
        const auto& cam = find_camera(cams, a.view);
        RasterSettings rs;
        rs.threads = g.threads;
        for (const auto& s : a.scenes) levels.push_back(render_features(io::read_ply(s).scene, cam, rs, a.occlusion_threshold));
    }
    QuerySpec<float> spec;
    spec.query_embedding = io::read_embedding(a.embedding);
    for (const auto& c : a.canonical) spec.canonical_embeddings.push_back(io::read_embedding(c));

    bool dynamic = true;
    if (a.protocol.rfind("fixed", 0) == 0) {
        dynamic = false;
        a.thresholds.fixed_threshold = 0.5;
        if (a.protocol.size() > 5) {
            if (a.protocol[5] != ':') throw InputError("protocol must be 'dynamic' or 'fixed[:T]'");
            a.thresholds.fixed_threshold = parse_doubles(a.protocol.substr(6), 1, "--protocol")[0];
        }
    } else if (a.protocol != "dynamic") {
        throw InputError("protocol must be 'dynamic' or 'fixed[:T]'");
    } else if (a.fallback) {
        a.thresholds.fixed_threshold = *a.fallback;
    }

    const auto out = featlift::run_query(std::span<const io::Map>(levels), spec, a.thresholds, dynamic);
    if (!a.out_mask.empty()) io::write_mask_png(out.mask, a.out_mask);
    if (!a.out_relevancy.empty()) io::write_png_gray(out.levels[std::size_t(out.level)].values, a.out_relevancy);
    const std::string name = a.name.empty() ? fs::path(a.embedding).stem().string() : a.name;
    const std::string threshold = out.threshold ? std::to_string(*out.threshold) : "none";
    json line = {{"query", name},
                 {"level", out.level},
                 {"threshold", out.threshold ? json(*out.threshold) : json(nullptr)},
                 {"x", out.location.x},
                 {"y", out.location.y},
                 {"mask_area", out.mask.count()}};
    std::cout << line.dump() << "\n";
    if (!a.report.empty()) {
        const bool fresh = !fs::exists(a.report);
        std::ofstream rep(a.report, std::ios::app);
        if (!rep) throw InputError("cannot write report '" + a.report + "'");
        if (fresh) rep << "query,level,threshold,x,y\n";
        rep << name << "," << out.level << "," << threshold << "," << out.location.x << "," << out.location.y << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string pred, gt, predictions, scene = "scene", out;
};

struct Prediction {
    std::string level = "", threshold = "";
    std::optional<PixelCoord> location;
};

std::map<std::string, Prediction> read_predictions(const std::string& path) {
    std::map<std::string, Prediction> out;
    std::ifstream in(path);
    if (!in) throw InputError("cannot open predictions file '" + path + "'");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 5) throw InputError("predictions file '" + path + "': expected 5 columns in '" + line + "'");
        Prediction p{cells[1], cells[2], PixelCoord{std::stoi(cells[3]), std::stoi(cells[4])}};
        out[cells[0]] = p;
    }
    return out;
}

int run_eval(const EvalArgs& a) {
    if (!fs::is_directory(a.gt)) throw InputError("ground-truth directory '" + a.gt + "' does not exist");
    if (!fs::is_directory(a.pred)) throw InputError("prediction directory '" + a.pred + "' does not exist");
    std::map<std::string, Prediction> preds;
    if (!a.predictions.empty()) preds = read_predictions(a.predictions);

    std::vector<fs::path> gts;
    for (const auto& e : fs::directory_iterator(a.gt)) {
        if (e.path().extension() == ".png") gts.push_back(e.path());
    }
    std::sort(gts.begin(), gts.end());
    if (gts.empty()) throw InputError("no ground-truth masks in '" + a.gt + "'");

    std::ostringstream csv;
    csv << "scene,query,level,threshold,iou,loc_hit\n";
    double iou_sum = 0.0;
    int loc_hits = 0, loc_total = 0;
    for (const auto& gt_path : gts) {
        const std::string query = gt_path.stem().string();
        const Mask gt = io::read_mask_png(gt_path);
        const fs::path pred_path = fs::path(a.pred) / gt_path.filename();
        Mask pred = Mask::Constant(gt.rows(), gt.cols(), false);
        if (fs::exists(pred_path)) pred = io::read_mask_png(pred_path);
        else std::cerr << "warning: no prediction for '" << query << "', scored as an empty mask\n";
        const IoU iou = compute_iou(pred, gt);
        iou_sum += iou.value;
        std::string hit;
        const auto it = preds.find(query);
        if (it != preds.end() && it->second.location) {
            const PixelCoord c = *it->second.location;
            const bool inside = c.x >= 0 && c.y >= 0 && c.x < gt.cols() && c.y < gt.rows() && gt(c.y, c.x);
            hit = inside ? "1" : "0";
            loc_hits += inside;
            ++loc_total;
        }
        csv << a.scene << "," << query << "," << (it != preds.end() ? it->second.level : "") << ","
            << (it != preds.end() ? it->second.threshold : "") << "," << iou.value << "," << hit << "\n";
    }
    if (a.out.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(a.out);
        if (!out) throw InputError("cannot write '" + a.out + "'");
        out << csv.str();
    }
    std::cout << "# mIoU=" << iou_sum / double(gts.size()) << " queries=" << gts.size();
    if (loc_total > 0) std::cout << " localization_accuracy=" << double(loc_hits) / loc_total;
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------- oracle-compare

struct OracleArgs {
    SynthArgs synth;
    double noise = 0.0;
    std::uint64_t noise_seed = 1;
    std::string mode = "all";
    double binarize = 0.0;
};

int run_oracle(const OracleArgs& a, const Global& g) {
    const SynthSpec spec = resolve_spec(a.synth);
    const auto s = generate_scene<double>(spec);
    RasterSettings rs;
    rs.threads = g.threads;
    const auto maps = generate_feature_maps(s.scene, s.views, a.noise, a.noise_seed, rs);
    DenseMode mode;
    if (a.mode == "all") mode = DenseMode::AllPixels;
    else if (a.mode == "center") mode = DenseMode::CenterPixels;
    else throw InputError("--mode must be 'all' or 'center'");
    auto rec = collect_dense_weights(s.scene, s.views, maps, mode);
    if (a.binarize > 0) rec = binarize_weights(rec, a.binarize);

    const auto exact = exact_ml_solve(rec);
    std::vector<bool> active;
    const auto closed = closed_form_features(rec, &active);
    std::vector<bool> both(active.size());
    for (std::size_t i = 0; i < active.size(); ++i) both[i] = active[i] && exact.identifiable[i];

    UpliftConfig cfg;
    cfg.filter = false;
    cfg.raster.threads = g.threads;
    const auto up = uplift_scene(s.scene, s.views, maps, cfg);
    std::vector<bool> up_active(s.scene.size());
    for (std::size_t i = 0; i < up_active.size(); ++i) up_active[i] = up.accumulator.weight_sum(Eigen::Index(i)) > 0;

    std::cout << "# layout=" << layout_name(spec.layout) << " n_gaussians=" << s.scene.size()
              << " n_views=" << s.views.size() << " dim=" << spec.feature_dim << " noise=" << a.noise
              << " mode=" << a.mode << " binarize=" << a.binarize << "\n";
    std::cout << "# observed=" << std::count(active.begin(), active.end(), true)
              << " rank=" << exact.rank << " rank_deficient=" << (exact.rank_deficient ? 1 : 0)
              << " unidentifiable=" << exact.unidentifiable().size() << " max_cross_talk=" << max_cross_talk(rec) << "\n";
    std::cout << "comparison,mean,p95,max\n";
    auto row = [](const std::string& name, const GapReport& r) {
        std::cout << name << "," << r.mean << "," << r.p95 << "," << r.max << "\n";
    };
    row("closed_form_vs_exact", approximation_gap(exact.features, closed, &both));
    row("exact_vs_truth", approximation_gap(s.scene.features, exact.features, &both));
    row("closed_form_vs_truth", approximation_gap(s.scene.features, closed, &active));
    row("uplift_vs_truth", approximation_gap(s.scene.features, up.scene.features, &up_active));
    return 0;
}

// ---------------------------------------------------------------- synth

struct SynthCmdArgs {
    SynthArgs synth;
    double noise = 0.0;
    std::uint64_t noise_seed = 1;
    bool levels = false;
    std::string out;
};

int run_synth(const SynthCmdArgs& a, const Global& g) {
    const SynthSpec spec = resolve_spec(a.synth);
    const auto s = generate_scene<float>(spec);
    const fs::path out = a.out;
    fs::create_directories(out / "features");
    io::write_cameras(s.views, out / "cameras.json");
    {
        std::ofstream f(out / "hidden.txt");
        for (int h : s.hidden) f << h << "\n";
        std::ofstream j(out / "spec.json");
        j << spec_to_json(spec).dump(2) << "\n";
    }
    io::write_ply(s.scene, out / "scene.ply");
    RasterSettings rs;
    rs.threads = g.threads;
    const std::vector<std::string> levels = a.levels ? kLevels : std::vector<std::string>{""};
    for (std::size_t l = 0; l < levels.size(); ++l) {
        io::Scene scene = s.scene;
        if (l > 0) {
            SynthSpec other = spec;
            other.seed = spec.seed + 0x1000 * l;
            scene.features = generate_scene<float>(other).scene.features;
        }
        if (!levels[l].empty()) io::write_ply(scene, out / ("scene_" + levels[l] + ".ply"));
        const auto maps = generate_feature_maps(scene, s.views, a.noise, a.noise_seed + l, rs);
        for (std::size_t v = 0; v < maps.size(); ++v) {
            io::write_feature_map(maps[v], feature_file(out / "features", s.views[v].id, levels[l]));
        }
    }
    std::cout << "wrote " << s.scene.size() << " gaussians, " << s.views.size() << " views, " << s.hidden.size()
              << " hidden to " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- edit

struct EditArgs {
    std::string src, dst, box, query, rotate, translate, out;
    double threshold = 0.5, scale = 1.0;
};

int run_edit(const EditArgs& a) {
    const auto src = io::read_ply(a.src).scene;
    io::Scene dst;
    if (!a.dst.empty()) dst = io::read_ply(a.dst).scene;
    if (!a.box.empty() && !a.query.empty()) throw InputError("give at most one of --box and --query");

    std::vector<int> idx;
    if (!a.box.empty()) {
        const auto b = parse_doubles(a.box, 6, "--box");
        const Aabb<float> box{Eigen::Vector3f(float(b[0]), float(b[1]), float(b[2])),
                              Eigen::Vector3f(float(b[3]), float(b[4]), float(b[5]))};
        idx = select_gaussians(src, box);
    } else if (!a.query.empty()) {
        idx = select_gaussians(src, RelevancyCriterion<float>{io::read_embedding(a.query), a.threshold});
    } else {
        idx.resize(src.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    }

    SimilarityTransform<float> t;
    if (!a.rotate.empty()) {
        const auto r = parse_doubles(a.rotate, 4, "--rotate");
        const Eigen::Vector3d axis(r[0], r[1], r[2]);
        if (!(axis.norm() > 0)) throw InputError("--rotate axis must be non-zero");
        t.rotation = Eigen::Quaternionf(Eigen::AngleAxisd(r[3] * std::numbers::pi / 180.0, axis.normalized()).cast<float>());
    }
    if (!a.translate.empty()) {
        const auto v = parse_doubles(a.translate, 3, "--translate");
        t.translation = Eigen::Vector3f(float(v[0]), float(v[1]), float(v[2]));
    }
    t.scale = float(a.scale);
    const auto merged = insert(src, idx, t, dst);
    io::write_ply(merged, a.out);
    std::cout << json({{"selected", idx.size()}, {"dst", dst.size()}, {"out_gaussians", merged.size()}}).dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
    std::vector<std::size_t> n_gaussians{2000};
    std::vector<int> n_views{8};
    std::vector<int> dims{16};
    std::string layout = "random";
    int width = 128, height = 128, repeats = 3;
    std::uint64_t seed = 0;
    std::string workdir;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

int run_bench(const BenchArgs& a, const Global& g) {
    if (a.repeats < 1) throw InputError("--repeats must be >= 1");
    const fs::path work = a.workdir.empty() ? fs::temp_directory_path() / ("featlift_bench_" + std::to_string(std::random_device{}()))
                                            : fs::path(a.workdir);
    fs::create_directories(work);
    std::cout << "n_gaussians,n_views,dim,uplift_seconds,fps,memory_bytes,output_bytes,n_output,header_bytes\n";
    for (std::size_t n : a.n_gaussians) {
        for (int v : a.n_views) {
            for (int d : a.dims) {
                SynthSpec spec;
                spec.layout = parse_layout(a.layout);
                spec.n_gaussians = n;
                spec.n_views = v;
                spec.feature_dim = d;
                spec.width = a.width;
                spec.height = a.height;
                spec.seed = a.seed;
                spec.opacity_min = 0.3;
                const auto s = generate_scene<float>(spec);
                RasterSettings rs;
                rs.threads = g.threads;
                {
                    const auto maps = generate_feature_maps(s.scene, s.views, 0.0, 0, rs);
                    for (std::size_t k = 0; k < maps.size(); ++k) io::write_feature_map(maps[k], feature_file(work, s.views[k].id, ""));
                }
                UpliftConfig cfg;
                cfg.deterministic = g.deterministic;
                cfg.raster.threads = g.threads;
                // Timed: what the uplift subcommand does after parsing, i.e.
                // read every feature map, uplift, write the semantic PLY.
                std::vector<double> times;
                UpliftResult<float> result;
                const fs::path out = work / "bench_out.ply";
                for (int r = 0; r < a.repeats; ++r) {
                    const Stopwatch clock;
                    std::vector<io::Map> maps;
                    for (const auto& cam : s.views) maps.push_back(io::read_feature_map(feature_file(work, cam.id, "")));
                    result = uplift_scene(s.scene, s.views, maps, cfg);
                    io::write_ply(result.scene, out);
                    times.push_back(clock.seconds());
                }
                std::vector<double> frame;
                for (int r = 0; r < a.repeats; ++r) {
                    const Stopwatch clock;
                    (void)render_features(result.scene, s.views.front(), rs);
                    frame.push_back(clock.seconds());
                }
                const std::size_t pixels = std::size_t(a.width) * std::size_t(a.height);
                const std::size_t memory = std::size_t(v) * pixels * std::size_t(d) * sizeof(float)  // resident maps
                                           + n * (std::size_t(d) + 2) * sizeof(float)              // accumulator
                                           + n * sizeof(Gaussian<float>);
                std::cout << n << "," << v << "," << d << "," << median(times) << "," << 1.0 / median(frame) << ","
                          << memory << "," << fs::file_size(out) << "," << result.scene.size() << ","
                          << ply_header_bytes(out) << "\n";
                std::cout.flush();
                for (const auto& cam : s.views) fs::remove(feature_file(work, cam.id, ""));
            }
        }
    }
    if (a.workdir.empty()) fs::remove_all(work);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"featlift: lift multi-view 2D feature maps onto a Gaussian splatting scene"};
    app.require_subcommand(1);
    Global global;
    app.add_option("--threads", global.threads, "worker threads (default: available cores)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", global.deterministic,
                 "fixed view order and sequential accumulation; with --threads 1 this is the reference behavior");

    UpliftArgs up;
    auto* s_up = app.add_subcommand("uplift", "aggregate feature maps onto the scene's Gaussians");
    s_up->add_option("--scene", up.scene, "input 3DGS PLY")->required();
    s_up->add_option("--cameras", up.cameras, "cameras JSON")->required();
    s_up->add_option("--features", up.features, "directory of <view_id>[_<level>].fmap files")->required();
    s_up->add_option("--level", up.level, "whole | part | subpart | all (default: unsuffixed maps)");
    s_up->add_option("--occlusion-threshold", up.occlusion_threshold, "drop center samples with weight below this")
        ->capture_default_str();
    s_up->add_flag("--no-weighting", up.no_weighting, "plain mean over views instead of the weighted average");
    s_up->add_flag("--no-filter", up.no_filter, "keep Gaussians that never received a sample");
    s_up->add_option("--out", up.out, "output PLY (suffixed _whole/_part/_subpart per level)")->required();

    RenderArgs rn;
    auto* s_rn = app.add_subcommand("render", "render color, alpha or features");
    s_rn->add_option("--scene", rn.scene, "PLY scene")->required();
    s_rn->add_option("--cameras", rn.cameras, "cameras JSON")->required();
    s_rn->add_option("--view", rn.view, "camera id (default: every camera)");
    s_rn->add_option("--mode", rn.mode, "color | alpha | features")->capture_default_str();
    s_rn->add_option("--level", rn.level, "level suffix for feature files");
    s_rn->add_option("--occlusion-threshold", rn.occlusion_threshold,
                     "feature contributions below this weight are left out")->capture_default_str();
    s_rn->add_option("--out", rn.out, "output directory")->required();

    QueryArgs qa;
    auto* s_q = app.add_subcommand("query", "relevancy, mask and localization for one query");
    s_q->add_option("--scene", qa.scenes, "semantic PLY, one per level (rendered from --view)");
    s_q->add_option("--cameras", qa.cameras, "cameras JSON");
    s_q->add_option("--view", qa.view, "camera id");
    s_q->add_option("--maps", qa.maps, "feature-map files, one per level, instead of --scene");
    s_q->add_option("--embedding", qa.embedding, "query embedding file")->required();
    s_q->add_option("--canonical", qa.canonical, "canonical phrase embedding files");
    s_q->add_option("--protocol", qa.protocol, "dynamic | fixed[:T] (fixed alone means T = 0.5)")->capture_default_str();
    s_q->add_option("--fallback", qa.fallback, "fixed threshold used when dynamic finds no stable region");
    s_q->add_option("--step", qa.thresholds.step, "threshold sweep step")->capture_default_str();
    s_q->add_option("--stability", qa.thresholds.stability_threshold, "max |d mean / d threshold| for a stable run")
        ->capture_default_str();
    s_q->add_option("--min-area", qa.thresholds.min_area_frac, "smallest mask area fraction (0.00005 = 0.005%)")
        ->capture_default_str();
    s_q->add_option("--max-area", qa.thresholds.max_area_frac, "largest mask area fraction")->capture_default_str();
    s_q->add_option("--occlusion-threshold", qa.occlusion_threshold, "weight cutoff when rendering --scene")
        ->capture_default_str();
    s_q->add_option("--out-mask", qa.out_mask, "mask PNG");
    s_q->add_option("--out-relevancy", qa.out_relevancy, "relevancy PNG of the chosen level");
    s_q->add_option("--report", qa.report, "append query,level,threshold,x,y to this CSV");
    s_q->add_option("--name", qa.name, "query name in the report (default: embedding file stem)");

    EvalArgs ev;
    auto* s_ev = app.add_subcommand("eval", "mIoU and localization accuracy over mask directories");
    s_ev->add_option("--pred-masks", ev.pred, "directory of predicted <query>.png masks")->required();
    s_ev->add_option("--gt-masks", ev.gt, "directory of ground-truth <query>.png masks")->required();
    s_ev->add_option("--predictions", ev.predictions, "report CSV written by `query --report`");
    s_ev->add_option("--scene-name", ev.scene, "value of the scene column")->capture_default_str();
    s_ev->add_option("--out", ev.out, "write the CSV here instead of stdout");

    OracleArgs oa;
    auto* s_or = app.add_subcommand("oracle-compare", "closed form vs exact least squares on a synthetic scene");
    add_synth_options(s_or, oa.synth);
    s_or->add_option("--noise", oa.noise, "feature noise sigma")->capture_default_str();
    s_or->add_option("--noise-seed", oa.noise_seed, "noise seed")->capture_default_str();
    s_or->add_option("--mode", oa.mode, "all | center pixels")->capture_default_str();
    s_or->add_option("--binarize", oa.binarize, "if > 0, weights >= this become 1 and the rest are dropped")
        ->capture_default_str();

    SynthCmdArgs sy;
    auto* s_sy = app.add_subcommand("synth", "write a synthetic scene, cameras and feature maps");
    add_synth_options(s_sy, sy.synth);
    s_sy->add_option("--noise", sy.noise, "feature noise sigma")->capture_default_str();
    s_sy->add_option("--noise-seed", sy.noise_seed, "noise seed")->capture_default_str();
    s_sy->add_flag("--levels", sy.levels, "write whole/part/subpart feature sets");
    s_sy->add_option("--out", sy.out, "output directory")->required();

    EditArgs ed;
    auto* s_ed = app.add_subcommand("edit", "copy selected Gaussians, transformed, into another scene");
    s_ed->add_option("--src", ed.src, "source PLY")->required();
    s_ed->add_option("--dst", ed.dst, "destination PLY (default: empty scene)");
    s_ed->add_option("--box", ed.box, "x0,y0,z0,x1,y1,z1 selection box");
    s_ed->add_option("--query", ed.query, "embedding file; selects by cosine similarity");
    s_ed->add_option("--threshold", ed.threshold, "cosine threshold for --query")->capture_default_str();
    s_ed->add_option("--rotate", ed.rotate, "ax,ay,az,degrees");
    s_ed->add_option("--translate", ed.translate, "tx,ty,tz");
    s_ed->add_option("--scale", ed.scale, "uniform scale")->capture_default_str();
    s_ed->add_option("--out", ed.out, "output PLY")->required();

    BenchArgs be;
    auto* s_be = app.add_subcommand("bench", "uplift scaling benchmark, CSV on stdout");
    s_be->add_option("--n-gaussians", be.n_gaussians, "list of scene sizes")->delimiter(',')->capture_default_str();
    s_be->add_option("--n-views", be.n_views, "list of view counts")->delimiter(',')->capture_default_str();
    s_be->add_option("--dims", be.dims, "list of feature dimensions")->delimiter(',')->capture_default_str();
    s_be->add_option("--layout", be.layout, "synthetic layout")->capture_default_str();
    s_be->add_option("--width", be.width, "image width")->capture_default_str();
    s_be->add_option("--height", be.height, "image height")->capture_default_str();
    s_be->add_option("--repeats", be.repeats, "timed runs per configuration (median reported)")->capture_default_str();
    s_be->add_option("--seed", be.seed, "scene seed")->capture_default_str();
    s_be->add_option("--workdir", be.workdir, "scratch directory (default: a temporary one)");

    for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*s_up) return run_uplift(up, global);
        if (*s_rn) return run_render(rn, global);
        if (*s_q) return run_query(qa, global);
        if (*s_ev) return run_eval(ev);
        if (*s_or) return run_oracle(oa, global);
        if (*s_sy) return run_synth(sy, global);
        if (*s_ed) return run_edit(ed);
        if (*s_be) return run_bench(be, global);
    } catch (const ConsistencyError& e) {
        std::cerr << "consistency error: " << e.what() << "\n";
        return 3;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
