// Command-line front end: synth, init, train, render, eval.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "sgs/error.hpp"
#include "sgs/io.hpp"
#include "sgs/metrics.hpp"
#include "sgs/pipeline.hpp"
#include "sgs/synth.hpp"
#include "sgs/trainer.hpp"

using namespace sgs;

namespace {

void log_line(const Json& j) { std::cout << j.dump() << std::endl; }

void error_line(std::string_view code, const std::string& message) {
    std::cerr << Json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
    std::string spec;
    std::string out;
    std::uint64_t seed = 0;
};

void run_synth(const SynthArgs& a) {
    const SynthSpec spec = a.spec.empty() ? SynthSpec{} : synth_spec_from_json(read_json(a.spec));
    log_line({{"command", "synth"}, {"seed", a.seed}, {"out", a.out}, {"spec", synth_spec_to_json(spec)}});
    const SceneBundle bundle = synthesize(spec, a.seed);
    write_bundle(a.out, bundle);
    log_line({{"views", bundle.views.size()}, {"edges", bundle.graph.edges.size()}});
}

// ---- init ------------------------------------------------------------------

struct InitArgs {
    std::string bundle;
    std::string out;
    double conf_threshold = 1.0;
    double voxel = 0.0;
    int sh_degree = 1;
    int align_iterations = 300;
    double align_lr = 0.01;
};

void run_init(const InitArgs& a) {
    InitPipelineOptions opt;
    opt.init.confidence_threshold = a.conf_threshold;
    opt.init.voxel_size = a.voxel;
    opt.init.sh_degree = a.sh_degree;
    opt.align.iterations = a.align_iterations;
    opt.align.learning_rate = a.align_lr;
    opt.init.validate();
    opt.align.validate();
    log_line({{"command", "init"},
              {"bundle", a.bundle},
              {"out", a.out},
              {"config",
               {{"conf_threshold", opt.init.confidence_threshold},
                {"voxel", opt.init.voxel_size},
                {"sh_degree", opt.init.sh_degree},
                {"initial_opacity", opt.init.initial_opacity},
                {"align_iterations", opt.align.iterations},
                {"align_learning_rate", opt.align.learning_rate},
                {"align_cosine_decay", opt.align.cosine_decay}}}});
    const SceneBundle bundle = read_bundle(a.bundle);
    const InitResult r = initialize_from_bundle(bundle, opt);
    write_ply(a.out, r.cloud);
    fs::path report = a.out;
    report.replace_extension(".init.json");
    write_json(report, r.to_json());
    log_line({{"primitives", r.cloud.size()},
              {"mean_focal", r.mean_focal},
              {"alignment_objective", r.final_objective},
              {"report", report.string()}});
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
    std::string bundle;
    std::string init;
    std::string config;
    std::string out;
    std::optional<int> iterations;
    std::optional<std::uint64_t> seed;
};

Json moments_json(const AdamMoments& m) { return {{"step", m.step}, {"m", m.m}, {"v", m.v}}; }

void run_train(const TrainArgs& a) {
    TrainConfig config = a.config.empty() ? TrainConfig{} : train_config_from_json(read_json(a.config));
    if (a.iterations) config.iterations = *a.iterations;
    if (a.seed) config.seed = *a.seed;
    config.validate();
    const fs::path out = a.out;
    fs::create_directories(out);
    const Json resolved = train_config_to_json(config);
    log_line({{"command", "train"}, {"bundle", a.bundle}, {"init", a.init}, {"out", a.out}, {"config", resolved}});
    write_json(out / "config.json", resolved);

    const SceneBundle bundle = read_bundle(a.bundle);
    const GaussianCloud initial = read_ply(a.init);
    std::vector<std::string> test_names;
    const std::vector<TrainView> views = bundle_views(bundle, true);
    const std::vector<TrainView> held_out = bundle_views(bundle, false, &test_names);

    auto checkpoint = [&](int done, const GaussianCloud& cloud, const CloudOptimizerState& st) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "iter_%06d", done);
        write_ply(out / "checkpoints" / (std::string(stem) + ".ply"), cloud);
        write_json(out / "checkpoints" / (std::string(stem) + ".json"),
                   {{"iteration", done},
                    {"config", resolved},
                    {"optimizer",
                     {{"position", moments_json(st.position)},
                      {"rotation", moments_json(st.rotation)},
                      {"log_scales", moments_json(st.log_scale)},
                      {"opacity", moments_json(st.opacity)},
                      {"sh", moments_json(st.sh)}}}});
    };

    TrainResult result;
    try {
        result = train(initial, views, config, checkpoint);
    } catch (const TrainingDiverged& e) {
        write_train_log_csv(out / "train_log.csv", e.partial_log());
        throw;
    }
    result.log.held_out = evaluate_views(result.cloud, held_out, test_names, config.render);
    write_ply(out / "cloud.ply", result.cloud);
    write_train_log_csv(out / "train_log.csv", result.log);
    write_json(out / "metrics.json", metrics_to_json(result.log.held_out));
    const TrainRecord& last = result.log.records.back();
    log_line({{"iterations", result.log.records.size()}, {"final_total", last.total}, {"final_rgb", last.rgb},
              {"seconds", last.seconds}});
}

// ---- render ----------------------------------------------------------------

struct RenderArgs {
    std::string cloud;
    std::string camera;
    std::string view;
    std::string out;
    std::string depth;
    std::string config;
};

Camera pick_camera(const Json& doc, const std::string& view) {
    if (!doc.contains("cameras")) {
        require(view.empty(), ErrorCode::Config, "--view needs a camera list");
        return camera_from_json(doc);
    }
    require(!view.empty(), ErrorCode::Config, "camera file holds a list; pass --view");
    for (const Json& c : doc.at("cameras")) {
        if (c.value("name", std::string()) == view) return camera_from_json(c);
    }
    fail(ErrorCode::Config, "no camera named " + view);
}

void run_render(const RenderArgs& a) {
    const RenderSettings settings =
        a.config.empty() ? RenderSettings{} : train_config_from_json(read_json(a.config)).render;
    log_line({{"command", "render"},
              {"cloud", a.cloud},
              {"camera", a.camera},
              {"view", a.view},
              {"out", a.out},
              {"depth", a.depth},
              {"render", render_settings_to_json(settings)}});
    const Camera cam = pick_camera(read_json(a.camera), a.view);
    const GaussianCloud cloud = read_ply(a.cloud);
    const RenderOutput r = render(cloud, cam, settings);
    write_png(a.out, r.color);
    if (!a.depth.empty()) write_pfm(a.depth, r.depth);
    log_line({{"all_culled", r.all_culled}, {"contributions", r.contributions}});
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string renders;
    std::string refs;
    std::string out;
};

void run_eval(const EvalArgs& a) {
    log_line({{"command", "eval"}, {"renders", a.renders}, {"refs", a.refs}, {"out", a.out}});
    require(fs::is_directory(a.renders) && fs::is_directory(a.refs), ErrorCode::Data,
            "--renders and --refs must be directories");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(a.renders)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    require(!files.empty(), ErrorCode::Data, "no PNG renders in " + a.renders);
    std::vector<ViewMetrics> rows;
    for (const auto& f : files) {
        const fs::path ref = fs::path(a.refs) / f.filename();
        require(fs::exists(ref), ErrorCode::Data, "no reference for " + f.filename().string());
        const ImageBuffer img = read_png(f), gt = read_png(ref);
        require(img.same_shape(gt), ErrorCode::Data, f.filename().string() + ": size differs from reference");
        const PsnrResult p = psnr(img, gt);
        rows.push_back({f.stem().string(), p.db, ssim(img, gt), p.exact_match});
    }
    const Json report = metrics_to_json(rows);
    write_json(a.out, report);
    log_line(report);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-view Gaussian splatting toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "generate a synthetic scene bundle");
    s->add_option("--spec", synth.spec, "scene spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
    s->add_option("--out", synth.out, "output bundle directory")->required();
    s->add_option("--seed", synth.seed, "random seed");

    InitArgs init;
    auto* i = app.add_subcommand("init", "estimate focal, align point maps and write the initial cloud");
    i->add_option("--bundle", init.bundle, "bundle directory")->required();
    i->add_option("--out", init.out, "output PLY")->required();
    i->add_option("--conf-threshold", init.conf_threshold, "minimum point confidence");
    i->add_option("--voxel", init.voxel, "voxel size for downsampling (0 keeps all points)");
    i->add_option("--sh-degree", init.sh_degree, "SH degree of the new cloud");
    i->add_option("--align-iterations", init.align_iterations, "alignment optimizer steps");
    i->add_option("--align-lr", init.align_lr, "alignment learning rate");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "optimise a cloud against a bundle");
    t->add_option("--bundle", tr.bundle, "bundle directory")->required();
    t->add_option("--init", tr.init, "initial PLY")->required();
    t->add_option("--config", tr.config, "training config JSON (defaults when omitted)");
    t->add_option("--out", tr.out, "output directory")->required();
    t->add_option("--iterations", tr.iterations, "override the configured iteration count");
    t->add_option("--seed", tr.seed, "override the configured seed");

    RenderArgs rd;
    auto* r = app.add_subcommand("render", "render a cloud from one camera");
    r->add_option("--cloud", rd.cloud, "PLY cloud")->required();
    r->add_option("--camera", rd.camera, "camera JSON or cameras.json")->required();
    r->add_option("--view", rd.view, "camera name inside a cameras.json");
    r->add_option("--out", rd.out, "output PNG")->required();
    r->add_option("--depth", rd.depth, "optional depth PFM");
    r->add_option("--config", rd.config, "training config whose render section is used");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "PSNR/SSIM of renders against references");
    e->add_option("--renders", ev.renders, "directory of rendered PNGs")->required();
    e->add_option("--refs", ev.refs, "directory of reference PNGs with matching names")->required();
    e->add_option("--out", ev.out, "report JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        error_line(to_string(ErrorCode::Config), ex.what());
        return exit_code(ErrorCode::Config);
    }

    try {
        if (*s) run_synth(synth);
        else if (*i) run_init(init);
        else if (*t) run_train(tr);
        else if (*r) run_render(rd);
        else if (*e) run_eval(ev);
    } catch (const Error& ex) {
        error_line(to_string(ex.code()), ex.what());
        return exit_code(ex.code());
    } catch (const std::exception& ex) {
        error_line(to_string(ErrorCode::Data), ex.what());
        return exit_code(ErrorCode::Data);
    }
    return 0;
}
