#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fmt/ranges.h>

#include "attnseg/checkpoint.hpp"
#include "attnseg/config.hpp"
#include "attnseg/datapipe.hpp"
#include "attnseg/errors.hpp"
#include "attnseg/gradcheck_suite.hpp"
#include "attnseg/image_io.hpp"
#include "attnseg/metrics.hpp"
#include "attnseg/parallel.hpp"
#include "attnseg/synthetic.hpp"
#include "attnseg/trainer.hpp"
#include "render.hpp"

namespace fs = std::filesystem;

namespace attnseg::cli {

namespace {

constexpr const char* kDigestKey = "attnseg:config_digest";

struct Globals {
    std::string root = ".";
    int threads = -1;
};

fs::path resolve(const Globals& g, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : fs::path(g.root) / path;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f << text;
}

std::string utc_stamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

fs::path make_run_dir(const Globals& g, const RunConfig& cfg, const std::string& digest,
                      const std::string& run_name) {
    const std::string name = run_name.empty() ? utc_stamp() + "-" + digest : run_name;
    const fs::path dir = resolve(g, cfg.output_dir) / name;
    fs::create_directories(dir);
    return dir;
}

// Sorted map id -> file for the *.png files in a directory.
std::map<std::string, fs::path> png_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw MissingDataError("directory not found: " + dir.string());
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
    return out;
}

struct Splits {
    SplitManifest manifest;
    Dataset train;
    Dataset test;
};

Splits load_data(const Globals& g, const RunConfig& cfg) {
    const fs::path data_root = resolve(g, cfg.data.root);
    Splits s;
    s.manifest = read_manifest(data_root / cfg.data.manifest);
    const fs::path tiles = data_root / cfg.data.tiles_dir;
    s.train = load_tiles(tiles, "train", s.manifest.train, cfg.legend);
    s.test = load_tiles(tiles, "test", s.manifest.test, cfg.legend);
    return s;
}

// --- tile ------------------------------------------------------------------

struct TileArgs {
    std::string images, masks, out;
    int tile = 512;
    int stride = 512;
    std::string edge = "clamp";
    std::uint64_t seed = 0;
    std::string holdout;
};

int cmd_tile(const Globals& g, const TileArgs& a, std::ostream& out) {
    const auto images = png_files(resolve(g, a.images));
    const auto masks = png_files(resolve(g, a.masks));
    std::vector<std::string> unpaired;
    for (const auto& [id, _] : images)
        if (!masks.count(id)) unpaired.push_back(id + " (no mask)");
    for (const auto& [id, _] : masks)
        if (!images.count(id)) unpaired.push_back(id + " (no image)");
    if (!unpaired.empty())
        throw DataError(fmt::format("unpaired image/mask ids: {}", fmt::join(unpaired, ", ")));
    if (images.empty()) throw MissingDataError("no PNG images in " + resolve(g, a.images).string());

    const EdgePolicy edge = parse_edge_policy(a.edge);
    const ClassLegend legend = ClassLegend::standard();
    struct Source {
        RgbImage image;
        LabelMap labels;
    };
    std::map<std::string, Source> sources;
    std::vector<TileSpec> plan;
    for (const auto& [id, path] : images) {
        Source src{read_png_rgb(path), {}};
        try {
            src.labels = mask_encode(read_png_rgb(masks.at(id)), legend);
        } catch (const DataError& e) {
            throw DataError("mask '" + id + "': " + e.what());
        }
        if (src.labels.width != src.image.width || src.labels.height != src.image.height)
            throw DataError(fmt::format("'{}': image is {}x{} but mask is {}x{}", id, src.image.width,
                                        src.image.height, src.labels.width, src.labels.height));
        const auto tiles = tile_plan(src.image.width, src.image.height, a.tile, a.stride, edge, id);
        plan.insert(plan.end(), tiles.begin(), tiles.end());
        sources.emplace(id, std::move(src));
    }

    const SplitManifest manifest = split_dataset(plan, a.seed, a.holdout);
    const fs::path out_dir = resolve(g, a.out);
    const std::string digest = fnv1a64_hex(fmt::format("tile={} stride={} edge={} seed={} holdout={}",
                                                       a.tile, a.stride, a.edge, a.seed, a.holdout));
    const PngText text{{kDigestKey, digest}};
    const auto materialize = [&](const std::string& split, const std::vector<TileSpec>& specs) {
        for (const TileSpec& t : specs) {
            const Source& src = sources.at(t.image_id);
            const fs::path base = out_dir / "tiles" / split / tile_name(t);
            write_png(base.string() + ".png", extract_tile(src.image, t), text);
            write_png(base.string() + "_mask.png", mask_decode(extract_tile(src.labels, t), legend), text);
        }
    };
    materialize("train", manifest.train);
    materialize("test", manifest.test);
    materialize("holdout", manifest.holdout);
    write_manifest(out_dir / "manifest.tsv", manifest);
    fmt::print(out, "{} tiles\n", plan.size());
    fmt::print(out, "train {} / test {} / holdout {}\n", manifest.train.size(), manifest.test.size(),
               manifest.holdout.size());
    return kOk;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
    std::string kind = "color";
    int count = 8;
    int size = 64;
    std::uint64_t seed = 7;
    std::string out;
};

int cmd_synth(const Globals& g, const SynthArgs& a, std::ostream& out) {
    std::vector<SyntheticScene> scenes;
    if (a.kind == "color")
        scenes = color_fixture(a.count, a.size, a.seed);
    else if (a.kind == "context")
        scenes = context_fixture(a.count, a.size, a.seed);
    else
        throw ConfigError("--kind: expected color or context, got '" + a.kind + "'");
    write_scenes(resolve(g, a.out), scenes, ClassLegend::standard());
    fmt::print(out, "{} scenes\n", scenes.size());
    return kOk;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string run_name;
};

void print_epoch(std::ostream& out, const EpochRecord& r) {
    if (r.test)
        fmt::print(out, "epoch {:4d}  loss {:.5f}  test miou {:.4f}  mpa {:.4f}  acc {:.4f}\n",
                   r.epoch, r.train_loss, r.test->miou, r.test->mpa, r.test->accuracy);
    else
        fmt::print(out, "epoch {:4d}  loss {:.5f}\n", r.epoch, r.train_loss);
    out.flush();
}

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
    const RunConfig cfg = load_run_config(resolve(g, a.config));
    const std::string digest = config_digest(cfg);
    const Splits data = load_data(g, cfg);
    const fs::path run_dir = make_run_dir(g, cfg, digest, a.run_name);
    write_text(run_dir / "config.json", to_json(cfg));
    fmt::print(out, "config digest {}\nrun directory {}\ntrain {} tiles, test {} tiles\n", digest,
               run_dir.string(), data.train.size(), data.test.size());

    TrainHooks hooks;
    hooks.on_best = [&](const Model<float>& m, int epoch) {
        save_checkpoint(run_dir / "best.ckpt", m, digest);
        write_text(run_dir / "best_epoch.txt", fmt::format("{}\n# config_digest={}\n", epoch, digest));
    };
    hooks.on_epoch = [&](const Model<float>&, const EpochRecord& r) { print_epoch(out, r); };
    const TrainResult result = train(cfg.train, data.train, data.test, hooks);
    write_text(run_dir / "history.csv", format_history_csv(result.history, digest));
    fmt::print(out, "best epoch {}\n", result.best_epoch);
    return kOk;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string split = "test";
    std::string config;
    std::string data = ".";
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
    CheckpointInfo info;
    const Model<float> model = load_checkpoint<float>(resolve(g, a.checkpoint), &info);
    RunConfig cfg;
    if (!a.config.empty()) {
        cfg = load_run_config(resolve(g, a.config));
    } else {
        cfg.data.root = a.data;
        cfg.train.model = info.model;
    }
    if (cfg.legend.size() != info.model.num_classes)
        throw ConfigError(fmt::format("legend has {} classes, checkpoint model has {}",
                                      cfg.legend.size(), info.model.num_classes));
    const fs::path data_root = resolve(g, cfg.data.root);
    const SplitManifest manifest = read_manifest(data_root / cfg.data.manifest);
    const std::vector<TileSpec>* specs = nullptr;
    if (a.split == "train") specs = &manifest.train;
    else if (a.split == "test") specs = &manifest.test;
    else if (a.split == "holdout") specs = &manifest.holdout;
    else throw ConfigError("--split: expected train, test or holdout, got '" + a.split + "'");
    if (specs->empty()) throw DataError("split '" + a.split + "' has no tiles");
    const Dataset data = load_tiles(data_root / cfg.data.tiles_dir, a.split, *specs, cfg.legend);
    const Evaluation ev = evaluate(model, data);
    fmt::print(out, "split {}  tiles {}  pixels {}\n", a.split, data.size(), ev.cm.total());
    fmt::print(out, "Accuracy {:.6f}\nMPA {:.6f}\nMIoU {:.6f}\n", ev.metrics.accuracy, ev.metrics.mpa,
               ev.metrics.miou);
    fmt::print(out, "config_digest {}\n", info.config_digest);
    return kOk;
}

// --- ablate ----------------------------------------------------------------

struct AblateArgs {
    std::string config;
    std::vector<std::uint64_t> seeds;
    std::string run_name;
};

int cmd_ablate(const Globals& g, const AblateArgs& a, std::ostream& out) {
    const RunConfig cfg = load_run_config(resolve(g, a.config));
    const std::string digest = config_digest(cfg);
    const Splits data = load_data(g, cfg);
    const std::vector<std::uint64_t> seeds = a.seeds.empty() ? std::vector{cfg.train.seed} : a.seeds;
    const fs::path run_dir = make_run_dir(g, cfg, digest, a.run_name);
    write_text(run_dir / "config.json", to_json(cfg));
    fmt::print(out, "config digest {}\nrun directory {}\n", digest, run_dir.string());

    std::vector<AblationReport> per_seed;
    for (std::uint64_t seed : seeds) {
        TrainConfig base = cfg.train;
        base.seed = seed;
        base.model.seed = seed;
        AblationHooks hooks;
        hooks.on_variant = [&](char label, std::uint64_t s, const TrainResult& r) {
            const std::string stem = fmt::format("{}_seed{}", label, s);
            write_text(run_dir / ("history_" + stem + ".csv"), format_history_csv(r.history, digest));
            save_checkpoint(run_dir / (stem + ".ckpt"), r.best, digest);
            fmt::print(out, "seed {} variant {} done (best epoch {})\n", s, label, r.best_epoch);
            out.flush();
        };
        AblationReport report = run_ablation(base, data.train, data.test, hooks);
        report.config_digest = digest;
        write_text(run_dir / fmt::format("ablation_seed{}.csv", seed), format_csv(report));
        per_seed.push_back(std::move(report));
    }
    const AblationReport summary = aggregate_median(per_seed);
    write_text(run_dir / "ablation.csv", format_csv(summary));
    write_text(run_dir / "ablation.md", format_markdown(summary));
    out << format_markdown(summary);
    return kOk;
}

// --- render ----------------------------------------------------------------

struct RenderArgs {
    std::string checkpoint, image, out, compare, config;
    std::optional<double> alpha;
    bool no_pad = false;
};

int cmd_render(const Globals& g, const RenderArgs& a, std::ostream& out) {
    CheckpointInfo info;
    const Model<float> model = load_checkpoint<float>(resolve(g, a.checkpoint), &info);
    const ClassLegend legend =
        a.config.empty() ? ClassLegend::standard() : load_run_config(resolve(g, a.config)).legend;
    if (legend.size() != info.model.num_classes)
        throw ConfigError(fmt::format("legend has {} classes, checkpoint model has {}", legend.size(),
                                      info.model.num_classes));
    const RgbImage image = read_png_rgb(resolve(g, a.image));
    const LabelMap labels = predict_labels(model, image, !a.no_pad);
    RgbImage result = overlay(image, labels, legend, a.alpha);
    if (!a.compare.empty())
        result = comparison_strip(image, result, read_png_rgb(resolve(g, a.compare)));
    write_png(resolve(g, a.out), result, {{kDigestKey, info.config_digest}});
    fmt::print(out, "wrote {} ({}x{})\n", resolve(g, a.out).string(), result.width, result.height);
    return kOk;
}

// --- gradcheck -------------------------------------------------------------

struct GradArgs {
    std::string scope = "all";
    std::string inject_fault;
    double tolerance = 1e-4;
};

int cmd_gradcheck(const GradArgs& a, std::ostream& out, std::ostream& err) {
    const auto results = run_gradcheck_suite({a.scope, a.tolerance, a.inject_fault});
    int failures = 0;
    for (const auto& r : results) {
        fmt::print(out, "{:<30} max rel. error {:.3e}  ({} elements)  {}\n", r.name, r.max_rel_error,
                   r.checked, r.passed ? "ok" : "FAIL");
        if (!r.passed) {
            ++failures;
            fmt::print(err, "gradcheck failed: {} at {}[{}], relative error {:.3e} >= {:g}\n", r.name,
                       r.worst_target, r.worst_index, r.max_rel_error, a.tolerance);
        }
    }
    fmt::print(out, "{} of {} checks passed\n", results.size() - failures, results.size());
    return failures == 0 ? kOk : kCheckFailed;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"attnseg: U-Net segmentation with SimAM/CBAM attention"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--root", g.root, "Base directory for relative paths")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker cap (overrides ATTNSEG_THREADS; 0 = auto)");

    TileArgs tile;
    auto* tile_cmd = app.add_subcommand("tile", "Cut image/mask pairs into tiles and write the split manifest");
    tile_cmd->add_option("--images", tile.images, "Directory of RGB PNG images")->required();
    tile_cmd->add_option("--masks", tile.masks, "Directory of color-mask PNGs with matching names")->required();
    tile_cmd->add_option("--out", tile.out, "Output directory")->required();
    tile_cmd->add_option("--tile", tile.tile, "Tile size")->capture_default_str();
    tile_cmd->add_option("--stride", tile.stride, "Tile stride")->capture_default_str();
    tile_cmd->add_option("--edge", tile.edge, "Edge policy: clamp or drop")->capture_default_str();
    tile_cmd->add_option("--seed", tile.seed, "Split seed")->capture_default_str();
    tile_cmd->add_option("--holdout", tile.holdout, "Image id held out of train/test");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic scene set (images/ and masks/)");
    synth_cmd->add_option("--kind", synth.kind, "color or context")->capture_default_str();
    synth_cmd->add_option("--count", synth.count, "Number of scenes")->capture_default_str();
    synth_cmd->add_option("--size", synth.size, "Scene side length in pixels")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train one model from a JSON run config");
    train_cmd->add_option("--config", train_args.config, "Run config JSON")->required();
    train_cmd->add_option("--run-name", train_args.run_name, "Run directory name (default: <UTC time>-<digest>)");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a manifest split");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--split", eval.split, "train, test or holdout")->capture_default_str();
    eval_cmd->add_option("--config", eval.config, "Run config supplying data paths and legend");
    eval_cmd->add_option("--data", eval.data, "Data root holding manifest.tsv and tiles/ (without --config)")
        ->capture_default_str();

    AblateArgs ablate;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train variants a-d and write the comparison report");
    ablate_cmd->add_option("--config", ablate.config, "Run config JSON")->required();
    ablate_cmd->add_option("--seeds", ablate.seeds, "Comma-separated seeds (default: train.seed)")->delimiter(',');
    ablate_cmd->add_option("--run-name", ablate.run_name, "Run directory name");

    RenderArgs render;
    auto* render_cmd = app.add_subcommand("render", "Color a prediction, optionally beside the truth mask");
    render_cmd->add_option("--checkpoint", render.checkpoint, "Checkpoint file")->required();
    render_cmd->add_option("--image", render.image, "Input RGB PNG")->required();
    render_cmd->add_option("--out", render.out, "Output PNG")->required();
    render_cmd->add_option("--compare", render.compare, "Truth color mask for an image|prediction|truth strip");
    render_cmd->add_option("--alpha", render.alpha, "Blend legend colors over the image (0..1)");
    render_cmd->add_option("--config", render.config, "Run config supplying the legend");
    render_cmd->add_flag("--no-pad", render.no_pad, "Fail instead of reflect-padding to the size multiple");

    GradArgs grad;
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
    grad_cmd->add_option("--scope", grad.scope, "all or one of: " + [] {
        return fmt::format("{}", fmt::join(gradcheck_scopes(), ", "));
    }())->capture_default_str();
    grad_cmd->add_option("--tolerance", grad.tolerance, "Maximum relative error")->capture_default_str();
    grad_cmd->add_option("--inject-fault", grad.inject_fault)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUserError;
    }

    try {
        if (g.threads >= 0) set_worker_count(g.threads);
        if (*tile_cmd) return cmd_tile(g, tile, out);
        if (*synth_cmd) return cmd_synth(g, synth, out);
        if (*train_cmd) return cmd_train(g, train_args, out);
        if (*eval_cmd) return cmd_eval(g, eval, out);
        if (*ablate_cmd) return cmd_ablate(g, ablate, out);
        if (*render_cmd) return cmd_render(g, render, out);
        if (*grad_cmd) return cmd_gradcheck(grad, out, err);
    } catch (const MissingDataError& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kMissingData;
    } catch (const NumericError& e) {
        fmt::print(err, "numeric error: {}\n", e.what());
        return kCheckFailed;
    } catch (const Error& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kUserError;
    } catch (const std::exception& e) {
        fmt::print(err, "internal error: {}\n", e.what());
        return kCheckFailed;
    }
    return kUserError;
}

}  // namespace attnseg::cli
