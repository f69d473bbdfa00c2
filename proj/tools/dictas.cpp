// Command-line front end: train, infer, eval, report-plot, protocol, make-toy, prompts.

#include "dictas/config.hpp"
#include "dictas/dataset.hpp"
#include "dictas/evaluation.hpp"
#include "dictas/image.hpp"
#include "dictas/inference.hpp"
#include "dictas/toy.hpp"
#include "dictas/training.hpp"

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace dictas;

namespace {

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
    Config cfg = path.empty() ? Config{} : Config::load(path);
    for (const auto& o : overrides) cfg.set(o);
    cfg.validate();
    return cfg;
}

std::vector<std::string> train_categories(const Config& cfg, const DatasetLayout& data) {
    return cfg.train.categories.empty() ? data.categories() : cfg.train.categories;
}

Checkpoint run_training(const Config& cfg, const fs::path& data_dir) {
    const DatasetLayout data(data_dir);
    const auto cats = train_categories(cfg, data);
    if (!cfg.allow_overlap) check_disjoint_categories(cats, cfg.test_categories);
    const auto backbone = make_backbone(cfg.backbone);
    const auto& spec = backbone->spec();
    const auto set = TrainingSet::from_layout(data, cats, spec.input_height, spec.input_width,
                                              cfg.train.anomaly_source_dir);
    std::fprintf(stderr, "training on %zu images from %zu categories\n", set.size, cats.size());
    const auto t0 = std::chrono::steady_clock::now();
    Checkpoint ck = train(cfg, set, *backbone, [&](const StepRecord& r) {
        if (r.step % 10 != 0) return;
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "step %5zu  epoch %3d  loss %.5f  (query %.5f  cqc %.5f  tac %.5f)  %.0fs\n", r.step,
                     r.epoch, r.total, r.parts.query, r.parts.cqc, r.parts.tac, s);
    });
    ck.config = cfg.to_json();
    return ck;
}

std::unique_ptr<Backbone> backbone_for(const Checkpoint& ck, const std::string& weights) {
    Config cfg = Config::from_json(ck.config);
    if (!weights.empty()) cfg.backbone.weights_path = weights;
    return make_backbone(cfg.backbone);
}

std::vector<fs::path> pick_references(const fs::path& dir, std::size_t shots, std::uint64_t seed) {
    const auto pool = list_images(dir);
    if (pool.empty()) throw Error("no reference images in " + dir.string());
    return sample_references(pool, shots, seed);
}

fs::path manifest_path(const fs::path& report) {
    return report.extension() == ".kv" ? report : fs::path(report.string() + ".kv");
}

void plot_report(const EvalReport& r, const fs::path& out) {
    static constexpr const char* headers[] = {"px AUROC", "px PRO", "px AP", "img AUROC", "img F1", "img AP"};
    const int cw = 110, ch = 34, name_w = 170, head_h = 40;
    const int rows = static_cast<int>(r.categories.size()) + 1;
    cv::Mat canvas(head_h + rows * ch, name_w + 6 * cw, CV_8UC3, cv::Scalar(255, 255, 255));
    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    for (int k = 0; k < 6; ++k)
        cv::putText(canvas, headers[k], {name_w + k * cw + 8, head_h - 14}, font, 0.45, {0, 0, 0}, 1, cv::LINE_AA);
    auto row = [&](int i, const std::string& name, const MetricSet& m) {
        const int y = head_h + i * ch;
        cv::putText(canvas, name, {8, y + ch - 11}, font, 0.5, {0, 0, 0}, 1, cv::LINE_AA);
        for (int k = 0; k < 6; ++k) {
            const double v = std::clamp(m[static_cast<std::size_t>(k)], 0.0, 1.0);
            cv::Mat px(1, 1, CV_8UC1, cv::Scalar(static_cast<int>(std::lround(255.0 * v))));
            cv::Mat colour;
            cv::applyColorMap(px, colour, cv::COLORMAP_VIRIDIS);
            const auto c = colour.at<cv::Vec3b>(0, 0);
            const cv::Rect cell(name_w + k * cw, y, cw - 2, ch - 2);
            cv::rectangle(canvas, cell, cv::Scalar(c[0], c[1], c[2]), cv::FILLED);
            char buf[16];
            std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
            const cv::Scalar ink = v > 0.6 ? cv::Scalar(0, 0, 0) : cv::Scalar(255, 255, 255);
            cv::putText(canvas, buf, {cell.x + 30, y + ch - 11}, font, 0.55, ink, 1, cv::LINE_AA);
        }
    };
    int i = 0;
    for (const auto& c : r.categories) row(i++, c.name, c.mean);
    row(i, "mean", r.mean);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    if (!cv::imwrite(out.string(), canvas)) throw Error("cannot write " + out.string());
}

std::vector<std::size_t> parse_shots(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) out.push_back(std::stoul(tok));
    if (out.empty()) throw Error("no shot counts given");
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot anomaly segmentation with learned dictionary lookup"};
    app.require_subcommand(1);

    // train
    std::string cfg_path, data_dir, ckpt_out;
    std::vector<std::string> overrides;
    bool allow_overlap = false;
    auto* train_cmd = app.add_subcommand("train", "train the generators on auxiliary categories");
    train_cmd->add_option("--config", cfg_path, "JSON config")->check(CLI::ExistingFile);
    train_cmd->add_option("--data", data_dir, "MVTec-style dataset root")->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("--out", ckpt_out, "checkpoint to write")->required();
    train_cmd->add_option("--set", overrides, "override a config value, e.g. train.lr=1e-3");
    train_cmd->add_flag("--allow-overlap", allow_overlap, "permit test categories among training categories");

    // infer
    std::string ckpt_path, ref_dir, query_dir, out_dir, lookup = "sparse", weights;
    std::size_t shots = 4;
    std::uint64_t seed = 0;
    bool no_smooth = false, timing = false;
    auto* infer_cmd = app.add_subcommand("infer", "anomaly maps for a folder of query images");
    infer_cmd->add_option("--ckpt", ckpt_path)->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--ref-dir", ref_dir, "normal images to sample references from")
        ->required()->check(CLI::ExistingDirectory);
    infer_cmd->add_option("--query-dir", query_dir)->required()->check(CLI::ExistingDirectory);
    infer_cmd->add_option("--shots", shots, "number of reference images k")->check(CLI::PositiveNumber);
    infer_cmd->add_option("--lookup", lookup)->check(CLI::IsMember({"maximum", "dense", "sparse"}));
    infer_cmd->add_option("--out", out_dir)->required();
    infer_cmd->add_option("--seed", seed, "reference sampling seed");
    infer_cmd->add_option("--weights", weights, "backbone weights, overriding the checkpoint's path");
    infer_cmd->add_flag("--no-smooth", no_smooth, "skip Gaussian smoothing of the map");
    infer_cmd->add_flag("--timing", timing, "print wall-clock time of dictionary construction and queries");

    // eval
    std::string pred_dir, report_path, eval_cfg_path;
    std::size_t seeds = 1;
    std::vector<std::string> eval_categories;
    auto* eval_cmd = app.add_subcommand("eval", "pixel and image metrics of saved predictions");
    eval_cmd->add_option("--pred-dir", pred_dir)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--report", report_path)->required();
    eval_cmd->add_option("--seeds", seeds)->check(CLI::PositiveNumber);
    eval_cmd->add_option("--config", eval_cfg_path, "config whose eval section is used")->check(CLI::ExistingFile);
    eval_cmd->add_option("--categories", eval_categories, "default: every category with predictions")->delimiter(',');

    // report-plot
    std::string plot_out;
    auto* plot_cmd = app.add_subcommand("report-plot", "render a report as a heatmap table");
    plot_cmd->add_option("--report", report_path, "report written by eval")->required();
    plot_cmd->add_option("--out", plot_out)->required();

    // protocol
    std::string train_data, test_data, shots_list;
    for (const std::size_t k : kProtocolShots) shots_list += (shots_list.empty() ? "" : ",") + std::to_string(k);
    std::size_t protocol_seeds = kProtocolSeeds;
    auto* proto_cmd = app.add_subcommand(
        "protocol", "full benchmark protocol: train once, then every shot count over several seeds");
    proto_cmd->add_option("--config", cfg_path)->required()->check(CLI::ExistingFile);
    proto_cmd->add_option("--train-data", train_data)->required()->check(CLI::ExistingDirectory);
    proto_cmd->add_option("--test-data", test_data)->required()->check(CLI::ExistingDirectory);
    proto_cmd->add_option("--out", out_dir)->required();
    proto_cmd->add_option("--ckpt", ckpt_path, "reuse a trained checkpoint")->check(CLI::ExistingFile);
    proto_cmd->add_option("--shots", shots_list);
    proto_cmd->add_option("--seeds", protocol_seeds)->check(CLI::PositiveNumber);
    proto_cmd->add_option("--lookup", lookup)->check(CLI::IsMember({"maximum", "dense", "sparse"}));
    proto_cmd->add_option("--set", overrides);
    proto_cmd->add_flag("--allow-overlap", allow_overlap);

    // make-toy
    std::vector<std::string> toy_classes = {"stripes", "checker", "dots", "waves"};
    ToyCorpusOptions toy;
    auto* toy_cmd = app.add_subcommand("make-toy", "write the procedural texture corpus");
    toy_cmd->add_option("--out", out_dir)->required();
    toy_cmd->add_option("--classes", toy_classes)->delimiter(',');
    toy_cmd->add_option("--size", toy.size);
    toy_cmd->add_option("--seed", toy.seed);

    // prompts
    std::vector<std::string> prompt_classes;
    std::string prompt_file;
    auto* prompts_cmd = app.add_subcommand("prompts", "print every prompt of the ensemble, one per line");
    prompts_cmd->add_option("--classes", prompt_classes, "category names")->required()->delimiter(',');
    prompts_cmd->add_option("--prompts", prompt_file, "prompt file instead of the built-in list")
        ->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            Config cfg = load_config(cfg_path, overrides);
            cfg.allow_overlap = cfg.allow_overlap || allow_overlap;
            const Checkpoint ck = run_training(cfg, data_dir);
            ck.save(ckpt_out);
            std::fprintf(stderr, "wrote %s (%zu steps)\n", ckpt_out.c_str(), ck.steps);
        } else if (infer_cmd->parsed()) {
            const Checkpoint ck = Checkpoint::load(ckpt_path);
            const auto backbone = backbone_for(ck, weights);
            Config cfg = Config::from_json(ck.config);
            InferenceOptions opts{cfg.lookup, cfg.scoring};
            opts.lookup.strategy = parse_lookup_strategy(lookup);
            if (no_smooth) opts.scoring.smooth = false;
            const auto refs = pick_references(ref_dir, shots, seed);
            const auto t0 = std::chrono::steady_clock::now();
            infer_directory(*backbone, ck, refs, query_dir, out_dir, opts);
            if (timing) {
                const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                const std::size_t n = list_queries(query_dir).size();
                std::fprintf(stderr, "%zu queries, k=%zu: %.3f s total, %.1f ms per query (wall clock, incl. I/O)\n", n,
                             shots, s, 1000.0 * s / static_cast<double>(n));
            }
            std::ofstream used(fs::path(out_dir) / "references.txt");
            for (const auto& r : refs) used << r.string() << '\n';
        } else if (eval_cmd->parsed()) {
            const Config cfg = load_config(eval_cfg_path, {});
            const DatasetLayout data(data_dir);
            if (eval_categories.empty())
                for (const auto& c : data.categories())
                    if (fs::is_directory(fs::path(pred_dir) / c)) eval_categories.push_back(c);
            if (eval_categories.empty()) throw Error("no category of " + data_dir + " has predictions in " + pred_dir);
            EvalReport report = evaluate_directory(pred_dir, data, seeds, cfg.eval, eval_categories);
            report.info["predictions"] = pred_dir;
            write_report(report, report_path);
            std::cout << report.table();
        } else if (plot_cmd->parsed()) {
            std::ifstream in(manifest_path(report_path));
            if (!in) throw Error("cannot read " + manifest_path(report_path).string());
            std::stringstream text;
            text << in.rdbuf();
            plot_report(EvalReport::parse_manifest(text.str()), plot_out);
        } else if (proto_cmd->parsed()) {
            Config cfg = load_config(cfg_path, overrides);
            cfg.allow_overlap = cfg.allow_overlap || allow_overlap;
            cfg.lookup.strategy = parse_lookup_strategy(lookup);
            const DatasetLayout test_layout(test_data);
            const auto test_cats = cfg.test_categories.empty() ? test_layout.categories() : cfg.test_categories;
            if (fs::equivalent(train_data, test_data) && !cfg.allow_overlap)
                check_disjoint_categories(train_categories(cfg, DatasetLayout(train_data)), test_cats);
            fs::create_directories(out_dir);
            Checkpoint ck;
            if (ckpt_path.empty()) {
                ck = run_training(cfg, train_data);
                ck.save(fs::path(out_dir) / "model.ckpt");
            } else {
                ck = Checkpoint::load(ckpt_path);
            }
            const auto backbone = backbone_for(ck, cfg.backbone.weights_path);
            const InferenceOptions opts{cfg.lookup, cfg.scoring};
            for (const std::size_t k : parse_shots(shots_list)) {
                const fs::path pred = fs::path(out_dir) / (std::to_string(k) + "shot");
                for (const auto& cat : test_cats)
                    for (std::size_t s = 0; s < protocol_seeds; ++s) {
                        const auto refs = pick_references(test_layout.category_dir(cat) / "train" / "good", k, s);
                        infer_directory(*backbone, ck, refs, test_layout.category_dir(cat) / "test",
                                        pred / cat / ("seed_" + std::to_string(s)), opts);
                        std::fprintf(stderr, "%zu-shot %s seed %zu done\n", k, cat.c_str(), s);
                    }
                EvalReport report = evaluate_directory(pred, test_layout, protocol_seeds, cfg.eval, test_cats);
                report.info["shots"] = std::to_string(k);
                report.info["lookup"] = lookup;
                const fs::path file = fs::path(out_dir) / ("report_" + std::to_string(k) + "shot.txt");
                write_report(report, file);
                std::cout << report.table() << '\n';
            }
        } else if (toy_cmd->parsed()) {
            write_toy_corpus(out_dir, toy_classes, toy);
        } else if (prompts_cmd->parsed()) {
            const PromptSet set = prompt_file.empty() ? PromptSet::defaults() : PromptSet::load(prompt_file);
            for (const auto& cls : prompt_classes)
                for (const bool abnormal : {false, true})
                    for (const auto& p : set.prompts(prompt_class_name(cls), abnormal)) std::cout << p << '\n';
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
