#pragma once

// Command-line front end: localize / segment / parts / eval.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "seghgnn/seghgnn.hpp"

namespace seghgnn::cli {

namespace fs = std::filesystem;

struct RunOptions {
    std::vector<std::string> features;
    std::string out;
    std::string boxes_out;
    std::optional<int> k;
    std::optional<int> epochs;
    int dim = 16;
    int hidden = 32;
    double lr_euclid = 0.01;
    double lr_stiefel = 0.1;
    double feature_scale = 3.0;
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string aggregation = "literal";
    std::string optimizer = "adam";
};

struct EvalOptions {
    std::vector<std::string> gt;
    std::vector<std::string> pred;
    std::string metric = "corloc";
};

enum class Task { localize, segment, parts };

namespace detail {

inline void add_run_options(CLI::App* sub, RunOptions& o, Task task) {
    sub->add_option("--features", o.features, "feature file(s) (.sghn)")->required();
    sub->add_option("--out", o.out, "mask output (.pgm); a directory when several feature files are given");
    if (task == Task::localize) {
        sub->add_option("--boxes-out", o.boxes_out, "box JSON output; a directory for several feature files");
    }
    sub->add_option("--k", o.k, task == Task::parts ? "number of parts (default 4)" : "number of clusters (default 2)")
        ->check(CLI::Range(2, 64));
    sub->add_option("--epochs", o.epochs, task == Task::parts ? "stage-2 epochs (default 100)" : "epochs (default 10)")
        ->check(CLI::Range(1, 1000000));
    sub->add_option("--dim", o.dim, "hyperbolic embedding dimension")->capture_default_str()->check(CLI::Range(1, 4096));
    sub->add_option("--hidden", o.hidden, "readout hidden width")->capture_default_str()->check(CLI::Range(1, 4096));
    sub->add_option("--lr-euclid", o.lr_euclid, "learning rate of the readout head")->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--lr-stiefel", o.lr_stiefel, "learning rate of the Stiefel block")->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--feature-scale", o.feature_scale, "max tangent norm of lifted features")->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "random seed (image i uses seed + i)")->capture_default_str();
    sub->add_option("--jobs", o.jobs, "images processed in parallel")->capture_default_str()->check(CLI::Range(1, 1024));
    sub->add_option("--aggregation", o.aggregation, "midpoint normalization")->capture_default_str()
        ->check(CLI::IsMember({"literal", "weighted"}));
    sub->add_option("--euclid-optimizer", o.optimizer, "optimizer of the readout head")->capture_default_str()
        ->check(CLI::IsMember({"adam", "sgd"}));
}

inline pipeline::TttConfig make_config(const RunOptions& o) {
    pipeline::TttConfig cfg;
    cfg.dim = o.dim;
    cfg.hidden = o.hidden;
    cfg.k = 2;
    cfg.epochs = 10;
    cfg.lr_euclid = o.lr_euclid;
    cfg.lr_stiefel = o.lr_stiefel;
    cfg.feature_scale = o.feature_scale;
    cfg.seed = o.seed;
    cfg.aggregation = o.aggregation == "weighted" ? manifold::Aggregation::weighted : manifold::Aggregation::literal;
    cfg.euclid_optimizer = o.optimizer == "sgd" ? pipeline::EuclidOptimizer::sgd : pipeline::EuclidOptimizer::adam;
    return cfg;
}

/// Everything one image produces; written to disk after all workers finish.
struct ImageOutput {
    std::string stdout_text;
    std::string warning;
    std::string error;
};

inline std::string grid_text(const LabelGrid& g) {
    std::ostringstream s;
    for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) s << (c ? " " : "") << g.at(r, c);
        s << '\n';
    }
    return s.str();
}

inline fs::path output_path(const std::string& base, const std::string& input, const char* ext, bool many) {
    if (!many) return fs::path(base);
    return fs::path(base) / (fs::path(input).stem().string() + ext);
}

inline ImageOutput run_image(Task task, const RunOptions& o, std::size_t index, bool many) {
    ImageOutput res;
    const std::string& input = o.features[index];
    try {
        const auto file = io::read_features(input);
        const auto graph = hgnn::PatchGraph::from_features(file.features, file.grid_h, file.grid_w);
        auto cfg = make_config(o);
        cfg.seed = o.seed + index;
        const long p = file.patch_size;
        std::size_t clamped = 0;

        if (task == Task::parts) {
            pipeline::PartConfig pc;
            pc.base = cfg;
            pc.parts = o.k.value_or(4);
            pc.stage2_epochs = o.epochs.value_or(100);
            const auto r = pipeline::part_segmentation(graph, pc);
            clamped = r.clamped;
            if (!o.out.empty()) {
                io::write_mask(r.parts, output_path(o.out, input, ".pgm", many),
                               io::MaskInfo{static_cast<int>(pc.parts) + 1, pipeline::kBackgroundPart, p});
            } else {
                res.stdout_text = grid_text(r.parts);
            }
        } else {
            cfg.k = o.k.value_or(2);
            cfg.epochs = o.epochs.value_or(10);
            const auto seg = pipeline::segment_object(graph, cfg);
            clamped = seg.clamped;
            const LabelGrid mask = pipeline::background_first(seg);
            if (!o.out.empty()) {
                io::write_mask(mask, output_path(o.out, input, ".pgm", many),
                               io::MaskInfo{static_cast<int>(cfg.k), 0, p});
            } else if (task == Task::segment) {
                res.stdout_text = grid_text(mask);
            }
            if (task == Task::localize) {
                const auto boxes = pipeline::extract_boxes(seg.labels, *seg.background, p);
                if (!o.boxes_out.empty()) {
                    io::write_boxes(output_path(o.boxes_out, input, ".json", many), boxes);
                } else {
                    res.stdout_text = io::encode_boxes(boxes);
                }
            }
        }
        if (clamped > 0) {
            res.warning = input + ": " + std::to_string(clamped) + " aggregated points clamped into the Klein ball";
        }
    } catch (const std::exception& e) {
        res.error = e.what();
    }
    return res;
}

inline int run_task(Task task, const RunOptions& o, std::ostream& out, std::ostream& err) {
    const bool many = o.features.size() > 1;
    if (many) {
        std::map<std::string, int> stems;
        for (const auto& f : o.features) {
            if (++stems[fs::path(f).stem().string()] > 1) {
                err << "error: duplicate input name '" << fs::path(f).stem().string() << "'\n";
                return 2;
            }
        }
        for (const auto* dir : {&o.out, &o.boxes_out}) {
            if (!dir->empty()) fs::create_directories(*dir);
        }
    }
    std::vector<ImageOutput> results(o.features.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < results.size(); i = next++) results[i] = run_image(task, o, i, many);
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(o.jobs), results.size());
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    }
    int code = 0;
    for (const auto& r : results) {
        if (!r.warning.empty()) err << "warning: " << r.warning << '\n';
        if (!r.error.empty()) {
            if (code == 0) err << "error: " << r.error << '\n';
            code = 1;
            continue;
        }
        out << r.stdout_text;
    }
    return code;
}

inline LabelGrid match_shape(const LabelGrid& pred, const LabelGrid& gt) {
    if (pred.rows == gt.rows && pred.cols == gt.cols) return pred;
    if (pred.rows > 0 && pred.cols > 0 && gt.rows % pred.rows == 0 && gt.cols % pred.cols == 0 &&
        gt.rows / pred.rows == gt.cols / pred.cols) {
        return metrics::upsample(pred, gt.rows / pred.rows);
    }
    throw Error(ErrorCode::shape_mismatch, "prediction " + std::to_string(pred.rows) + "x" + std::to_string(pred.cols) +
                                               " cannot be matched to ground truth " + std::to_string(gt.rows) + "x" +
                                               std::to_string(gt.cols));
}

inline int run_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
    if (o.gt.size() != o.pred.size()) {
        err << "error: " << o.gt.size() << " --gt files but " << o.pred.size() << " --pred files\n";
        return 2;
    }
    try {
        double value = 0.0;
        if (o.metric == "corloc") {
            std::vector<std::vector<BoundingBox>> preds, gts;
            for (std::size_t i = 0; i < o.gt.size(); ++i) {
                gts.push_back(io::read_ground_truth(o.gt[i]).boxes);
                preds.push_back(io::read_boxes(o.pred[i]));
            }
            value = metrics::corloc(preds, gts);
        } else {
            double sum = 0.0;
            for (std::size_t i = 0; i < o.gt.size(); ++i) {
                const auto gt_file = io::read_ground_truth(o.gt[i]);
                if (!gt_file.mask) throw Error(ErrorCode::parse, o.gt[i] + ": no \"mask\" entry");
                const LabelGrid gt = io::read_pgm(*gt_file.mask);
                const LabelGrid pred = match_shape(io::read_pgm(o.pred[i]), gt);
                if (o.metric == "miou") {
                    sum += metrics::miou(pred, gt);
                } else if (o.metric == "nmi") {
                    sum += metrics::nmi(pred.labels, gt.labels);
                } else {
                    sum += metrics::ari(pred.labels, gt.labels);
                }
            }
            value = 100.0 * sum / static_cast<double>(o.gt.size());
        }
        out << std::fixed << std::setprecision(1) << value << '\n';
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hyperbolic graph clustering for unsupervised segmentation and localization", "seghgnn"};
    app.require_subcommand(1);

    RunOptions loc, seg, parts;
    EvalOptions ev;
    auto* loc_cmd = app.add_subcommand("localize", "object localization (boxes around foreground components)");
    detail::add_run_options(loc_cmd, loc, Task::localize);
    auto* seg_cmd = app.add_subcommand("segment", "object segmentation mask");
    detail::add_run_options(seg_cmd, seg, Task::segment);
    auto* parts_cmd = app.add_subcommand("parts", "recursive semantic part segmentation");
    detail::add_run_options(parts_cmd, parts, Task::parts);
    auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
    eval_cmd->add_option("--gt", ev.gt, "ground-truth JSON file(s)")->required();
    eval_cmd->add_option("--pred", ev.pred, "prediction file(s): box JSON for corloc, PGM mask otherwise")->required();
    eval_cmd->add_option("--metric", ev.metric, "corloc | miou | nmi | ari")->capture_default_str()
        ->check(CLI::IsMember({"corloc", "miou", "nmi", "ari"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: " << msg << '\n';
        return 2;
    }

    try {
        if (loc_cmd->parsed()) return detail::run_task(Task::localize, loc, out, err);
        if (seg_cmd->parsed()) return detail::run_task(Task::segment, seg, out, err);
        if (parts_cmd->parsed()) return detail::run_task(Task::parts, parts, out, err);
        return detail::run_eval(ev, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace seghgnn::cli
