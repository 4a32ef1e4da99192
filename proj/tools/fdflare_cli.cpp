// Command line front end for the forecasting pipeline. Every verb prints
// a JSON summary on stdout; errors map to exit codes by exception type:
// usage 1, data 2, numeric 3.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fdflare/attribution.hpp"
#include "fdflare/catalog.hpp"
#include "fdflare/errors.hpp"
#include "fdflare/fetch.hpp"
#include "fdflare/model.hpp"
#include "fdflare/pipeline.hpp"
#include "fdflare/time_utils.hpp"

using namespace fdflare;
using pipeline::RunConfig;

namespace {

// Run-configuration options shared by the pipeline verbs. Values are only
// copied into the config when the option appeared on the command line, so
// layering is defaults, then --config file, then environment, then flags.
struct ConfigFlags {
    std::string config_path;
    std::string catalog, image_dir, output_dir, architecture;
    int epochs = 0, batch_size = 0, lr_halving = 0, val_partition = 0, window_hours = 0;
    double initial_lr = 0.0, threshold = 0.0;
    uint64_t seed = 0;
    bool no_augment = false, no_class_weights = false;
};

void add_config_flags(CLI::App* sub, ConfigFlags& f) {
    sub->add_option("--config", f.config_path, "JSON run configuration file");
    sub->add_option("--catalog", f.catalog, "flare catalog TSV");
    sub->add_option("--images", f.image_dir, "magnetogram image directory");
    sub->add_option("--out", f.output_dir, "output directory");
    sub->add_option("--arch", f.architecture, "model architecture (vgg16 | tiny)");
    sub->add_option("--epochs", f.epochs, "training epochs");
    sub->add_option("--batch-size", f.batch_size, "optimizer batch size");
    sub->add_option("--lr", f.initial_lr, "initial learning rate");
    sub->add_option("--lr-halving", f.lr_halving, "epochs between learning rate halvings");
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--threshold", f.threshold, "flare probability decision threshold");
    sub->add_option("--window-hours", f.window_hours, "forecast label window in hours");
    sub->add_option("--val-partition", f.val_partition, "calendar-quarter partition held out");
    sub->add_flag("--no-augment", f.no_augment, "disable flaring-class augmentation");
    sub->add_flag("--no-class-weights", f.no_class_weights, "disable loss class weighting");
}

RunConfig resolve_config(const CLI::App* sub, const ConfigFlags& f) {
    RunConfig cfg;
    if (!f.config_path.empty()) cfg = pipeline::load_config(f.config_path);
    pipeline::apply_env_overrides(cfg);
    if (sub->count("--catalog")) cfg.catalog_path = f.catalog;
    if (sub->count("--images")) cfg.image_dir = f.image_dir;
    if (sub->count("--out")) cfg.output_dir = f.output_dir;
    if (sub->count("--arch")) cfg.architecture = f.architecture;
    if (sub->count("--epochs")) cfg.epochs = f.epochs;
    if (sub->count("--batch-size")) cfg.batch_size = f.batch_size;
    if (sub->count("--lr")) cfg.initial_lr = f.initial_lr;
    if (sub->count("--lr-halving")) cfg.lr_halving_epochs = f.lr_halving;
    if (sub->count("--seed")) cfg.seed = f.seed;
    if (sub->count("--threshold")) cfg.threshold = f.threshold;
    if (sub->count("--window-hours")) cfg.label_window_hours = f.window_hours;
    if (sub->count("--val-partition")) cfg.validation_partition = f.val_partition;
    if (f.no_augment) cfg.augment = false;
    if (f.no_class_weights) cfg.class_weighting = false;
    return cfg;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

std::string default_weights(const RunConfig& cfg, const std::string& flag) {
    if (!flag.empty()) return flag;
    if (cfg.output_dir.empty()) throw UsageError("need --weights or an output directory");
    return cfg.output_dir + "/weights.bin";
}

std::vector<int64_t> fetch_timestamps(const std::string& list_path, const std::string& start,
                                      const std::string& end, int step_hours) {
    if (!list_path.empty()) {
        std::ifstream in(list_path);
        if (!in) throw DataError("cannot open timestamp list: " + list_path);
        std::vector<int64_t> ts;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ts.push_back(timeutil::parse_iso8601(line));
        }
        return ts;
    }
    if (start.empty() || end.empty())
        throw UsageError("fetch needs either --list or both --start and --end");
    if (step_hours < 1) throw UsageError("--step-hours must be at least 1");
    return catalog::generate_timeline(timeutil::parse_iso8601(start),
                                      timeutil::parse_iso8601(end),
                                      step_hours * timeutil::kSecondsPerHour);
}

const char* kind_label(model::LayerKind k) {
    switch (k) {
        case model::LayerKind::conv: return "conv";
        case model::LayerKind::relu: return "relu";
        case model::LayerKind::maxpool: return "maxpool";
        case model::LayerKind::adaptive_avg_pool: return "adaptive_avg_pool";
        case model::LayerKind::flatten: return "flatten";
        case model::LayerKind::fully_connected: return "fully_connected";
    }
    return "?";
}

// Cross-checks the closed-form parameter total against an actually built
// model and lists every layer output shape at the given input size.
nlohmann::json run_audit(const std::string& arch_name, int input_size, uint64_t seed) {
    const model::ArchitectureSpec spec = model::architecture_by_name(arch_name);
    const int64_t analytic = model::parameter_count(spec);
    const model::Model m = model::init_params(spec, "uniform", seed);
    int64_t built = 0;
    for (const auto& [name, tensor] : m.params) built += tensor.numel();

    const auto shapes = model::infer_shapes(spec, input_size, input_size);
    nlohmann::json layer_shapes = nlohmann::json::array();
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        nlohmann::json dims = nlohmann::json::array();
        for (const int64_t d : shapes[i]) dims.push_back(d);
        const std::string label = spec.layers[i].name.empty() ? kind_label(spec.layers[i].kind)
                                                              : spec.layers[i].name;
        layer_shapes.push_back({{"layer", label}, {"output", dims}});
    }

    nlohmann::json out{{"architecture", spec.name},
                       {"input_size", input_size},
                       {"analytic_parameters", analytic},
                       {"built_parameters", built},
                       {"match", analytic == built},
                       {"layers", layer_shapes}};
    if (analytic != built)
        throw DataError("parameter audit failed: analytic " + std::to_string(analytic) +
                        " vs built " + std::to_string(built));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Full-disk magnetogram flare forecasting pipeline"};
    app.require_subcommand(1);
    nlohmann::json result;

    // fetch
    auto* fetch_cmd = app.add_subcommand("fetch", "download magnetograms into a local cache");
    fetch::FetchSpec fspec;
    std::string fetch_list, fetch_start, fetch_end;
    int fetch_step_hours = 1;
    fetch_cmd->add_option("--cache-dir", fspec.cache_dir, "image cache directory")->required();
    fetch_cmd->add_option("--start", fetch_start, "first timestamp (ISO 8601)");
    fetch_cmd->add_option("--end", fetch_end, "last timestamp (ISO 8601, inclusive)");
    fetch_cmd->add_option("--step-hours", fetch_step_hours, "timeline cadence in hours");
    fetch_cmd->add_option("--list", fetch_list, "file with one ISO 8601 timestamp per line");
    fetch_cmd->add_option("--base-url", fspec.base_url, "image service base URL");
    fetch_cmd->add_option("--source-id", fspec.source_id, "image service source id");
    fetch_cmd->add_option("--image-scale", fspec.image_scale, "arcsec per pixel");
    fetch_cmd->add_option("--width", fspec.width, "stored image width");
    fetch_cmd->add_option("--height", fspec.height, "stored image height");
    fetch_cmd->add_option("--spacing-ms", fspec.spacing_ms, "minimum delay between requests");
    fetch_cmd->add_option("--retries", fspec.retries, "extra attempts per request");
    fetch_cmd->add_option("--backoff-ms", fspec.backoff_ms, "first retry delay, doubled per try");
    fetch_cmd->callback([&] {
        result = fetch::cmd_fetch(
            fspec, fetch_timestamps(fetch_list, fetch_start, fetch_end, fetch_step_hours));
    });

    // label / split / train / crossval / report: config in, files out
    ConfigFlags label_f, split_f, train_f, crossval_f, report_f, eval_f, explain_f;
    auto* label_cmd = app.add_subcommand("label", "label cached images from the flare catalog");
    add_config_flags(label_cmd, label_f);
    label_cmd->callback([&] { result = pipeline::cmd_label(resolve_config(label_cmd, label_f)); });

    auto* split_cmd = app.add_subcommand("split", "write train/validation partition manifests");
    add_config_flags(split_cmd, split_f);
    split_cmd->callback([&] { result = pipeline::cmd_split(resolve_config(split_cmd, split_f)); });

    auto* train_cmd = app.add_subcommand("train", "train a model on the training partition");
    add_config_flags(train_cmd, train_f);
    train_cmd->callback([&] { result = pipeline::cmd_train(resolve_config(train_cmd, train_f)); });

    auto* crossval_cmd =
        app.add_subcommand("crossval", "train and evaluate across all four partitions");
    add_config_flags(crossval_cmd, crossval_f);
    crossval_cmd->callback(
        [&] { result = pipeline::cmd_crossval(resolve_config(crossval_cmd, crossval_f)); });

    auto* report_cmd = app.add_subcommand("report", "merge per-fold predictions into one report");
    add_config_flags(report_cmd, report_f);
    report_cmd->callback(
        [&] { result = pipeline::cmd_report(resolve_config(report_cmd, report_f)); });

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score stored weights on the validation split");
    add_config_flags(eval_cmd, eval_f);
    std::string eval_weights;
    eval_cmd->add_option("--weights", eval_weights, "weights file (default <out>/weights.bin)");
    eval_cmd->callback([&] {
        const RunConfig cfg = resolve_config(eval_cmd, eval_f);
        result = pipeline::cmd_evaluate(cfg, default_weights(cfg, eval_weights));
    });

    // explain
    auto* explain_cmd = app.add_subcommand("explain", "attribute one prediction to pixels");
    add_config_flags(explain_cmd, explain_f);
    std::string ex_method = "integrated_gradients", ex_target = "FL";
    std::string ex_image, ex_prefix, ex_weights, ex_backgrounds_from;
    int ex_background_count = 10;
    pipeline::ExplainRequest ex_req;
    explain_cmd
        ->add_option("--method", ex_method,
                     "guided_grad_cam | integrated_gradients | deep_shap | occlusion")
        ->check(CLI::IsMember(
            {"guided_grad_cam", "ggcam", "integrated_gradients", "ig", "deep_shap", "occlusion"}));
    explain_cmd->add_option("--image", ex_image, "magnetogram PNG to explain")->required();
    explain_cmd->add_option("--out-prefix", ex_prefix, "writes <prefix>.f64/.png/.json")
        ->required();
    explain_cmd->add_option("--weights", ex_weights, "weights file (default <out>/weights.bin)");
    explain_cmd->add_option("--target", ex_target, "attribution target class")
        ->check(CLI::IsMember({"FL", "NF"}));
    explain_cmd->add_option("--steps", ex_req.steps, "integrated gradients steps");
    explain_cmd->add_option("--top-k", ex_req.top_k, "strongest pixels listed in the log");
    explain_cmd->add_option("--patch", ex_req.occlusion_patch, "occlusion patch size");
    explain_cmd->add_option("--stride", ex_req.occlusion_stride, "occlusion stride");
    explain_cmd->add_option("--background", ex_req.background_images,
                            "deep shap background image (repeatable)");
    explain_cmd->add_option("--backgrounds-from", ex_backgrounds_from,
                            "labeled manifest TSV to draw quiet-disk backgrounds from");
    explain_cmd->add_option("--background-count", ex_background_count,
                            "backgrounds taken from the manifest");
    explain_cmd->callback([&] {
        const RunConfig cfg = resolve_config(explain_cmd, explain_f);
        ex_req.method = attribution::parse_method(ex_method);
        ex_req.target = catalog::parse_label(ex_target);
        ex_req.image_path = ex_image;
        ex_req.out_prefix = ex_prefix;
        if (!ex_backgrounds_from.empty()) {
            const auto rows = catalog::read_manifest(ex_backgrounds_from);
            for (auto& p : pipeline::nf_background_paths(rows, ex_background_count))
                ex_req.background_images.push_back(std::move(p));
        }
        const model::Model m = model::load_weights(
            model::architecture_by_name(cfg.architecture), default_weights(cfg, ex_weights));
        result = pipeline::explain_image(m, ex_req);
    });

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    pipeline::SynthSpec synth_spec;
    synth_cmd->add_option("--out", synth_spec.out_dir, "dataset directory")->required();
    synth_cmd->add_option("--train-count", synth_spec.train_count, "training images");
    synth_cmd->add_option("--val-count", synth_spec.val_count, "validation images");
    synth_cmd->add_option("--size", synth_spec.image_size, "image side length in pixels");
    synth_cmd->add_option("--seed", synth_spec.seed, "random seed");
    synth_cmd->add_flag("--spread", synth_spec.spread_partitions,
                        "spread timestamps over all four partitions");
    synth_cmd->callback([&] {
        const pipeline::SynthResult r = pipeline::generate_synthetic(synth_spec);
        result = nlohmann::json{{"catalog", r.catalog_path},
                                {"image_dir", r.image_dir},
                                {"regions", r.regions_path},
                                {"fl_count", r.fl_count},
                                {"nf_count", r.nf_count},
                                {"label_window_hours", r.label_window_hours}};
    });

    // audit
    auto* audit_cmd =
        app.add_subcommand("audit", "cross-check model parameter bookkeeping and shapes");
    std::string audit_arch = "vgg16";
    int audit_input = 512;
    uint64_t audit_seed = 0;
    audit_cmd->add_option("--arch", audit_arch, "model architecture (vgg16 | tiny)");
    audit_cmd->add_option("--input", audit_input, "input side length in pixels");
    audit_cmd->add_option("--seed", audit_seed, "initialization seed");
    audit_cmd->callback([&] { result = run_audit(audit_arch, audit_input, audit_seed); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::usage);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::usage);
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::numeric);
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::data);
    }

    print_json(result);
    return static_cast<int>(ExitCode::ok);
}
