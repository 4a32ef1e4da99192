#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fdflare/attribution.hpp"
#include "fdflare/catalog.hpp"
#include "fdflare/evaluation.hpp"
#include "fdflare/model.hpp"

#include "json.hpp"

namespace fdflare::pipeline {

// Training and orchestration settings. Serializes to JSON losslessly and
// is embedded verbatim in every report the pipeline writes.
struct RunConfig {
    int epochs = 50;
    int batch_size = 64;
    double initial_lr = 0.001;
    int lr_halving_epochs = 5;
    uint64_t seed = 0;
    std::string architecture = "vgg16";
    bool augment = true;
    std::vector<catalog::AugmentKind> augment_kinds = {
        catalog::AugmentKind::vflip, catalog::AugmentKind::hflip,
        catalog::AugmentKind::rotate};
    bool class_weighting = true;
    double threshold = 0.5;
    std::string catalog_path;
    std::string image_dir;
    std::string output_dir;
    int validation_partition = 4;
    int label_window_hours = 24;
};

// initial_lr * 0.5^(epoch / lr_halving_epochs), integer division; epochs
// count from 0.
double lr_at_epoch(const RunConfig& cfg, int epoch);

nlohmann::json to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);

// FDFLARE_CATALOG, FDFLARE_IMAGE_DIR and FDFLARE_OUTPUT_DIR override the
// corresponding paths when set; nothing else has an environment hook.
void apply_env_overrides(RunConfig& cfg);

// Image files are named by their observation time: "20120702_102500.png".
std::string image_filename(int64_t timestamp);
std::optional<int64_t> timestamp_of_filename(const std::string& name);

// --- dataset assembly -------------------------------------------------

struct DatasetCounts {
    // [partition 1..4][label FL=0, NF=1]; index 0 unused
    std::array<std::array<int64_t, 2>, 5> by_partition{};

    int64_t fl() const;
    int64_t nf() const;
    int64_t total() const { return fl() + nf(); }
};

nlohmann::json to_json(const DatasetCounts& counts);

// One labeled row per file in image_dir whose name parses as a timestamp;
// other files are ignored, so gaps only reduce the counts. Events are
// sorted internally.
std::vector<catalog::LabeledSample> label_images(std::vector<catalog::FlareEvent> events,
                                                 const std::string& image_dir,
                                                 int64_t window_seconds);

DatasetCounts count_by_partition(const std::vector<catalog::LabeledSample>& rows);

std::vector<catalog::LabeledSample> rows_in_partition(
    const std::vector<catalog::LabeledSample>& rows, int partition);
std::vector<catalog::LabeledSample> rows_outside_partition(
    const std::vector<catalog::LabeledSample>& rows, int partition);

// --- synthetic dataset ------------------------------------------------

// Gaussian-noise magnetogram lookalikes; every second sample carries a
// planted bipolar blob and a matching catalog event 30 minutes into its
// label window. Labeling these images with a 1-hour window reproduces the
// planted classes exactly.
struct SynthSpec {
    int train_count = 512;
    int val_count = 128;
    int image_size = 64;
    uint64_t seed = 0;
    // spread timestamps round-robin over all four partitions instead of
    // train-in-1 / validation-in-4
    bool spread_partitions = false;
    std::string out_dir;
};

// Pixel box [y0,y1) x [x0,x1) covering a planted blob.
struct PlantedRegion {
    int64_t timestamp = 0;
    int64_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
};

struct SynthResult {
    std::string catalog_path;
    std::string image_dir;
    std::string regions_path;
    int64_t fl_count = 0;
    int64_t nf_count = 0;
    int64_t label_window_hours = 1;
};

SynthResult generate_synthetic(const SynthSpec& spec);

// Sidecar table of planted boxes: TSV with header timestamp, y0, y1, x0, x1.
std::vector<PlantedRegion> read_regions(const std::string& path);

// --- training ---------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // mean over optimizer batches
    std::optional<double> train_tss, train_hss;
    std::optional<double> val_tss, val_hss;
};

struct TrainOutput {
    model::Model trained;
    std::vector<EpochStats> history;
    // originals plus augmented copies, in optimizer order before shuffling;
    // copies carry the transform name in their augment field
    std::vector<catalog::LabeledSample> train_rows;
    std::array<double, 2> applied_class_weights{1.0, 1.0};
    int64_t missing_images = 0;  // manifest rows whose file had vanished
};

// SGD on the weighted mean negative log-likelihood of the log-softmax
// outputs, w <- w - lr * dw, with per-epoch reshuffling. FL training rows
// gain one augmented copy per configured kind; class weights are computed
// after that expansion. Deterministic given the config seed.
TrainOutput train_model(const RunConfig& cfg,
                        const std::vector<catalog::LabeledSample>& train,
                        const std::vector<catalog::LabeledSample>& val);

nlohmann::json history_json(const std::vector<EpochStats>& history);

// --- prediction -------------------------------------------------------

// One record per row: forward pass in batches, FL probability thresholded
// at cfg.threshold; event class and location copied from the responsible
// event, fold from the row's partition. Rows whose image file has vanished
// are skipped and reported through `missing` when given.
std::vector<evaluation::PredictionRecord> predict_records(
    const model::Model& m, const std::vector<catalog::LabeledSample>& rows,
    const RunConfig& cfg, std::vector<std::string>* missing = nullptr);

// --- cross-validation -------------------------------------------------

struct FoldOutput {
    int fold = 0;
    std::vector<evaluation::PredictionRecord> records;
    evaluation::ConfusionMatrix cm;
    std::vector<EpochStats> history;
};

struct CrossValOutput {
    std::vector<FoldOutput> folds;
    evaluation::CrossValSummary summary;
};

// Fold i validates on partition i and trains on the other three. All four
// partitions must be populated. `per_fold` (when set) receives each fold's
// full training output before the model is discarded.
CrossValOutput cross_validate(
    const RunConfig& cfg, const std::vector<catalog::LabeledSample>& rows,
    const std::function<void(int fold, const TrainOutput&)>& per_fold = nullptr);

// --- explanation ------------------------------------------------------

struct ExplainRequest {
    attribution::Method method = attribution::Method::integrated_gradients;
    catalog::Label target = catalog::Label::FL;
    std::string image_path;
    std::string out_prefix;  // writes <prefix>.f64, <prefix>.png, <prefix>.json
    int steps = 256;         // integrated gradients
    int top_k = 5;
    int occlusion_patch = 8;
    int occlusion_stride = 4;
    // deep shap backgrounds; the zero image is always appended
    std::vector<std::string> background_images;
};

inline constexpr double kCompletenessRelative = 1e-3;
inline constexpr double kCompletenessAbsolute = 1e-6;
inline constexpr int kCompletenessSteps = 256;  // calibration point of the bound

// Runs one attribution method, writes the raw map raster, the overlay
// rendering and a property log, and returns the log. Throws NumericError
// when a verifiable property fails: integrated-gradients completeness
// beyond kCompletenessRelative * |f(x) - f(baseline)| + kCompletenessAbsolute
// (relaxed by (kCompletenessSteps/steps)^2 below the calibration point:
// the midpoint-rule error on the piecewise-linear path integrand shrinks
// like 1/steps in the worst case, and the square leaves headroom for the
// fluctuating per-kink constant), or a deep-shap background off its
// delta.
nlohmann::json explain_image(const model::Model& m, const ExplainRequest& req);

// Deep-shap default background pool: the first `count` NF rows by
// timestamp.
std::vector<std::string> nf_background_paths(const std::vector<catalog::LabeledSample>& rows,
                                             int count = 10);

// --- command wrappers (file I/O under cfg.output_dir) -----------------

nlohmann::json cmd_label(const RunConfig& cfg);
nlohmann::json cmd_split(const RunConfig& cfg);
nlohmann::json cmd_train(const RunConfig& cfg);
nlohmann::json cmd_crossval(const RunConfig& cfg);
nlohmann::json cmd_evaluate(const RunConfig& cfg, const std::string& weights_path);
nlohmann::json cmd_report(const RunConfig& cfg);

}  // namespace fdflare::pipeline
