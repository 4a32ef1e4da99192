#include "fdflare/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <unordered_set>

#include "fdflare/errors.hpp"
#include "fdflare/imaging.hpp"
#include "fdflare/ops.hpp"
#include "fdflare/png_io.hpp"
#include "fdflare/raster_io.hpp"
#include "fdflare/text_table.hpp"
#include "fdflare/time_utils.hpp"

namespace fs = std::filesystem;

namespace fdflare::pipeline {

double lr_at_epoch(const RunConfig& cfg, int epoch) {
    if (epoch < 0) throw UsageError("epoch must be non-negative");
    if (cfg.lr_halving_epochs < 1) throw DataError("lr_halving_epochs must be positive");
    return cfg.initial_lr * std::pow(0.5, epoch / cfg.lr_halving_epochs);
}

namespace {

catalog::AugmentKind parse_augment_kind(const std::string& text) {
    for (catalog::AugmentKind k : {catalog::AugmentKind::vflip, catalog::AugmentKind::hflip,
                                   catalog::AugmentKind::rotate})
        if (text == catalog::augment_kind_name(k)) return k;
    throw DataError("unknown augmentation kind: '" + text + "'");
}

void validate_config(const RunConfig& cfg) {
    if (cfg.epochs < 1) throw DataError("epochs must be positive");
    if (cfg.batch_size < 1) throw DataError("batch_size must be positive");
    if (!(cfg.initial_lr > 0.0)) throw DataError("initial_lr must be positive");
    if (cfg.lr_halving_epochs < 1) throw DataError("lr_halving_epochs must be positive");
    if (!(cfg.threshold >= 0.0 && cfg.threshold <= 1.0))
        throw DataError("threshold must lie in [0, 1]");
    if (cfg.validation_partition < 1 || cfg.validation_partition > 4)
        throw DataError("validation_partition must be 1..4");
    if (cfg.label_window_hours < 1) throw DataError("label_window_hours must be positive");
    model::architecture_by_name(cfg.architecture);
}

}  // namespace

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json kinds = nlohmann::json::array();
    for (catalog::AugmentKind k : cfg.augment_kinds)
        kinds.push_back(catalog::augment_kind_name(k));
    return {{"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"initial_lr", cfg.initial_lr},
            {"lr_halving_epochs", cfg.lr_halving_epochs},
            {"seed", cfg.seed},
            {"architecture", cfg.architecture},
            {"augment", cfg.augment},
            {"augment_kinds", kinds},
            {"class_weighting", cfg.class_weighting},
            {"threshold", cfg.threshold},
            {"catalog", cfg.catalog_path},
            {"image_dir", cfg.image_dir},
            {"output_dir", cfg.output_dir},
            {"validation_partition", cfg.validation_partition},
            {"label_window_hours", cfg.label_window_hours}};
}

RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("config must be a JSON object");
    RunConfig cfg;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "epochs")
                cfg.epochs = value.get<int>();
            else if (key == "batch_size")
                cfg.batch_size = value.get<int>();
            else if (key == "initial_lr")
                cfg.initial_lr = value.get<double>();
            else if (key == "lr_halving_epochs")
                cfg.lr_halving_epochs = value.get<int>();
            else if (key == "seed")
                cfg.seed = value.get<uint64_t>();
            else if (key == "architecture")
                cfg.architecture = value.get<std::string>();
            else if (key == "augment")
                cfg.augment = value.get<bool>();
            else if (key == "augment_kinds") {
                cfg.augment_kinds.clear();
                for (const auto& k : value)
                    cfg.augment_kinds.push_back(parse_augment_kind(k.get<std::string>()));
            } else if (key == "class_weighting")
                cfg.class_weighting = value.get<bool>();
            else if (key == "threshold")
                cfg.threshold = value.get<double>();
            else if (key == "catalog")
                cfg.catalog_path = value.get<std::string>();
            else if (key == "image_dir")
                cfg.image_dir = value.get<std::string>();
            else if (key == "output_dir")
                cfg.output_dir = value.get<std::string>();
            else if (key == "validation_partition")
                cfg.validation_partition = value.get<int>();
            else if (key == "label_window_hours")
                cfg.label_window_hours = value.get<int>();
            else
                throw DataError("unknown config key: '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad config value: ") + e.what());
    }
    validate_config(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    return config_from_json(j);
}

void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write config: " + path);
    out << to_json(cfg).dump(2) << "\n";
    if (!out) throw DataError("failed writing config: " + path);
}

void apply_env_overrides(RunConfig& cfg) {
    if (const char* v = std::getenv("FDFLARE_CATALOG")) cfg.catalog_path = v;
    if (const char* v = std::getenv("FDFLARE_IMAGE_DIR")) cfg.image_dir = v;
    if (const char* v = std::getenv("FDFLARE_OUTPUT_DIR")) cfg.output_dir = v;
}

std::string image_filename(int64_t timestamp) {
    int64_t days = timestamp / timeutil::kSecondsPerDay;
    int64_t rem = timestamp % timeutil::kSecondsPerDay;
    if (rem < 0) {
        rem += timeutil::kSecondsPerDay;
        --days;
    }
    int y, m, d;
    timeutil::civil_from_days(days, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d%02d%02d_%02d%02d%02d.png", y, m, d,
                  static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                  static_cast<int>(rem % 60));
    return buf;
}

std::optional<int64_t> timestamp_of_filename(const std::string& name) {
    // 20120702_102500.png
    if (name.size() != 19 || name.compare(15, 4, ".png") != 0 || name[8] != '_')
        return std::nullopt;
    for (size_t i = 0; i < 15; ++i)
        if (i != 8 && !std::isdigit(static_cast<unsigned char>(name[i]))) return std::nullopt;
    const auto num = [&](size_t pos, size_t len) {
        return std::stoi(name.substr(pos, len));
    };
    try {
        return timeutil::utc_seconds(num(0, 4), num(4, 2), num(6, 2), num(9, 2), num(11, 2),
                                     num(13, 2));
    } catch (const DataError&) {
        return std::nullopt;
    }
}

// --- dataset assembly -------------------------------------------------

int64_t DatasetCounts::fl() const {
    int64_t n = 0;
    for (const auto& p : by_partition) n += p[0];
    return n;
}

int64_t DatasetCounts::nf() const {
    int64_t n = 0;
    for (const auto& p : by_partition) n += p[1];
    return n;
}

nlohmann::json to_json(const DatasetCounts& counts) {
    nlohmann::json parts = nlohmann::json::array();
    for (int p = 1; p <= 4; ++p)
        parts.push_back({{"partition", p},
                         {"FL", counts.by_partition[static_cast<size_t>(p)][0]},
                         {"NF", counts.by_partition[static_cast<size_t>(p)][1]}});
    return {{"by_partition", parts},
            {"FL", counts.fl()},
            {"NF", counts.nf()},
            {"total", counts.total()}};
}

std::vector<catalog::LabeledSample> label_images(std::vector<catalog::FlareEvent> events,
                                                 const std::string& image_dir,
                                                 int64_t window_seconds) {
    if (window_seconds <= 0) throw DataError("label window must be positive");
    std::error_code ec;
    fs::directory_iterator it(image_dir, ec);
    if (ec) throw DataError("cannot list image directory: " + image_dir);

    std::vector<std::pair<int64_t, std::string>> found;
    for (const auto& entry : it) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (const auto ts = timestamp_of_filename(name)) found.emplace_back(*ts, name);
    }
    std::sort(found.begin(), found.end());

    const auto sorted = catalog::sorted_by_peak(std::move(events));
    std::vector<catalog::LabeledSample> rows;
    rows.reserve(found.size());
    for (const auto& [ts, name] : found) {
        const catalog::LabelResult lr = catalog::label_timestamp(sorted, ts, window_seconds);
        catalog::LabeledSample row;
        row.timestamp = ts;
        row.image_path = (fs::path(image_dir) / name).string();
        row.label = lr.label;
        row.partition = catalog::assign_partition(ts);
        row.responsible = lr.responsible;
        row.tie = lr.tie;
        rows.push_back(std::move(row));
    }
    return rows;
}

DatasetCounts count_by_partition(const std::vector<catalog::LabeledSample>& rows) {
    DatasetCounts counts;
    for (const auto& r : rows) {
        if (r.partition < 1 || r.partition > 4)
            throw DataError("sample partition outside 1..4: " +
                            std::to_string(r.partition));
        ++counts.by_partition[static_cast<size_t>(r.partition)]
                             [r.label == catalog::Label::FL ? 0 : 1];
    }
    return counts;
}

std::vector<catalog::LabeledSample> rows_in_partition(
    const std::vector<catalog::LabeledSample>& rows, int partition) {
    std::vector<catalog::LabeledSample> out;
    for (const auto& r : rows)
        if (r.partition == partition) out.push_back(r);
    return out;
}

std::vector<catalog::LabeledSample> rows_outside_partition(
    const std::vector<catalog::LabeledSample>& rows, int partition) {
    std::vector<catalog::LabeledSample> out;
    for (const auto& r : rows)
        if (r.partition != partition) out.push_back(r);
    return out;
}

// --- synthetic dataset ------------------------------------------------

namespace {

constexpr uint64_t kSeedMix = 0x9e3779b97f4a7c15ULL;

struct PlantedBlob {
    int64_t cy, cx;
    PlantedRegion box;
};

// Opposite-sign Gaussian lobes side by side, the bipolar footprint of an
// active region.
PlantedBlob plant_blob(Tensor& image, int64_t size, std::mt19937_64& rng, int64_t ts) {
    const int64_t d = size / 8;
    const double sigma = static_cast<double>(size) / 16.0;
    const double amplitude = 100.0;
    std::uniform_int_distribution<int64_t> center(size / 4, 3 * size / 4 - 1);
    const int64_t cy = center(rng);
    const int64_t cx = center(rng);
    double* p = image.mutable_data();
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            const double dy = static_cast<double>(y - cy);
            const double dxp = static_cast<double>(x - (cx - d));
            const double dxn = static_cast<double>(x - (cx + d));
            const double g = std::exp(-(dy * dy + dxp * dxp) / (2.0 * sigma * sigma)) -
                             std::exp(-(dy * dy + dxn * dxn) / (2.0 * sigma * sigma));
            p[y * size + x] += amplitude * g;
        }
    const auto clamp = [&](int64_t v) { return std::clamp<int64_t>(v, 0, size); };
    const int64_t reach = static_cast<int64_t>(std::floor(2.5 * sigma));
    PlantedRegion box;
    box.timestamp = ts;
    box.y0 = clamp(cy - reach);
    box.y1 = clamp(cy + reach + 1);
    box.x0 = clamp(cx - d - reach);
    box.x1 = clamp(cx + d + reach + 1);
    return PlantedBlob{cy, cx, box};
}

void write_regions(const std::string& path, const std::vector<PlantedRegion>& regions) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write regions: " + path);
    out << "timestamp\ty0\ty1\tx0\tx1\n";
    for (const auto& r : regions)
        out << timeutil::format_iso8601(r.timestamp) << '\t' << r.y0 << '\t' << r.y1 << '\t'
            << r.x0 << '\t' << r.x1 << "\n";
    if (!out) throw DataError("failed writing regions: " + path);
}

}  // namespace

SynthResult generate_synthetic(const SynthSpec& spec) {
    if (spec.train_count < 0 || spec.val_count < 0 || spec.train_count + spec.val_count < 1)
        throw UsageError("synthetic dataset needs at least one sample");
    if (spec.image_size < 16) throw UsageError("synthetic images must be at least 16 pixels");
    if (spec.out_dir.empty()) throw UsageError("synthetic dataset needs an output directory");

    const fs::path out_dir(spec.out_dir);
    const fs::path image_dir = out_dir / "images";
    fs::create_directories(image_dir);

    const std::array<int64_t, 4> quarter_start = {
        timeutil::utc_seconds(2023, 1, 1), timeutil::utc_seconds(2023, 4, 1),
        timeutil::utc_seconds(2023, 7, 1), timeutil::utc_seconds(2023, 10, 1)};
    const int total = spec.train_count + spec.val_count;

    std::vector<catalog::FlareEvent> events;
    std::vector<PlantedRegion> regions;
    SynthResult result;
    int64_t fl_ordinal = 0;
    for (int i = 0; i < total; ++i) {
        int64_t ts;
        if (spec.spread_partitions) {
            // Consecutive pairs share a quarter so every partition sees
            // both classes (flare status alternates with the index).
            ts = quarter_start[static_cast<size_t>((i / 2) % 4)] +
                 static_cast<int64_t>(i / 8 * 2 + i % 2) * timeutil::kSecondsPerHour;
        } else if (i < spec.train_count) {
            ts = quarter_start[0] + static_cast<int64_t>(i) * timeutil::kSecondsPerHour;
        } else {
            ts = quarter_start[3] +
                 static_cast<int64_t>(i - spec.train_count) * timeutil::kSecondsPerHour;
        }

        std::mt19937_64 rng(spec.seed ^ (kSeedMix * static_cast<uint64_t>(ts)));
        const int64_t size = spec.image_size;
        Tensor image(Shape{1, size, size});
        std::normal_distribution<double> noise(127.5, 6.0);
        double* p = image.mutable_data();
        for (int64_t k = 0; k < image.numel(); ++k) p[k] = noise(rng);

        const bool flare = i % 2 == 0;
        if (flare) {
            const PlantedBlob blob = plant_blob(image, size, rng, ts);
            regions.push_back(blob.box);

            catalog::FlareEvent ev;
            ev.peak_time = ts + 1800;
            ev.start_time = ts + 1500;
            const bool major = fl_ordinal % 4 == 3;
            ev.peak_flux = major ? 1.5e-4 : 5e-5;
            ev.class_label = catalog::flux_to_class(ev.peak_flux);
            ev.located = true;
            const double span = static_cast<double>(size - 1);
            ev.hgs_lat = static_cast<double>(blob.cy) / span * 180.0 - 90.0;
            ev.hgs_lon = static_cast<double>(blob.cx) / span * 180.0 - 90.0;
            ev.noaa_ar = static_cast<int>(10000 + fl_ordinal);
            events.push_back(ev);
            ++fl_ordinal;
            ++result.fl_count;
        } else {
            ++result.nf_count;
        }
        pngio::write_gray((image_dir / image_filename(ts)).string(), image);
    }

    result.catalog_path = (out_dir / "catalog.tsv").string();
    result.image_dir = image_dir.string();
    result.regions_path = (out_dir / "regions.tsv").string();
    catalog::write_catalog(result.catalog_path, catalog::sorted_by_peak(std::move(events)));
    write_regions(result.regions_path, regions);
    return result;
}

std::vector<PlantedRegion> read_regions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open regions: " + path);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError(path + ": empty regions file");
    ++line_no;
    if (tsv::split(line) != std::vector<std::string>{"timestamp", "y0", "y1", "x0", "x1"})
        tsv::fail(path, line_no, "unexpected regions header");
    std::vector<PlantedRegion> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = tsv::split(line);
        if (f.size() != 5)
            tsv::fail(path, line_no, "expected 5 fields, got " + std::to_string(f.size()));
        PlantedRegion r;
        try {
            r.timestamp = timeutil::parse_iso8601(f[0]);
        } catch (const DataError& err) {
            tsv::fail(path, line_no, err.what());
        }
        r.y0 = tsv::parse_int(path, line_no, f[1], "y0");
        r.y1 = tsv::parse_int(path, line_no, f[2], "y1");
        r.x0 = tsv::parse_int(path, line_no, f[3], "x0");
        r.x1 = tsv::parse_int(path, line_no, f[4], "x1");
        if (r.y0 >= r.y1 || r.x0 >= r.x1) tsv::fail(path, line_no, "empty region box");
        out.push_back(r);
    }
    return out;
}

// --- training ---------------------------------------------------------

namespace {

Tensor load_normalized(const std::string& path) {
    return imaging::normalize_gray8(pngio::read_gray(path));
}

// rng() % n shuffling: unbiased enough for batch order and, unlike
// std::shuffle, produces the same permutation on every standard library.
void shuffle_indices(std::vector<size_t>& idx, std::mt19937_64& rng) {
    for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng() % i]);
}

Tensor gather_batch(const std::vector<Tensor>& images, const std::vector<size_t>& idx,
                    size_t begin, size_t end) {
    const Shape& s = images[idx[begin]].shape();
    const int64_t hw = s[1] * s[2];
    Tensor batch(Shape{static_cast<int64_t>(end - begin), 1, s[1], s[2]});
    double* out = batch.mutable_data();
    for (size_t b = begin; b < end; ++b)
        std::memcpy(out + static_cast<int64_t>(b - begin) * hw, images[idx[b]].data(),
                    static_cast<size_t>(hw) * sizeof(double));
    return batch;
}

// FL probabilities for the subset `idx` of `images`, forward-only, in
// batches.
std::vector<double> fl_probs_batched(const model::Model& m, const std::vector<Tensor>& images,
                                     const std::vector<size_t>& idx, int batch_size) {
    std::vector<double> probs;
    probs.reserve(idx.size());
    for (size_t begin = 0; begin < idx.size(); begin += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(idx.size(), begin + static_cast<size_t>(batch_size));
        const Tensor logits = model::logits_of_gray(m, gather_batch(images, idx, begin, end));
        for (double p : model::fl_probabilities(logits)) probs.push_back(p);
    }
    return probs;
}

std::vector<size_t> iota_indices(size_t n) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

struct MetricPair {
    std::optional<double> tss, hss;
};

MetricPair skill_of(const std::vector<int>& targets, const std::vector<double>& probs,
                    double threshold) {
    evaluation::ConfusionMatrix cm;
    for (size_t i = 0; i < targets.size(); ++i) {
        const bool truth_fl = targets[i] == static_cast<int>(catalog::Label::FL);
        const bool pred_fl =
            evaluation::predicted_label(probs[i], threshold) == catalog::Label::FL;
        if (truth_fl)
            ++(pred_fl ? cm.tp : cm.fn);
        else
            ++(pred_fl ? cm.fp : cm.tn);
    }
    MetricPair out;
    try {
        out.tss = evaluation::tss(cm);
    } catch (const DataError&) {
    }
    try {
        out.hss = evaluation::hss(cm);
    } catch (const DataError&) {
    }
    return out;
}

}  // namespace

TrainOutput train_model(const RunConfig& cfg, const std::vector<catalog::LabeledSample>& train,
                        const std::vector<catalog::LabeledSample>& val) {
    validate_config(cfg);
    if (train.empty()) throw DataError("training split is empty");

    const model::ArchitectureSpec arch = model::architecture_by_name(cfg.architecture);
    TrainOutput out;
    out.trained = model::init_params(arch, "uniform", cfg.seed);

    // load originals and expand FL rows with augmented copies
    std::vector<Tensor> images;
    std::vector<int> targets;
    std::vector<size_t> original_idx;
    Shape image_shape;
    const auto check_shape = [&](const Tensor& img, const std::string& path) {
        if (image_shape.empty())
            image_shape = img.shape();
        else if (img.shape() != image_shape)
            throw ShapeError("image size differs from the rest of the dataset: " + path);
    };
    for (const auto& row : train) {
        if (!fs::exists(row.image_path)) {
            ++out.missing_images;
            continue;
        }
        Tensor img = load_normalized(row.image_path);
        check_shape(img, row.image_path);
        original_idx.push_back(images.size());
        images.push_back(img);
        targets.push_back(static_cast<int>(row.label));
        out.train_rows.push_back(row);
        if (row.label == catalog::Label::FL && cfg.augment && !cfg.augment_kinds.empty()) {
            const uint64_t sample_seed =
                cfg.seed ^ (kSeedMix * static_cast<uint64_t>(row.timestamp));
            std::vector<Tensor> copies = catalog::augment(img, cfg.augment_kinds, sample_seed);
            for (size_t k = 0; k < copies.size(); ++k) {
                catalog::LabeledSample copy = row;
                copy.augment = catalog::augment_kind_name(cfg.augment_kinds[k]);
                images.push_back(std::move(copies[k]));
                targets.push_back(static_cast<int>(row.label));
                out.train_rows.push_back(std::move(copy));
            }
        }
    }
    if (images.empty()) throw DataError("no training image could be loaded");

    int64_t fl_n = 0;
    for (int t : targets)
        if (t == static_cast<int>(catalog::Label::FL)) ++fl_n;
    const int64_t nf_n = static_cast<int64_t>(targets.size()) - fl_n;
    if (fl_n == 0 || nf_n == 0)
        throw DataError("training split lacks a class (FL=" + std::to_string(fl_n) +
                        ", NF=" + std::to_string(nf_n) + "); class weights are undefined");
    if (cfg.class_weighting) out.applied_class_weights = catalog::class_weights(fl_n, nf_n);
    const Tensor weight_tensor = Tensor::from(
        Shape{2}, {out.applied_class_weights[0], out.applied_class_weights[1]});

    // validation set, loaded once
    std::vector<Tensor> val_images;
    std::vector<int> val_targets;
    for (const auto& row : val) {
        if (!fs::exists(row.image_path)) {
            ++out.missing_images;
            continue;
        }
        Tensor img = load_normalized(row.image_path);
        check_shape(img, row.image_path);
        val_images.push_back(std::move(img));
        val_targets.push_back(static_cast<int>(row.label));
    }

    std::vector<int> original_targets;
    for (size_t i : original_idx) original_targets.push_back(targets[i]);
    const std::vector<size_t> val_idx = iota_indices(val_images.size());

    std::vector<size_t> order = iota_indices(images.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        std::mt19937_64 rng(cfg.seed + kSeedMix * static_cast<uint64_t>(epoch + 1));
        shuffle_indices(order, rng);

        double loss_sum = 0.0;
        int64_t batches = 0;
        for (size_t begin = 0; begin < order.size();
             begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end =
                std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            Tensor batch = gather_batch(images, order, begin, end);
            std::vector<int> batch_targets;
            for (size_t b = begin; b < end; ++b) batch_targets.push_back(targets[order[b]]);

            Tape tape;
            model::ForwardResult fwd = model::forward_gray_on(tape, out.trained, std::move(batch));
            Var loss = ops::nll_loss(ops::log_softmax(fwd.logits), batch_targets, weight_tensor);
            GradMap grads = backward(tape, loss);
            for (size_t i = 0; i < out.trained.params.size(); ++i) {
                const Tensor g = grad_or_zeros(grads, fwd.param_vars[i]);
                double* w = out.trained.params[i].second.mutable_data();
                const double* gp = g.data();
                for (int64_t k = 0; k < g.numel(); ++k) w[k] -= lr * gp[k];
            }
            loss_sum += loss.value()[0];
            ++batches;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_loss = loss_sum / static_cast<double>(batches);
        const MetricPair train_skill =
            skill_of(original_targets,
                     fl_probs_batched(out.trained, images, original_idx, cfg.batch_size),
                     cfg.threshold);
        stats.train_tss = train_skill.tss;
        stats.train_hss = train_skill.hss;
        if (!val_images.empty()) {
            const MetricPair val_skill =
                skill_of(val_targets,
                         fl_probs_batched(out.trained, val_images, val_idx, cfg.batch_size),
                         cfg.threshold);
            stats.val_tss = val_skill.tss;
            stats.val_hss = val_skill.hss;
        }
        out.history.push_back(stats);
    }
    return out;
}

nlohmann::json history_json(const std::vector<EpochStats>& history) {
    const auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : history)
        out.push_back({{"epoch", e.epoch},
                       {"lr", e.lr},
                       {"train_loss", e.train_loss},
                       {"train_tss", opt(e.train_tss)},
                       {"train_hss", opt(e.train_hss)},
                       {"val_tss", opt(e.val_tss)},
                       {"val_hss", opt(e.val_hss)}});
    return out;
}

// --- prediction -------------------------------------------------------

std::vector<evaluation::PredictionRecord> predict_records(
    const model::Model& m, const std::vector<catalog::LabeledSample>& rows,
    const RunConfig& cfg, std::vector<std::string>* missing) {
    std::vector<const catalog::LabeledSample*> present;
    std::vector<Tensor> images;
    Shape image_shape;
    for (const auto& row : rows) {
        if (!fs::exists(row.image_path)) {
            if (missing) missing->push_back(row.image_path);
            continue;
        }
        Tensor img = load_normalized(row.image_path);
        if (image_shape.empty())
            image_shape = img.shape();
        else if (img.shape() != image_shape)
            throw ShapeError("image size differs from the rest of the dataset: " +
                             row.image_path);
        present.push_back(&row);
        images.push_back(std::move(img));
    }

    const std::vector<double> probs =
        fl_probs_batched(m, images, iota_indices(images.size()), cfg.batch_size);
    std::vector<evaluation::PredictionRecord> records;
    records.reserve(present.size());
    for (size_t i = 0; i < present.size(); ++i) {
        const catalog::LabeledSample& row = *present[i];
        evaluation::PredictionRecord r;
        r.timestamp = row.timestamp;
        r.true_label = row.label;
        r.fl_probability = probs[i];
        r.predicted_label = evaluation::predicted_label(probs[i], cfg.threshold);
        if (row.responsible) {
            if (!row.responsible->class_label.empty())
                r.event_class = row.responsible->class_label[0];
            r.located = row.responsible->located;
            r.lat = row.responsible->hgs_lat;
            r.lon = row.responsible->hgs_lon;
        }
        r.fold = row.partition;
        records.push_back(r);
    }
    return records;
}

// --- cross-validation -------------------------------------------------

CrossValOutput cross_validate(const RunConfig& cfg,
                              const std::vector<catalog::LabeledSample>& rows,
                              const std::function<void(int, const TrainOutput&)>& per_fold) {
    const DatasetCounts counts = count_by_partition(rows);
    for (int p = 1; p <= 4; ++p)
        if (counts.by_partition[static_cast<size_t>(p)][0] +
                counts.by_partition[static_cast<size_t>(p)][1] ==
            0)
            throw DataError("partition " + std::to_string(p) + " is empty");

    CrossValOutput out;
    std::vector<std::pair<int, evaluation::ConfusionMatrix>> fold_cms;
    for (int fold = 1; fold <= 4; ++fold) {
        const auto val_rows = rows_in_partition(rows, fold);
        const auto train_rows = rows_outside_partition(rows, fold);

        std::unordered_set<int64_t> val_ts;
        for (const auto& r : val_rows) val_ts.insert(r.timestamp);
        for (const auto& r : train_rows)
            if (val_ts.count(r.timestamp))
                throw DataError("timestamp in both train and validation: " +
                                timeutil::format_iso8601(r.timestamp));

        RunConfig fold_cfg = cfg;
        fold_cfg.validation_partition = fold;
        TrainOutput trained = train_model(fold_cfg, train_rows, val_rows);
        for (const auto& r : trained.train_rows)
            if (r.augment != "none" && val_ts.count(r.timestamp))
                throw DataError("augmented copy leaked into validation: " +
                                timeutil::format_iso8601(r.timestamp));
        if (per_fold) per_fold(fold, trained);

        FoldOutput fo;
        fo.fold = fold;
        fo.records = predict_records(trained.trained, val_rows, cfg);
        fo.cm = evaluation::confusion(fo.records);
        fo.history = trained.history;
        fold_cms.emplace_back(fold, fo.cm);
        out.folds.push_back(std::move(fo));
    }
    out.summary = evaluation::cross_validation_summary(fold_cms);
    return out;
}

// --- explanation ------------------------------------------------------

namespace {

double logit_at(const model::Model& m, const Tensor& gray, catalog::Label target) {
    const Tensor logits = model::logits_of_gray(
        m, gray.reshaped(Shape{1, 1, gray.dim(1), gray.dim(2)}));
    return logits.at2(0, static_cast<int64_t>(target));
}

nlohmann::json top_k_json(const Tensor& values, int k) {
    const int64_t h = values.dim(0), w = values.dim(1);
    std::vector<int64_t> flat(static_cast<size_t>(values.numel()));
    for (size_t i = 0; i < flat.size(); ++i) flat[i] = static_cast<int64_t>(i);
    const double* p = values.data();
    std::sort(flat.begin(), flat.end(), [&](int64_t a, int64_t b) {
        const double ma = std::fabs(p[a]), mb = std::fabs(p[b]);
        if (ma != mb) return ma > mb;
        return a < b;
    });
    nlohmann::json out = nlohmann::json::array();
    const int64_t n = std::min<int64_t>(k, values.numel());
    for (int64_t i = 0; i < n; ++i)
        out.push_back({{"y", flat[static_cast<size_t>(i)] / w},
                       {"x", flat[static_cast<size_t>(i)] % w},
                       {"value", p[flat[static_cast<size_t>(i)]]}});
    return out;
}

}  // namespace

nlohmann::json explain_image(const model::Model& m, const ExplainRequest& req) {
    if (req.out_prefix.empty()) throw UsageError("explain needs an output prefix");
    if (req.top_k < 1) throw UsageError("top_k must be positive");
    const Tensor img255 = pngio::read_gray(req.image_path);
    const Tensor gray = imaging::normalize_gray8(img255);

    using attribution::Method;
    attribution::AttributionMap map;
    nlohmann::json log;
    switch (req.method) {
        case Method::guided_grad_cam:
            map = attribution::guided_grad_cam(m, gray, req.target);
            break;
        case Method::integrated_gradients: {
            map = attribution::integrated_gradients(m, gray, req.target, nullptr, req.steps);
            const double fx = logit_at(m, gray, req.target);
            const double fb = logit_at(m, Tensor::zeros(gray.shape()), req.target);
            const double residual = *map.completeness_residual;
            const double ratio = static_cast<double>(kCompletenessSteps) / req.steps;
            const double relax = std::max(1.0, ratio * ratio);
            const double tolerance =
                relax * (kCompletenessRelative * std::fabs(fx - fb) + kCompletenessAbsolute);
            if (std::fabs(residual) > tolerance)
                throw NumericError("completeness residual " + std::to_string(residual) +
                                   " exceeds tolerance " + std::to_string(tolerance) +
                                   " for f(x)=" + std::to_string(fx) +
                                   ", f(baseline)=" + std::to_string(fb));
            log["f_x"] = fx;
            log["f_baseline"] = fb;
            log["completeness_tolerance"] = tolerance;
            break;
        }
        case Method::deep_shap: {
            std::vector<Tensor> backgrounds;
            for (const auto& path : req.background_images) {
                Tensor bg = load_normalized(path);
                if (bg.shape() != gray.shape())
                    throw ShapeError("background image size differs from the input: " + path);
                backgrounds.push_back(std::move(bg));
            }
            backgrounds.push_back(Tensor::zeros(gray.shape()));
            map = attribution::deep_shap(m, gray, req.target, backgrounds);
            log["f_x"] = logit_at(m, gray, req.target);
            break;
        }
        case Method::occlusion:
            map.values =
                attribution::occlusion_map(m, gray, req.target, req.occlusion_patch,
                                           req.occlusion_stride);
            map.method = Method::occlusion;
            map.target_class = req.target;
            map.baseline_desc = "patch fill 0";
            break;
    }

    const std::string raster_path = req.out_prefix + ".f64";
    const std::string overlay_path = req.out_prefix + ".png";
    const std::string log_path = req.out_prefix + ".json";
    raster::write_raster_file(raster_path, map.values);
    pngio::write_rgb(overlay_path, imaging::render_overlay(img255, map.values));

    log["method"] = attribution::method_name(map.method);
    log["target"] = catalog::label_name(req.target);
    log["image"] = req.image_path;
    log["raster"] = raster_path;
    log["overlay"] = overlay_path;
    log["baseline"] = map.baseline_desc;
    if (map.method == Method::integrated_gradients) log["steps"] = map.steps;
    if (map.method == Method::deep_shap) log["backgrounds"] = map.backgrounds;
    if (map.completeness_residual) log["completeness_residual"] = *map.completeness_residual;
    log["top"] = top_k_json(map.values, req.top_k);

    std::ofstream out(log_path);
    if (!out) throw DataError("cannot write property log: " + log_path);
    out << log.dump(2) << "\n";
    if (!out) throw DataError("failed writing property log: " + log_path);
    return log;
}

std::vector<std::string> nf_background_paths(const std::vector<catalog::LabeledSample>& rows,
                                             int count) {
    std::vector<const catalog::LabeledSample*> nf;
    for (const auto& r : rows)
        if (r.label == catalog::Label::NF && r.augment == "none") nf.push_back(&r);
    std::sort(nf.begin(), nf.end(), [](const auto* a, const auto* b) {
        return a->timestamp < b->timestamp;
    });
    std::vector<std::string> out;
    for (const auto* r : nf) {
        if (static_cast<int>(out.size()) >= count) break;
        out.push_back(r->image_path);
    }
    return out;
}

// --- command wrappers -------------------------------------------------

namespace {

fs::path require_output_dir(const RunConfig& cfg) {
    if (cfg.output_dir.empty()) throw UsageError("output_dir is not set");
    fs::create_directories(cfg.output_dir);
    return fs::path(cfg.output_dir);
}

std::string dataset_path(const fs::path& out_dir) { return (out_dir / "dataset.tsv").string(); }

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw DataError("failed writing report: " + path);
}

}  // namespace

nlohmann::json cmd_label(const RunConfig& cfg) {
    validate_config(cfg);
    if (cfg.catalog_path.empty()) throw UsageError("catalog path is not set");
    if (cfg.image_dir.empty()) throw UsageError("image_dir is not set");
    const fs::path out_dir = require_output_dir(cfg);
    const auto events = catalog::read_catalog(cfg.catalog_path);
    const auto rows = label_images(events, cfg.image_dir,
                                   static_cast<int64_t>(cfg.label_window_hours) *
                                       timeutil::kSecondsPerHour);
    const std::string manifest = dataset_path(out_dir);
    catalog::write_manifest(manifest, rows);
    nlohmann::json report{{"config", to_json(cfg)},
                          {"manifest", manifest},
                          {"events", events.size()},
                          {"counts", to_json(count_by_partition(rows))}};
    write_json((out_dir / "label_report.json").string(), report);
    return report;
}

nlohmann::json cmd_split(const RunConfig& cfg) {
    validate_config(cfg);
    const fs::path out_dir = require_output_dir(cfg);
    const auto rows = catalog::read_manifest(dataset_path(out_dir));
    const auto val = rows_in_partition(rows, cfg.validation_partition);
    const auto train = rows_outside_partition(rows, cfg.validation_partition);
    if (train.empty()) throw DataError("training split is empty");
    if (val.empty())
        throw DataError("validation split is empty (partition " +
                        std::to_string(cfg.validation_partition) + ")");
    const std::string train_path = (out_dir / "train.tsv").string();
    const std::string val_path = (out_dir / "val.tsv").string();
    catalog::write_manifest(train_path, train);
    catalog::write_manifest(val_path, val);
    return {{"config", to_json(cfg)},
            {"train_manifest", train_path},
            {"val_manifest", val_path},
            {"train_counts", to_json(count_by_partition(train))},
            {"val_counts", to_json(count_by_partition(val))}};
}

nlohmann::json cmd_train(const RunConfig& cfg) {
    const fs::path out_dir = require_output_dir(cfg);
    const auto train = catalog::read_manifest((out_dir / "train.tsv").string());
    const auto val = catalog::read_manifest((out_dir / "val.tsv").string());
    const TrainOutput trained = train_model(cfg, train, val);

    const std::string weights_path = (out_dir / "weights.bin").string();
    const std::string augmented_path = (out_dir / "train_augmented.tsv").string();
    model::save_weights(trained.trained, weights_path);
    catalog::write_manifest(augmented_path, trained.train_rows);
    nlohmann::json report{{"config", to_json(cfg)},
                          {"weights", weights_path},
                          {"augmented_manifest", augmented_path},
                          {"train_rows", trained.train_rows.size()},
                          {"missing_images", trained.missing_images},
                          {"class_weights",
                           {trained.applied_class_weights[0], trained.applied_class_weights[1]}},
                          {"history", history_json(trained.history)}};
    write_json((out_dir / "history.json").string(), report);
    return report;
}

nlohmann::json cmd_crossval(const RunConfig& cfg) {
    validate_config(cfg);
    const fs::path out_dir = require_output_dir(cfg);
    const auto rows = catalog::read_manifest(dataset_path(out_dir));
    const CrossValOutput cv = cross_validate(cfg, rows, [&](int fold, const TrainOutput& t) {
        const std::string tag = "_fold" + std::to_string(fold);
        model::save_weights(t.trained, (out_dir / ("weights" + tag + ".bin")).string());
        catalog::write_manifest((out_dir / ("train_augmented" + tag + ".tsv")).string(),
                                t.train_rows);
        write_json((out_dir / ("history" + tag + ".json")).string(),
                   nlohmann::json{{"fold", fold}, {"history", history_json(t.history)}});
    });

    const auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& fo : cv.folds) {
        const std::string tag = "_fold" + std::to_string(fo.fold);
        evaluation::write_predictions((out_dir / ("predictions" + tag + ".tsv")).string(),
                                      fo.records);
        const evaluation::FoldScore& score = cv.summary.folds[static_cast<size_t>(fo.fold - 1)];
        nlohmann::json fold_report{{"fold", fo.fold},
                                   {"config", to_json(cfg)},
                                   {"summary", evaluation::skill_summary(fo.records,
                                                                         cfg.threshold)},
                                   {"tss", opt(score.tss)},
                                   {"hss", opt(score.hss)}};
        write_json((out_dir / ("report" + tag + ".json")).string(), fold_report);
        folds.push_back({{"fold", fo.fold},
                         {"records", fo.records.size()},
                         {"tss", opt(score.tss)},
                         {"hss", opt(score.hss)},
                         {"confusion", evaluation::to_json(fo.cm)}});
    }
    nlohmann::json report{{"config", to_json(cfg)},
                          {"folds", folds},
                          {"mean_tss", opt(cv.summary.mean_tss)},
                          {"mean_hss", opt(cv.summary.mean_hss)}};
    write_json((out_dir / "crossval_report.json").string(), report);
    return report;
}

nlohmann::json cmd_evaluate(const RunConfig& cfg, const std::string& weights_path) {
    validate_config(cfg);
    const fs::path out_dir = require_output_dir(cfg);
    const model::Model m =
        model::load_weights(model::architecture_by_name(cfg.architecture), weights_path);
    const auto rows = catalog::read_manifest((out_dir / "val.tsv").string());
    std::vector<std::string> missing;
    const auto records = predict_records(m, rows, cfg, &missing);

    const std::string predictions_path = (out_dir / "predictions.tsv").string();
    const std::string grid_path = (out_dir / "grid.tsv").string();
    evaluation::write_predictions(predictions_path, records);
    evaluation::write_grid_tsv(grid_path, evaluation::spatial_recall_grid(records));
    nlohmann::json report{{"config", to_json(cfg)},
                          {"weights", weights_path},
                          {"predictions", predictions_path},
                          {"grid", grid_path},
                          {"missing_images", missing},
                          {"summary", evaluation::skill_summary(records, cfg.threshold)}};
    write_json((out_dir / "report.json").string(), report);
    return report;
}

nlohmann::json cmd_report(const RunConfig& cfg) {
    validate_config(cfg);
    const fs::path out_dir = require_output_dir(cfg);
    std::vector<evaluation::PredictionRecord> merged;
    std::vector<std::pair<int, evaluation::ConfusionMatrix>> fold_cms;
    for (int fold = 1; fold <= 4; ++fold) {
        const std::string path =
            (out_dir / ("predictions_fold" + std::to_string(fold) + ".tsv")).string();
        if (!fs::exists(path)) continue;
        const auto records = evaluation::read_predictions(path);
        fold_cms.emplace_back(fold, evaluation::confusion(records));
        merged.insert(merged.end(), records.begin(), records.end());
    }
    if (fold_cms.empty()) throw DataError("no per-fold predictions found under " +
                                          cfg.output_dir);

    const evaluation::CrossValSummary summary = evaluation::cross_validation_summary(fold_cms);
    const auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : summary.folds)
        folds.push_back({{"fold", f.fold},
                         {"tss", opt(f.tss)},
                         {"hss", opt(f.hss)},
                         {"confusion", evaluation::to_json(f.cm)}});
    nlohmann::json report{{"config", to_json(cfg)},
                          {"folds", folds},
                          {"mean_tss", opt(summary.mean_tss)},
                          {"mean_hss", opt(summary.mean_hss)},
                          {"pooled", evaluation::skill_summary(merged, cfg.threshold)}};
    write_json((out_dir / "summary_report.json").string(), report);
    return report;
}

}  // namespace fdflare::pipeline
