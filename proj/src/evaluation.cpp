#include "fdflare/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fdflare/errors.hpp"
#include "fdflare/text_table.hpp"
#include "fdflare/time_utils.hpp"

namespace fdflare::evaluation {

double tss(const ConfusionMatrix& cm) {
    if (cm.positives() == 0 || cm.negatives() == 0)
        throw DataError("tss undefined: needs both classes present (P=" +
                        std::to_string(cm.positives()) + ", N=" +
                        std::to_string(cm.negatives()) + ")");
    return static_cast<double>(cm.tp) / static_cast<double>(cm.positives()) -
           static_cast<double>(cm.fp) / static_cast<double>(cm.negatives());
}

double hss(const ConfusionMatrix& cm) {
    const double p = static_cast<double>(cm.positives());
    const double n = static_cast<double>(cm.negatives());
    const double den = p * static_cast<double>(cm.fn + cm.tn) +
                       static_cast<double>(cm.tp + cm.fp) * n;
    if (den == 0.0) throw DataError("hss undefined: zero denominator");
    const double num = 2.0 * (static_cast<double>(cm.tp) * static_cast<double>(cm.tn) -
                              static_cast<double>(cm.fn) * static_cast<double>(cm.fp));
    return num / den;
}

double recall(int64_t tp, int64_t fn) {
    if (tp < 0 || fn < 0) throw DataError("negative confusion counts");
    if (tp + fn == 0) throw DataError("recall undefined: empty subgroup");
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> RecallCell::recall_or_nothing() const {
    if (empty()) return std::nullopt;
    return recall(tp, fn);
}

catalog::Label predicted_label(double fl_probability, double threshold) {
    return fl_probability >= threshold ? catalog::Label::FL : catalog::Label::NF;
}

ConfusionMatrix confusion(const std::vector<PredictionRecord>& records) {
    ConfusionMatrix cm;
    for (const auto& r : records) {
        const bool truth_fl = r.true_label == catalog::Label::FL;
        const bool pred_fl = r.predicted_label == catalog::Label::FL;
        if (truth_fl)
            ++(pred_fl ? cm.tp : cm.fn);
        else
            ++(pred_fl ? cm.fp : cm.tn);
    }
    return cm;
}

namespace {

constexpr const char* kPredictionHeader = "timestamp\ttrue\tpred\tprob\tclass\tlat\tlon\tfold";

}  // namespace

std::vector<PredictionRecord> read_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open predictions: " + path);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError(path + ": empty predictions file");
    ++line_no;
    if (tsv::split(line) != tsv::split(kPredictionHeader))
        tsv::fail(path, line_no, "unexpected predictions header");
    std::vector<PredictionRecord> records;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = tsv::split(line);
        if (f.size() != 8)
            tsv::fail(path, line_no, "expected 8 fields, got " + std::to_string(f.size()));
        PredictionRecord r;
        try {
            r.timestamp = timeutil::parse_iso8601(f[0]);
            r.true_label = catalog::parse_label(f[1]);
            r.predicted_label = catalog::parse_label(f[2]);
        } catch (const DataError& err) {
            tsv::fail(path, line_no, err.what());
        }
        r.fl_probability = tsv::parse_double(path, line_no, f[3], "prob");
        if (r.fl_probability < 0.0 || r.fl_probability > 1.0)
            tsv::fail(path, line_no, "prob outside [0, 1]");
        if (f[4] != "-") {
            if (f[4].size() != 1) tsv::fail(path, line_no, "bad class letter: '" + f[4] + "'");
            r.event_class = f[4][0];
        }
        if ((f[5] == "-") != (f[6] == "-"))
            tsv::fail(path, line_no, "lat and lon must be both present or both absent");
        if (f[5] != "-") {
            r.located = true;
            r.lat = tsv::parse_double(path, line_no, f[5], "lat");
            r.lon = tsv::parse_double(path, line_no, f[6], "lon");
        }
        r.fold = static_cast<int>(tsv::parse_int(path, line_no, f[7], "fold"));
        records.push_back(r);
    }
    return records;
}

void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write predictions: " + path);
    out << kPredictionHeader << "\n";
    char buf[64];
    for (const auto& r : records) {
        out << timeutil::format_iso8601(r.timestamp) << '\t' << catalog::label_name(r.true_label)
            << '\t' << catalog::label_name(r.predicted_label) << '\t';
        std::snprintf(buf, sizeof(buf), "%.17g", r.fl_probability);
        out << buf << '\t';
        if (r.event_class != '\0')
            out << r.event_class;
        else
            out << '-';
        if (r.located) {
            std::snprintf(buf, sizeof(buf), "\t%.6g\t%.6g", r.lat, r.lon);
            out << buf;
        } else {
            out << "\t-\t-";
        }
        out << '\t' << r.fold << "\n";
    }
    if (!out) throw DataError("failed writing predictions: " + path);
}

namespace {

int class_row(const PredictionRecord& r) {
    if (r.event_class == 'X') return SubgroupTable::kX;
    if (r.event_class == 'M') return SubgroupTable::kM;
    const std::string why = r.event_class == '\0'
                                ? std::string("has no flare class")
                                : "has flare class '" + std::string(1, r.event_class) +
                                      "', expected X or M";
    throw DataError("FL record at " + timeutil::format_iso8601(r.timestamp) + " " + why);
}

void bump(RecallCell& cell, const PredictionRecord& r) {
    ++(r.predicted_label == catalog::Label::FL ? cell.tp : cell.fn);
}

}  // namespace

SubgroupTable subgroup_recall_table(const std::vector<PredictionRecord>& records) {
    SubgroupTable table;
    for (const auto& r : records) {
        if (r.true_label != catalog::Label::FL) continue;
        if (!r.located) {
            bump(table.unlocated, r);
            continue;
        }
        const int row = class_row(r);
        const int band = std::fabs(r.lon) <= kCentralLongitude ? SubgroupTable::kCentral
                                                               : SubgroupTable::kNearLimb;
        bump(table.cells[static_cast<size_t>(row)][static_cast<size_t>(band)], r);
        bump(table.cells[SubgroupTable::kCombined][static_cast<size_t>(band)], r);
    }
    return table;
}

int SpatialGrid::bin_of(double degrees) {
    if (degrees == 90.0) return kBins - 1;
    return static_cast<int>(std::floor(degrees / 5.0)) + kBins / 2;
}

int SpatialGrid::bin_low(int bin) { return (bin - kBins / 2) * 5; }

SpatialGrid spatial_recall_grid(const std::vector<PredictionRecord>& records) {
    SpatialGrid grid;
    for (const auto& r : records) {
        if (r.true_label != catalog::Label::FL || !r.located) continue;
        if (std::fabs(r.lat) > 90.0 || std::fabs(r.lon) > 90.0)
            throw DataError("record at " + timeutil::format_iso8601(r.timestamp) +
                            " has coordinates outside [-90, 90]");
        const int row = class_row(r);
        const auto y = static_cast<size_t>(SpatialGrid::bin_of(r.lat));
        const auto x = static_cast<size_t>(SpatialGrid::bin_of(r.lon));
        bump(grid.cells[static_cast<size_t>(row)][y][x], r);
        bump(grid.cells[SubgroupTable::kCombined][y][x], r);
    }
    return grid;
}

void write_grid_tsv(const std::string& path, const SpatialGrid& grid) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write grid: " + path);
    out << "lat_bin\tlon_bin\tsubclass\ttp\tfn\trecall\n";
    static const char* subclass_names[] = {"X", "M", "XM"};
    char buf[32];
    for (int s = 0; s < 3; ++s)
        for (int y = 0; y < SpatialGrid::kBins; ++y)
            for (int x = 0; x < SpatialGrid::kBins; ++x) {
                const RecallCell& cell =
                    grid.cells[static_cast<size_t>(s)][static_cast<size_t>(y)]
                              [static_cast<size_t>(x)];
                out << SpatialGrid::bin_low(y) << '\t' << SpatialGrid::bin_low(x) << '\t'
                    << subclass_names[s] << '\t' << cell.tp << '\t' << cell.fn << '\t';
                if (cell.empty()) {
                    out << "NA";
                } else {
                    std::snprintf(buf, sizeof(buf), "%.17g", recall(cell.tp, cell.fn));
                    out << buf;
                }
                out << "\n";
            }
    if (!out) throw DataError("failed writing grid: " + path);
}

double aggregate_ar_probability(const std::vector<double>& probabilities) {
    double survive = 1.0;
    for (double p : probabilities) {
        if (!(p >= 0.0 && p <= 1.0))
            throw DataError("region probability outside [0, 1]: " + std::to_string(p));
        survive *= 1.0 - p;
    }
    return 1.0 - survive;
}

CrossValSummary cross_validation_summary(
    const std::vector<std::pair<int, ConfusionMatrix>>& folds) {
    if (folds.empty()) throw DataError("cross-validation needs at least one fold");
    CrossValSummary summary;
    double tss_sum = 0.0, hss_sum = 0.0;
    int tss_n = 0, hss_n = 0;
    for (const auto& [fold, cm] : folds) {
        FoldScore score;
        score.fold = fold;
        score.cm = cm;
        try {
            score.tss = tss(cm);
            tss_sum += *score.tss;
            ++tss_n;
        } catch (const DataError&) {
        }
        try {
            score.hss = hss(cm);
            hss_sum += *score.hss;
            ++hss_n;
        } catch (const DataError&) {
        }
        summary.folds.push_back(score);
    }
    if (tss_n > 0) summary.mean_tss = tss_sum / tss_n;
    if (hss_n > 0) summary.mean_hss = hss_sum / hss_n;
    return summary;
}

namespace {

std::string two_decimals(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

nlohmann::json cell_json(const RecallCell& cell) {
    nlohmann::json j{{"tp", cell.tp}, {"fn", cell.fn}};
    if (const auto r = cell.recall_or_nothing()) {
        j["recall"] = *r;
        j["recall_display"] = two_decimals(*r);
    } else {
        j["recall"] = nullptr;
        j["recall_display"] = nullptr;
    }
    return j;
}

}  // namespace

nlohmann::json to_json(const ConfusionMatrix& cm) {
    return {{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}};
}

nlohmann::json to_json(const SubgroupTable& table) {
    static const char* row_names[] = {"X", "M", "X&M"};
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) {
        rows.push_back({{"class", row_names[r]},
                        {"central", cell_json(table.cells[static_cast<size_t>(r)][0])},
                        {"near_limb", cell_json(table.cells[static_cast<size_t>(r)][1])}});
    }
    return {{"rows", rows}, {"unlocated", cell_json(table.unlocated)}};
}

nlohmann::json skill_summary(const std::vector<PredictionRecord>& records, double threshold) {
    const ConfusionMatrix cm = confusion(records);
    nlohmann::json scores;
    try {
        const double v = tss(cm);
        scores["tss"] = v;
        scores["tss_display"] = two_decimals(v);
    } catch (const DataError&) {
        scores["tss"] = nullptr;
    }
    try {
        const double v = hss(cm);
        scores["hss"] = v;
        scores["hss_display"] = two_decimals(v);
    } catch (const DataError&) {
        scores["hss"] = nullptr;
    }
    try {
        const double v = recall(cm.tp, cm.fn);
        scores["recall"] = v;
        scores["recall_display"] = two_decimals(v);
    } catch (const DataError&) {
        scores["recall"] = nullptr;
    }
    return {{"threshold", threshold},
            {"records", records.size()},
            {"confusion", to_json(cm)},
            {"scores", scores},
            {"subgroups", to_json(subgroup_recall_table(records))}};
}

}  // namespace fdflare::evaluation
