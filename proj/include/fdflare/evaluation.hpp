#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fdflare/catalog.hpp"

#include "json.hpp"

namespace fdflare::evaluation {

struct ConfusionMatrix {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    int64_t positives() const { return tp + fn; }
    int64_t negatives() const { return tn + fp; }
    int64_t total() const { return tp + fp + tn + fn; }
};

// tp/(tp+fn) - fp/(fp+tn); throws DataError when either class is absent.
double tss(const ConfusionMatrix& cm);

// 2 (tp tn - fn fp) / (P (fn+tn) + (tp+fp) N); throws DataError on a zero
// denominator.
double hss(const ConfusionMatrix& cm);

// tp/(tp+fn); throws DataError on an empty subgroup.
double recall(int64_t tp, int64_t fn);

struct PredictionRecord {
    int64_t timestamp = 0;
    catalog::Label true_label = catalog::Label::NF;
    catalog::Label predicted_label = catalog::Label::NF;
    double fl_probability = 0.0;
    char event_class = '\0';  // GOES letter, '\0' when absent
    bool located = false;
    double lat = 0.0, lon = 0.0;
    int fold = 0;
};

catalog::Label predicted_label(double fl_probability, double threshold);

ConfusionMatrix confusion(const std::vector<PredictionRecord>& records);

// TSV with header timestamp, true, pred, prob, class, lat, lon, fold;
// absent fields hold "-". Probabilities round-trip at full precision.
std::vector<PredictionRecord> read_predictions(const std::string& path);
void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records);

inline constexpr double kCentralLongitude = 70.0;  // |lon| <= 70 is central

struct RecallCell {
    int64_t tp = 0, fn = 0;

    bool empty() const { return tp + fn == 0; }
    std::optional<double> recall_or_nothing() const;
};

// Recall of true-FL records by flare class row (X, M, X&M) and longitude
// band column (central, near-limb). FL records without a location land in
// the separate unlocated bucket.
struct SubgroupTable {
    static constexpr int kX = 0, kM = 1, kCombined = 2;
    static constexpr int kCentral = 0, kNearLimb = 1;
    std::array<std::array<RecallCell, 2>, 3> cells{};
    RecallCell unlocated;
};

SubgroupTable subgroup_recall_table(const std::vector<PredictionRecord>& records);

// 36x36 cells of 5 degrees over [-90,90] heliographic latitude x longitude;
// +90 falls in the top cell. Subclasses: X, M, combined.
struct SpatialGrid {
    static constexpr int kBins = 36;
    std::array<std::array<std::array<RecallCell, kBins>, kBins>, 3> cells{};

    static int bin_of(double degrees);        // floor(deg/5)+18, +90 -> 35
    static int bin_low(int bin);              // lower edge in degrees
};

// Counts located true-FL records of class X or M; rejects coordinates
// outside [-90, 90] naming the record's timestamp.
SpatialGrid spatial_recall_grid(const std::vector<PredictionRecord>& records);

// TSV with header lat_bin, lon_bin, subclass, tp, fn, recall; bins are
// lower edges in degrees, subclass in {X, M, XM}, recall "NA" for empty
// cells. Empty cells are still listed.
void write_grid_tsv(const std::string& path, const SpatialGrid& grid);

// 1 - prod(1 - p_i); empty -> 0; rejects probabilities outside [0, 1].
double aggregate_ar_probability(const std::vector<double>& probabilities);

struct FoldScore {
    int fold = 0;
    std::optional<double> tss, hss;  // absent when undefined for the fold
    ConfusionMatrix cm;
};

struct CrossValSummary {
    std::vector<FoldScore> folds;
    std::optional<double> mean_tss, mean_hss;  // over folds where defined
};

CrossValSummary cross_validation_summary(const std::vector<std::pair<int, ConfusionMatrix>>& folds);

// Scores, subgroup table, and grid totals for one record set, as the JSON
// body shared by the evaluate and crossval reports. Undefined scores are
// null; recalls appear at full precision plus a 2-decimal display string.
nlohmann::json skill_summary(const std::vector<PredictionRecord>& records, double threshold);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const SubgroupTable& table);

}  // namespace fdflare::evaluation
