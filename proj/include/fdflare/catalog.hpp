#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fdflare/tensor.hpp"

namespace fdflare::catalog {

// Class index order matches the model's logit order: (FL, NF).
enum class Label : int { FL = 0, NF = 1 };

const char* label_name(Label l);
Label parse_label(const std::string& text);

inline constexpr double kFlareThresholdFlux = 1e-5;  // M-class decade base
inline constexpr int64_t kDefaultWindowSeconds = 24 * 3600;

struct FlareEvent {
    int64_t start_time = 0;  // epoch seconds UTC
    int64_t peak_time = 0;
    double peak_flux = 0.0;  // W/m^2
    std::string class_label;
    bool located = false;
    double hgs_lat = 0.0;  // degrees, valid when located
    double hgs_lon = 0.0;
    std::optional<int> noaa_ar;
};

// GOES class letter + multiplier ("M1.2") to peak flux in W/m^2.
double parse_flare_class(const std::string& label);
// Flux to the class string of its containing decade, multiplier to one
// decimal. Fluxes at or above 1e-4 stay in X (multiplier may exceed 10).
std::string flux_to_class(double flux);

struct LabelResult {
    Label label = Label::NF;
    std::optional<FlareEvent> responsible;
    bool tie = false;  // several window events share the maximum flux
};

// Labels timestamp t from events with peak_time in [t, t + window). The
// responsible event maximizes peak_flux, ties broken by earliest peak.
// `events` must be sorted ascending by peak_time.
LabelResult label_timestamp(const std::vector<FlareEvent>& events, int64_t t,
                            int64_t window_seconds = kDefaultWindowSeconds,
                            double threshold = kFlareThresholdFlux);

std::vector<FlareEvent> sorted_by_peak(std::vector<FlareEvent> events);

// Inclusive hourly grid from start to end, aligned to whole hours.
std::vector<int64_t> generate_timeline(int64_t start, int64_t end,
                                       int64_t cadence_seconds = 3600);

// Calendar-quarter partition: Jan-Mar 1, Apr-Jun 2, Jul-Sep 3, Oct-Dec 4.
int assign_partition(int64_t t);

// weight_c = total / (2 * count_c), indexed (FL, NF).
std::array<double, 2> class_weights(int64_t fl_count, int64_t nf_count);

enum class AugmentKind { vflip, hflip, rotate };

const char* augment_kind_name(AugmentKind k);

// One transformed copy per requested kind, in order. Rotation angle is
// drawn once, uniformly in [-5, +5] degrees, from mt19937_64(seed);
// interpolation is bilinear with zero fill.
std::vector<Tensor> augment(const Tensor& image, const std::vector<AugmentKind>& kinds,
                            uint64_t seed);

struct LabeledSample {
    int64_t timestamp = 0;
    std::string image_path;
    Label label = Label::NF;
    int partition = 0;
    std::optional<FlareEvent> responsible;
    bool tie = false;
    std::string augment = "none";  // none | vflip | hflip | rotate
};

// Catalog table: TSV with header start_time, peak_time, peak_flux, class,
// hgs_lat, hgs_lon, noaa_ar (empty fields for absent lat/lon/AR).
std::vector<FlareEvent> read_catalog(const std::string& path);
void write_catalog(const std::string& path, const std::vector<FlareEvent>& events);

// Dataset manifest: TSV with header timestamp, image, label, partition,
// event_class, event_peak_time, event_lat, event_lon, event_noaa_ar, tie,
// augment.
std::vector<LabeledSample> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<LabeledSample>& samples);

}  // namespace fdflare::catalog
