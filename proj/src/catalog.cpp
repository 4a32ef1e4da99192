#include "fdflare/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "fdflare/imaging.hpp"
#include "fdflare/text_table.hpp"
#include "fdflare/time_utils.hpp"

namespace fdflare::catalog {

const char* label_name(Label l) { return l == Label::FL ? "FL" : "NF"; }

Label parse_label(const std::string& text) {
    if (text == "FL") return Label::FL;
    if (text == "NF") return Label::NF;
    throw DataError("unknown label: '" + text + "'");
}

namespace {

double decade_base(char letter) {
    switch (letter) {
        case 'A': return 1e-8;
        case 'B': return 1e-7;
        case 'C': return 1e-6;
        case 'M': return 1e-5;
        case 'X': return 1e-4;
        default: throw DataError(std::string("unknown flare class letter: '") + letter + "'");
    }
}

}  // namespace

double parse_flare_class(const std::string& label) {
    if (label.size() < 2) throw DataError("malformed flare class: '" + label + "'");
    const double base = decade_base(label[0]);
    size_t used = 0;
    double multiplier = 0.0;
    try {
        multiplier = std::stod(label.substr(1), &used);
    } catch (const std::exception&) {
        throw DataError("malformed flare class multiplier: '" + label + "'");
    }
    if (used != label.size() - 1) throw DataError("malformed flare class: '" + label + "'");
    if (multiplier <= 0.0)
        throw DataError("non-positive flare class multiplier: '" + label + "'");
    return multiplier * base;
}

std::string flux_to_class(double flux) {
    if (!(flux > 0.0)) throw DataError("non-positive flux: " + std::to_string(flux));
    static const char letters[] = {'A', 'B', 'C', 'M', 'X'};
    static const double bases[] = {1e-8, 1e-7, 1e-6, 1e-5, 1e-4};
    int idx = 4;
    while (idx > 0 && flux < bases[idx]) --idx;
    const double multiplier = flux / bases[idx];
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%c%.1f", letters[idx], multiplier);
    return buf;
}

LabelResult label_timestamp(const std::vector<FlareEvent>& events, int64_t t,
                            int64_t window_seconds, double threshold) {
    LabelResult result;
    auto first = std::lower_bound(events.begin(), events.end(), t,
                                  [](const FlareEvent& e, int64_t v) { return e.peak_time < v; });
    const int64_t end = t + window_seconds;
    const FlareEvent* best = nullptr;
    int max_count = 0;
    for (auto it = first; it != events.end() && it->peak_time < end; ++it) {
        if (best == nullptr || it->peak_flux > best->peak_flux) {
            best = &*it;
            max_count = 1;
        } else if (it->peak_flux == best->peak_flux) {
            ++max_count;
            if (it->peak_time < best->peak_time) best = &*it;
        }
    }
    if (best != nullptr) {
        // the window maximum is reported even when it stays below threshold
        result.responsible = *best;
        result.tie = max_count > 1;
        result.label = best->peak_flux >= threshold ? Label::FL : Label::NF;
    }
    return result;
}

std::vector<FlareEvent> sorted_by_peak(std::vector<FlareEvent> events) {
    std::stable_sort(events.begin(), events.end(),
                     [](const FlareEvent& a, const FlareEvent& b) {
                         return a.peak_time < b.peak_time;
                     });
    return events;
}

std::vector<int64_t> generate_timeline(int64_t start, int64_t end, int64_t cadence_seconds) {
    if (start > end)
        throw DataError("reversed timeline range: " + timeutil::format_iso8601(start) +
                        " after " + timeutil::format_iso8601(end));
    if (cadence_seconds <= 0) throw DataError("non-positive timeline cadence");
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>((end - start) / cadence_seconds) + 1);
    for (int64_t t = start; t <= end; t += cadence_seconds) out.push_back(t);
    return out;
}

int assign_partition(int64_t t) { return (timeutil::month_of(t) - 1) / 3 + 1; }

std::array<double, 2> class_weights(int64_t fl_count, int64_t nf_count) {
    if (fl_count <= 0 || nf_count <= 0)
        throw DataError("class weights undefined: counts FL=" + std::to_string(fl_count) +
                        " NF=" + std::to_string(nf_count));
    const double total = static_cast<double>(fl_count + nf_count);
    return {total / (2.0 * static_cast<double>(fl_count)),
            total / (2.0 * static_cast<double>(nf_count))};
}

const char* augment_kind_name(AugmentKind k) {
    switch (k) {
        case AugmentKind::vflip: return "vflip";
        case AugmentKind::hflip: return "hflip";
        case AugmentKind::rotate: return "rotate";
    }
    return "?";
}

std::vector<Tensor> augment(const Tensor& image, const std::vector<AugmentKind>& kinds,
                            uint64_t seed) {
    if (kinds.empty()) throw DataError("augment requires at least one kind");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(-5.0, 5.0);
    std::vector<Tensor> out;
    out.reserve(kinds.size());
    for (AugmentKind k : kinds) {
        switch (k) {
            case AugmentKind::vflip: out.push_back(imaging::vflip(image)); break;
            case AugmentKind::hflip: out.push_back(imaging::hflip(image)); break;
            case AugmentKind::rotate:
                out.push_back(imaging::rotate_bilinear(image, angle(rng)));
                break;
        }
    }
    return out;
}

namespace {

std::vector<std::string> split_tsv(const std::string& line) { return tsv::split(line); }

[[noreturn]] void schema_error(const std::string& path, size_t line_no,
                               const std::string& what) {
    tsv::fail(path, line_no, what);
}

double parse_double(const std::string& path, size_t line_no, const std::string& text,
                    const char* what) {
    return tsv::parse_double(path, line_no, text, what);
}

}  // namespace

std::vector<FlareEvent> read_catalog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open catalog: " + path);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError(path + ": empty catalog file");
    ++line_no;
    const auto header = split_tsv(line);
    const std::vector<std::string> expected{"start_time", "peak_time", "peak_flux",
                                            "class",      "hgs_lat",   "hgs_lon",
                                            "noaa_ar"};
    if (header != expected) schema_error(path, line_no, "unexpected catalog header");
    std::vector<FlareEvent> events;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_tsv(line);
        if (f.size() != expected.size())
            schema_error(path, line_no, "expected 7 fields, got " + std::to_string(f.size()));
        FlareEvent e;
        try {
            e.start_time = timeutil::parse_iso8601(f[0]);
            e.peak_time = timeutil::parse_iso8601(f[1]);
        } catch (const DataError& err) {
            schema_error(path, line_no, err.what());
        }
        e.peak_flux = parse_double(path, line_no, f[2], "peak_flux");
        e.class_label = f[3];
        if (e.peak_flux <= 0.0) schema_error(path, line_no, "non-positive peak_flux");
        if (e.start_time > e.peak_time) schema_error(path, line_no, "start_time after peak_time");
        if (!f[4].empty() != !f[5].empty())
            schema_error(path, line_no, "hgs_lat and hgs_lon must be both present or both absent");
        if (!f[4].empty()) {
            e.located = true;
            e.hgs_lat = parse_double(path, line_no, f[4], "hgs_lat");
            e.hgs_lon = parse_double(path, line_no, f[5], "hgs_lon");
            if (std::fabs(e.hgs_lat) > 90.0 || std::fabs(e.hgs_lon) > 90.0)
                schema_error(path, line_no, "hgs coordinates outside [-90, 90]");
        }
        if (!f[6].empty())
            e.noaa_ar = static_cast<int>(parse_double(path, line_no, f[6], "noaa_ar"));
        events.push_back(std::move(e));
    }
    return events;
}

void write_catalog(const std::string& path, const std::vector<FlareEvent>& events) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "start_time\tpeak_time\tpeak_flux\tclass\thgs_lat\thgs_lon\tnoaa_ar\n";
    for (const FlareEvent& e : events) {
        char flux[32];
        std::snprintf(flux, sizeof(flux), "%.10g", e.peak_flux);
        out << timeutil::format_iso8601(e.start_time) << '\t'
            << timeutil::format_iso8601(e.peak_time) << '\t' << flux << '\t' << e.class_label
            << '\t';
        if (e.located) {
            char lat[32], lon[32];
            std::snprintf(lat, sizeof(lat), "%.6g", e.hgs_lat);
            std::snprintf(lon, sizeof(lon), "%.6g", e.hgs_lon);
            out << lat << '\t' << lon << '\t';
        } else {
            out << "\t\t";
        }
        if (e.noaa_ar) out << *e.noaa_ar;
        out << '\n';
    }
}

std::vector<LabeledSample> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError(path + ": empty manifest file");
    ++line_no;
    const std::vector<std::string> expected{
        "timestamp", "image",   "label",         "partition", "event_class", "event_peak_time",
        "event_lat", "event_lon", "event_noaa_ar", "tie",       "augment"};
    if (split_tsv(line) != expected) schema_error(path, line_no, "unexpected manifest header");
    std::vector<LabeledSample> samples;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_tsv(line);
        if (f.size() != expected.size())
            schema_error(path, line_no, "expected 11 fields, got " + std::to_string(f.size()));
        LabeledSample s;
        try {
            s.timestamp = timeutil::parse_iso8601(f[0]);
            s.label = parse_label(f[2]);
        } catch (const DataError& err) {
            schema_error(path, line_no, err.what());
        }
        s.image_path = f[1];
        s.partition = static_cast<int>(parse_double(path, line_no, f[3], "partition"));
        if (s.partition < 1 || s.partition > 4)
            schema_error(path, line_no, "partition outside 1..4");
        if (!f[4].empty()) {
            FlareEvent e;
            e.class_label = f[4];
            e.peak_flux = parse_flare_class(f[4]);
            try {
                e.peak_time = timeutil::parse_iso8601(f[5]);
            } catch (const DataError& err) {
                schema_error(path, line_no, err.what());
            }
            e.start_time = e.peak_time;
            if (!f[6].empty()) {
                e.located = true;
                e.hgs_lat = parse_double(path, line_no, f[6], "event_lat");
                e.hgs_lon = parse_double(path, line_no, f[7], "event_lon");
            }
            if (!f[8].empty())
                e.noaa_ar = static_cast<int>(parse_double(path, line_no, f[8], "event_noaa_ar"));
            s.responsible = std::move(e);
        }
        if (f[9] != "0" && f[9] != "1") schema_error(path, line_no, "tie must be 0 or 1");
        s.tie = f[9] == "1";
        s.augment = f[10].empty() ? "none" : f[10];
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_manifest(const std::string& path, const std::vector<LabeledSample>& samples) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "timestamp\timage\tlabel\tpartition\tevent_class\tevent_peak_time\tevent_lat\t"
           "event_lon\tevent_noaa_ar\ttie\taugment\n";
    for (const LabeledSample& s : samples) {
        out << timeutil::format_iso8601(s.timestamp) << '\t' << s.image_path << '\t'
            << label_name(s.label) << '\t' << s.partition << '\t';
        if (s.responsible) {
            const FlareEvent& e = *s.responsible;
            out << e.class_label << '\t' << timeutil::format_iso8601(e.peak_time) << '\t';
            if (e.located) {
                char lat[32], lon[32];
                std::snprintf(lat, sizeof(lat), "%.6g", e.hgs_lat);
                std::snprintf(lon, sizeof(lon), "%.6g", e.hgs_lon);
                out << lat << '\t' << lon << '\t';
            } else {
                out << "\t\t";
            }
            if (e.noaa_ar) out << *e.noaa_ar;
        } else {
            out << "\t\t\t\t";
        }
        out << '\t' << (s.tie ? 1 : 0) << '\t' << s.augment << '\n';
    }
}

}  // namespace fdflare::catalog
