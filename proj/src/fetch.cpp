#include "fdflare/fetch.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "httplib.h"

#include "fdflare/errors.hpp"
#include "fdflare/imaging.hpp"
#include "fdflare/pipeline.hpp"
#include "fdflare/png_io.hpp"
#include "fdflare/text_table.hpp"
#include "fdflare/time_utils.hpp"

namespace fs = std::filesystem;

namespace fdflare::fetch {

namespace {

// Spaces network requests and sleeps out the retry backoff.
class RequestPacer {
public:
    explicit RequestPacer(int spacing_ms) : spacing_(spacing_ms) {}

    void before_request() {
        if (spacing_.count() > 0) {
            const auto now = std::chrono::steady_clock::now();
            if (armed_ && now < last_ + spacing_) std::this_thread::sleep_for(last_ + spacing_ - now);
        }
        last_ = std::chrono::steady_clock::now();
        armed_ = true;
    }

private:
    std::chrono::milliseconds spacing_;
    std::chrono::steady_clock::time_point last_;
    bool armed_ = false;
};

// GET with the retry budget; empty optional after the last attempt fails.
std::optional<std::string> get_with_retries(httplib::Client& client, const FetchSpec& spec,
                                            RequestPacer& pacer, const std::string& path,
                                            const httplib::Params& params) {
    for (int attempt = 0; attempt <= spec.retries; ++attempt) {
        if (attempt > 0) {
            const int delay = spec.backoff_ms << (attempt - 1);
            if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        }
        pacer.before_request();
        httplib::Result res = client.Get(path, params, httplib::Headers{});
        if (res && res->status == 200) return res->body;
    }
    return std::nullopt;
}

std::string query_time(int64_t ts) { return timeutil::format_iso8601(ts); }

// The nearest-observation lookup; returns the observation time.
std::optional<int64_t> closest_observation(httplib::Client& client, const FetchSpec& spec,
                                           RequestPacer& pacer, int64_t ts) {
    const httplib::Params params{{"date", query_time(ts)},
                                 {"sourceId", std::to_string(spec.source_id)}};
    const auto body = get_with_retries(client, spec, pacer, "/v2/getClosestImage/", params);
    if (!body) return std::nullopt;
    try {
        const nlohmann::json j = nlohmann::json::parse(*body);
        if (!j.contains("date")) return std::nullopt;
        return timeutil::parse_iso8601(j["date"].get<std::string>());
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    } catch (const DataError&) {
        return std::nullopt;
    }
}

std::optional<std::string> screenshot_png(httplib::Client& client, const FetchSpec& spec,
                                          RequestPacer& pacer, int64_t ts) {
    char scale[32];
    std::snprintf(scale, sizeof(scale), "%.17g", spec.image_scale);
    const httplib::Params params{
        {"date", query_time(ts)},
        {"imageScale", scale},
        {"layers", "[" + std::to_string(spec.source_id) + ",1,100]"},
        {"x0", "0"},
        {"y0", "0"},
        {"width", std::to_string(spec.width)},
        {"height", std::to_string(spec.height)},
        {"display", "true"}};
    return get_with_retries(client, spec, pacer, "/v2/takeScreenshot/", params);
}

// Decode whatever came back, resize to the configured frame, store as
// 8-bit grayscale. False when the payload is not a usable image.
bool store_grayscale(const std::string& body, const FetchSpec& spec, const std::string& path) {
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write image: " + path);
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        if (!out) throw DataError("failed writing image: " + path);
    }
    try {
        Tensor gray = pngio::read_gray(path);
        if (gray.dim(1) != spec.height || gray.dim(2) != spec.width)
            gray = imaging::resize_bilinear(gray, spec.height, spec.width);
        pngio::write_gray(path, gray);
        return true;
    } catch (const DataError&) {
        std::error_code ec;
        fs::remove(path, ec);
        return false;
    }
}

}  // namespace

FetchReport fetch_images(const FetchSpec& spec, const std::vector<int64_t>& timestamps) {
    if (spec.cache_dir.empty()) throw UsageError("fetch needs a cache directory");
    if (spec.width < 1 || spec.height < 1) throw UsageError("fetch frame must be positive");
    if (spec.retries < 0 || spec.spacing_ms < 0 || spec.backoff_ms < 0)
        throw UsageError("retries, spacing and backoff must be non-negative");
    fs::create_directories(spec.cache_dir);

    httplib::Client client(spec.base_url);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(30, 0);
    RequestPacer pacer(spec.spacing_ms);

    FetchReport report;
    for (const int64_t ts : timestamps) {
        FetchEntry entry;
        entry.requested = ts;
        entry.image_scale = spec.image_scale;
        const std::string path =
            (fs::path(spec.cache_dir) / pipeline::image_filename(ts)).string();
        if (fs::exists(path)) {
            entry.status = "cached";
            entry.path = path;
            ++report.cached;
            report.entries.push_back(std::move(entry));
            continue;
        }

        const std::optional<int64_t> observed = closest_observation(client, spec, pacer, ts);
        std::optional<std::string> body;
        if (observed) body = screenshot_png(client, spec, pacer, ts);
        if (body && store_grayscale(*body, spec, path)) {
            entry.status = "fetched";
            entry.path = path;
            entry.returned = observed;
            ++report.fetched;
        } else {
            entry.status = "missing";
            ++report.missing;
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

void write_fetch_manifest(const std::string& path, const std::vector<FetchEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write fetch manifest: " + path);
    out << "requested\treturned\tpath\tstatus\timage_scale\n";
    char buf[32];
    for (const auto& e : entries) {
        out << timeutil::format_iso8601(e.requested) << '\t';
        if (e.returned)
            out << timeutil::format_iso8601(*e.returned);
        else
            out << '-';
        out << '\t' << (e.path.empty() ? "-" : e.path) << '\t' << e.status << '\t';
        std::snprintf(buf, sizeof(buf), "%.17g", e.image_scale);
        out << buf << "\n";
    }
    if (!out) throw DataError("failed writing fetch manifest: " + path);
}

std::vector<FetchEntry> read_fetch_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open fetch manifest: " + path);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError(path + ": empty fetch manifest");
    ++line_no;
    if (tsv::split(line) !=
        std::vector<std::string>{"requested", "returned", "path", "status", "image_scale"})
        tsv::fail(path, line_no, "unexpected fetch manifest header");
    std::vector<FetchEntry> entries;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = tsv::split(line);
        if (f.size() != 5)
            tsv::fail(path, line_no, "expected 5 fields, got " + std::to_string(f.size()));
        FetchEntry e;
        try {
            e.requested = timeutil::parse_iso8601(f[0]);
            if (f[1] != "-") e.returned = timeutil::parse_iso8601(f[1]);
        } catch (const DataError& err) {
            tsv::fail(path, line_no, err.what());
        }
        if (f[2] != "-") e.path = f[2];
        if (f[3] != "fetched" && f[3] != "cached" && f[3] != "missing")
            tsv::fail(path, line_no, "unknown status: '" + f[3] + "'");
        e.status = f[3];
        e.image_scale = tsv::parse_double(path, line_no, f[4], "image_scale");
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<FetchEntry> merge_entries(std::vector<FetchEntry> base,
                                      const std::vector<FetchEntry>& update) {
    std::map<int64_t, FetchEntry> by_time;
    for (auto& e : base) by_time[e.requested] = std::move(e);
    for (const auto& e : update) by_time[e.requested] = e;
    std::vector<FetchEntry> out;
    out.reserve(by_time.size());
    for (auto& [ts, e] : by_time) out.push_back(std::move(e));
    return out;
}

nlohmann::json cmd_fetch(const FetchSpec& spec, const std::vector<int64_t>& timestamps) {
    if (timestamps.empty()) throw UsageError("fetch needs at least one timestamp");
    const FetchReport report = fetch_images(spec, timestamps);

    const std::string manifest_path =
        (fs::path(spec.cache_dir) / "fetch_manifest.tsv").string();
    std::vector<FetchEntry> merged;
    if (fs::exists(manifest_path)) merged = read_fetch_manifest(manifest_path);
    merged = merge_entries(std::move(merged), report.entries);
    write_fetch_manifest(manifest_path, merged);

    nlohmann::json summary{{"requested", timestamps.size()},
                           {"fetched", report.fetched},
                           {"cached", report.cached},
                           {"missing", report.missing},
                           {"manifest", manifest_path}};
    if (report.missing == static_cast<int64_t>(timestamps.size()))
        throw DataError("all " + std::to_string(timestamps.size()) +
                        " requested images are missing; manifest written to " + manifest_path);
    return summary;
}

}  // namespace fdflare::fetch
