#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace fdflare::fetch {

// Image-service client settings. The defaults target the public archive
// of line-of-sight magnetograms; tests point base_url at a local server.
struct FetchSpec {
    std::string base_url = "https://api.helioviewer.org";
    int source_id = 19;              // line-of-sight magnetogram series
    double image_scale = 4.8828125;  // arcsec per pixel, full disk at 512
    int width = 512;
    int height = 512;
    std::string cache_dir;
    int spacing_ms = 1000;  // minimum delay between network requests
    int retries = 3;        // additional attempts after a failure
    int backoff_ms = 250;   // first retry delay, doubled per attempt
};

struct FetchEntry {
    int64_t requested = 0;
    std::optional<int64_t> returned;  // observation time the service chose
    std::string path;                 // cached grayscale PNG, empty when missing
    std::string status;               // fetched | cached | missing
    double image_scale = 0.0;
};

struct FetchReport {
    std::vector<FetchEntry> entries;
    int64_t fetched = 0;
    int64_t cached = 0;
    int64_t missing = 0;
};

// One entry per requested timestamp, in input order. A file already in the
// cache is reused without touching the network; anything else asks the
// service for the nearest observation, downloads the rendering, and stores
// it as an 8-bit grayscale PNG of the configured size. Failures after the
// retry budget mark the timestamp missing; nothing throws for gaps.
FetchReport fetch_images(const FetchSpec& spec, const std::vector<int64_t>& timestamps);

// Fetch manifest: TSV with header requested, returned, path, status,
// image_scale; "-" for a missing returned time or path.
void write_fetch_manifest(const std::string& path, const std::vector<FetchEntry>& entries);
std::vector<FetchEntry> read_fetch_manifest(const std::string& path);

// Update-or-append `update` into `base` by requested timestamp; the result
// is sorted by requested time.
std::vector<FetchEntry> merge_entries(std::vector<FetchEntry> base,
                                      const std::vector<FetchEntry>& update);

// fetch_images plus manifest upkeep under cache_dir/fetch_manifest.tsv.
// Throws DataError (after writing the manifest) when every requested
// timestamp came back missing.
nlohmann::json cmd_fetch(const FetchSpec& spec, const std::vector<int64_t>& timestamps);

}  // namespace fdflare::fetch
