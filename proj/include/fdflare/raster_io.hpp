#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fdflare/tensor.hpp"

namespace fdflare::raster {

enum class Dtype { f32, f64 };

// Portable raster record: one JSON header line
// {"dtype":"f32"|"f64","shape":[...]} followed by raw little-endian values
// in row-major order. f32 payloads are widened to f64 on read.
void write_raster(std::ostream& out, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor read_raster(std::istream& in);

void write_raster_file(const std::string& path, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor read_raster_file(const std::string& path);

// Weights file: a sequence of records, each a parameter name on its own
// line followed by that parameter's raster record.
void write_named_rasters(const std::string& path,
                         const std::vector<std::pair<std::string, Tensor>>& entries,
                         Dtype dtype = Dtype::f64);
std::vector<std::pair<std::string, Tensor>> read_named_rasters(const std::string& path);

}  // namespace fdflare::raster
