#include "fdflare/raster_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace fdflare::raster {

namespace {

void put_le64(std::ostream& out, double v) {
    const uint64_t bits = std::bit_cast<uint64_t>(v);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(buf, 8);
}

void put_le32(std::ostream& out, float v) {
    const uint32_t bits = std::bit_cast<uint32_t>(v);
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(buf, 4);
}

double take_le64(const unsigned char* p) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

float take_le32(const unsigned char* p) {
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

}  // namespace

void write_raster(std::ostream& out, const Tensor& t, Dtype dtype) {
    nlohmann::json header;
    header["dtype"] = dtype == Dtype::f64 ? "f64" : "f32";
    header["shape"] = t.shape();
    out << header.dump() << "\n";
    for (int64_t i = 0; i < t.numel(); ++i) {
        if (dtype == Dtype::f64)
            put_le64(out, t[i]);
        else
            put_le32(out, static_cast<float>(t[i]));
    }
    if (!out) throw DataError("raster write failed");
}

Tensor read_raster(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("missing raster header line");
    nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.is_object() || !header.contains("dtype") ||
        !header.contains("shape"))
        throw DataError("malformed raster header: " + line);
    const std::string dtype = header["dtype"].get<std::string>();
    if (dtype != "f32" && dtype != "f64")
        throw DataError("unknown raster dtype: " + dtype);
    Shape shape;
    for (const auto& d : header["shape"]) {
        if (!d.is_number_integer()) throw DataError("malformed raster shape: " + line);
        shape.push_back(d.get<int64_t>());
    }
    const int64_t count = shape_numel(shape);
    const size_t elem = dtype == "f64" ? 8 : 4;
    std::vector<unsigned char> payload(static_cast<size_t>(count) * elem);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
    const auto got = static_cast<size_t>(in.gcount());
    if (got != payload.size())
        throw DataError("truncated raster payload: expected " +
                        std::to_string(payload.size()) + " bytes, got " + std::to_string(got));
    std::vector<double> values(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        const unsigned char* p = payload.data() + static_cast<size_t>(i) * elem;
        values[static_cast<size_t>(i)] = elem == 8 ? take_le64(p) : take_le32(p);
    }
    return Tensor(std::move(shape), std::move(values));
}

void write_raster_file(const std::string& path, const Tensor& t, Dtype dtype) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    write_raster(out, t, dtype);
}

Tensor read_raster_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    return read_raster(in);
}

void write_named_rasters(const std::string& path,
                         const std::vector<std::pair<std::string, Tensor>>& entries,
                         Dtype dtype) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const auto& [name, tensor] : entries) {
        if (name.empty() || name.find('\n') != std::string::npos)
            throw DataError("invalid raster record name: '" + name + "'");
        out << name << "\n";
        write_raster(out, tensor, dtype);
    }
}

std::vector<std::pair<std::string, Tensor>> read_named_rasters(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<std::pair<std::string, Tensor>> entries;
    std::string name;
    while (std::getline(in, name)) {
        if (name.empty()) continue;
        entries.emplace_back(name, read_raster(in));
    }
    return entries;
}

}  // namespace fdflare::raster
