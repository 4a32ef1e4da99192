#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fdflare/errors.hpp"

namespace fdflare::tsv {

inline std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == '\t') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

[[noreturn]] inline void fail(const std::string& path, size_t line_no, const std::string& what) {
    throw DataError(path + ":" + std::to_string(line_no) + ": " + what);
}

inline double parse_double(const std::string& path, size_t line_no, const std::string& text,
                           const char* what) {
    try {
        size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        fail(path, line_no, std::string("bad ") + what + ": '" + text + "'");
    }
}

inline long long parse_int(const std::string& path, size_t line_no, const std::string& text,
                           const char* what) {
    try {
        size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        fail(path, line_no, std::string("bad ") + what + ": '" + text + "'");
    }
}

}  // namespace fdflare::tsv
