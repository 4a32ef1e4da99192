#pragma once

#include <cstdint>
#include <string>

#include "fdflare/errors.hpp"

namespace fdflare::timeutil {

inline constexpr int64_t kSecondsPerHour = 3600;
inline constexpr int64_t kSecondsPerDay = 86400;

// Days since 1970-01-01 for a proleptic Gregorian date.
int64_t days_from_civil(int year, int month, int day);
void civil_from_days(int64_t days, int& year, int& month, int& day);

// Epoch seconds for a UTC date-time; validates calendar ranges.
int64_t utc_seconds(int year, int month, int day, int hour = 0, int minute = 0,
                    int second = 0);

// Accepts "YYYY-MM-DDTHH:MM:SS" with optional trailing 'Z' and optional
// ":SS"; throws DataError on anything else.
int64_t parse_iso8601(const std::string& text);

// Formats as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_iso8601(int64_t epoch_seconds);

int month_of(int64_t epoch_seconds);  // 1..12
int year_of(int64_t epoch_seconds);

}  // namespace fdflare::timeutil
