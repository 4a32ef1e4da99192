#include "fdflare/time_utils.hpp"

#include <cstdio>

namespace fdflare::timeutil {

int64_t days_from_civil(int year, int month, int day) {
    year -= month <= 2;
    const int64_t era = (year >= 0 ? year : year - 399) / 400;
    const int64_t yoe = year - era * 400;
    const int64_t doy = (153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
    const int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

void civil_from_days(int64_t days, int& year, int& month, int& day) {
    const int64_t z = days + 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const int64_t doe = z - era * 146097;
    const int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int64_t y = yoe + era * 400;
    const int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const int64_t mp = (5 * doy + 2) / 153;
    day = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    month = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    year = static_cast<int>(y + (month <= 2));
}

namespace {

int days_in_month(int year, int month) {
    static const int lengths[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (month == 2) {
        const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
        return leap ? 29 : 28;
    }
    return lengths[month - 1];
}

}  // namespace

int64_t utc_seconds(int year, int month, int day, int hour, int minute, int second) {
    if (month < 1 || month > 12) throw DataError("month out of range: " + std::to_string(month));
    if (day < 1 || day > days_in_month(year, month))
        throw DataError("day out of range: " + std::to_string(day));
    if (hour < 0 || hour > 23 || minute < 0 || minute > 59 || second < 0 || second > 59)
        throw DataError("time of day out of range");
    return days_from_civil(year, month, day) * kSecondsPerDay + hour * 3600 + minute * 60 +
           second;
}

int64_t parse_iso8601(const std::string& text) {
    int year, month, day, hour, minute, second = 0;
    char sep;
    int consumed = 0;
    const int fields = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d%n", &year, &month, &day,
                                   &sep, &hour, &minute, &second, &consumed);
    if (fields < 6 || (sep != 'T' && sep != ' '))
        throw DataError("malformed timestamp: '" + text + "'");
    if (fields == 6) {
        // re-scan to find where minutes ended
        std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d%n", &year, &month, &day, &sep, &hour,
                    &minute, &consumed);
        second = 0;
    }
    std::string rest = text.substr(static_cast<size_t>(consumed));
    if (!rest.empty() && rest != "Z") throw DataError("malformed timestamp: '" + text + "'");
    return utc_seconds(year, month, day, hour, minute, second);
}

std::string format_iso8601(int64_t epoch_seconds) {
    int64_t days = epoch_seconds / kSecondsPerDay;
    int64_t rem = epoch_seconds % kSecondsPerDay;
    if (rem < 0) {
        rem += kSecondsPerDay;
        days -= 1;
    }
    int year, month, day;
    civil_from_days(days, year, month, day);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02lld:%02lld:%02lldZ", year, month, day,
                  static_cast<long long>(rem / 3600), static_cast<long long>(rem / 60 % 60),
                  static_cast<long long>(rem % 60));
    return buf;
}

int month_of(int64_t epoch_seconds) {
    int64_t days = epoch_seconds / kSecondsPerDay;
    if (epoch_seconds % kSecondsPerDay < 0) days -= 1;
    int year, month, day;
    civil_from_days(days, year, month, day);
    return month;
}

int year_of(int64_t epoch_seconds) {
    int64_t days = epoch_seconds / kSecondsPerDay;
    if (epoch_seconds % kSecondsPerDay < 0) days -= 1;
    int year, month, day;
    civil_from_days(days, year, month, day);
    return year;
}

}  // namespace fdflare::timeutil
