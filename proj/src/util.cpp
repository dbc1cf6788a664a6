#include "seapo/util.hpp"

#include <chrono>
#include <ctime>

namespace seapo {

std::string trim(std::string_view text) {
    const char* ws = " \t\r\n\f\v";
    const size_t begin = text.find_first_not_of(ws);
    if (begin == std::string_view::npos) {
        return std::string();
    }
    const size_t end = text.find_last_not_of(ws);
    return std::string(text.substr(begin, end - begin + 1));
}

std::string iso8601_utc(int64_t epoch_seconds) {
    std::time_t t = static_cast<std::time_t>(epoch_seconds);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

int64_t now_epoch_seconds() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

} // namespace seapo
