#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace seapo {

// Strips ASCII whitespace from both ends.
std::string trim(std::string_view text);

std::string iso8601_utc(int64_t epoch_seconds);
int64_t now_epoch_seconds();

} // namespace seapo
