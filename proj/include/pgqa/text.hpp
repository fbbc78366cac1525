#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pgqa {

/// Splits on ASCII whitespace. Token counts from this function are the unit of
/// every length budget in the engine.
std::vector<std::string_view> whitespace_tokens(std::string_view text);
std::size_t count_tokens(std::string_view text);

/// Longest literal prefix of `text` containing at most `max_tokens`
/// whitespace tokens; original spacing inside the prefix is preserved.
std::string_view token_prefix(std::string_view text, std::size_t max_tokens);

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace pgqa
