#pragma once

// Path-aware readers over nlohmann::json. Every failure names the field
// path ("nodes[2].vcpu") so document errors point at the offending value.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ztpom/error.hpp"

namespace ztpom::jsonio {

using json = nlohmann::json;

// Parses text; syntax errors become Error(syntax) reporting the byte offset.
json parse_document(std::string_view text);

std::string child(std::string_view path, std::string_view key);
std::string child(std::string_view path, std::size_t index);

[[noreturn]] void fail(std::string_view path, std::string_view message);

const json& expect_object(const json& value, std::string_view path);
const json& expect_array(const json& value, std::string_view path);

const json& require(const json& obj, std::string_view key, std::string_view path);
const json* find(const json& obj, std::string_view key);

std::string get_string(const json& obj, std::string_view key, std::string_view path);
double get_number(const json& obj, std::string_view key, std::string_view path);
std::int64_t get_int(const json& obj, std::string_view key, std::string_view path);
bool get_bool(const json& obj, std::string_view key, std::string_view path);

std::optional<std::string> opt_string(const json& obj, std::string_view key,
                                      std::string_view path);
std::optional<double> opt_number(const json& obj, std::string_view key,
                                 std::string_view path);
std::optional<std::int64_t> opt_int(const json& obj, std::string_view key,
                                    std::string_view path);

std::vector<std::string> get_string_list(const json& obj, std::string_view key,
                                         std::string_view path);
std::vector<std::string> opt_string_list(const json& obj, std::string_view key,
                                         std::string_view path);
std::map<std::string, std::string> opt_string_map(const json& obj, std::string_view key,
                                                  std::string_view path);

}  // namespace ztpom::jsonio
