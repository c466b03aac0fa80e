#include <cctype>
#include <cstdio>
#include <sstream>

#include "ztpom/error.hpp"
#include "ztpom/json_util.hpp"
#include "ztpom/mac.hpp"

namespace ztpom {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::syntax: return "syntax";
    case Errc::invalid: return "invalid";
    case Errc::not_found: return "not-found";
    case Errc::precondition: return "precondition";
    case Errc::wrong_state: return "wrong-state";
    case Errc::conflict: return "conflict";
    case Errc::no_feasible_path: return "no-feasible-path";
    case Errc::insufficient_residual: return "insufficient-residual";
    case Errc::vlan_exhausted: return "vlan-pool-exhausted";
    case Errc::unknown_image: return "unknown-image";
    case Errc::capacity_exceeded: return "capacity-exceeded";
    case Errc::unresolved_placeholder: return "unresolved-placeholder";
    case Errc::invalid_token: return "invalid-token";
    case Errc::wrong_provider: return "wrong-provider";
    case Errc::duplicate_session: return "duplicate-session";
    case Errc::no_offer: return "no-offer";
    case Errc::separation_violation: return "separation-violation";
    case Errc::io: return "io";
  }
  return "unknown";
}

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

bool MacAddress::valid(std::string_view text) noexcept {
  if (text.size() != 17) return false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (i % 3 == 2) {
      if (text[i] != ':') return false;
    } else if (hex_value(text[i]) < 0) {
      return false;
    }
  }
  return true;
}

MacAddress MacAddress::parse(std::string_view text) {
  if (!valid(text)) {
    throw Error(Errc::invalid, "malformed MAC address '" + std::string(text) + "'");
  }
  Bytes bytes{};
  for (std::size_t i = 0; i < 6; ++i) {
    bytes[i] = static_cast<std::uint8_t>(hex_value(text[i * 3]) * 16 + hex_value(text[i * 3 + 1]));
  }
  return MacAddress(bytes);
}

std::string MacAddress::str() const {
  char buf[18];
  std::snprintf(buf, sizeof buf, "%02x:%02x:%02x:%02x:%02x:%02x", bytes_[0], bytes_[1],
                bytes_[2], bytes_[3], bytes_[4], bytes_[5]);
  return buf;
}

namespace jsonio {

json parse_document(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(Errc::syntax, "syntax error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

std::string child(std::string_view path, std::string_view key) {
  if (path.empty()) return std::string(key);
  std::string out(path);
  out += '.';
  out += key;
  return out;
}

std::string child(std::string_view path, std::size_t index) {
  std::string out(path);
  out += '[' + std::to_string(index) + ']';
  return out;
}

void fail(std::string_view path, std::string_view message) {
  std::string text(path.empty() ? "<document>" : path);
  text += ": ";
  text += message;
  throw Error(Errc::invalid, text);
}

const json& expect_object(const json& value, std::string_view path) {
  if (!value.is_object()) fail(path, "expected object");
  return value;
}

const json& expect_array(const json& value, std::string_view path) {
  if (!value.is_array()) fail(path, "expected array");
  return value;
}

const json* find(const json& obj, std::string_view key) {
  if (!obj.is_object()) return nullptr;
  auto it = obj.find(std::string(key));
  if (it == obj.end() || it->is_null()) return nullptr;
  return &*it;
}

const json& require(const json& obj, std::string_view key, std::string_view path) {
  expect_object(obj, path);
  const json* v = find(obj, key);
  if (v == nullptr) fail(child(path, key), "missing required field");
  return *v;
}

std::string get_string(const json& obj, std::string_view key, std::string_view path) {
  const json& v = require(obj, key, path);
  if (!v.is_string()) fail(child(path, key), "expected string");
  return v.get<std::string>();
}

double get_number(const json& obj, std::string_view key, std::string_view path) {
  const json& v = require(obj, key, path);
  if (!v.is_number()) fail(child(path, key), "expected number");
  return v.get<double>();
}

std::int64_t get_int(const json& obj, std::string_view key, std::string_view path) {
  const json& v = require(obj, key, path);
  if (!v.is_number_integer()) fail(child(path, key), "expected integer");
  return v.get<std::int64_t>();
}

bool get_bool(const json& obj, std::string_view key, std::string_view path) {
  const json& v = require(obj, key, path);
  if (!v.is_boolean()) fail(child(path, key), "expected boolean");
  return v.get<bool>();
}

std::optional<std::string> opt_string(const json& obj, std::string_view key,
                                      std::string_view path) {
  if (find(obj, key) == nullptr) return std::nullopt;
  return get_string(obj, key, path);
}

std::optional<double> opt_number(const json& obj, std::string_view key, std::string_view path) {
  if (find(obj, key) == nullptr) return std::nullopt;
  return get_number(obj, key, path);
}

std::optional<std::int64_t> opt_int(const json& obj, std::string_view key,
                                    std::string_view path) {
  if (find(obj, key) == nullptr) return std::nullopt;
  return get_int(obj, key, path);
}

std::vector<std::string> get_string_list(const json& obj, std::string_view key,
                                         std::string_view path) {
  const json& v = require(obj, key, path);
  const std::string here = child(path, key);
  expect_array(v, here);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) fail(child(here, i), "expected string");
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

std::vector<std::string> opt_string_list(const json& obj, std::string_view key,
                                         std::string_view path) {
  if (find(obj, key) == nullptr) return {};
  return get_string_list(obj, key, path);
}

std::map<std::string, std::string> opt_string_map(const json& obj, std::string_view key,
                                                  std::string_view path) {
  const json* v = find(obj, key);
  if (v == nullptr) return {};
  const std::string here = child(path, key);
  expect_object(*v, here);
  std::map<std::string, std::string> out;
  for (auto it = v->begin(); it != v->end(); ++it) {
    if (it->is_string()) {
      out[it.key()] = it->get<std::string>();
    } else if (it->is_number() || it->is_boolean()) {
      out[it.key()] = it->dump();
    } else {
      fail(child(here, it.key()), "expected scalar value");
    }
  }
  return out;
}

}  // namespace jsonio
}  // namespace ztpom
