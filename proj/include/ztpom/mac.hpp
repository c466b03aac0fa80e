#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace ztpom {

// 48-bit Ethernet address. Text form is lowercase, colon separated.
class MacAddress {
 public:
  using Bytes = std::array<std::uint8_t, 6>;

  constexpr MacAddress() = default;
  constexpr explicit MacAddress(Bytes bytes) : bytes_(bytes) {}

  // Accepts "aa:bb:cc:dd:ee:ff" in either case; throws Error(invalid).
  static MacAddress parse(std::string_view text);
  static bool valid(std::string_view text) noexcept;

  const Bytes& bytes() const noexcept { return bytes_; }
  std::string str() const;

  auto operator<=>(const MacAddress&) const = default;

 private:
  Bytes bytes_{};
};

}  // namespace ztpom
