#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ztpom {

enum class Errc {
  syntax,
  invalid,
  not_found,
  precondition,
  wrong_state,
  conflict,
  no_feasible_path,
  insufficient_residual,
  vlan_exhausted,
  unknown_image,
  capacity_exceeded,
  unresolved_placeholder,
  invalid_token,
  wrong_provider,
  duplicate_session,
  no_offer,
  separation_violation,
  io,
};

std::string_view to_string(Errc code) noexcept;

// Every domain failure in the library is reported as an Error carrying a
// machine-readable code; the message names the offending entity.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ztpom
