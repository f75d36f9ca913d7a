#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace smoea {

enum class ErrorCode {
  invalid_shape,
  invalid_geometry,
  invalid_label,
  invalid_argument,
  invalid_mask,
  infeasible_mask,
  infeasible_bounds,
  unknown_layer,
  degenerate_elite,
  empty_front,
  invalid_plan,
  invalid_data,
  corrupt_model,
  corrupt_data,
  malformed_config,
  io,
};

std::string_view to_string(ErrorCode code);

/// Process exit status the CLI reports for an error of this kind.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace smoea
