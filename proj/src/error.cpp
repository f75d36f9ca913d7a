#include "smoea/error.hpp"

namespace smoea {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_shape: return "invalid-shape";
    case ErrorCode::invalid_geometry: return "invalid-geometry";
    case ErrorCode::invalid_label: return "invalid-label";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::invalid_mask: return "invalid-mask";
    case ErrorCode::infeasible_mask: return "infeasible-mask";
    case ErrorCode::infeasible_bounds: return "infeasible-bounds";
    case ErrorCode::unknown_layer: return "unknown-layer";
    case ErrorCode::degenerate_elite: return "degenerate-elite";
    case ErrorCode::empty_front: return "empty-front";
    case ErrorCode::invalid_plan: return "invalid-plan";
    case ErrorCode::invalid_data: return "invalid-data";
    case ErrorCode::corrupt_model: return "corrupt-model";
    case ErrorCode::corrupt_data: return "corrupt-data";
    case ErrorCode::malformed_config: return "malformed-config";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::malformed_config:
    case ErrorCode::invalid_argument: return 2;
    case ErrorCode::unknown_layer: return 3;
    case ErrorCode::io: return 4;
    case ErrorCode::corrupt_model:
    case ErrorCode::corrupt_data: return 5;
    case ErrorCode::invalid_mask:
    case ErrorCode::infeasible_mask:
    case ErrorCode::invalid_plan: return 6;
    case ErrorCode::infeasible_bounds:
    case ErrorCode::degenerate_elite:
    case ErrorCode::empty_front: return 7;
    case ErrorCode::invalid_shape:
    case ErrorCode::invalid_geometry:
    case ErrorCode::invalid_label:
    case ErrorCode::invalid_data: return 8;
  }
  return 1;
}

}  // namespace smoea
