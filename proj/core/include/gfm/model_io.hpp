#pragma once

// On-disk formats: model files and training configs (JSON), training curves
// (CSV).

#include "gfm/inference.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfm {

inline constexpr std::string_view kModelFormat = "gfm-model/1";

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Self-describing document: format tag, spec fields, panel symbols and the
/// raw theta / phi maps ({"rows", "cols", "data"} with row-major data).
std::string model_to_json(const FittedModel& model);
/// Throws FormatError on a bad tag, an invalid model label or a parameter layout
/// that does not match the model.
FittedModel model_from_json(const std::string& text);

void save_model(const std::filesystem::path& path, const FittedModel& model);
FittedModel load_model(const std::filesystem::path& path);

/// Flat object whose keys mirror TrainingConfig; missing keys keep their
/// defaults, unknown keys are an error.
TrainingConfig config_from_json(const std::string& text);
std::string config_to_json(const TrainingConfig& config);
TrainingConfig load_config(const std::filesystem::path& path);

/// "epoch,vlb" rows, epochs counted from 1.
std::string curve_csv(const std::vector<double>& curve);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace gfm
