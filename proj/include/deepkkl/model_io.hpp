#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "deepkkl/nets.hpp"
#include "deepkkl/predictor.hpp"

namespace dkkl {

inline constexpr int kModelFormatVersion = 1;

// JSON document: format_version, kind, system, dt, latent_dim, scaler, an
// architecture descriptor and every parameter array by name, row-major with
// its shape. Checkpoints add the Adam moments under the same names.
struct ModelFile {
  Model model;
  std::string system;  // empty when unknown
  std::optional<AdamState> optimizer;
};

std::string model_to_json(const ModelFile& file);
// Throws SchemaError on a malformed or inconsistent document.
ModelFile model_from_json(const std::string& text);

void save_model(const std::filesystem::path& path, const ModelFile& file);
ModelFile load_model(const std::filesystem::path& path);

}  // namespace dkkl
