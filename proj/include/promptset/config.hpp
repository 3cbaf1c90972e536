#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "promptset/dataset_io.hpp"

namespace promptset {

/// The shipped configuration schema (schemas/config.schema.json).
const json& config_schema();

/// The backend wire protocol schema (schemas/wire.schema.json).
const json& wire_schema();
/// Validates a wire body against one of the schema's definitions, e.g.
/// "detect_request" or "segment_response".
void validate_wire(const json& instance, const std::string& definition);

/// Validates `instance` against a JSON schema. Supports the draft-07 subset
/// the shipped schema uses: type, enum, properties, additionalProperties,
/// required, items, minItems, minLength, minimum/maximum (and exclusive
/// forms), oneOf, anyOf and local $ref. Throws invalid_config naming the
/// JSON pointer of the first violation.
void validate_schema(const json& instance, const json& schema);

struct ReviewConfig {
  int max_session_pages = 16;
  std::string token;  // empty disables bearer auth
  std::string cors_origin = "*";
  bool segment_sessions = true;
};

struct CliConfig {
  PreprocessConfig preprocess;
  std::optional<PromptSuite> suite;
  std::optional<BackendDescriptor> backend;
  NmsConfig nms;
  bool nms_iou_explicit = false;  // otherwise taken from the suite
  EvalConfig eval;
  std::string runs_root;
  std::string images;
  std::string gt;
  ReviewConfig review;
};

/// Relative paths inside the file resolve against `base_dir`.
CliConfig cli_config_from_json(const json& j, const std::filesystem::path& base_dir);
CliConfig load_cli_config(const std::filesystem::path& path);

}  // namespace promptset
