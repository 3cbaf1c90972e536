#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "promptset/json_io.hpp"

namespace promptset {

/// One output class: a set of descriptive phrases sent to the detector
/// together, plus the detector confidence cutoffs.
struct PromptGroup {
  std::string class_name;
  std::vector<std::string> phrases;
  double box_threshold = 0.35;
  double text_threshold = 0.35;

  void validate() const;
  bool operator==(const PromptGroup&) const = default;
};

struct PromptSuite {
  std::string suite_id;
  std::vector<PromptGroup> groups;
  double nms_iou = 0.5;

  void validate() const;
  const PromptGroup* find(std::string_view class_name) const;
  bool operator==(const PromptSuite&) const = default;
};

/// "{figure - diagram}" -> {"figure", "diagram"}. Braces optional; a hyphen
/// inside a word ("semi-circle") is not a separator.
std::vector<std::string> parse_prompt_notation(std::string_view text);

/// Inverse of parse_prompt_notation for normalized phrase lists.
std::string render_prompt_notation(const std::vector<std::string>& phrases);

/// Trim, lowercase, collapse inner whitespace.
std::string normalize_phrase(std::string_view phrase);

/// Detector caption: phrases joined with " . " and terminated by " .".
std::string compile_caption(const PromptGroup& group);

/// Table-1 and class-differentiation configurations, keyed by suite id.
const std::map<std::string, PromptSuite>& builtin_suites();

/// Known misspellings kept verbatim in builtin suites, with their fix.
const std::map<std::string, std::string>& phrase_aliases();
PromptSuite apply_phrase_aliases(PromptSuite suite);

json suite_to_json(const PromptSuite& suite);
/// Accepts groups with either "phrases": [...] or "prompt": "{a - b}".
PromptSuite suite_from_json(const json& j);

/// Builtin id, or a path to a suite JSON file.
PromptSuite resolve_suite(const std::string& id_or_path);

}  // namespace promptset
