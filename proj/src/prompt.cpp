#include "promptset/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <set>

#include "promptset/fsutil.hpp"

namespace promptset {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool threshold_ok(double t) { return std::isfinite(t) && t > 0 && t < 1; }

PromptGroup group(std::string class_name, std::vector<std::string> phrases) {
  return PromptGroup{std::move(class_name), std::move(phrases), 0.35, 0.35};
}

PromptSuite suite(std::string id, std::vector<PromptGroup> groups) {
  return PromptSuite{std::move(id), std::move(groups), 0.5};
}

}  // namespace

std::string normalize_phrase(std::string_view phrase) {
  std::string out;
  bool pending_space = false;
  for (char c : phrase) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

void PromptGroup::validate() const {
  if (class_name.empty()) throw Error(ErrorKind::invalid_config, "prompt group without class_name");
  if (phrases.empty()) throw Error(ErrorKind::empty_prompt, "prompt group '" + class_name + "' has no phrases");
  for (const auto& p : phrases) {
    if (p.empty() || p != normalize_phrase(p)) {
      throw Error(ErrorKind::invalid_config,
                  "phrase '" + p + "' in group '" + class_name + "' is blank or not normalized");
    }
    if (p.find('.') != std::string::npos) {
      throw Error(ErrorKind::invalid_config, "phrase '" + p + "' contains the caption separator '.'");
    }
  }
  if (!threshold_ok(box_threshold) || !threshold_ok(text_threshold)) {
    throw Error(ErrorKind::invalid_config, "thresholds of group '" + class_name + "' must lie in (0,1)");
  }
}

void PromptSuite::validate() const {
  if (groups.empty()) throw Error(ErrorKind::invalid_config, "suite '" + suite_id + "' has no groups");
  if (!(std::isfinite(nms_iou) && nms_iou > 0 && nms_iou < 1)) {
    throw Error(ErrorKind::invalid_config, "suite nms_iou must lie in (0,1)");
  }
  std::set<std::string> seen;
  for (const auto& g : groups) {
    g.validate();
    if (!seen.insert(g.class_name).second) {
      throw Error(ErrorKind::invalid_config, "duplicate class '" + g.class_name + "' in suite '" + suite_id + "'");
    }
  }
}

const PromptGroup* PromptSuite::find(std::string_view class_name) const {
  for (const auto& g : groups) {
    if (g.class_name == class_name) return &g;
  }
  return nullptr;
}

std::vector<std::string> parse_prompt_notation(std::string_view text) {
  std::string_view body = text;
  while (!body.empty() && is_space(body.front())) body.remove_prefix(1);
  while (!body.empty() && is_space(body.back())) body.remove_suffix(1);
  if (!body.empty() && body.front() == '{') body.remove_prefix(1);
  if (!body.empty() && body.back() == '}') body.remove_suffix(1);

  std::vector<std::string> phrases;
  std::string current;
  const auto flush = [&] {
    std::string p = normalize_phrase(current);
    if (!p.empty()) phrases.push_back(std::move(p));
    current.clear();
  };
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    const bool left_open = i == 0 || is_space(body[i - 1]);
    const bool right_open = i + 1 == body.size() || is_space(body[i + 1]);
    if (c == '-' && (left_open || right_open)) {
      flush();
    } else {
      current.push_back(c);
    }
  }
  flush();
  if (phrases.empty()) throw Error(ErrorKind::empty_prompt, "prompt '" + std::string(text) + "' has no phrases");
  return phrases;
}

std::string render_prompt_notation(const std::vector<std::string>& phrases) {
  std::string out = "{";
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    if (i) out += " - ";
    out += phrases[i];
  }
  return out + "}";
}

std::string compile_caption(const PromptGroup& group) {
  std::string out;
  for (const auto& p : group.phrases) {
    out += p;
    out += " . ";
  }
  out.pop_back();
  return out;
}

const std::map<std::string, PromptSuite>& builtin_suites() {
  static const std::map<std::string, PromptSuite> suites = [] {
    const std::vector<std::string> initials{"dropcap", "decorated letter", "large letter"};
    std::map<std::string, PromptSuite> m;
    const auto add = [&m](PromptSuite s) { m.emplace(s.suite_id, std::move(s)); };
    add(suite("sved-v1", {group("visual_element", {"figure"})}));
    add(suite("sved-v2", {group("visual_element", {"figure", "diagram", "geometry", "sketch"})}));
    add(suite("chapbook-v1", {group("visual_element", {"figure"})}));
    add(suite("chapbook-v2", {group("visual_element", {"image", "square", "rectangle", "photo"})}));
    add(suite("horae-v1", {group("visual_element", {"figure"})}));
    // "lanscape" is spelled as published; see horae-v2-landscape.
    add(suite("horae-v2", {group("visual_element", {"figure", "lanscape", "scene", "square"})}));
    add(suite("horae-v2-landscape", {group("visual_element", {"figure", "landscape", "scene", "square"})}));
    add(suite("sved-classes", {group("Initials", initials),
                               group("ContentIllustration", {"figure", "diagram", "circle", "planets"})}));
    add(suite("horae-classes", {group("Initials", initials),
                                group("Decoration", {"floral", "rectangle", "flower", "decorative", "abstract"}),
                                group("Miniature", {"scene", "landscape", "square"})}));
    for (const auto& [id, s] : m) s.validate();
    return m;
  }();
  return suites;
}

const std::map<std::string, std::string>& phrase_aliases() {
  static const std::map<std::string, std::string> aliases{{"lanscape", "landscape"}};
  return aliases;
}

PromptSuite apply_phrase_aliases(PromptSuite s) {
  for (auto& g : s.groups) {
    for (auto& p : g.phrases) {
      if (auto it = phrase_aliases().find(p); it != phrase_aliases().end()) p = it->second;
    }
  }
  return s;
}

json suite_to_json(const PromptSuite& s) {
  json groups = json::array();
  for (const auto& g : s.groups) {
    groups.push_back({{"class_name", g.class_name},
                      {"phrases", g.phrases},
                      {"box_threshold", canonical_real(g.box_threshold)},
                      {"text_threshold", canonical_real(g.text_threshold)}});
  }
  return {{"suite_id", s.suite_id}, {"groups", groups}, {"nms_iou", canonical_real(s.nms_iou)}};
}

PromptSuite suite_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::invalid_config, "suite must be a JSON object");
  static const std::set<std::string> suite_keys{"suite_id", "groups", "nms_iou"};
  static const std::set<std::string> group_keys{"class_name", "phrases", "prompt", "box_threshold",
                                                "text_threshold"};
  for (const auto& [k, v] : j.items()) {
    if (!suite_keys.count(k)) throw Error(ErrorKind::invalid_config, "unknown suite key '" + k + "'");
  }
  PromptSuite s;
  s.suite_id = j.value("suite_id", std::string("custom"));
  s.nms_iou = j.contains("nms_iou") ? require<double>(j, "nms_iou") : 0.5;
  if (!j.contains("groups") || !j.at("groups").is_array()) {
    throw Error(ErrorKind::invalid_config, "suite needs a 'groups' array");
  }
  for (const auto& gj : j.at("groups")) {
    if (!gj.is_object()) throw Error(ErrorKind::invalid_config, "suite group must be an object");
    for (const auto& [k, v] : gj.items()) {
      if (!group_keys.count(k)) throw Error(ErrorKind::invalid_config, "unknown group key '" + k + "'");
    }
    PromptGroup g;
    g.class_name = require<std::string>(gj, "class_name");
    if (gj.contains("phrases") == gj.contains("prompt")) {
      throw Error(ErrorKind::invalid_config, "group '" + g.class_name + "' needs exactly one of phrases/prompt");
    }
    if (gj.contains("prompt")) {
      g.phrases = parse_prompt_notation(require<std::string>(gj, "prompt"));
    } else {
      for (const auto& p : require<std::vector<std::string>>(gj, "phrases")) {
        g.phrases.push_back(normalize_phrase(p));
      }
    }
    if (gj.contains("box_threshold")) g.box_threshold = require<double>(gj, "box_threshold");
    if (gj.contains("text_threshold")) g.text_threshold = require<double>(gj, "text_threshold");
    s.groups.push_back(std::move(g));
  }
  s.validate();
  return s;
}

PromptSuite resolve_suite(const std::string& id_or_path) {
  const auto& builtins = builtin_suites();
  if (auto it = builtins.find(id_or_path); it != builtins.end()) return it->second;
  if (std::filesystem::is_regular_file(id_or_path)) {
    return suite_from_json(parse_json(read_file_text(id_or_path), id_or_path));
  }
  throw Error(ErrorKind::usage, "unknown suite '" + id_or_path + "' (not a builtin id or a file)");
}

}  // namespace promptset
