#include "promptset/config.hpp"

#include <cmath>

#include "promptset/config_schema.hpp"
#include "promptset/fsutil.hpp"

namespace promptset {

const json& config_schema() {
  static const json schema = json::parse(generated::kConfigSchema);
  return schema;
}

const json& wire_schema() {
  static const json schema = json::parse(generated::kWireSchema);
  return schema;
}

void validate_wire(const json& instance, const std::string& definition) {
  const json& root = wire_schema();
  if (!root.at("definitions").contains(definition)) {
    throw Error(ErrorKind::usage, "no wire schema definition '" + definition + "'");
  }
  json schema = root;
  schema["$ref"] = "#/definitions/" + definition;
  validate_schema(instance, schema);
}

namespace {

bool type_matches(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  if (type == "integer") return v.is_number_integer() || (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
  if (type == "number") return v.is_number();
  return false;
}

class SchemaValidator {
 public:
  explicit SchemaValidator(const json& root) : root_(root) {}

  // Returns an error message, empty when valid.
  std::string check(const json& v, const json& schema, const std::string& where) const {
    if (schema.contains("$ref")) {
      const auto ref = schema.at("$ref").get<std::string>();
      if (ref.rfind("#/", 0) != 0) return where + ": unsupported $ref " + ref;
      return check(v, root_.at(json::json_pointer(ref.substr(1))), where);
    }
    if (schema.contains("type")) {
      const auto& t = schema.at("type");
      bool ok = false;
      if (t.is_string()) {
        ok = type_matches(v, t.get<std::string>());
      } else {
        for (const auto& alt : t) ok = ok || type_matches(v, alt.get<std::string>());
      }
      if (!ok) return where + ": expected type " + t.dump();
    }
    if (schema.contains("enum")) {
      bool found = false;
      for (const auto& e : schema.at("enum")) found = found || e == v;
      if (!found) return where + ": value " + v.dump() + " not in " + schema.at("enum").dump();
    }
    if (v.is_number()) {
      const double x = v.get<double>();
      if (schema.contains("minimum") && x < schema.at("minimum").get<double>()) return where + ": below minimum";
      if (schema.contains("maximum") && x > schema.at("maximum").get<double>()) return where + ": above maximum";
      if (schema.contains("exclusiveMinimum") && x <= schema.at("exclusiveMinimum").get<double>()) {
        return where + ": must be greater than " + schema.at("exclusiveMinimum").dump();
      }
      if (schema.contains("exclusiveMaximum") && x >= schema.at("exclusiveMaximum").get<double>()) {
        return where + ": must be less than " + schema.at("exclusiveMaximum").dump();
      }
    }
    if (v.is_string() && schema.contains("minLength") &&
        v.get<std::string>().size() < schema.at("minLength").get<std::size_t>()) {
      return where + ": string too short";
    }
    if (v.is_array()) {
      if (schema.contains("minItems") && v.size() < schema.at("minItems").get<std::size_t>()) {
        return where + ": too few items";
      }
      if (schema.contains("maxItems") && v.size() > schema.at("maxItems").get<std::size_t>()) {
        return where + ": too many items";
      }
      if (schema.contains("items")) {
        for (std::size_t i = 0; i < v.size(); ++i) {
          if (auto err = check(v[i], schema.at("items"), where + "/" + std::to_string(i)); !err.empty()) return err;
        }
      }
    }
    if (v.is_object()) {
      if (schema.contains("required")) {
        for (const auto& key : schema.at("required")) {
          if (!v.contains(key.get<std::string>())) return where + ": missing required key '" + key.get<std::string>() + "'";
        }
      }
      const json empty = json::object();
      const json& props = schema.contains("properties") ? schema.at("properties") : empty;
      for (const auto& [key, child] : v.items()) {
        if (props.contains(key)) {
          if (auto err = check(child, props.at(key), where + "/" + key); !err.empty()) return err;
        } else if (schema.contains("additionalProperties")) {
          const auto& extra = schema.at("additionalProperties");
          if (extra.is_boolean()) {
            if (!extra.get<bool>()) return where + ": unknown key '" + key + "'";
          } else if (auto err = check(child, extra, where + "/" + key); !err.empty()) {
            return err;
          }
        }
      }
    }
    if (schema.contains("oneOf")) {
      int matches = 0;
      std::string first_err;
      for (const auto& alt : schema.at("oneOf")) {
        auto err = check(v, alt, where);
        if (err.empty()) {
          ++matches;
        } else if (first_err.empty()) {
          first_err = err;
        }
      }
      if (matches != 1) {
        return where + ": must match exactly one alternative (" + std::to_string(matches) + " matched" +
               (first_err.empty() ? "" : "; " + first_err) + ")";
      }
    }
    if (schema.contains("anyOf")) {
      bool any = false;
      for (const auto& alt : schema.at("anyOf")) any = any || check(v, alt, where).empty();
      if (!any) return where + ": matches none of the alternatives";
    }
    return {};
  }

 private:
  const json& root_;
};

std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace

void validate_schema(const json& instance, const json& schema) {
  SchemaValidator validator(schema);
  if (auto err = validator.check(instance, schema, ""); !err.empty()) {
    throw Error(ErrorKind::invalid_config, "config " + (err.front() == ':' ? "<root>" + err : err));
  }
}

CliConfig cli_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  validate_schema(j, config_schema());
  CliConfig cfg;
  if (j.contains("preprocess")) cfg.preprocess = preprocess_config_from_json(j.at("preprocess"));
  if (j.contains("suite")) {
    const auto& s = j.at("suite");
    cfg.suite = s.is_string() ? resolve_suite(s.get<std::string>()) : suite_from_json(s);
  }
  if (j.contains("backend")) {
    auto d = descriptor_from_json(j.at("backend"));
    d.fixture_root = resolve_path(d.fixture_root, base_dir);
    d.validate();
    cfg.backend = d;
  }
  if (j.contains("nms")) {
    cfg.nms = nms_config_from_json(j.at("nms"));
    cfg.nms_iou_explicit = j.at("nms").contains("iou_thresh");
  }
  if (j.contains("eval")) cfg.eval = eval_config_from_json(j.at("eval"));
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    cfg.runs_root = resolve_path(p.value("runs_root", std::string()), base_dir);
    cfg.images = resolve_path(p.value("images", std::string()), base_dir);
    cfg.gt = resolve_path(p.value("gt", std::string()), base_dir);
  }
  if (j.contains("review")) {
    const auto& r = j.at("review");
    cfg.review.max_session_pages = r.value("max_session_pages", cfg.review.max_session_pages);
    cfg.review.token = r.value("token", cfg.review.token);
    cfg.review.cors_origin = r.value("cors_origin", cfg.review.cors_origin);
    cfg.review.segment_sessions = r.value("segment_sessions", cfg.review.segment_sessions);
  }
  return cfg;
}

CliConfig load_cli_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file_text(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::invalid_config, e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::invalid_config, path.string() + ": invalid JSON: " + e.what());
  }
  return cli_config_from_json(j, path.parent_path());
}

}  // namespace promptset
