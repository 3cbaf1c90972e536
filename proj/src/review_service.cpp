#include "promptset/review_service.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>

#include <httplib.h>

#include "promptset/fsutil.hpp"
#include "promptset/log.hpp"

namespace promptset {

namespace {

namespace fs = std::filesystem;

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::invalid_config:
    case ErrorKind::empty_prompt:
    case ErrorKind::casting:
      return 400;
    case ErrorKind::backend:
      return 503;
    case ErrorKind::protocol:
    case ErrorKind::fixture_not_found:
      return 502;
    case ErrorKind::export_failure:
      return 422;
    default:
      return 500;
  }
}

struct HttpError {
  int status;
  json body;
};

[[noreturn]] void fail(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  throw HttpError{status, std::move(extra)};
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

bool safe_id(const std::string& id) {
  return !id.empty() && id != "." && id != ".." && id.find('/') == std::string::npos &&
         id.find('\\') == std::string::npos;
}

std::vector<std::string> list_runs(const fs::path& root) {
  std::vector<std::string> ids;
  if (!fs::is_directory(root)) return ids;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && is_run_dir(e.path())) ids.push_back(e.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

fs::path run_path(const fs::path& root, const std::string& id) {
  if (!safe_id(id)) fail(400, "invalid run id '" + id + "'");
  const fs::path dir = root / id;
  if (!is_run_dir(dir)) fail(404, "unknown run '" + id + "'");
  return dir;
}

std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback, std::size_t max) {
  if (!req.has_param(key)) return fallback;
  try {
    const long long v = std::stoll(req.get_param_value(key));
    if (v < 0) fail(400, std::string(key) + " must be non-negative");
    return std::min<std::size_t>(static_cast<std::size_t>(v), max);
  } catch (const std::logic_error&) {
    fail(400, std::string(key) + " must be an integer");
  }
}

json page_window(const json& items, const httplib::Request& req) {
  const std::size_t offset = query_size(req, "offset", 0, items.size());
  const std::size_t limit = query_size(req, "limit", 100, 1000);
  json page = json::array();
  for (std::size_t i = offset; i < items.size() && page.size() < limit; ++i) page.push_back(items[i]);
  return {{"items", page}, {"total", items.size()}, {"offset", offset}, {"limit", limit}};
}

std::string content_type_for(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  return "";
}

json run_summary(const PipelineRun& run) {
  return {{"run_id", run.run_id},
          {"created_at", run.created_at},
          {"suite_id", run.suite.suite_id},
          {"pages", run.pages.size()},
          {"detections", run.detections.size()},
          {"errors", run.errors.size()},
          {"parent_run", run.parent_run ? json(*run.parent_run) : json(nullptr)},
          {"session_id", run.session_id ? json(*run.session_id) : json(nullptr)}};
}

}  // namespace

ReviewService::ReviewService(ReviewServiceOptions options)
    : opts_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  fs::create_directories(opts_.runs_root);
  install_routes();
}

ReviewService::~ReviewService() { stop(); }

int ReviewService::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorKind::io, "cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw Error(ErrorKind::io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void ReviewService::serve() { server_->listen_after_bind(); }

void ReviewService::stop() {
  if (server_) server_->stop();
}

void ReviewService::install_routes() {
  auto& srv = *server_;
  const fs::path root = opts_.runs_root;

  srv.set_default_headers({{"Access-Control-Allow-Origin", opts_.review.cors_origin},
                           {"Access-Control-Allow-Headers", "Content-Type, Authorization"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});

  srv.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (opts_.review.token.empty() || req.method == "OPTIONS" || req.path.rfind("/api/", 0) != 0) {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    if (req.get_header_value("Authorization") != "Bearer " + opts_.review.token) {
      send_json(res, 401, {{"error", "missing or invalid bearer token"}});
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  // Every handler runs through here so library errors map onto HTTP codes.
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;
  const auto guarded = [](Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const HttpError& e) {
        send_json(res, e.status, e.body);
      } catch (const Error& e) {
        send_json(res, http_status(e.kind()), {{"error", e.what()}, {"kind", to_string(e.kind())}});
      } catch (const json::exception& e) {
        send_json(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
      } catch (const std::exception& e) {
        send_json(res, 500, {{"error", e.what()}});
      }
    };
  };

  const auto parse_body = [](const httplib::Request& req) {
    try {
      return req.body.empty() ? json::object() : json::parse(req.body);
    } catch (const json::parse_error& e) {
      fail(400, std::string("request body is not valid JSON: ") + e.what());
    }
  };

  srv.Get("/api/health", guarded([root](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, {{"status", "ok"}, {"runs", list_runs(root).size()}, {"version", tool_version()}});
          }));

  srv.Get("/api/runs", guarded([root](const httplib::Request& req, httplib::Response& res) {
            json items = json::array();
            for (const auto& id : list_runs(root)) items.push_back(run_summary(load_run(root / id)));
            send_json(res, 200, page_window(items, req));
          }));

  srv.Get(R"(/api/runs/([^/]+))", guarded([root](const httplib::Request& req, httplib::Response& res) {
            const fs::path dir = run_path(root, req.matches[1]);
            const PipelineRun run = load_run(dir);
            json body = manifest_to_json(run);
            body["summary"] = run_summary(run);
            body["errors"] = errors_to_json(run.errors).at("errors");
            json timing = json::object();
            for (const auto& [k, v] : run.timing) timing[k] = v;
            body["timing"] = timing;
            std::map<std::string, std::size_t> counts{{"accepted", 0}, {"rejected", 0}, {"pending", 0}};
            const auto status = latest_status(read_decisions(decisions_path(dir)));
            for (const auto& d : run.detections) {
              auto it = status.find(d.id);
              ++counts[it == status.end() ? "pending" : std::string(to_string(it->second))];
            }
            body["decisions"] = counts;
            send_json(res, 200, body);
          }));

  srv.Get(R"(/api/runs/([^/]+)/detections)", guarded([root](const httplib::Request& req, httplib::Response& res) {
            const std::string run_id = req.matches[1];
            const fs::path dir = run_path(root, run_id);
            const PipelineRun run = load_run(dir);
            const auto status = latest_status(read_decisions(decisions_path(dir)));
            const std::string page = req.get_param_value("page");
            const bool with_masks = req.get_param_value("masks") == "1";
            json items = json::array();
            for (const auto& d : run.detections) {
              if (!page.empty() && d.page_id != page) continue;
              json j = detection_to_json(d);
              j["has_mask"] = d.mask.has_value();
              if (!with_masks) j.erase("mask");
              j["run_id"] = run_id;
              auto it = status.find(d.id);
              j["status"] = it == status.end() ? "pending" : std::string(to_string(it->second));
              items.push_back(std::move(j));
            }
            send_json(res, 200, page_window(items, req));
          }));

  srv.Get(R"(/api/pages/([^/]+)/image)", guarded([root](const httplib::Request& req, httplib::Response& res) {
            const std::string page_id = req.matches[1];
            const Space space = parse_space(req.has_param("space") ? req.get_param_value("space") : "preprocessed");
            std::vector<std::string> candidates;
            if (req.has_param("run")) {
              candidates.push_back(req.get_param_value("run"));
              run_path(root, candidates.back());
            } else {
              candidates = list_runs(root);
            }
            for (const auto& id : candidates) {
              const PipelineRun run = load_run(root / id);
              const PageRecord* p = run.find_page(page_id);
              if (!p) continue;
              std::vector<std::uint8_t> bytes;
              if (space == Space::preprocessed) {
                bytes = read_file_bytes(root / id / p->preprocessed_image_uri);
              } else if (!fs::is_regular_file(p->source_uri)) {
                fail(404, "original image for page '" + page_id + "' is missing");
              } else if (content_type_for(p->source_uri) == "image/png") {
                bytes = read_file_bytes(p->source_uri);
              } else {
                bytes = encode_png(load_image(p->source_uri));
              }
              const std::string etag = "\"" + sha256_hex(std::string(bytes.begin(), bytes.end())).substr(0, 16) + "\"";
              res.set_header("Cache-Control", "public, max-age=3600");
              res.set_header("ETag", etag);
              if (req.get_header_value("If-None-Match") == etag) {
                res.status = 304;
                return;
              }
              res.status = 200;
              res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
              return;
            }
            fail(404, "unknown page '" + page_id + "'");
          }));

  srv.Get("/api/sessions", guarded([root](const httplib::Request& req, httplib::Response& res) {
            json items = json::array();
            for (const auto& id : list_runs(root)) {
              const PipelineRun run = load_run(root / id);
              if (!run.session_id) continue;
              json pages = json::array();
              for (const auto& p : run.pages) pages.push_back(p.page_id);
              items.push_back({{"session_id", *run.session_id},
                               {"run_id", run.run_id},
                               {"parent_run", run.parent_run ? json(*run.parent_run) : json(nullptr)},
                               {"page_ids", pages},
                               {"suite", suite_to_json(run.suite)}});
            }
            send_json(res, 200, page_window(items, req));
          }));

  srv.Post("/api/sessions", guarded([this, root, parse_body](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             if (!body.is_object() || !body.contains("page_ids") || !body.at("page_ids").is_array() ||
                 body.at("page_ids").empty()) {
               fail(400, "body needs a non-empty 'page_ids' array");
             }
             if (!body.contains("suite")) fail(400, "body needs a 'suite'");
             std::vector<std::string> page_ids;
             for (const auto& p : body.at("page_ids")) {
               if (!p.is_string()) fail(400, "page_ids must be strings");
               page_ids.push_back(p.get<std::string>());
             }
             const auto limit = static_cast<std::size_t>(opts_.review.max_session_pages);
             if (page_ids.size() > limit) {
               fail(422, "sessions are limited to " + std::to_string(limit) + " pages; use the CLI for batch runs",
                    {{"limit", limit}});
             }
             PromptSuite suite;
             try {
               const auto& s = body.at("suite");
               if (s.is_string()) {
                 const auto& builtins = builtin_suites();
                 auto it = builtins.find(s.get<std::string>());
                 if (it == builtins.end()) fail(400, "unknown builtin suite '" + s.get<std::string>() + "'");
                 suite = it->second;
               } else {
                 suite = suite_from_json(s);
               }
             } catch (const Error& e) {
               fail(400, std::string("malformed suite: ") + e.what());
             }

             if (!opts_.backend) fail(503, "no backend configured", {{"health", nullptr}});
             json health;
             try {
               health = opts_.backend->health();
             } catch (const Error& e) {
               fail(503, std::string("backend unavailable: ") + e.what(), {{"health", {{"status", "down"}, {"detail", e.what()}}}});
             }

             std::optional<std::string> parent;
             if (body.contains("parent_run") && !body.at("parent_run").is_null()) {
               parent = body.at("parent_run").get<std::string>();
               run_path(root, *parent);
             }
             const bool segment = body.value("segment", opts_.review.segment_sessions);

             std::lock_guard writer(writer_);
             // Resolve pages against the parent run, else the first run that has them.
             std::vector<std::pair<PageRecord, fs::path>> sources;
             const auto runs = parent ? std::vector<std::string>{*parent} : list_runs(root);
             for (const auto& pid : page_ids) {
               bool found = false;
               for (const auto& id : runs) {
                 const PipelineRun r = load_run(root / id);
                 if (const PageRecord* p = r.find_page(pid)) {
                   sources.emplace_back(*p, root / id / p->preprocessed_image_uri);
                   if (!parent) parent = id;
                   found = true;
                   break;
                 }
               }
               if (!found) fail(404, "unknown page '" + pid + "'");
             }

             int next = 1;
             for (const auto& e : fs::directory_iterator(root)) {
               const auto name = e.path().filename().string();
               if (name.rfind("session-", 0) == 0) next = std::max(next, std::atoi(name.c_str() + 8) + 1);
             }
             char buf[32];
             std::snprintf(buf, sizeof buf, "session-%04d", next);
             const std::string session_id = buf;
             const fs::path child = root / session_id;

             std::vector<PageRecord> pages;
             for (auto& [page, png] : sources) {
               atomic_write_file(child / page.preprocessed_image_uri, read_file_bytes(png));
               pages.push_back(page);
             }
             PipelineOptions popts;
             popts.nms = opts_.nms;
             popts.nms.iou_thresh = opts_.nms_iou_override.value_or(suite.nms_iou);
             popts.segment = segment;
             popts.workers = opts_.backend_descriptor ? opts_.backend_descriptor->max_in_flight : 1;
             PipelineRun run = run_pipeline(child, std::move(pages), suite, *opts_.backend, popts);
             run.run_id = session_id;
             run.session_id = session_id;
             run.parent_run = parent;
             run.created_at = utc_timestamp();
             if (opts_.backend_descriptor) run.backend = *opts_.backend_descriptor;
             persist_run(run, child);
             log::info("session_created", {{"session_id", session_id}, {"detections", run.detections.size()}});
             send_json(res, 201, {{"session_id", session_id},
                                  {"run_id", session_id},
                                  {"parent_run", parent ? json(*parent) : json(nullptr)},
                                  {"detections", run.detections.size()},
                                  {"errors", errors_to_json(run.errors).at("errors")},
                                  {"backend", health}});
           }));

  const auto locate_detection = [root](const std::string& det_id, const std::string& run_hint) {
    std::vector<std::string> hits;
    const auto runs = run_hint.empty() ? list_runs(root) : std::vector<std::string>{run_hint};
    for (const auto& id : runs) {
      const PipelineRun r = load_run(run_path(root, id));
      for (const auto& d : r.detections) {
        if (d.id == det_id) {
          hits.push_back(id);
          break;
        }
      }
    }
    if (hits.empty()) fail(404, "unknown detection '" + det_id + "'");
    if (hits.size() > 1) fail(409, "detection id '" + det_id + "' exists in several runs; pass 'run'", {{"runs", hits}});
    return hits.front();
  };

  srv.Get(R"(/api/detections/([^/]+))", guarded([root, locate_detection](const httplib::Request& req, httplib::Response& res) {
            const std::string det_id = req.matches[1];
            const std::string run_id = locate_detection(det_id, req.get_param_value("run"));
            const fs::path dir = root / run_id;
            const PipelineRun run = load_run(dir);
            json out;
            for (const auto& d : run.detections) {
              if (d.id == det_id) out = detection_to_json(d);
            }
            json history = json::array();
            std::string status = "pending";
            for (const auto& d : read_decisions(decisions_path(dir))) {
              if (d.detection_id != det_id) continue;
              history.push_back(decision_to_json(d));
              status = to_string(d.status);
            }
            out["run_id"] = run_id;
            out["status"] = status;
            out["history"] = history;
            send_json(res, 200, out);
          }));

  srv.Post(R"(/api/detections/([^/]+)/decision)",
           guarded([this, root, parse_body, locate_detection](const httplib::Request& req, httplib::Response& res) {
             const std::string det_id = req.matches[1];
             const json body = parse_body(req);
             if (!body.is_object() || !body.contains("status") || !body.at("status").is_string()) {
               fail(400, "body needs a 'status'");
             }
             ReviewDecision decision;
             decision.detection_id = det_id;
             decision.status = parse_review_status(body.at("status").get<std::string>());
             decision.reviewer = body.value("reviewer", std::string("anonymous"));
             std::string hint = body.value("run", req.get_param_value("run"));
             const std::string run_id = locate_detection(det_id, hint);
             {
               std::lock_guard writer(writer_);
               RunLock lock(root / run_id);
               decision.timestamp = utc_timestamp();
               append_decision(root / run_id, decision);
             }
             json out = decision_to_json(decision);
             out["run_id"] = run_id;
             send_json(res, 200, out);
           }));

  srv.Post(R"(/api/runs/([^/]+)/export)", guarded([this, root, parse_body](const httplib::Request& req, httplib::Response& res) {
             const std::string run_id = req.matches[1];
             const fs::path dir = run_path(root, run_id);
             const json body = parse_body(req);
             const std::string name = body.is_object() ? body.value("name", std::string("latest")) : "latest";
             if (!safe_id(name)) fail(400, "invalid export name '" + name + "'");
             std::lock_guard writer(writer_);
             const PipelineRun run = load_run(dir);
             const auto bundle = export_dataset(run, latest_status(read_decisions(decisions_path(dir))),
                                                dir / "exports" / name);
             send_json(res, 200, {{"path", bundle.output_root.string()},
                                  {"coco", bundle.coco_path.string()},
                                  {"annotations", bundle.exported_ids.size()},
                                  {"crops", bundle.crops},
                                  {"masks", bundle.masks}});
           }));
}

}  // namespace promptset
