#include "promptset/backend.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <thread>

#include <httplib.h>

#include "promptset/fsutil.hpp"
#include "promptset/log.hpp"

namespace promptset {

namespace {

bool threshold_ok(double t) { return std::isfinite(t) && t > 0 && t < 1; }

std::string excerpt(const std::string& payload) {
  constexpr std::size_t kMax = 200;
  return payload.size() <= kMax ? payload : payload.substr(0, kMax) + "...";
}

std::string short_hash(const std::string& text) { return sha256_hex(text).substr(0, 16); }

json boxes_json(const std::vector<BBox>& boxes) {
  json arr = json::array();
  for (const auto& b : boxes) arr.push_back(box_to_json(b));
  return arr;
}

}  // namespace

void DetectRequest::validate() const {
  if (page_id.empty()) throw Error(ErrorKind::usage, "detect request without page_id");
  if (image_png.empty() || image_size < 1) throw Error(ErrorKind::usage, "detect request without image");
  if (caption.empty()) throw Error(ErrorKind::empty_prompt, "detect request with empty caption");
  if (!threshold_ok(box_threshold) || !threshold_ok(text_threshold)) {
    throw Error(ErrorKind::usage, "detect thresholds must lie in (0,1)");
  }
}

void SegmentRequest::validate() const {
  if (page_id.empty()) throw Error(ErrorKind::usage, "segment request without page_id");
  if (image_png.empty() || image_size < 1) throw Error(ErrorKind::usage, "segment request without image");
  if (boxes.empty()) throw Error(ErrorKind::usage, "segment request needs at least one box");
  for (const auto& b : boxes) {
    b.validate();
    if (b.space != Space::preprocessed) throw Error(ErrorKind::coord_space, "segment boxes must be preprocessed");
  }
}

void BackendDescriptor::validate() const {
  if (timeout_s <= 0 || !std::isfinite(timeout_s)) throw Error(ErrorKind::invalid_config, "timeout must be > 0");
  if (max_in_flight < 1) throw Error(ErrorKind::invalid_config, "max_in_flight must be >= 1");
  if (kind == Kind::remote) {
    if (endpoint.empty()) throw Error(ErrorKind::invalid_config, "remote backend requires an endpoint");
  } else if (fixture_root.empty() || !std::filesystem::is_directory(fixture_root)) {
    throw Error(ErrorKind::invalid_config, "fixture backend requires a readable fixture_root, got '" +
                                               fixture_root + "'");
  }
}

json descriptor_to_json(const BackendDescriptor& d) {
  json j{{"kind", d.kind == BackendDescriptor::Kind::remote ? "remote" : "fixture"},
         {"timeout_s", canonical_real(d.timeout_s)},
         {"max_in_flight", d.max_in_flight}};
  if (d.kind == BackendDescriptor::Kind::remote) {
    j["endpoint"] = d.endpoint;
  } else {
    j["fixture_root"] = d.fixture_root;
  }
  return j;
}

BackendDescriptor descriptor_from_json(const json& j) {
  static const std::set<std::string> keys{"kind", "endpoint", "fixture_root", "timeout_s", "max_in_flight"};
  if (!j.is_object()) throw Error(ErrorKind::invalid_config, "backend must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw Error(ErrorKind::invalid_config, "unknown backend key '" + k + "'");
  }
  BackendDescriptor d;
  const auto kind = require<std::string>(j, "kind");
  if (kind == "remote") {
    d.kind = BackendDescriptor::Kind::remote;
  } else if (kind == "fixture") {
    d.kind = BackendDescriptor::Kind::fixture;
  } else {
    throw Error(ErrorKind::invalid_config, "backend kind must be remote or fixture");
  }
  d.endpoint = j.value("endpoint", std::string());
  d.fixture_root = j.value("fixture_root", std::string());
  if (j.contains("timeout_s")) d.timeout_s = require<double>(j, "timeout_s");
  if (j.contains("max_in_flight")) d.max_in_flight = require<int>(j, "max_in_flight");
  return d;
}

namespace wire {

void protocol_failure(const std::string& what, const std::string& payload) {
  throw Error(ErrorKind::protocol, what + "; payload: " + excerpt(payload));
}

json detect_request_body(const DetectRequest& req) {
  return {{"image", base64_encode(req.image_png)},
          {"caption", req.caption},
          {"box_threshold", canonical_real(req.box_threshold)},
          {"text_threshold", canonical_real(req.text_threshold)}};
}

json segment_request_body(const SegmentRequest& req) {
  return {{"image", base64_encode(req.image_png)}, {"boxes", boxes_json(req.boxes)}};
}

json detect_response_body(const std::vector<RawDetection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) {
    arr.push_back({{"box", box_to_json(d.box)}, {"score", canonical_real(d.score)}, {"phrase", d.phrase}});
  }
  return {{"detections", arr}};
}

json segment_response_body(const std::vector<MaskRLE>& masks) {
  json arr = json::array();
  for (const auto& m : masks) arr.push_back(rle_to_json(m));
  return {{"masks", arr}};
}

std::vector<RawDetection> parse_detect_response(const json& body, int image_size, std::size_t* dropped) {
  if (!body.is_object() || !body.contains("detections") || !body.at("detections").is_array()) {
    protocol_failure("detect response lacks a 'detections' array", body.dump());
  }
  std::vector<RawDetection> out;
  std::size_t n_dropped = 0;
  const double limit = image_size;
  for (const auto& item : body.at("detections")) {
    if (!item.is_object() || !item.contains("box") || !item.contains("score") || !item.contains("phrase")) {
      protocol_failure("detection entry needs box, score and phrase", item.dump());
    }
    const auto& box = item.at("box");
    if (!box.is_array() || box.size() != 4 ||
        !std::all_of(box.begin(), box.end(), [](const json& v) { return v.is_number(); })) {
      protocol_failure("detection box must be four numbers", item.dump());
    }
    if (!item.at("score").is_number() || !item.at("phrase").is_string()) {
      protocol_failure("detection score must be a number and phrase a string", item.dump());
    }
    double c[4];
    for (int i = 0; i < 4; ++i) {
      c[i] = box[i].get<double>();
      if (!std::isfinite(c[i])) protocol_failure("non-finite box coordinate", item.dump());
      c[i] = std::clamp(c[i], 0.0, limit);
    }
    const double score = item.at("score").get<double>();
    if (!(score >= 0.0 && score <= 1.0)) protocol_failure("detection score outside [0,1]", item.dump());
    BBox b{c[0], c[1], c[2], c[3], Space::preprocessed};
    if (!b.valid()) {
      ++n_dropped;
      continue;
    }
    out.push_back(RawDetection{b, score, item.at("phrase").get<std::string>()});
  }
  if (n_dropped) log::warn("degenerate_boxes_dropped", {{"count", n_dropped}});
  if (dropped) *dropped = n_dropped;
  return out;
}

std::vector<MaskRLE> parse_segment_response(const json& body, std::size_t expected, int image_size) {
  if (!body.is_object() || !body.contains("masks") || !body.at("masks").is_array()) {
    protocol_failure("segment response lacks a 'masks' array", body.dump());
  }
  const auto& arr = body.at("masks");
  if (arr.size() != expected) {
    protocol_failure("segment response has " + std::to_string(arr.size()) + " masks for " +
                         std::to_string(expected) + " boxes",
                     body.dump());
  }
  std::vector<MaskRLE> out;
  out.reserve(arr.size());
  for (const auto& m : arr) {
    try {
      out.push_back(rle_from_json(m));
    } catch (const Error& e) {
      protocol_failure(std::string("invalid mask: ") + e.what(), m.dump());
    }
    if (out.back().height != image_size || out.back().width != image_size) {
      protocol_failure("mask size does not match the submitted image", m.dump());
    }
  }
  return out;
}

}  // namespace wire

std::string detect_fixture_key(const std::string& page_id, const std::string& caption) {
  return page_id + "__" + short_hash(caption);
}

std::string segment_fixture_key(const std::string& page_id, const std::vector<BBox>& boxes) {
  return page_id + "__" + short_hash(boxes_json(boxes).dump());
}

// ---------------------------------------------------------------- fixture

FixtureBackend::FixtureBackend(std::filesystem::path root) : root_(std::move(root)) {
  if (!std::filesystem::is_directory(root_)) {
    throw Error(ErrorKind::invalid_config, "fixture root is not a directory: " + root_.string());
  }
}

json FixtureBackend::load(const std::string& kind, const std::string& key) const {
  const auto path = root_ / kind / (key + ".json");
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorKind::fixture_not_found, "no " + kind + " fixture for key " + key);
  }
  const std::string text = read_file_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    wire::protocol_failure("fixture " + path.string() + " is not valid JSON", text);
  }
}

std::vector<RawDetection> FixtureBackend::detect(const DetectRequest& req) {
  req.validate();
  return wire::parse_detect_response(load("detect", detect_fixture_key(req.page_id, req.caption)), req.image_size);
}

std::vector<MaskRLE> FixtureBackend::segment(const SegmentRequest& req) {
  req.validate();
  return wire::parse_segment_response(load("segment", segment_fixture_key(req.page_id, req.boxes)),
                                      req.boxes.size(), req.image_size);
}

json FixtureBackend::health() {
  std::size_t entries = 0;
  for (const char* kind : {"detect", "segment"}) {
    const auto dir = root_ / kind;
    if (!std::filesystem::is_directory(dir)) continue;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") ++entries;
    }
  }
  return {{"status", "ok"}, {"kind", "fixture"}, {"fixture_root", root_.string()}, {"entries", entries}};
}

// ---------------------------------------------------------------- remote

RemoteBackend::RemoteBackend(BackendDescriptor descriptor, RetryPolicy retry)
    : desc_(std::move(descriptor)), retry_(std::move(retry)) {
  desc_.validate();
  const auto scheme = desc_.endpoint.find("://");
  const auto path_start = desc_.endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  host_ = desc_.endpoint.substr(0, path_start);
  if (path_start != std::string::npos) {
    prefix_ = desc_.endpoint.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }
  if (!retry_.sleep) retry_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

json RemoteBackend::call_once(const std::string& method, const std::string& path, const json* body) {
  httplib::Client client(host_);
  const auto timeout = std::chrono::milliseconds(static_cast<long>(desc_.timeout_s * 1000));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const std::string url = prefix_ + path;

  httplib::Result res = method == "GET" ? client.Get(url) : client.Post(url, body->dump(), "application/json");
  if (!res) {
    throw Error(ErrorKind::backend, method + " " + desc_.endpoint + path + " failed: " + httplib::to_string(res.error()),
                /*retryable=*/true);
  }
  if (res->status >= 500) {
    throw Error(ErrorKind::backend, method + " " + path + " returned HTTP " + std::to_string(res->status),
                /*retryable=*/true);
  }
  if (res->status != 200) {
    wire::protocol_failure(method + " " + path + " returned HTTP " + std::to_string(res->status), res->body);
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error&) {
    wire::protocol_failure(method + " " + path + " returned invalid JSON", res->body);
  }
}

json RemoteBackend::call(const std::string& method, const std::string& path, const json* body) {
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      return call_once(method, path, body);
    } catch (const Error& e) {
      if (!e.retryable() || attempt >= retry_.backoff.size()) throw;
      log::warn("backend_retry", {{"path", path}, {"attempt", attempt + 1}, {"error", e.what()}});
      retry_.sleep(retry_.backoff[attempt]);
    }
  }
}

std::vector<RawDetection> RemoteBackend::detect(const DetectRequest& req) {
  req.validate();
  const json body = wire::detect_request_body(req);
  return wire::parse_detect_response(call("POST", "/v1/detect", &body), req.image_size);
}

std::vector<MaskRLE> RemoteBackend::segment(const SegmentRequest& req) {
  req.validate();
  const json body = wire::segment_request_body(req);
  return wire::parse_segment_response(call("POST", "/v1/segment", &body), req.boxes.size(), req.image_size);
}

json RemoteBackend::health() {
  // No retries: an unreachable backend should stop a run before any page work.
  json res = call_once("GET", "/v1/health", nullptr);
  if (!res.is_object() || res.value("status", std::string()) != "ok") {
    throw Error(ErrorKind::backend, "backend reports unhealthy: " + excerpt(res.dump()));
  }
  return res;
}

// ---------------------------------------------------------------- recording

RecordingBackend::RecordingBackend(std::shared_ptr<Backend> inner, std::filesystem::path fixture_root)
    : inner_(std::move(inner)), root_(std::move(fixture_root)) {}

std::vector<RawDetection> RecordingBackend::detect(const DetectRequest& req) {
  auto dets = inner_->detect(req);
  atomic_write_file(root_ / "detect" / (detect_fixture_key(req.page_id, req.caption) + ".json"),
                    dump_canonical(wire::detect_response_body(dets)));
  return dets;
}

std::vector<MaskRLE> RecordingBackend::segment(const SegmentRequest& req) {
  auto masks = inner_->segment(req);
  atomic_write_file(root_ / "segment" / (segment_fixture_key(req.page_id, req.boxes) + ".json"),
                    dump_canonical(wire::segment_response_body(masks)));
  return masks;
}

std::shared_ptr<Backend> make_backend(const BackendDescriptor& descriptor) {
  descriptor.validate();
  if (descriptor.kind == BackendDescriptor::Kind::remote) return std::make_shared<RemoteBackend>(descriptor);
  return std::make_shared<FixtureBackend>(descriptor.fixture_root);
}

}  // namespace promptset
