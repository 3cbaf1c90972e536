#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "promptset/json_io.hpp"

namespace promptset {

struct DetectRequest {
  std::string page_id;
  std::vector<std::uint8_t> image_png;  // preprocessed raster
  int image_size = 1000;                // side length of image_png
  std::string caption;
  double box_threshold = 0.35;
  double text_threshold = 0.35;

  void validate() const;
};

struct RawDetection {
  BBox box;  // preprocessed space
  double score = 0;
  std::string phrase;

  bool operator==(const RawDetection&) const = default;
};

struct SegmentRequest {
  std::string page_id;
  std::vector<std::uint8_t> image_png;
  int image_size = 1000;
  std::vector<BBox> boxes;  // preprocessed space

  void validate() const;
};

struct BackendDescriptor {
  enum class Kind { remote, fixture };
  Kind kind = Kind::fixture;
  std::string endpoint;      // remote: http://host:port[/prefix]
  std::string fixture_root;  // fixture: directory with detect/ and segment/
  double timeout_s = 30.0;
  int max_in_flight = 4;

  void validate() const;
  bool operator==(const BackendDescriptor&) const = default;
};

json descriptor_to_json(const BackendDescriptor& d);
BackendDescriptor descriptor_from_json(const json& j);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::vector<RawDetection> detect(const DetectRequest& req) = 0;
  /// One mask per request box, same order, in preprocessed space.
  virtual std::vector<MaskRLE> segment(const SegmentRequest& req) = 0;
  /// Throws a backend error when unreachable.
  virtual json health() = 0;
};

// Wire protocol. Shared by the HTTP client, the fixture files (which hold
// response bodies verbatim) and the test stub servers.
namespace wire {
json detect_request_body(const DetectRequest& req);
json segment_request_body(const SegmentRequest& req);
json detect_response_body(const std::vector<RawDetection>& dets);
json segment_response_body(const std::vector<MaskRLE>& masks);

/// Validates, clamps boxes to [0, image_size]^2 and drops boxes that clamp
/// to zero area. `dropped` receives the number dropped.
std::vector<RawDetection> parse_detect_response(const json& body, int image_size, std::size_t* dropped = nullptr);
std::vector<MaskRLE> parse_segment_response(const json& body, std::size_t expected, int image_size);

/// Throws protocol error; message carries an excerpt of the payload.
[[noreturn]] void protocol_failure(const std::string& what, const std::string& payload);
}  // namespace wire

/// page_id + "__" + first 16 hex chars of SHA-256(caption).
std::string detect_fixture_key(const std::string& page_id, const std::string& caption);
/// Same scheme, hashing the compact JSON of the box list.
std::string segment_fixture_key(const std::string& page_id, const std::vector<BBox>& boxes);

class FixtureBackend final : public Backend {
 public:
  explicit FixtureBackend(std::filesystem::path root);

  std::vector<RawDetection> detect(const DetectRequest& req) override;
  std::vector<MaskRLE> segment(const SegmentRequest& req) override;
  json health() override;

 private:
  json load(const std::string& kind, const std::string& key) const;
  std::filesystem::path root_;
};

struct RetryPolicy {
  std::vector<std::chrono::milliseconds> backoff{std::chrono::milliseconds(500), std::chrono::milliseconds(1000),
                                                 std::chrono::milliseconds(2000)};
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to std::this_thread::sleep_for
};

/// HTTP client for the wire protocol. Thread-safe: each call opens its own
/// connection, so responses are paired with requests by construction.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(BackendDescriptor descriptor, RetryPolicy retry = {});

  std::vector<RawDetection> detect(const DetectRequest& req) override;
  std::vector<MaskRLE> segment(const SegmentRequest& req) override;
  json health() override;

 private:
  json call(const std::string& method, const std::string& path, const json* body);
  json call_once(const std::string& method, const std::string& path, const json* body);

  BackendDescriptor desc_;
  RetryPolicy retry_;
  std::string host_;
  std::string prefix_;
};

/// Forwards to another backend and writes every response as a fixture file,
/// so a live session can later be replayed by FixtureBackend.
class RecordingBackend final : public Backend {
 public:
  RecordingBackend(std::shared_ptr<Backend> inner, std::filesystem::path fixture_root);

  std::vector<RawDetection> detect(const DetectRequest& req) override;
  std::vector<MaskRLE> segment(const SegmentRequest& req) override;
  json health() override { return inner_->health(); }

 private:
  std::shared_ptr<Backend> inner_;
  std::filesystem::path root_;
};

std::shared_ptr<Backend> make_backend(const BackendDescriptor& descriptor);

}  // namespace promptset
