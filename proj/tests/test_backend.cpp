#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "promptset/config.hpp"
#include "promptset/fsutil.hpp"
#include "test_support.hpp"

using namespace promptset;
using testsupport::TempDir;

namespace {

// In-process HTTP server standing in for the model sidecar.
class StubServer {
 public:
  StubServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string endpoint(const std::string& prefix = "") const {
    return "http://127.0.0.1:" + std::to_string(port_) + prefix;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

struct SleepLog {
  std::mutex mu;
  std::vector<long> waits_ms;
  RetryPolicy policy() {
    RetryPolicy p;
    p.sleep = [this](std::chrono::milliseconds d) {
      std::lock_guard<std::mutex> lock(mu);
      waits_ms.push_back(static_cast<long>(d.count()));
    };
    return p;
  }
};

BackendDescriptor remote(const std::string& endpoint) {
  BackendDescriptor d;
  d.kind = BackendDescriptor::Kind::remote;
  d.endpoint = endpoint;
  d.timeout_s = 5;
  return d;
}

DetectRequest detect_req(const std::string& page = "p1", const std::string& caption = "figure .") {
  DetectRequest r;
  r.page_id = page;
  r.image_png = encode_png(testsupport::gradient_image(8, 8, 1));
  r.image_size = 1000;
  r.caption = caption;
  return r;
}

SegmentRequest segment_req(std::vector<BBox> boxes, int size = 16) {
  SegmentRequest r;
  r.page_id = "p1";
  r.image_png = encode_png(testsupport::gradient_image(size, size, 1));
  r.image_size = size;
  r.boxes = std::move(boxes);
  return r;
}

BBox pre(double x0, double y0, double x1, double y1) { return BBox{x0, y0, x1, y1, Space::preprocessed}; }

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::io;
}

}  // namespace

// ---------------------------------------------------------------- wire

TEST(WireTest, ClampsAndDropsDegenerate) {
  const json body = {{"detections",
                      {{{"box", {-5, 10, 1005, 500}}, {"score", 0.9}, {"phrase", "figure"}},
                       {{"box", {1200, 10, 1300, 20}}, {"score", 0.8}, {"phrase", "figure"}}}}};
  std::size_t dropped = 0;
  const auto dets = wire::parse_detect_response(body, 1000, &dropped);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].box, pre(0, 10, 1000, 500));
  EXPECT_EQ(dropped, 1u);
}

TEST(WireTest, MalformedIsProtocolErrorWithExcerpt) {
  const std::vector<json> bad{json::array(),
                              {{"detections", {{{"box", {1, 2, 3}}, {"score", 0.5}, {"phrase", "x"}}}}},
                              {{"detections", {{{"box", {1, 2, 3, 4}}, {"score", 1.5}, {"phrase", "x"}}}}},
                              {{"detections", {{{"box", {1, 2, 3, 4}}, {"score", 0.5}}}}}};
  for (const auto& b : bad) {
    try {
      wire::parse_detect_response(b, 1000);
      ADD_FAILURE() << b.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::protocol);
      EXPECT_NE(std::string(e.what()).find("payload"), std::string::npos);
      EXPECT_FALSE(e.retryable());
    }
  }
  const std::string big(1000, 'x');
  try {
    wire::protocol_failure("boom", big);
  } catch (const Error& e) {
    EXPECT_LT(std::string(e.what()).size(), 300u);
  }
}

TEST(WireTest, SegmentChecks) {
  const json two = wire::segment_response_body({MaskRLE{4, 4, {16}}, MaskRLE{4, 4, {16}}});
  EXPECT_EQ(wire::parse_segment_response(two, 2, 4).size(), 2u);
  EXPECT_EQ(kind_of([&] { wire::parse_segment_response(two, 3, 4); }), ErrorKind::protocol);
  EXPECT_EQ(kind_of([&] { wire::parse_segment_response(two, 2, 5); }), ErrorKind::protocol);
  const json bad_sum = {{"masks", {{{"size", {4, 4}}, {"counts", {3, 4}}}}}};
  EXPECT_EQ(kind_of([&] { wire::parse_segment_response(bad_sum, 1, 4); }), ErrorKind::protocol);
}

TEST(WireTest, BodiesMatchPublishedSchema) {
  const auto req = detect_req();
  validate_wire(wire::detect_request_body(req), "detect_request");
  validate_wire(wire::segment_request_body(segment_req({pre(1, 1, 5, 5)})), "segment_request");
  validate_wire(wire::detect_response_body({RawDetection{pre(1, 2, 3, 4), 0.5, "figure"}}), "detect_response");
  validate_wire(wire::segment_response_body({MaskRLE{2, 2, {0, 2, 2}}}), "segment_response");
  validate_wire({{"status", "ok"}, {"detector", "d"}, {"segmenter", "s"}}, "health_response");
  EXPECT_THROW(validate_wire({{"masks", {{{"size", {2}}, {"counts", {4}}}}}}, "segment_response"), Error);
  EXPECT_THROW(validate_wire({{"image", "x"}, {"boxes", json::array()}}, "segment_request"), Error);
}

TEST(FixtureKeyTest, Scheme) {
  EXPECT_EQ(detect_fixture_key("p1", "figure ."), "p1__" + sha256_hex("figure .").substr(0, 16));
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_NE(segment_fixture_key("p1", {pre(1, 1, 2, 2)}), segment_fixture_key("p1", {pre(1, 1, 2, 3)}));
}

// ---------------------------------------------------------------- fixture

TEST(FixtureBackendTest, ReplayEmptyAndMissing) {
  TempDir tmp;
  testsupport::write_detect_fixture(tmp.path(), "p1", "figure .", {});
  testsupport::write_detect_fixture(tmp.path(), "p2", "figure .", {RawDetection{pre(100, 100, 400, 400), 0.9, "figure"}});
  FixtureBackend fb(tmp.path());
  EXPECT_TRUE(fb.detect(detect_req("p1")).empty());
  const auto dets = fb.detect(detect_req("p2"));
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0], (RawDetection{pre(100, 100, 400, 400), 0.9, "figure"}));
  EXPECT_EQ(kind_of([&] { fb.detect(detect_req("p3")); }), ErrorKind::fixture_not_found);
  // Pure function of the inputs.
  EXPECT_EQ(fb.detect(detect_req("p2")), dets);
}

TEST(FixtureBackendTest, SegmentReplayAndPreconditions) {
  TempDir tmp;
  const BBox box = pre(2, 2, 6, 10);
  testsupport::write_segment_fixture(tmp.path(), "p1", {box}, {testsupport::box_mask(box, 16)});
  FixtureBackend fb(tmp.path());
  const auto masks = fb.segment(segment_req({box}));
  ASSERT_EQ(masks.size(), 1u);
  EXPECT_EQ(masks[0].area(), 4u * 8u);
  EXPECT_EQ(kind_of([&] { fb.segment(segment_req({})); }), ErrorKind::usage);

  atomic_write_file(tmp / ("segment/" + segment_fixture_key("p1", {pre(1, 1, 2, 2)}) + ".json"),
                    std::string_view(R"({"masks":[{"size":[16,16],"counts":[3]}]})"));
  EXPECT_EQ(kind_of([&] { fb.segment(segment_req({pre(1, 1, 2, 2)})); }), ErrorKind::protocol);
}

TEST(FixtureBackendTest, HealthCountsEntries) {
  TempDir tmp;
  for (int i = 0; i < 8; ++i) testsupport::write_detect_fixture(tmp.path(), "p" + std::to_string(i), "figure .", {});
  for (int i = 0; i < 4; ++i) {
    const BBox b = pre(1, 1, 2 + i, 3);
    testsupport::write_segment_fixture(tmp.path(), "p1", {b}, {testsupport::box_mask(b, 16)});
  }
  const json h = FixtureBackend(tmp.path()).health();
  EXPECT_EQ(h.at("status"), "ok");
  EXPECT_EQ(h.at("entries"), 12);
}

// ---------------------------------------------------------------- remote

TEST(RemoteBackendTest, DetectSendsWireBodyAndClamps) {
  StubServer stub;
  std::string seen_body;
  stub.server().Post("/v1/detect", [&](const httplib::Request& req, httplib::Response& res) {
    seen_body = req.body;
    res.set_content(R"({"detections":[{"box":[-5,10,1005,500],"score":0.9,"phrase":"figure"}]})", "application/json");
  });
  RemoteBackend rb(remote(stub.endpoint()));
  const auto dets = rb.detect(detect_req());
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].box, pre(0, 10, 1000, 500));
  const json body = json::parse(seen_body);
  validate_wire(body, "detect_request");
  EXPECT_EQ(body.at("caption"), "figure .");
  EXPECT_EQ(body.at("box_threshold"), 0.35);
  EXPECT_EQ(base64_decode(body.at("image").get<std::string>()), detect_req().image_png);
}

TEST(RemoteBackendTest, EndpointPrefix) {
  StubServer stub;
  stub.server().Post("/model/v1/detect", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"detections":[]})", "application/json");
  });
  RemoteBackend rb(remote(stub.endpoint("/model/")));
  EXPECT_TRUE(rb.detect(detect_req()).empty());
}

TEST(RemoteBackendTest, RetriesServerErrorsWithBackoff) {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server().Post("/v1/detect", [&](const httplib::Request&, httplib::Response& res) {
    if (++calls <= 2) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"detections":[]})", "application/json");
  });
  SleepLog sleeps;
  RemoteBackend rb(remote(stub.endpoint()), sleeps.policy());
  EXPECT_TRUE(rb.detect(detect_req()).empty());
  EXPECT_EQ(calls.load(), 3);
  EXPECT_EQ(sleeps.waits_ms, (std::vector<long>{500, 1000}));
}

TEST(RemoteBackendTest, GivesUpAfterThreeRetries) {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server().Post("/v1/detect", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 500;
  });
  SleepLog sleeps;
  RemoteBackend rb(remote(stub.endpoint()), sleeps.policy());
  try {
    rb.detect(detect_req());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::backend);
    EXPECT_TRUE(e.retryable());
  }
  EXPECT_EQ(calls.load(), 4);
  EXPECT_EQ(sleeps.waits_ms, (std::vector<long>{500, 1000, 2000}));
}

TEST(RemoteBackendTest, ProtocolErrorsAreNotRetried) {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server().Post("/v1/detect", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.set_content("this is not json", "text/plain");
  });
  stub.server().Post("/v1/segment", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 422;
    res.set_content(R"({"error":"bad boxes"})", "application/json");
  });
  SleepLog sleeps;
  RemoteBackend rb(remote(stub.endpoint()), sleeps.policy());
  try {
    rb.detect(detect_req());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::protocol);
    EXPECT_NE(std::string(e.what()).find("this is not json"), std::string::npos);
  }
  EXPECT_EQ(kind_of([&] { rb.segment(segment_req({pre(1, 1, 5, 5)})); }), ErrorKind::protocol);
  EXPECT_EQ(calls.load(), 2);
  EXPECT_TRUE(sleeps.waits_ms.empty());
}

TEST(RemoteBackendTest, SegmentCountMismatch) {
  StubServer stub;
  stub.server().Post("/v1/segment", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"masks":[]})", "application/json");
  });
  RemoteBackend rb(remote(stub.endpoint()));
  EXPECT_EQ(kind_of([&] { rb.segment(segment_req({pre(1, 1, 5, 5)})); }), ErrorKind::protocol);
}

TEST(RemoteBackendTest, HealthAndConnectionRefused) {
  {
    StubServer stub;
    stub.server().Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    EXPECT_EQ(RemoteBackend(remote(stub.endpoint())).health().at("status"), "ok");
  }
  // Grab a free port, then close it so nothing listens there.
  int port;
  {
    httplib::Server s;
    port = s.bind_to_any_port("127.0.0.1");
  }
  SleepLog sleeps;
  RemoteBackend rb(remote("http://127.0.0.1:" + std::to_string(port)), sleeps.policy());
  EXPECT_EQ(kind_of([&] { rb.health(); }), ErrorKind::backend);
  EXPECT_TRUE(sleeps.waits_ms.empty());
  EXPECT_EQ(kind_of([&] { rb.detect(detect_req()); }), ErrorKind::backend);
  EXPECT_EQ(sleeps.waits_ms.size(), 3u);
}

TEST(RemoteBackendTest, ConcurrentRequestsPairedWithResponses) {
  StubServer stub;
  stub.server().new_task_queue = [] { return new httplib::ThreadPool(8); };
  stub.server().Post("/v1/detect", [](const httplib::Request& req, httplib::Response& res) {
    const json body = json::parse(req.body);
    const std::string cap = body.at("caption");
    // Later requests answer sooner, so arrival order differs from send order.
    std::this_thread::sleep_for(std::chrono::milliseconds(40 - 4 * (cap.size() % 8)));
    res.set_content(json{{"detections", {{{"box", {1, 1, 2, 2}}, {"score", 0.5}, {"phrase", cap}}}}}.dump(),
                    "application/json");
  });
  RemoteBackend rb(remote(stub.endpoint()));
  std::vector<std::thread> threads;
  std::vector<std::string> got(8);
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&, i] {
      const std::string cap = std::string(static_cast<std::size_t>(i + 1), 'a') + " .";
      got[static_cast<std::size_t>(i)] = rb.detect(detect_req("p", cap)).at(0).phrase == cap ? "ok" : "mismatch";
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& g : got) EXPECT_EQ(g, "ok");
}

TEST(RecordingBackendTest, RecordThenReplayIsIdentical) {
  StubServer stub;
  stub.server().Post("/v1/detect", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"detections":[{"box":[10.25,20,300,400.5],"score":0.71,"phrase":"figure"}]})",
                    "application/json");
  });
  stub.server().Post("/v1/segment", [](const httplib::Request& req, httplib::Response& res) {
    const json body = json::parse(req.body);
    json masks = json::array();
    for (std::size_t i = 0; i < body.at("boxes").size(); ++i) masks.push_back({{"size", {16, 16}}, {"counts", {100, 56, 100}}});
    res.set_content(json{{"masks", masks}}.dump(), "application/json");
  });
  TempDir tmp;
  RecordingBackend rec(std::make_shared<RemoteBackend>(remote(stub.endpoint())), tmp / "fx");
  const auto req = detect_req();
  const auto seg = segment_req({pre(1, 1, 5, 5), pre(2, 2, 9, 9)});
  const auto live_dets = rec.detect(req);
  const auto live_masks = rec.segment(seg);
  // The recording holds the wire body; replay goes through the same parser.
  FixtureBackend replay(tmp / "fx");
  EXPECT_EQ(replay.detect(req), live_dets);
  EXPECT_EQ(replay.segment(seg), live_masks);
  EXPECT_EQ(live_masks.size(), 2u);
}
