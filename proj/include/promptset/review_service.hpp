#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "promptset/config.hpp"
#include "promptset/dataset_io.hpp"

namespace httplib {
class Server;
}

namespace promptset {

struct ReviewServiceOptions {
  std::filesystem::path runs_root;
  std::shared_ptr<Backend> backend;  // may be null: sessions then answer 503
  std::optional<BackendDescriptor> backend_descriptor;
  ReviewConfig review;
  NmsConfig nms;
  std::optional<double> nms_iou_override;
};

/// REST API over a directory of runs. Holds no state beyond what is on disk,
/// so a restarted service answers every GET exactly as before. Writes
/// (decisions, session runs, exports) go through one writer mutex plus the
/// per-run lock file.
class ReviewService {
 public:
  explicit ReviewService(ReviewServiceOptions options);
  ~ReviewService();
  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  /// Binds and returns the port; port 0 picks a free one.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  void install_routes();

  ReviewServiceOptions opts_;
  std::unique_ptr<httplib::Server> server_;
  std::mutex writer_;
};

}  // namespace promptset
