// promptset: command-line entry point.
//
//   promptset preprocess --images DIR --out RUNDIR
//   promptset detect     --run RUNDIR --suite ID|FILE --backend fixture --fixtures DIR
//   promptset segment    --run RUNDIR
//   promptset pipeline   --images DIR --out RUNDIR --suite ... --backend ...
//   promptset eval       --run RUNDIR [--run RUNDIR ...] --gt COCO [--cast FILE] --out DIR
//   promptset export     --run RUNDIR [--decisions FILE] --out DIR
//   promptset serve      --port N --runs DIR
//
// Exit codes: 0 ok, 2 partial data failure, 3 backend/protocol failure,
// 64 usage, 130 interrupted.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "promptset/config.hpp"
#include "promptset/fsutil.hpp"
#include "promptset/log.hpp"
#include "promptset/review_service.hpp"

namespace fs = std::filesystem;
using namespace promptset;

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 2;
constexpr int kBackend = 3;
constexpr int kUsage = 64;
constexpr int kInterrupted = 130;

std::atomic<bool> g_cancel{false};

extern "C" void on_signal(int) { g_cancel.store(true); }

void install_signal_handlers() {
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::invalid_config:
    case ErrorKind::empty_prompt:
      return kUsage;
    case ErrorKind::backend:
    case ErrorKind::protocol:
    case ErrorKind::fixture_not_found:
      return kBackend;
    default:
      return kPartial;
  }
}

// Exit code for a run's recorded page errors of the given stages.
int exit_code_for(const std::vector<PageError>& errors, const std::set<std::string>& stages) {
  int code = kOk;
  for (const auto& e : errors) {
    if (!stages.count(e.stage)) continue;
    if (e.kind == "cancelled") return kInterrupted;
    if (e.kind == "backend" || e.kind == "protocol" || e.kind == "fixture_not_found") {
      code = kBackend;
    } else if (code == kOk) {
      code = kPartial;
    }
  }
  return code;
}

struct Options {
  std::string config_path;
  bool json_logs = false;
  bool quiet = false;

  std::string images;
  std::string run;
  std::vector<std::string> runs;
  std::string out;
  std::string suite;
  std::string backend;
  std::string endpoint;
  std::string fixtures;
  double timeout_s = 0;
  bool per_class_nms = false;
  double nms_iou = 0;
  int workers = 0;
  int target_size = 0;
  std::string gt;
  double eval_iou = 0;
  std::string cast;
  bool strict_cast = false;
  std::string dataset;
  std::string decisions;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string runs_root;
};

CliConfig load_config(const Options& o) {
  if (o.config_path.empty()) return CliConfig{};
  return load_cli_config(o.config_path);
}

PromptSuite pick_suite(const Options& o, const CliConfig& cfg) {
  if (!o.suite.empty()) return resolve_suite(o.suite);
  if (cfg.suite) return *cfg.suite;
  throw Error(ErrorKind::usage, "no prompt suite given (--suite or config 'suite')");
}

std::optional<BackendDescriptor> pick_backend(const Options& o, const CliConfig& cfg) {
  std::optional<BackendDescriptor> d = cfg.backend;
  if (!o.backend.empty()) {
    BackendDescriptor fresh = d.value_or(BackendDescriptor{});
    if (o.backend == "remote") {
      fresh.kind = BackendDescriptor::Kind::remote;
    } else if (o.backend == "fixture") {
      fresh.kind = BackendDescriptor::Kind::fixture;
    } else {
      throw Error(ErrorKind::usage, "--backend must be remote or fixture");
    }
    d = fresh;
  }
  if (!d) return std::nullopt;
  if (!o.endpoint.empty()) d->endpoint = o.endpoint;
  if (!o.fixtures.empty()) d->fixture_root = o.fixtures;
  if (o.timeout_s > 0) d->timeout_s = o.timeout_s;
  d->validate();
  return d;
}

NmsConfig pick_nms(const Options& o, const CliConfig& cfg, const PromptSuite& suite) {
  NmsConfig nms = cfg.nms;
  if (!cfg.nms_iou_explicit) nms.iou_thresh = suite.nms_iou;
  if (o.nms_iou > 0) nms.iou_thresh = o.nms_iou;
  if (o.per_class_nms) nms.per_class = true;
  if (!(nms.iou_thresh > 0 && nms.iou_thresh < 1)) throw Error(ErrorKind::usage, "--nms-iou must lie in (0,1)");
  return nms;
}

int pick_workers(const Options& o, const BackendDescriptor& d) {
  if (o.workers > 0) return o.workers;
  return d.kind == BackendDescriptor::Kind::remote ? d.max_in_flight : 1;
}

// Fails fast when the backend cannot be reached.
std::shared_ptr<Backend> connect(const BackendDescriptor& d) {
  auto backend = make_backend(d);
  const json health = backend->health();
  log::info("backend_healthy", {{"health", health}});
  return backend;
}

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".tif" || ext == ".tiff";
}

// ---------------------------------------------------------------- stages

int do_preprocess(const Options& o, const CliConfig& cfg) {
  const fs::path images = !o.images.empty() ? fs::path(o.images) : fs::path(cfg.images);
  if (images.empty()) throw Error(ErrorKind::usage, "--images is required");
  if (!fs::is_directory(images)) throw Error(ErrorKind::usage, images.string() + " is not a directory");
  if (o.out.empty()) throw Error(ErrorKind::usage, "--out is required");
  const fs::path run_dir = o.out;

  PreprocessConfig pcfg = cfg.preprocess;
  if (o.target_size > 0) pcfg.target_size = o.target_size;
  pcfg.validate();

  std::vector<fs::path> sources;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.is_regular_file() && is_image(e.path())) sources.push_back(e.path());
  }
  std::sort(sources.begin(), sources.end());

  PipelineRun run;
  run.run_id = fs::absolute(run_dir).lexically_normal().filename().string();
  if (run.run_id.empty()) run.run_id = fs::absolute(run_dir).lexically_normal().parent_path().filename().string();
  run.created_at = utc_timestamp();
  if (is_run_dir(run_dir)) {
    try {
      run.created_at = load_run(run_dir).created_at;
    } catch (const Error& e) {
      log::warn("previous_run_unreadable", {{"run", run_dir.string()}, {"error", e.what()}});
    }
  }
  run.preprocess = pcfg;
  fs::create_directories(run_dir);

  const auto t0 = std::chrono::steady_clock::now();
  std::set<std::string> seen;
  for (const auto& src : sources) {
    const std::string page_id = page_id_for(src);
    if (g_cancel.load()) {
      run.errors.push_back(PageError{page_id, "preprocess", "cancelled", "interrupted before processing"});
      continue;
    }
    try {
      if (!seen.insert(page_id).second) {
        throw Error(ErrorKind::ingest, "page id '" + page_id + "' already taken by another file");
      }
      run.pages.push_back(preprocess_page(src, run_dir, pcfg));
      log::info("page_preprocessed", {{"page_id", page_id}});
    } catch (const Error& e) {
      run.errors.push_back(PageError{page_id, "preprocess", std::string(to_string(e.kind())), e.what()});
      log::error("page_failed", {{"page_id", page_id}, {"stage", "preprocess"}, {"error", e.what()}});
    }
  }
  run.timing["preprocess"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  persist_run(run, run_dir);
  log::info("preprocess_done", {{"run", run_dir.string()}, {"pages", run.pages.size()}, {"errors", run.errors.size()}});
  return exit_code_for(run.errors, {"preprocess"});
}

// Stage results replace earlier results of the same stage; errors of other
// stages and their timings are carried over.
void carry_over(PipelineRun& next, const PipelineRun& prev, const std::set<std::string>& replaced) {
  next.run_id = prev.run_id;
  next.created_at = prev.created_at;
  next.preprocess = prev.preprocess;
  next.parent_run = prev.parent_run;
  next.session_id = prev.session_id;
  std::vector<PageError> errors;
  for (const auto& e : prev.errors) {
    if (!replaced.count(e.stage)) errors.push_back(e);
  }
  errors.insert(errors.end(), next.errors.begin(), next.errors.end());
  next.errors = std::move(errors);
  for (const auto& [stage, seconds] : prev.timing) {
    if (!replaced.count(stage) && !next.timing.count(stage)) next.timing[stage] = seconds;
  }
}

int do_detect(const Options& o, const CliConfig& cfg) {
  if (o.run.empty()) throw Error(ErrorKind::usage, "--run is required");
  const fs::path run_dir = o.run;
  const PipelineRun prev = load_run(run_dir);
  const PromptSuite suite = pick_suite(o, cfg);
  const auto desc = pick_backend(o, cfg);
  if (!desc) throw Error(ErrorKind::usage, "no backend given (--backend or config 'backend')");
  auto backend = connect(*desc);

  PipelineOptions popts;
  popts.nms = pick_nms(o, cfg, suite);
  popts.segment = false;
  popts.workers = pick_workers(o, *desc);
  popts.cancel = &g_cancel;
  PipelineRun run = run_pipeline(run_dir, prev.pages, suite, *backend, popts);
  run.backend = *desc;
  carry_over(run, prev, {"detect", "nms", "segment"});
  persist_run(run, run_dir);
  log::info("detect_done", {{"run", run_dir.string()}, {"detections", run.detections.size()}});
  return exit_code_for(run.errors, {"detect"});
}

int do_segment(const Options& o, const CliConfig& cfg) {
  if (o.run.empty()) throw Error(ErrorKind::usage, "--run is required");
  const fs::path run_dir = o.run;
  const PipelineRun prev = load_run(run_dir);
  if (prev.detections.empty()) {
    log::info("segment_skipped", {{"run", run_dir.string()}, {"reason", "no detections"}});
    return kOk;
  }
  BackendDescriptor desc = prev.backend;
  if (auto override = pick_backend(o, cfg)) desc = *override;
  desc.validate();
  auto backend = connect(desc);

  PipelineRun run = prev;
  run.backend = desc;
  run.errors.clear();
  run.timing.clear();
  for (auto& d : run.detections) d.mask.reset();
  segment_run(run, run_dir, *backend, pick_workers(o, desc), &g_cancel);
  carry_over(run, prev, {"segment"});
  persist_run(run, run_dir);
  std::size_t masked = 0;
  for (const auto& d : run.detections) masked += d.mask ? 1 : 0;
  log::info("segment_done", {{"run", run_dir.string()}, {"masks", masked}});
  return exit_code_for(run.errors, {"segment"});
}

int do_pipeline(const Options& o, const CliConfig& cfg) {
  const int pre = do_preprocess(o, cfg);
  if (pre == kInterrupted) return pre;
  Options next = o;
  next.run = o.out;
  const int det = do_detect(next, cfg);
  if (det == kInterrupted) return det;
  const int seg = do_segment(next, cfg);
  return std::max({pre, det, seg});
}

// ---------------------------------------------------------------- eval

std::map<std::string, std::string> load_cast(const fs::path& path, bool* strict) {
  const json j = parse_json(read_file_text(path), path.string());
  if (!j.is_object()) throw Error(ErrorKind::usage, path.string() + ": cast file must be a JSON object");
  if (j.contains("class_cast")) {
    const EvalConfig c = eval_config_from_json(j);
    if (c.strict_cast) *strict = true;
    return c.class_cast;
  }
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw Error(ErrorKind::usage, path.string() + ": cast targets must be strings");
    out[k] = v.get<std::string>();
  }
  return out;
}

std::string fmt_ap(const std::optional<double>& ap) {
  if (!ap) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *ap);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Prompt notation of the suite groups that end up in `cls` after casting.
std::string prompt_for(const PromptSuite& suite, const std::string& cls, const EvalConfig& ecfg) {
  std::string out;
  for (const auto& g : suite.groups) {
    if (cast_class_name(g.class_name, ecfg) != cls) continue;
    if (!out.empty()) out += " + ";
    out += render_prompt_notation(g.phrases);
  }
  return out;
}

int do_eval(const Options& o, const CliConfig& cfg) {
  std::vector<std::string> run_dirs = o.runs;
  if (run_dirs.empty()) throw Error(ErrorKind::usage, "--run is required");
  const fs::path gt_path = !o.gt.empty() ? fs::path(o.gt) : fs::path(cfg.gt);
  if (gt_path.empty()) throw Error(ErrorKind::usage, "--gt is required");
  fs::path out_dir = o.out;
  if (out_dir.empty()) {
    if (run_dirs.size() != 1) throw Error(ErrorKind::usage, "--out is required with several runs");
    out_dir = fs::path(run_dirs.front()) / "eval";
  }

  EvalConfig ecfg = cfg.eval;
  if (o.eval_iou > 0) ecfg.iou_thresh = o.eval_iou;
  if (!o.cast.empty()) ecfg.class_cast = load_cast(o.cast, &ecfg.strict_cast);
  if (o.strict_cast) ecfg.strict_cast = true;
  ecfg.validate();

  const GroundTruth gt = load_coco(gt_path);
  const std::string dataset = !o.dataset.empty() ? o.dataset : gt_path.stem().string();

  json rows = json::array();
  json runs = json::array();
  std::ostringstream table;
  std::ostringstream pr;
  table << "dataset,suite_id,prompt,class,ap,n_gt,n_det,tp,fp,fn\n";
  pr << "suite_id,class,rank,score,recall,precision,tp\n";
  struct Line {
    std::string suite, prompt, cls, ap;
  };
  std::vector<Line> lines;

  for (const auto& dir : run_dirs) {
    const PipelineRun run = load_run(dir);
    const EvalReport report = evaluate(run, gt, ecfg);
    for (const auto& c : report.classes) {
      const std::string prompt = prompt_for(run.suite, c.class_name, ecfg);
      json row{{"dataset", dataset},
               {"suite_id", run.suite.suite_id},
               {"run_id", run.run_id},
               {"prompt", prompt},
               {"class", c.class_name},
               {"ap", c.ap ? json(canonical_real(*c.ap)) : json(nullptr)},
               {"n_gt", c.n_gt},
               {"n_det", c.n_det},
               {"tp", c.tp},
               {"fp", c.fp},
               {"fn", c.fn}};
      rows.push_back(row);
      table << csv_field(dataset) << ',' << csv_field(run.suite.suite_id) << ',' << csv_field(prompt) << ','
            << csv_field(c.class_name) << ',' << (c.ap ? fmt_ap(c.ap) : "") << ',' << c.n_gt << ',' << c.n_det
            << ',' << c.tp << ',' << c.fp << ',' << c.fn << '\n';
      lines.push_back({run.suite.suite_id, prompt, c.class_name, fmt_ap(c.ap)});
    }
    std::istringstream csv(report_pr_csv(report));
    std::string line;
    std::getline(csv, line);  // header
    while (std::getline(csv, line)) pr << csv_field(run.suite.suite_id) << ',' << line << '\n';
    json r = report_to_json(report);
    r["run_id"] = run.run_id;
    r["suite_id"] = run.suite.suite_id;
    runs.push_back(r);
  }

  json out{{"dataset", dataset},
           {"gt", gt_path.string()},
           {"config", eval_config_to_json(ecfg)},
           {"rows", rows},
           {"runs", runs}};
  atomic_write_file(out_dir / "report.json", dump_canonical(out));
  atomic_write_file(out_dir / "table.csv", table.str());
  atomic_write_file(out_dir / "pr.csv", pr.str());

  std::size_t w_suite = 8, w_prompt = 6, w_cls = 5;
  for (const auto& l : lines) {
    w_suite = std::max(w_suite, l.suite.size());
    w_prompt = std::max(w_prompt, l.prompt.size());
    w_cls = std::max(w_cls, l.cls.size());
  }
  std::cout << "Dataset: " << dataset << "\n";
  std::cout << std::left << std::setw(w_suite + 2) << "Suite" << std::setw(w_prompt + 2) << "Prompt"
            << std::setw(w_cls + 2) << "Class" << "AP\n";
  for (const auto& l : lines) {
    std::cout << std::left << std::setw(w_suite + 2) << l.suite << std::setw(w_prompt + 2) << l.prompt
              << std::setw(w_cls + 2) << l.cls << l.ap << "\n";
  }
  std::cout.flush();
  log::info("eval_done", {{"out", out_dir.string()}, {"rows", rows.size()}});
  return kOk;
}

// ---------------------------------------------------------------- export / serve / misc

int do_export(const Options& o, const CliConfig&) {
  if (o.run.empty()) throw Error(ErrorKind::usage, "--run is required");
  if (o.out.empty()) throw Error(ErrorKind::usage, "--out is required");
  const PipelineRun run = load_run(o.run);
  const fs::path log_path = o.decisions.empty() ? decisions_path(o.run) : fs::path(o.decisions);
  if (!o.decisions.empty() && !fs::exists(log_path)) {
    throw Error(ErrorKind::usage, "decisions file " + log_path.string() + " does not exist");
  }
  const auto bundle = export_dataset(run, latest_status(read_decisions(log_path)), o.out);
  std::cout << json{{"output_root", bundle.output_root.string()},
                    {"annotations", bundle.coco_path.string()},
                    {"exported", bundle.exported_ids.size()},
                    {"crops", bundle.crops},
                    {"masks", bundle.masks}}
                   .dump()
            << std::endl;
  return kOk;
}

int do_serve(const Options& o, const CliConfig& cfg) {
  ReviewServiceOptions sopts;
  sopts.runs_root = !o.runs_root.empty() ? fs::path(o.runs_root) : fs::path(cfg.runs_root);
  if (sopts.runs_root.empty()) throw Error(ErrorKind::usage, "--runs is required");
  if (!fs::is_directory(sopts.runs_root)) throw Error(ErrorKind::usage, sopts.runs_root.string() + " is not a directory");
  sopts.review = cfg.review;
  sopts.nms = cfg.nms;
  if (cfg.nms_iou_explicit) sopts.nms_iou_override = cfg.nms.iou_thresh;
  if (o.nms_iou > 0) sopts.nms_iou_override = o.nms_iou;
  if (o.per_class_nms) sopts.nms.per_class = true;
  if (auto d = pick_backend(o, cfg)) {
    sopts.backend_descriptor = *d;
    sopts.backend = make_backend(*d);
  }
  ReviewService service(sopts);
  const int port = service.bind(o.host, o.port);
  std::cout << "listening on http://" << o.host << ":" << port << std::endl;
  log::info("serve_started", {{"host", o.host}, {"port", port}, {"runs", sopts.runs_root.string()}});

  std::thread watcher([&] {
    while (!g_cancel.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    service.stop();
  });
  service.serve();
  g_cancel.store(true);
  watcher.join();
  log::info("serve_stopped", {});
  return kOk;
}

int do_health(const Options& o, const CliConfig& cfg) {
  const auto d = pick_backend(o, cfg);
  if (!d) throw Error(ErrorKind::usage, "no backend given (--backend or config 'backend')");
  std::cout << make_backend(*d)->health().dump() << std::endl;
  return kOk;
}

int do_suites() {
  for (const auto& [id, suite] : builtin_suites()) {
    std::cout << id;
    for (const auto& g : suite.groups) std::cout << "  " << g.class_name << "=" << render_prompt_notation(g.phrases);
    std::cout << "\n";
  }
  return kOk;
}

void add_backend_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--backend", o.backend, "remote or fixture");
  cmd->add_option("--endpoint", o.endpoint, "remote backend base URL");
  cmd->add_option("--fixtures", o.fixtures, "fixture backend root");
  cmd->add_option("--timeout", o.timeout_s, "request timeout in seconds");
}

void add_detect_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--suite", o.suite, "builtin suite id or suite JSON file");
  add_backend_options(cmd, o);
  cmd->add_flag("--per-class-nms", o.per_class_nms, "suppress only within a class");
  cmd->add_option("--nms-iou", o.nms_iou, "NMS IoU threshold (default: from the suite)");
  cmd->add_option("--workers", o.workers, "pages processed concurrently");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-prompted extraction of visual elements from historical documents"};
  app.set_version_flag("--version", std::string(tool_version()));
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("--config", o.config_path, "JSON config file");
  app.add_flag("--json", o.json_logs, "log JSON lines on stderr");
  app.add_flag("--quiet", o.quiet, "only log warnings and errors");

  auto* pre = app.add_subcommand("preprocess", "resize and autocontrast a directory of page images");
  pre->add_option("--images", o.images, "source image directory");
  pre->add_option("--out", o.out, "run directory");
  pre->add_option("--target-size", o.target_size, "side length of the preprocessed raster");

  auto* det = app.add_subcommand("detect", "run the detector on a preprocessed run");
  det->add_option("--run", o.run, "run directory");
  add_detect_options(det, o);

  auto* seg = app.add_subcommand("segment", "attach masks to a run's detections");
  seg->add_option("--run", o.run, "run directory");
  add_backend_options(seg, o);
  seg->add_option("--workers", o.workers, "pages processed concurrently");

  auto* pipe = app.add_subcommand("pipeline", "preprocess, detect and segment in one go");
  pipe->add_option("--images", o.images, "source image directory");
  pipe->add_option("--out", o.out, "run directory");
  pipe->add_option("--target-size", o.target_size, "side length of the preprocessed raster");
  add_detect_options(pipe, o);

  auto* ev = app.add_subcommand("eval", "AP against COCO ground truth");
  ev->add_option("--run", o.runs, "run directory (repeatable)");
  ev->add_option("--gt", o.gt, "COCO ground-truth file");
  ev->add_option("--iou", o.eval_iou, "match IoU threshold");
  ev->add_option("--cast", o.cast, "class cast JSON file");
  ev->add_flag("--strict-cast", o.strict_cast, "unmapped classes are an error");
  ev->add_option("--out", o.out, "report directory (default: <run>/eval)");
  ev->add_option("--dataset", o.dataset, "dataset label for the report");

  auto* ex = app.add_subcommand("export", "write accepted detections as a COCO dataset");
  ex->add_option("--run", o.run, "run directory");
  ex->add_option("--decisions", o.decisions, "decisions log (default: <run>/decisions.jsonl)");
  ex->add_option("--out", o.out, "output directory");

  auto* sv = app.add_subcommand("serve", "start the review service");
  sv->add_option("--port", o.port, "port; 0 picks a free one");
  sv->add_option("--host", o.host, "bind address");
  sv->add_option("--runs", o.runs_root, "directory holding run directories");
  add_backend_options(sv, o);
  sv->add_option("--nms-iou", o.nms_iou, "NMS IoU threshold for sessions");
  sv->add_flag("--per-class-nms", o.per_class_nms, "suppress only within a class");

  auto* hl = app.add_subcommand("health", "query backend health");
  add_backend_options(hl, o);

  app.add_subcommand("suites", "list builtin prompt suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  log::set_format(o.json_logs ? log::Format::json : log::Format::text);
  log::set_quiet(o.quiet);
  install_signal_handlers();

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const CliConfig cfg = load_config(o);
    int code = kOk;
    if (cmd == "preprocess") code = do_preprocess(o, cfg);
    else if (cmd == "detect") code = do_detect(o, cfg);
    else if (cmd == "segment") code = do_segment(o, cfg);
    else if (cmd == "pipeline") code = do_pipeline(o, cfg);
    else if (cmd == "eval") code = do_eval(o, cfg);
    else if (cmd == "export") code = do_export(o, cfg);
    else if (cmd == "serve") code = do_serve(o, cfg);
    else if (cmd == "health") code = do_health(o, cfg);
    else if (cmd == "suites") code = do_suites();
    if (g_cancel.load() && cmd != "serve") code = kInterrupted;
    return code;
  } catch (const Error& e) {
    log::error("command_failed", {{"command", cmd}, {"kind", to_string(e.kind())}, {"error", e.what()}});
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    log::error("command_failed", {{"command", cmd}, {"error", e.what()}});
    return kPartial;
  }
}
