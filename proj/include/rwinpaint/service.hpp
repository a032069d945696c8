#pragma once

#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "rwinpaint/config.hpp"
#include "rwinpaint/inference.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen's
// product kernels if it is seen first.
#include <httplib.h>
#include <json.hpp>

namespace rwinpaint {

inline constexpr const char* kServiceVersion = "1.0.0";

// Counting gate bounding in-flight inpaint work.
class RequestGate {
 public:
  explicit RequestGate(int slots) : free_(slots) {}
  void acquire() {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(m_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  int free_;
};

struct ServiceReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::string model_id;
  double processing_ms = 0;
};

// HTTP-independent core, so behaviour is testable without sockets.
class InpaintService {
 public:
  explicit InpaintService(ServeConfig cfg = {}) : cfg_(std::move(cfg)), gate_(cfg_.max_concurrent) {}

  std::size_t payload_limit() const { return cfg_.max_payload_mb * 1024 * 1024; }

  // Atomic publication: requests already holding the old pointer finish on it.
  std::string load_model(const std::filesystem::path& path) {
    auto m = std::make_shared<const InferenceModel>(load_inference_model(path));
    std::lock_guard lock(model_mutex_);
    model_ = std::move(m);
    return model_->id;
  }

  std::shared_ptr<const InferenceModel> model() const {
    std::lock_guard lock(model_mutex_);
    return model_;
  }

  static std::string error_body(const std::string& code, const std::string& message,
                                const nlohmann::json& detail = nlohmann::json::object()) {
    return nlohmann::json{{"code", code}, {"message", message}, {"detail", detail}}.dump();
  }

  ServiceReply health() const {
    const auto m = model();
    const double uptime =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    nlohmann::json j{{"status", "ok"},
                     {"loaded", m != nullptr},
                     {"model_id", m ? nlohmann::json(m->id) : nlohmann::json(nullptr)},
                     {"image_size", m ? nlohmann::json(m->image_size) : nlohmann::json(nullptr)},
                     {"version", kServiceVersion},
                     {"uptime_s", uptime}};
    return {200, "application/json", j.dump(), m ? m->id : "", 0};
  }

  ServiceReply swap_model(const std::string& path) {
    if (path.empty()) return {400, "application/json", error_body("bad_request", "missing checkpoint path"), "", 0};
    try {
      const auto id = load_model(path);
      return {200, "application/json", nlohmann::json{{"loaded", true}, {"model_id", id}}.dump(), id, 0};
    } catch (const std::exception& e) {
      const auto m = model();
      return {422, "application/json",
              error_body("incompatible_checkpoint", e.what(),
                         {{"path", path}, {"serving", m ? nlohmann::json(m->id) : nlohmann::json(nullptr)}}),
              m ? m->id : "", 0};
    }
  }

  ServiceReply inpaint(const std::string& image_bytes, const std::string& mask_bytes,
                       const std::string& requested_model = "") {
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = model();
    if (!m) return {503, "application/json", error_body("model_not_loaded", "no checkpoint is loaded"), "", 0};
    if (!requested_model.empty() && requested_model != m->id) {
      return {409, "application/json",
              error_body("model_mismatch", "requested model is not the one being served",
                         {{"requested", requested_model}, {"serving", m->id}}),
              m->id, 0};
    }
    if (image_bytes.size() > payload_limit() || mask_bytes.size() > payload_limit()) {
      return {413, "application/json", error_body("payload_too_large", "payload exceeds the configured limit"), m->id,
              0};
    }
    cv::Mat image;
    Mask mask;
    try {
      image = decode_raster(std::vector<unsigned char>(image_bytes.begin(), image_bytes.end()), cv::IMREAD_UNCHANGED,
                            "image");
      mask = mat_to_mask(decode_raster(std::vector<unsigned char>(mask_bytes.begin(), mask_bytes.end()),
                                       cv::IMREAD_UNCHANGED, "mask"));
    } catch (const IoError& e) {
      return {400, "application/json", error_body("undecodable", e.what()), m->id, 0};
    }
    if (mask.height() != image.rows || mask.width() != image.cols) {
      return {400, "application/json",
              error_body("dimension_mismatch",
                         "mask " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                             " does not match image " + std::to_string(image.cols) + "x" +
                             std::to_string(image.rows),
                         {{"image", {{"width", image.cols}, {"height", image.rows}}},
                          {"mask", {{"width", mask.width()}, {"height", mask.height()}}}}),
              m->id, 0};
    }
    gate_.acquire();
    std::vector<unsigned char> png;
    try {
      png = encode_png(inpaint_native(*m, image, mask));
    } catch (...) {
      gate_.release();
      throw;
    }
    gate_.release();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return {200, "image/png", std::string(png.begin(), png.end()), m->id, ms};
  }

 private:
  ServeConfig cfg_;
  RequestGate gate_;
  mutable std::mutex model_mutex_;
  std::shared_ptr<const InferenceModel> model_;
  std::chrono::steady_clock::time_point started_ = std::chrono::steady_clock::now();
};

// HTTP front end over InpaintService.
class HttpServer {
 public:
  explicit HttpServer(InpaintService& svc, const ServeConfig& cfg) : svc_(svc), cfg_(cfg) {
    const int workers = cfg.max_concurrent + 4;
    server_.new_task_queue = [workers] { return new httplib::ThreadPool(static_cast<std::size_t>(workers)); };
    server_.set_payload_max_length(svc_.payload_limit() * 2 + 64 * 1024);
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Expose-Headers", "X-Model-Id, X-Processing-Time-Ms"}});
    server_.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) { send(res, svc_.health()); });
    server_.Post("/v1/model", [this](const httplib::Request& req, httplib::Response& res) {
      std::string path;
      if (req.has_param("path")) {
        path = req.get_param_value("path");
      } else if (req.is_multipart_form_data() && req.has_file("path")) {
        path = req.get_file_value("path").content;
      } else if (!req.body.empty()) {
        try {
          path = nlohmann::json::parse(req.body).value("path", "");
        } catch (const nlohmann::json::exception&) {
          send(res, {400, "application/json", InpaintService::error_body("bad_request", "body is not JSON"), "", 0});
          return;
        }
      }
      send(res, svc_.swap_model(path));
    });
    server_.Post("/v1/inpaint", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.is_multipart_form_data() || !req.has_file("image") || !req.has_file("mask")) {
        send(res, {400, "application/json",
                   InpaintService::error_body("bad_request", "expected multipart fields 'image' and 'mask'"), "", 0});
        return;
      }
      const std::string requested = req.has_file("model_id") ? req.get_file_value("model_id").content : "";
      send(res, svc_.inpaint(req.get_file_value("image").content, req.get_file_value("mask").content, requested));
    });
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 413 ? "payload_too_large" : res.status == 404 ? "not_found" : "error";
      res.set_content(InpaintService::error_body(code, httplib::status_message(res.status)), "application/json");
    });
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      res.status = 500;
      res.set_content(InpaintService::error_body("internal", what), "application/json");
    });
  }

  // Binds (port 0 picks a free one) and serves on a background thread.
  int start() {
    port_ = cfg_.port == 0 ? server_.bind_to_any_port(cfg_.host) : (server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
    if (port_ < 0) throw IoError("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Blocks the calling thread.
  void run() {
    if (!server_.listen(cfg_.host, cfg_.port)) throw IoError("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  ~HttpServer() { stop(); }

  int port() const { return port_; }

 private:
  static void send(httplib::Response& res, const ServiceReply& r) {
    res.status = r.status;
    if (!r.model_id.empty()) res.set_header("X-Model-Id", r.model_id);
    if (r.status == 200 && r.content_type == "image/png") {
      char ms[32];
      std::snprintf(ms, sizeof ms, "%.3f", r.processing_ms);
      res.set_header("X-Processing-Time-Ms", ms);
    }
    res.set_content(r.body, r.content_type);
  }

  InpaintService& svc_;
  ServeConfig cfg_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace rwinpaint
