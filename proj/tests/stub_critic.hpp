#pragma once

#include <atomic>
#include <chrono>
#include <string>
#include <thread>

#include "httplib.h"

// Local HTTP server standing in for an external fairness critic.
class StubCritic {
 public:
  enum class Mode { valid, out_of_range, malformed, delayed, error_status };

  explicit StubCritic(Mode mode, std::chrono::milliseconds delay = std::chrono::milliseconds(300))
      : mode_(mode), delay_(delay) {
    server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      last_body_ = req.body;
      switch (mode_) {
        case Mode::valid:
          res.set_content(R"({"ftg":0.8,"fbs":0.9,"fpp":1.0})", "application/json");
          break;
        case Mode::out_of_range:
          res.set_content(R"({"ftg":1.7,"fbs":-0.2,"fpp":0.5})", "application/json");
          break;
        case Mode::malformed:
          res.set_content(R"({"ftg":"high","fbs":)", "application/json");
          break;
        case Mode::delayed:
          std::this_thread::sleep_for(delay_);
          res.set_content(R"({"ftg":0.1,"fbs":0.1,"fpp":0.1})", "application/json");
          break;
        case Mode::error_status:
          res.status = 500;
          break;
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubCritic() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/score"; }
  long requests() const { return requests_; }
  std::string last_body() const { return last_body_; }

 private:
  Mode mode_;
  std::chrono::milliseconds delay_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<long> requests_{0};
  std::string last_body_;
};
