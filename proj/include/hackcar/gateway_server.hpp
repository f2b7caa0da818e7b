#pragma once

// WebSocket teleop gateway. Clients send one JSON command per text message
// and receive telemetry (10 Hz), alerts and events. On connect a client
// first gets the last 60 s of telemetry. Plain HTTP GETs are answered from
// an optional static directory (the cockpit assets).
//
// All socket work runs on one io_context thread; the simulation thread only
// touches the CommandQueue and the TelemetryBroadcast.

#include <atomic>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "hackcar/scenario.hpp"

namespace hackcar {

struct GatewayOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  std::filesystem::path static_dir;
  std::chrono::milliseconds poll_interval{20};
};

namespace gateway_detail {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

struct Shared {
  CommandQueue& commands;
  TelemetryBroadcast& telemetry;
  std::function<SimTime()> clock;
  GatewayOptions options;
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, std::shared_ptr<Shared> shared)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), shared_(std::move(shared)) {}

  void start(http::request<http::string_body> req) {
    ws_.text(true);
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->cursor_ = self->shared_->telemetry.cursor();
      for (auto& m : self->shared_->telemetry.history()) self->send(std::move(m));
      self->read();
      self->poll();
    });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->timer_.cancel();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      try {
        self->shared_->commands.push(parse_command(text, self->shared_->clock()));
      } catch (const Error& e) {
        self->send(nlohmann::json{{"type", "error"}, {"message", e.what()}}.dump());
      }
      self->read();
    });
  }

  void poll() {
    if (closed_) return;
    for (auto& m : shared_->telemetry.messages_since(cursor_)) send(std::move(m));
    timer_.expires_after(shared_->options.poll_interval);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->poll();
    });
  }

  void send(std::string message) {
    outbox_.push_back(std::move(message));
    if (outbox_.size() == 1) write_next();
  }

  void write_next() {
    ws_.async_write(asio::buffer(outbox_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) {
                        self->closed_ = true;
                        self->timer_.cancel();
                        return;
                      }
                      self->outbox_.pop_front();
                      if (!self->outbox_.empty()) self->write_next();
                    });
  }

  websocket::stream<tcp::socket> ws_;
  asio::steady_timer timer_;
  std::shared_ptr<Shared> shared_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  std::uint64_t cursor_ = 0;
  bool closed_ = false;
};

inline const char* mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  return "application/octet-stream";
}

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, std::shared_ptr<Shared> shared)
      : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void start() {
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (!ec) self->dispatch();
                     });
  }

 private:
  void dispatch() {
    if (websocket::is_upgrade(req_)) {
      std::make_shared<WsSession>(stream_.release_socket(), shared_)->start(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>(respond());
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  http::response<http::string_body> respond() const {
    http::response<http::string_body> res{http::status::not_found, req_.version()};
    res.set(http::field::content_type, "text/plain");
    res.body() = "not found\n";
    const auto& dir = shared_->options.static_dir;
    std::string target(req_.target());
    if (req_.method() == http::verb::get && !dir.empty() &&
        target.find("..") == std::string::npos) {
      if (target == "/") target = "/index.html";
      const auto path = dir / target.substr(1);
      std::ifstream in(path, std::ios::binary);
      if (in) {
        std::ostringstream ss;
        ss << in.rdbuf();
        res.result(http::status::ok);
        res.set(http::field::content_type, mime_type(path));
        res.body() = ss.str();
      }
    }
    res.prepare_payload();
    return res;
  }

  beast::tcp_stream stream_;
  std::shared_ptr<Shared> shared_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace gateway_detail

class GatewayServer {
 public:
  GatewayServer(CommandQueue& commands, TelemetryBroadcast& telemetry,
                std::function<SimTime()> clock, GatewayOptions options = {})
      : shared_(std::make_shared<gateway_detail::Shared>(
            gateway_detail::Shared{commands, telemetry, std::move(clock), std::move(options)})),
        acceptor_(io_) {
    namespace asio = boost::asio;
    const auto endpoint = asio::ip::tcp::endpoint(
        asio::ip::make_address(shared_->options.address), shared_->options.port);
    acceptor_.open(endpoint.protocol());
    acceptor_.set_option(asio::socket_base::reuse_address(true));
    acceptor_.bind(endpoint);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
  }

  ~GatewayServer() { stop(); }

  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  unsigned short port() const { return port_; }

  void start() {
    accept();
    thread_ = std::thread([this] { io_.run(); });
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    io_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  void accept() {
    acceptor_.async_accept([this](boost::beast::error_code ec,
                                  boost::asio::ip::tcp::socket socket) {
      if (!ec) std::make_shared<gateway_detail::HttpSession>(std::move(socket), shared_)->start();
      if (acceptor_.is_open()) accept();
    });
  }

  std::shared_ptr<gateway_detail::Shared> shared_;
  boost::asio::io_context io_;
  boost::asio::ip::tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  std::thread thread_;
  std::atomic<bool> stopped_{false};
};

/// Steps `sim` against the wall clock, `time_scale` sim seconds per wall
/// second, publishing the sim time to `clock` after every cycle. If `stop`
/// becomes true the run ends early and the report covers the cycles run.
inline RunReport run_paced(Simulation& sim, std::atomic<SimTime>& clock, double time_scale,
                           const std::atomic<bool>& stop) {
  using namespace std::chrono;
  const auto wall_start = steady_clock::now();
  while (!sim.done() && !stop) {
    const auto due = wall_start + duration_cast<steady_clock::duration>(
                                      duration<double>(to_seconds(sim.now()) / time_scale));
    std::this_thread::sleep_until(due);
    sim.step_cycle();
    clock = sim.now();
  }
  return sim.report();
}

}  // namespace hackcar
