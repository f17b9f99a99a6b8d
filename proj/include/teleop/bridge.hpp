#pragma once

// Live WebSocket bridge for the cockpit. One IO thread owns the sockets; the
// thread calling Bridge::run() owns the Session and paces it to the wall
// clock. They only exchange messages: inbound commands through a locked
// mailbox, outbound text through posts onto the IO context.
//
// Inbound frames are TeleopCommand envelopes. Outbound frames are telemetry,
// frame-meta (one per displayed video frame) and a rolling "summary" snapshot
// twice per second.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "teleop/metrics.hpp"
#include "teleop/netem.hpp"
#include "teleop/runner.hpp"
#include "teleop/scenario.hpp"
#include "teleop/session.hpp"

namespace teleop {

class BridgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BridgeOptions {
  std::string address = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  Micros summary_period_us = 500'000;
  Micros summary_window_us = 5'000'000;
  Micros step_us = 1'000;  // engine pacing granularity
  std::size_t max_queued_per_client = 4096;
};

/// The rolling snapshot pushed to clients: RTT and G2G over the last
/// window_us plus the current vehicle state.
inline Json rolling_summary(const Session& s, Micros now_us, Micros window_us) {
  std::vector<Micros> rtt, g2g;
  for (const auto& r : s.rtt().samples()) {
    if (r.recv_us > now_us - window_us) rtt.push_back(r.rtt_us);
  }
  for (const auto& f : s.displayed_frames()) {
    if (f.display_us > now_us - window_us) g2g.push_back(f.g2g_us);
  }
  Json j;
  j["kind"] = "summary";
  j["ts_us"] = now_us;
  j["window_us"] = window_us;
  j["rtt"] = summary_or_null(rtt);
  j["g2g"] = summary_or_null(g2g);
  j["speed_mps"] = s.vehicle().state().speed_mps;
  j["failsafe"] = s.vehicle().failsafe_active(now_us);
  j["rejected"] = s.rejected_count();
  return j;
}

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;

class Bridge {
  using tcp = net::ip::tcp;

 public:
  /// Binds the listening socket right away so a busy port fails here.
  Bridge(const Scenario& sc, BridgeOptions opt = {})
      : opt_(std::move(opt)), session_(live(sc)), acceptor_(ioc_) {
    if (sc.mode != RunMode::realtime) {
      throw BridgeError("serve needs a scenario with mode: realtime");
    }
    try {
      const tcp::endpoint ep(net::ip::make_address(opt_.address), opt_.port);
      acceptor_.open(ep.protocol());
      acceptor_.set_option(net::socket_base::reuse_address(true));
      acceptor_.bind(ep);
      acceptor_.listen();
    } catch (const boost::system::system_error& e) {
      throw BridgeError("cannot listen on " + opt_.address + ":" +
                        std::to_string(opt_.port) + ": " + e.code().message());
    }
    session_.on_outbound([this](const std::string& text) { broadcast(text); });
  }

  Bridge(const Bridge&) = delete;
  Bridge& operator=(const Bridge&) = delete;

  ~Bridge() { shutdown_io(); }

  std::uint16_t port() const { return acceptor_.local_endpoint().port(); }

  /// Serves until the scenario duration has elapsed or stop() is called.
  void run() {
    start_us_ = clock_.now_us();
    accept();
    io_thread_ = std::thread([this] {
      ioc_.run();
      io_done_ = true;
    });

    Micros next_summary = opt_.summary_period_us;
    while (!stop_requested_ && !session_.finished()) {
      std::vector<InboundText> batch;
      {
        std::lock_guard lock(mailbox_mutex_);
        batch.swap(mailbox_);
      }
      for (auto& in : batch) {
        session_.submit_command(in.text, std::max(in.t_us, session_.now()));
      }
      const Micros now = clock_.now_us() - start_us_;
      session_.advance_to(now);
      while (session_.now() >= next_summary) {
        broadcast(rolling_summary(session_, next_summary, opt_.summary_window_us).dump());
        next_summary += opt_.summary_period_us;
      }
      std::this_thread::sleep_until(
          clock_.to_time_point(start_us_ + (now / opt_.step_us + 1) * opt_.step_us));
    }
    shutdown_io();
  }

  /// Thread-safe; run() returns after the current step.
  void stop() { stop_requested_ = true; }

  /// Owned by the run() thread; read it after run() returns.
  const Session& session() const { return session_; }

  std::size_t connections() const { return connections_; }
  std::size_t outbound_dropped() const { return outbound_dropped_; }

 private:
  struct InboundText {
    Micros t_us;
    std::string text;
  };

  class Client : public std::enable_shared_from_this<Client> {
   public:
    Client(tcp::socket socket, Bridge& bridge) : ws_(std::move(socket)), bridge_(bridge) {}

    void start() {
      beast::error_code ignored;
      beast::get_lowest_layer(ws_).socket().set_option(tcp::no_delay(true), ignored);
      ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->bridge_.clients_.insert(self);
        ++self->bridge_.connections_;
        self->read();
      });
    }

    void send(const std::shared_ptr<const std::string>& msg) {
      if (closing_) return;
      if (queue_.size() >= bridge_.opt_.max_queued_per_client) {
        ++bridge_.outbound_dropped_;
        return;
      }
      queue_.push_back(msg);
      if (queue_.size() == 1) write();
    }

    void close() {
      closing_ = true;
      if (!queue_.empty()) return;  // the write chain closes when drained
      ws_.async_close(websocket::close_code::normal,
                      [self = shared_from_this()](beast::error_code) {});
    }

   private:
    void read() {
      ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->bridge_.clients_.erase(self);
          return;
        }
        self->bridge_.on_inbound(beast::buffers_to_string(self->buffer_.data()));
        self->buffer_.consume(self->buffer_.size());
        self->read();
      });
    }

    void write() {
      ws_.text(true);
      ws_.async_write(net::buffer(*queue_.front()),
                      [self = shared_from_this()](beast::error_code ec, std::size_t) {
                        if (ec) {
                          self->bridge_.clients_.erase(self);
                          return;
                        }
                        self->queue_.pop_front();
                        if (!self->queue_.empty()) {
                          self->write();
                        } else if (self->closing_) {
                          self->closing_ = false;
                          self->close();
                        }
                      });
    }

    websocket::stream<beast::tcp_stream> ws_;
    Bridge& bridge_;
    beast::flat_buffer buffer_;
    std::deque<std::shared_ptr<const std::string>> queue_;
    bool closing_ = false;
  };

  static Scenario live(Scenario sc) {
    sc.op.kind = OperatorScript::Kind::live;  // the bridge is the only operator
    return sc;
  }

  void accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<Client>(std::move(socket), *this)->start();
      accept();
    });
  }

  // IO thread.
  void on_inbound(std::string text) {
    const Micros t = clock_.now_us() - start_us_;
    std::lock_guard lock(mailbox_mutex_);
    mailbox_.push_back({t, std::move(text)});
  }

  // Engine thread.
  void broadcast(const std::string& text) {
    net::post(ioc_, [this, msg = std::make_shared<const std::string>(text)] {
      for (const auto& c : clients_) c->send(msg);
    });
  }

  void shutdown_io() {
    if (!io_thread_.joinable()) return;
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      for (const auto& c : clients_) c->close();
    });
    // Give clients a moment to finish the close handshake.
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
    while (!io_done_ && std::chrono::steady_clock::now() < deadline) {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ioc_.stop();
    io_thread_.join();
    clients_.clear();
  }

  BridgeOptions opt_;
  Session session_;
  WallClock clock_;
  Micros start_us_ = 0;

  net::io_context ioc_;
  tcp::acceptor acceptor_;
  std::set<std::shared_ptr<Client>> clients_;  // IO thread only
  std::thread io_thread_;
  std::atomic<bool> io_done_{false};
  std::atomic<bool> stop_requested_{false};
  std::atomic<std::size_t> connections_{0};
  std::atomic<std::size_t> outbound_dropped_{0};

  std::mutex mailbox_mutex_;
  std::vector<InboundText> mailbox_;
};

}  // namespace teleop
