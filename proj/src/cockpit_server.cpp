#include "geofence/cockpit_server.hpp"

#include <chrono>
#include <deque>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include "geofence/cockpit.hpp"
#include "geofence/scenario.hpp"
#include "geofence/sim_harness.hpp"

namespace geofence::cockpit {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

std::string mime_type(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript; charset=utf-8";
  if (ext == ".css") return "text/css; charset=utf-8";
  if (ext == ".json" || ext == ".map") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".wasm") return "application/wasm";
  if (ext == ".txt") return "text/plain; charset=utf-8";
  return "application/octet-stream";
}

std::filesystem::path resolve_asset(const std::filesystem::path& root, const std::string& target) {
  std::string path = target.substr(0, target.find_first_of("?#"));
  if (path.empty() || path.front() != '/' || path.find('\0') != std::string::npos ||
      path.find('\\') != std::string::npos || path.find('%') != std::string::npos) {
    return {};
  }
  std::filesystem::path rel;
  std::stringstream parts(path.substr(1));
  for (std::string seg; std::getline(parts, seg, '/');) {
    if (seg.empty() || seg == ".") continue;
    if (seg == "..") return {};
    rel /= seg;
  }
  if (rel.empty()) rel = "index.html";
  std::error_code ec;
  const auto base = std::filesystem::weakly_canonical(root, ec);
  if (ec) return {};
  auto full = std::filesystem::weakly_canonical(base / rel, ec);
  if (ec) return {};
  // symlinks may still point outside
  const auto [b, f] = std::mismatch(base.begin(), base.end(), full.begin(), full.end());
  if (b != base.end()) return {};
  if (std::filesystem::is_directory(full)) full /= "index.html";
  return full;
}

namespace {

json error_reply(std::string code, std::string message) {
  return {{"event", "error"}, {"code", std::move(code)}, {"message", std::move(message)}};
}

// ---------------------------------------------------------------------------
// Websocket connection: one flight session at most.

class FlightSocket : public std::enable_shared_from_this<FlightSocket> {
 public:
  FlightSocket(tcp::socket socket, const ServerOptions& options)
      : ws_(std::move(socket)), options_(options), pump_(ws_.get_executor()) {}

  ~FlightSocket() {
    if (session_) session_->stop();
  }

  void accept(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->read();
      self->schedule_pump();
    });
  }

 private:
  void read() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      const std::string text = beast::buffers_to_string(self->in_.data());
      self->in_.consume(self->in_.size());
      self->handle(text);
      self->read();
    });
  }

  void handle(const std::string& text) {
    std::string why;
    const auto env = parse_envelope(text, &why);
    if (!env) {
      if (session_) session_->count_malformed();
      reply(error_reply("malformed", why));
      return;
    }
    if (env->type == "input") {
      if (!session_) {
        reply(error_reply("no_session", "send a start control message first"));
        return;
      }
      // malformed and stale inputs are counted, not answered
      session_->submit_input(env->payload);
      return;
    }
    if (env->type == "control") {
      control(env->payload);
      return;
    }
    reply(error_reply("unexpected_type", "clients do not send telemetry"));
  }

  void control(const json& p) {
    const std::string action = p.value("action", std::string());
    if (action == "start") {
      start(p.value("scenario", std::string()));
    } else if (action == "fly") {
      if (!session_) return reply(error_reply("no_session", "nothing to fly"));
      if (session_->phase() != Phase::kArmed) return reply(error_reply("bad_phase", "fly only from armed"));
      session_->request_fly();
      reply({{"event", "ack"}, {"action", "fly"}});
    } else if (action == "stop") {
      if (session_) session_->stop();
      session_.reset();
      reply({{"event", "stopped"}});
    } else if (action == "status") {
      json s{{"event", "status"}};
      if (session_) {
        s["scenario"] = session_->scenario().name;
        s["phase"] = phase_name(session_->phase());
        s["last_input_age_ms"] = session_->last_input_age_ms();
        s["ticks"] = session_->ticks();
        s["malformed_inputs"] = session_->malformed();
        s["stale_inputs"] = session_->stale();
        s["jitter_p99_us"] = session_->jitter().quantile_us(0.99);
      } else {
        s["phase"] = phase_name(Phase::kIdle);
      }
      reply(std::move(s));
    } else {
      reply(error_reply("unknown_action", "action must be start, fly, stop or status"));
    }
  }

  void start(const std::string& id) {
    if (session_) return reply(error_reply("already_started", "this connection already has a session"));
    const auto path = id.empty() ? std::nullopt : find_scenario(id, options_.scenario_dirs);
    if (!path) {
      json e = error_reply("unknown_scenario", "no scenario '" + id + "'");
      e["available"] = list_scenarios(options_.scenario_dirs);
      return reply(std::move(e));
    }
    try {
      const Scenario s = load_scenario(*path);
      if (s.plant != PlantKind::kQuadrotor) {
        return reply(error_reply("rejected", "only quadrotor scenarios can be flown"));
      }
      SessionConfig cfg;
      cfg.telemetry_hz = options_.telemetry_hz;
      session_ = std::make_unique<LiveSession>(s, cfg);
    } catch (const std::exception& e) {
      return reply(error_reply("rejected", e.what()));
    }
    session_id_ = id;
    sent_geofence_ = false;
    halted_reported_ = false;
    delayed_.clear();
    session_->start();
    spdlog::info("session '{}' armed", id);
    reply({{"event", "started"}, {"scenario", id}, {"phase", phase_name(Phase::kArmed)}});
  }

  void reply(json payload) {
    control_out_.push_back(make_message("control", std::move(payload)));
    flush();
  }

  void schedule_pump() {
    pump_.expires_after(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(0.5 / options_.telemetry_hz)));
    pump_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_) return;
      self->poll_frames();
      self->schedule_pump();
    });
  }

  void poll_frames() {
    if (!session_) return;
    TelemetryFrame f;
    const auto now = std::chrono::steady_clock::now();
    if (session_->latest_frame(f)) {
      const GeofenceBox* box = sent_geofence_ ? nullptr : &session_->scenario().geofence;
      sent_geofence_ = true;
      std::string msg = make_message("telemetry", frame_to_json(f, box));
      const auto due = now + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                 std::chrono::duration<double, std::milli>(options_.display_latency_ms));
      delayed_.push_back({due, std::move(msg)});
      if (f.phase == Phase::kViolatedHalt && !halted_reported_) {
        halted_reported_ = true;
        spdlog::error("session '{}' violated the geofence at t = {:.3f}", session_id_, f.t);
        reply({{"event", "violation"}, {"t", f.t}});
      }
    }
    // newest due frame wins; older ones are dropped
    while (!delayed_.empty() && delayed_.front().first <= now) {
      frame_out_ = std::move(delayed_.front().second);
      delayed_.pop_front();
    }
    flush();
  }

  void flush() {
    if (writing_ || closed_) return;
    std::string next;
    if (!control_out_.empty()) {
      next = std::move(control_out_.front());
      control_out_.pop_front();
    } else if (frame_out_) {
      next = std::move(*frame_out_);
      frame_out_.reset();
    } else {
      return;
    }
    writing_ = true;
    auto buf = std::make_shared<std::string>(std::move(next));
    ws_.text(true);
    ws_.async_write(asio::buffer(*buf), [self = shared_from_this(), buf](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) {
        self->close();
        return;
      }
      self->flush();
    });
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    pump_.cancel();
    if (session_) {
      session_->stop();
      spdlog::info("session '{}' closed", session_id_);
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  const ServerOptions& options_;
  asio::steady_timer pump_;
  beast::flat_buffer in_;
  std::unique_ptr<LiveSession> session_;
  std::string session_id_;
  bool sent_geofence_ = false;
  bool halted_reported_ = false;
  bool writing_ = false;
  bool closed_ = false;
  std::deque<std::string> control_out_;
  std::optional<std::string> frame_out_;
  std::deque<std::pair<std::chrono::steady_clock::time_point, std::string>> delayed_;
};

// ---------------------------------------------------------------------------
// Plain HTTP: static files, or hand the socket to a FlightSocket on upgrade.

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket socket, const ServerOptions& options) : stream_(std::move(socket)), options_(options) {}

  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (websocket::is_upgrade(self->req_)) {
        stream_upgrade(self);
        return;
      }
      self->respond();
    });
  }

 private:
  static void stream_upgrade(const std::shared_ptr<HttpConnection>& self) {
    self->stream_.expires_never();
    std::make_shared<FlightSocket>(self->stream_.release_socket(), self->options_)->accept(std::move(self->req_));
  }

  template <class Body>
  void send(http::response<Body> res) {
    res.set(http::field::server, "geofence-cockpit");
    res.keep_alive(req_.keep_alive());
    res.prepare_payload();
    auto sp = std::make_shared<http::response<Body>>(std::move(res));
    http::async_write(stream_, *sp, [self = shared_from_this(), sp](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (sp->need_eof()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  void text(http::status status, std::string body) {
    http::response<http::string_body> res{status, req_.version()};
    res.set(http::field::content_type, "text/plain; charset=utf-8");
    res.body() = std::move(body);
    send(std::move(res));
  }

  void respond() {
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      http::response<http::string_body> res{http::status::method_not_allowed, req_.version()};
      res.set(http::field::allow, "GET, HEAD");
      res.body() = "method not allowed\n";
      return send(std::move(res));
    }
    if (options_.assets.empty()) return text(http::status::not_found, "no asset directory configured\n");
    const std::string target(req_.target());
    const auto file = resolve_asset(options_.assets, target);
    if (file.empty()) return text(http::status::bad_request, "bad path\n");

    beast::error_code ec;
    http::file_body::value_type body;
    body.open(file.string().c_str(), beast::file_mode::scan, ec);
    if (ec) return text(http::status::not_found, "not found\n");
    const auto size = body.size();
    if (req_.method() == http::verb::head) {
      http::response<http::empty_body> res{http::status::ok, req_.version()};
      res.set(http::field::content_type, mime_type(file));
      res.content_length(size);
      res.keep_alive(req_.keep_alive());
      res.set(http::field::server, "geofence-cockpit");
      auto sp = std::make_shared<http::response<http::empty_body>>(std::move(res));
      http::async_write(stream_, *sp, [self = shared_from_this(), sp](beast::error_code e, std::size_t) {
        if (!e && !sp->need_eof()) self->read();
      });
      return;
    }
    http::response<http::file_body> res{std::piecewise_construct, std::make_tuple(std::move(body)),
                                        std::make_tuple(http::status::ok, req_.version())};
    res.set(http::field::content_type, mime_type(file));
    res.set(http::field::cache_control, "no-cache");
    send(std::move(res));
  }

  beast::tcp_stream stream_;
  const ServerOptions& options_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

struct CockpitServer::Impl {
  explicit Impl(ServerOptions o) : options(std::move(o)), acceptor(ioc), signals(ioc) {}

  void do_accept() {
    acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<HttpConnection>(std::move(socket), options)->read();
      do_accept();
    });
  }

  ServerOptions options;
  asio::io_context ioc{1};
  tcp::acceptor acceptor;
  asio::signal_set signals;
  std::uint16_t port = 0;
};

CockpitServer::CockpitServer(ServerOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
  auto& o = impl_->options;
  if (!(o.telemetry_hz > 0.0)) throw std::invalid_argument("telemetry_hz must be > 0");
  if (o.display_latency_ms < 0.0) throw std::invalid_argument("display_latency_ms must be >= 0");
  if (o.scenario_dirs.empty()) o.scenario_dirs.emplace_back(GEOFENCE_SCENARIO_DIR);
  beast::error_code ec;
  const auto addr = asio::ip::make_address(o.address, ec);
  if (ec) throw std::runtime_error("bad listen address '" + o.address + "'");
  const tcp::endpoint ep(addr, o.port);
  auto& a = impl_->acceptor;
  a.open(ep.protocol(), ec);
  if (!ec) a.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) a.bind(ep, ec);
  if (!ec) a.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw std::runtime_error("cannot listen on " + o.address + ":" + std::to_string(o.port) + ": " + ec.message());
  impl_->port = a.local_endpoint().port();
}

CockpitServer::~CockpitServer() {
  stop();
}

std::uint16_t CockpitServer::port() const { return impl_->port; }

void CockpitServer::run() {
  if (impl_->options.handle_signals) {
    impl_->signals.add(SIGINT);
    impl_->signals.add(SIGTERM);
    impl_->signals.async_wait([this](beast::error_code ec, int sig) {
      if (ec) return;
      spdlog::info("signal {}, shutting down", sig);
      stop();
    });
  }
  impl_->do_accept();
  spdlog::info("cockpit listening on {}:{}", impl_->options.address, port());
  impl_->ioc.run();
}

void CockpitServer::stop() {
  // ioc.stop() drops pending handlers, which releases every connection and
  // with it every session thread
  asio::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
    impl_->signals.cancel(ec);
  });
  impl_->ioc.stop();
}

}  // namespace geofence::cockpit
