#pragma once

#include <deque>
#include <filesystem>
#include <fstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "dcoach/service/live_session.hpp"

namespace dcoach::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8787;  // 0 picks a free port
  std::filesystem::path ui_dir = "ui";
  std::size_t io_threads = 1;
};

inline std::string mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".wasm") return "application/wasm";
  return "application/octet-stream";
}

// Maps a request target onto a file below root; nullopt for anything that escapes it.
inline std::optional<std::filesystem::path> static_path(const std::filesystem::path& root, std::string_view target) {
  auto q = target.find_first_of("?#");
  std::string path(target.substr(0, q));
  if (path.empty() || path.front() != '/') return std::nullopt;
  if (path.back() == '/') path += "index.html";
  std::filesystem::path rel = std::filesystem::path(path.substr(1)).lexically_normal();
  if (rel.empty() || rel.is_absolute()) return std::nullopt;
  for (const auto& part : rel) {
    if (part == "..") return std::nullopt;
  }
  return root / rel;
}

// HTTP + WebSocket front end over the session manager: GET /api/sessions, static files from ui_dir,
// and the JSON message channel on /ws.
class Server {
 public:
  Server(SessionManager& manager, ServerOptions opt) : manager_(manager), opt_(std::move(opt)), acceptor_(ioc_) {
    tcp::endpoint ep(net::ip::make_address(opt_.address), opt_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen(net::socket_base::max_listen_connections);
    port_ = acceptor_.local_endpoint().port();
  }

  ~Server() { stop(); }

  unsigned short port() const { return port_; }

  void start() {
    accept();
    for (std::size_t i = 0; i < std::max<std::size_t>(1, opt_.io_threads); ++i) {
      threads_.emplace_back([this] { ioc_.run(); });
    }
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
    });
    ioc_.stop();
    for (auto& t : threads_) {
      if (t.joinable()) t.join();
    }
  }

  // Blocks the caller until stop() is called from elsewhere (signal handler, test).
  void wait() {
    for (auto& t : threads_) {
      if (t.joinable()) t.join();
    }
  }

 private:
  class WsConnection : public std::enable_shared_from_this<WsConnection> {
   public:
    WsConnection(tcp::socket socket, SessionManager& mgr) : ws_(std::move(socket)), mgr_(mgr) {}

    ~WsConnection() { detach(); }

    void run(http::request<http::string_body> req) {
      ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws_.async_accept(req, beast::bind_front_handler(&WsConnection::on_accept, shared_from_this()));
    }

   private:
    void on_accept(beast::error_code ec) {
      if (ec) return;
      read();
    }

    void read() { ws_.async_read(buffer_, beast::bind_front_handler(&WsConnection::on_read, shared_from_this())); }

    void on_read(beast::error_code ec, std::size_t) {
      if (ec) {
        detach();
        return;
      }
      const std::string text = beast::buffers_to_string(buffer_.data());
      buffer_.consume(buffer_.size());
      handle(text);
      read();
    }

    void handle(const std::string& text) {
      try {
        auto msg = parse_client_message(text);
        std::visit([&](auto& m) { on_message(m); }, msg);
      } catch (const ProtocolError& e) {
        send(error_message(e.code(), e.what()).dump());
      } catch (const std::exception& e) {
        send(error_message("internal", e.what()).dump());
      }
    }

    void on_message(const ListMsg&) { send(reply("sessions", mgr_.list()).dump()); }

    void on_message(const StartMsg& m) {
      auto s = mgr_.start(m);
      send(reply("started", {{"session", s->id()}, {"description", s->describe()}}).dump());
      subscribe(s);
    }

    void on_message(const StopMsg& m) {
      auto r = mgr_.stop(m.session);
      send(reply("stopped", {{"session", m.session},
                             {"status", r.already_stopped ? "already-stopped" : "stopped"},
                             {"snapshot", r.snapshot.string()},
                             {"log", r.log.string()},
                             {"steps", r.steps},
                             {"error", r.error}})
               .dump());
    }

    void on_message(const SubscribeMsg& m) {
      auto s = mgr_.get(m.session);
      subscribe(s);
      send(reply("subscribed", {{"session", m.session}}).dump());
    }

    void on_message(const FeedbackMsg& m) {
      std::weak_ptr<WsConnection> weak = shared_from_this();
      mgr_.get(m.session)->submit_feedback(m, [weak](const Ack& a) {
        if (auto self = weak.lock()) self->send(to_json(a).dump());
      });
    }

    void subscribe(const std::shared_ptr<LiveSession>& s) {
      detach();
      auto slot = s->subscribe();
      std::weak_ptr<WsConnection> weak = shared_from_this();
      slot->set_notify([weak] {
        if (auto self = weak.lock()) net::post(self->ws_.get_executor(), [self] { self->pump(); });
      });
      std::lock_guard lock(sub_mu_);
      session_ = s;
      slot_ = slot;
    }

    void detach() {
      std::shared_ptr<LiveSession> s;
      std::shared_ptr<LiveSession::FrameSlot> slot;
      {
        std::lock_guard lock(sub_mu_);
        s = session_.lock();
        slot = std::move(slot_);
        session_.reset();
      }
      if (slot) {
        slot->close();
        if (s) s->unsubscribe(slot);
      }
    }

    // Thread-safe: queues a control message and kicks the writer on the connection's executor.
    void send(std::string text) {
      auto self = shared_from_this();
      net::post(ws_.get_executor(), [self, text = std::move(text)]() mutable {
        self->control_.push_back(std::move(text));
        self->pump();
      });
    }

    // Runs on the connection executor; control messages first, then the newest frame.
    void pump() {
      if (writing_) return;
      if (!control_.empty()) {
        out_ = std::move(control_.front());
        control_.pop_front();
      } else {
        std::shared_ptr<LiveSession::FrameSlot> slot;
        {
          std::lock_guard lock(sub_mu_);
          slot = slot_;
        }
        if (!slot) return;
        auto frame = slot->take();
        if (!frame) return;
        out_ = to_json(*frame).dump();
      }
      writing_ = true;
      ws_.text(true);
      ws_.async_write(net::buffer(out_), beast::bind_front_handler(&WsConnection::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
      writing_ = false;
      if (ec) {
        detach();
        return;
      }
      pump();
    }

    websocket::stream<beast::tcp_stream> ws_;
    SessionManager& mgr_;
    beast::flat_buffer buffer_;
    std::deque<std::string> control_;
    std::string out_;
    bool writing_ = false;
    std::mutex sub_mu_;
    std::weak_ptr<LiveSession> session_;
    std::shared_ptr<LiveSession::FrameSlot> slot_;
  };

  class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
   public:
    HttpConnection(tcp::socket socket, Server& server) : stream_(std::move(socket)), server_(server) {}

    void run() { read(); }

   private:
    void read() {
      req_ = {};
      stream_.expires_after(std::chrono::seconds(30));
      http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
      if (ec) return;
      if (websocket::is_upgrade(req_)) {
        if (req_.target() != "/ws") {
          write(text_response(http::status::not_found, "text/plain", "websocket endpoint is /ws\n"));
          return;
        }
        stream_.expires_never();
        std::make_shared<WsConnection>(stream_.release_socket(), server_.manager_)->run(std::move(req_));
        return;
      }
      write(server_.respond(req_));
    }

    http::response<http::string_body> text_response(http::status st, const std::string& type, std::string body) {
      http::response<http::string_body> res{st, req_.version()};
      res.set(http::field::content_type, type);
      res.keep_alive(req_.keep_alive());
      res.body() = std::move(body);
      res.prepare_payload();
      return res;
    }

    void write(http::response<http::string_body> res) {
      res_ = std::move(res);
      http::async_write(stream_, res_, beast::bind_front_handler(&HttpConnection::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res_.keep_alive()) {
        beast::error_code ignored;
        stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      read();
    }

    beast::tcp_stream stream_;
    Server& server_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
    http::response<http::string_body> res_;
  };

  http::response<http::string_body> respond(const http::request<http::string_body>& req) {
    auto make = [&](http::status st, const std::string& type, std::string body) {
      http::response<http::string_body> res{st, req.version()};
      res.set(http::field::content_type, type);
      res.keep_alive(req.keep_alive());
      res.body() = std::move(body);
      res.prepare_payload();
      return res;
    };
    if (req.method() != http::verb::get && req.method() != http::verb::head) {
      auto res = make(http::status::method_not_allowed, "text/plain", "only GET is supported\n");
      res.set(http::field::allow, "GET, HEAD");
      return res;
    }
    const std::string target(req.target());
    const std::string route = target.substr(0, target.find('?'));
    if (route == "/api/sessions") return make(http::status::ok, "application/json", manager_.list().dump());
    if (route == "/api/health") return make(http::status::ok, "application/json", R"({"v":1,"status":"ok"})");
    auto file = static_path(opt_.ui_dir, target);
    if (!file) return make(http::status::bad_request, "text/plain", "bad path\n");
    std::ifstream is(*file, std::ios::binary);
    if (!is || std::filesystem::is_directory(*file)) return make(http::status::not_found, "text/plain", "not found\n");
    std::string body((std::istreambuf_iterator<char>(is)), {});
    auto res = make(http::status::ok, mime_type(*file), std::move(body));
    if (req.method() == http::verb::head) res.body().clear();
    return res;
  }

  void accept() {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (!acceptor_.is_open()) return;
        log::warn("accept failed: ", ec.message());
      } else {
        std::make_shared<HttpConnection>(std::move(socket), *this)->run();
      }
      accept();
    });
  }

  SessionManager& manager_;
  ServerOptions opt_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  std::vector<std::thread> threads_;
  std::atomic<bool> stopped_{false};
};

}  // namespace dcoach::service
