#include <gtest/gtest.h>

#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <future>

#include "dcoach/harness/replay.hpp"
#include "dcoach/service/server.hpp"
#include "test_util.hpp"

using namespace dcoach;
using namespace dcoach::service;
using namespace std::chrono_literals;

namespace {

harness::ExperimentConfig human_cartpole(double fps = 0) {
  auto cfg = harness::profile("cartpole-human");
  cfg.session.fps = fps;
  return cfg;
}

SessionDescriptor descriptor(const std::string& id, const std::filesystem::path& dir, harness::ExperimentConfig cfg,
                             std::uint64_t max_steps = 0) {
  // Sessions with a step budget run unpaced so tests finish quickly.
  return SessionDescriptor{id, std::move(cfg), dir, {}, max_steps, max_steps == 0};
}

std::vector<nlohmann::json> read_log(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(is, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

// Collects acks delivered from the loop thread.
struct AckSink {
  std::mutex mu;
  std::condition_variable cv;
  std::vector<Ack> acks;
  LiveSession::AckFn fn() {
    return [this](const Ack& a) {
      std::lock_guard lock(mu);
      acks.push_back(a);
      cv.notify_all();
    };
  }
  bool wait_for(std::size_t n, std::chrono::milliseconds timeout = 5s) {
    std::unique_lock lock(mu);
    return cv.wait_for(lock, timeout, [&] { return acks.size() >= n; });
  }
};

FeedbackMsg raw(const std::string& session, std::vector<int> h) {
  FeedbackMsg m;
  m.session = session;
  m.h = std::move(h);
  return m;
}

}  // namespace

TEST(Queue, CoalescingKeepsNewest) {
  CoalescingQueue<int> q;
  EXPECT_FALSE(q.drain().latest);
  q.push(1);
  q.push(2);
  q.push(3);
  auto d = q.drain();
  EXPECT_EQ(*d.latest, 3);
  EXPECT_EQ(d.superseded, (std::vector<int>{1, 2}));
  EXPECT_EQ(q.size(), 0u);
}

TEST(Queue, LatestSlotSkipsBacklog) {
  LatestSlot<int> slot;
  int notified = 0;
  slot.set_notify([&] { ++notified; });
  for (int i = 1; i <= 20; ++i) slot.put(i);
  EXPECT_EQ(notified, 20);
  EXPECT_EQ(*slot.take(), 20);
  EXPECT_FALSE(slot.take());
  EXPECT_EQ(slot.skipped(), 19u);
  EXPECT_FALSE(slot.wait_take(10ms));
  slot.put(21);
  EXPECT_EQ(*slot.wait_take(10ms), 21);
}

TEST(Protocol, ParsesClientMessages) {
  auto f = std::get<FeedbackMsg>(parse_client_message(R"({"v":1,"type":"feedback","session":"a","key":"forward","ts":5})"));
  EXPECT_EQ(*f.key, "forward");
  EXPECT_EQ(f.client_ts, 5);
  auto r = std::get<FeedbackMsg>(parse_client_message(R"({"v":1,"type":"feedback","session":"a","h":[0,1,-1]})"));
  EXPECT_EQ(*r.h, (std::vector<int>{0, 1, -1}));
  auto s = std::get<StartMsg>(parse_client_message(R"({"v":1,"type":"start","session":"a","profile":"racer-human","fps":10})"));
  EXPECT_EQ(s.profile, "racer-human");
  EXPECT_EQ(*s.fps, 10.0);
  EXPECT_NO_THROW(std::get<StopMsg>(parse_client_message(R"({"v":1,"type":"stop","session":"a"})")));
  EXPECT_NO_THROW(std::get<ListMsg>(parse_client_message(R"({"v":1,"type":"list"})")));
}

TEST(Protocol, RejectsBadMessages) {
  auto code = [](const std::string& text) {
    try {
      parse_client_message(text);
    } catch (const ProtocolError& e) {
      return e.code();
    }
    return std::string("none");
  };
  EXPECT_EQ(code("{"), "bad-request");
  EXPECT_EQ(code(R"({"type":"list"})"), "unsupported-version");
  EXPECT_EQ(code(R"({"v":2,"type":"list"})"), "unsupported-version");
  EXPECT_EQ(code(R"({"v":1,"type":"dance"})"), "bad-request");
  EXPECT_EQ(code(R"({"v":1,"type":"feedback","session":"a"})"), "bad-request");
  EXPECT_EQ(code(R"({"v":1,"type":"feedback","session":"a","key":"x","h":[1]})"), "bad-request");
  EXPECT_EQ(code(R"({"v":1,"type":"stop"})"), "bad-request");
  EXPECT_EQ(code(R"({"v":1,"type":"feedback","session":"a","h":"up"})"), "bad-request");
}

TEST(Protocol, FramePacketCarriesRawPixels) {
  FramePacket p;
  p.session = "s";
  p.t = 4;
  p.width = 2;
  p.height = 2;
  p.pixels = {0, 127, 255, 9};
  p.action = {0.5f};
  auto j = to_json(p);
  EXPECT_EQ(j.at("v"), kProtocolVersion);
  EXPECT_EQ(j.at("type"), "frame");
  EXPECT_EQ(base64_decode(j.at("frame").get<std::string>()), p.pixels);
  EXPECT_EQ(base64_encode({'M', 'a', 'n'}), "TWFu");
}

TEST(LiveSessionTest, HumanFeedbackBindsToPreviousStep) {
  dcoach::testing::TempDir dir("svc");
  LiveSession s(descriptor("h1", dir.path(), human_cartpole(20)));
  auto slot = s.subscribe();
  s.start();
  ASSERT_TRUE(slot->wait_take(2s));
  AckSink sink;
  s.submit_feedback(raw("h1", {1}), sink.fn());
  ASSERT_TRUE(sink.wait_for(1));
  auto stop = s.stop();
  EXPECT_FALSE(stop.already_stopped);
  const auto& a = sink.acks[0];
  std::uint64_t bound = 0;
  if (a.status == "applied") {
    bound = *a.bound_t;
  } else {
    EXPECT_EQ(a.status, "ignored-between-episodes");
  }
  auto lines = read_log(stop.log);
  bool found = a.status != "applied";
  for (const auto& j : lines) {
    if (j.at("type") == "feedback") {
      EXPECT_EQ(j.at("bind"), "previous");
      EXPECT_EQ(j.at("t").get<std::uint64_t>(), bound);
      found = true;
    }
  }
  EXPECT_TRUE(found);
  auto fs = s.feedback_stats();
  EXPECT_EQ(fs.applied + fs.dropped(), fs.received);
}

TEST(LiveSessionTest, NamedKeyResolvesThroughCoupledMap) {
  dcoach::testing::TempDir dir("svc");
  dcoach::testing::TempDir enc("svc-enc");
  encoder::Autoencoder::build(64, 64, 8, 3).save(enc.path() / "ae");
  auto cfg = harness::profile("racer-human");
  cfg.encoder.path = (enc.path() / "ae").string();
  cfg.session.fps = 20;
  LiveSession s(descriptor("r1", dir.path(), cfg));
  auto slot = s.subscribe();
  s.start();
  ASSERT_TRUE(slot->wait_take(2s));
  AckSink sink;
  FeedbackMsg m;
  m.session = "r1";
  m.key = "forward";
  s.submit_feedback(m, sink.fn());
  try {
    m.key = "jump";
    s.submit_feedback(m, sink.fn());
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), "unknown-key");
    EXPECT_NE(std::string(e.what()).find("forward"), std::string::npos);
  }
  EXPECT_THROW(s.submit_feedback(raw("r1", {1}), sink.fn()), ProtocolError);
  ASSERT_TRUE(sink.wait_for(1));
  // The frame that follows the binding reports the applied vector.
  std::optional<FramePacket> with_h;
  for (int i = 0; i < 40 && !with_h; ++i) {
    auto p = slot->wait_take(500ms);
    if (p && !p->h_applied.empty()) with_h = p;
  }
  s.stop();
  ASSERT_EQ(sink.acks[0].status, "applied");
  ASSERT_TRUE(with_h);
  EXPECT_EQ(with_h->h_applied, (std::vector<int>{0, 1, -1}));
  EXPECT_EQ(s.encoder_checksum_now(), s.encoder_checksum_at_start());
}

TEST(LiveSessionTest, BurstWithinOneFrameKeepsOnlyLatest) {
  dcoach::testing::TempDir dir("svc");
  LiveSession s(descriptor("c1", dir.path(), human_cartpole(2)));  // 500 ms frames
  auto slot = s.subscribe();
  s.start();
  ASSERT_TRUE(slot->wait_take(3s));
  AckSink sink;
  s.submit_feedback(raw("c1", {-1}), sink.fn());
  s.submit_feedback(raw("c1", {1}), sink.fn());
  ASSERT_TRUE(sink.wait_for(2));
  s.stop();
  EXPECT_EQ(sink.acks[0].status, "superseded");
  EXPECT_NE(sink.acks[1].status, "superseded");
  auto fs = s.feedback_stats();
  EXPECT_EQ(fs.received, 2u);
  EXPECT_EQ(fs.superseded, 1u);
  EXPECT_EQ(fs.applied + fs.dropped(), fs.received);
}

TEST(LiveSessionTest, FeedbackAfterTerminalStepIsIgnored) {
  dcoach::testing::TempDir dir("svc");
  LiveSession s(descriptor("e1", dir.path(), human_cartpole(0)));
  auto slot = s.subscribe();
  // Stepped from the test thread, so the episode boundary is known exactly.
  std::optional<FramePacket> p;
  for (int i = 0; i < 1000; ++i) {
    s.run_steps(1);
    p = slot->take();
    ASSERT_TRUE(p);
    if (p->done) break;
  }
  ASSERT_TRUE(p->done);
  AckSink sink;
  s.submit_feedback(raw("e1", {1}), sink.fn());
  s.run_steps(1);
  ASSERT_TRUE(sink.wait_for(1, 0ms));
  EXPECT_EQ(sink.acks[0].status, "ignored-between-episodes");
  EXPECT_FALSE(sink.acks[0].bound_t);
  s.submit_feedback(raw("e1", {1}), sink.fn());
  s.run_steps(1);
  ASSERT_TRUE(sink.wait_for(2, 0ms));
  EXPECT_EQ(sink.acks[1].status, "applied");
  EXPECT_EQ(*sink.acks[1].bound_t, p->t + 1);
  auto fs = s.feedback_stats();
  EXPECT_EQ(fs.ignored, 1u);
  EXPECT_EQ(fs.applied, 1u);
  auto r = s.stop();
  EXPECT_TRUE(harness::replay_log(r.log).matches());
}

TEST(LiveSessionTest, EvalModeRejectsFeedbackAndNeverTrains) {
  dcoach::testing::TempDir dir("svc");
  auto cfg = human_cartpole(100);
  cfg.session.mode = "eval";
  LiveSession s(descriptor("v1", dir.path(), cfg));
  s.start();
  try {
    s.submit_feedback(raw("v1", {1}), {});
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), "eval-mode");
  }
  std::this_thread::sleep_for(200ms);
  auto r = s.stop();
  auto agent = Agent::load(r.snapshot);
  EXPECT_GT(agent.steps(), 5u);
  EXPECT_EQ(agent.single_updates() + agent.batch_updates() + agent.periodic_updates(), 0u);
  auto rep = harness::replay_log(r.log);
  EXPECT_TRUE(rep.matches());
}

TEST(LiveSessionTest, StopTwiceReportsAlreadyStopped) {
  dcoach::testing::TempDir dir("svc");
  LiveSession s(descriptor("s1", dir.path(), human_cartpole(50)));
  s.start();
  auto first = s.stop();
  EXPECT_FALSE(first.already_stopped);
  EXPECT_TRUE(std::filesystem::exists(first.snapshot));
  auto second = s.stop();
  EXPECT_TRUE(second.already_stopped);
  EXPECT_EQ(second.steps, first.steps);
  EXPECT_NO_THROW(Agent::load(first.snapshot));
}

TEST(LiveSessionTest, SnapshotRestoreResumesIdenticalWeights) {
  dcoach::testing::TempDir dir("svc");
  auto cfg = human_cartpole(0);
  cfg.session.mode = "simulated-teacher";
  LiveSession a(descriptor("a", dir.path(), cfg, 300));
  a.start();
  ASSERT_TRUE(a.wait_finished(10s));
  auto ra = a.stop();
  auto saved = Agent::load(ra.snapshot);
  EXPECT_EQ(saved.steps(), 300u);
  cfg.session.mode = "eval";
  auto d = descriptor("b", dir.path(), cfg, 1);
  d.initial_snapshot = ra.snapshot;
  LiveSession b(d);
  b.start();
  ASSERT_TRUE(b.wait_finished(10s));
  auto rb = b.stop();
  auto resumed = Agent::load(rb.snapshot);
  EXPECT_EQ(resumed.weights_checksum(), saved.weights_checksum());
  EXPECT_EQ(resumed.steps(), 301u);
  auto rep = harness::replay_log(rb.log);
  EXPECT_TRUE(rep.matches());
}

TEST(LiveSessionTest, PacingHitsTargetInterval) {
  dcoach::testing::TempDir dir("svc");
  LiveSession s(descriptor("p1", dir.path(), human_cartpole(20.5)));
  auto slot = s.subscribe();
  s.start();
  ASSERT_TRUE(slot->wait_take(2s));
  const auto t0 = std::chrono::steady_clock::now();
  const auto first = s.t();
  std::this_thread::sleep_for(200 * 48.78ms);
  const auto frames = s.t() - first;
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  s.stop();
  const double interval = ms / static_cast<double>(frames);
  EXPECT_NEAR(interval, 1000.0 / 20.5, 0.05 * 1000.0 / 20.5) << frames << " frames";
}

TEST(LiveSessionTest, SlowConsumerSeesCurrentFrameNotBacklog) {
  dcoach::testing::TempDir dir("svc");
  LiveSession s(descriptor("slow", dir.path(), human_cartpole(20)));
  auto fast = s.subscribe();
  auto slow = s.subscribe();
  s.start();
  std::uint64_t last = 0;
  for (int i = 0; i < 10; ++i) {
    auto p = fast->wait_take(1s);
    ASSERT_TRUE(p);
    EXPECT_GT(p->t, last);
    last = p->t;
  }
  std::this_thread::sleep_for(1s);
  auto p = slow->take();
  ASSERT_TRUE(p);
  EXPECT_GE(p->t + 2, s.t());
  EXPECT_GE(slow->skipped(), 15u);
  s.stop();
}

TEST(LiveSessionTest, SimulatedTeacherSessionReplays) {
  dcoach::testing::TempDir dir("svc");
  auto cfg = human_cartpole(0);
  cfg.session.mode = "simulated-teacher";
  LiveSession s(descriptor("sim", dir.path(), cfg, 500));
  s.start();
  ASSERT_TRUE(s.wait_finished(10s));
  auto r = s.stop();
  auto rep = harness::replay_log(r.log);
  EXPECT_TRUE(rep.matches());
  EXPECT_GT(rep.feedback_events, 0u);
  EXPECT_EQ(rep.final_checksum, Agent::load(r.snapshot).weights_checksum());
  EXPECT_THROW(s.submit_feedback(raw("sim", {1}), {}), ProtocolError);
}

TEST(Manager, RejectsDuplicatesAndUnknown) {
  dcoach::testing::TempDir dir("svc");
  SessionManager mgr({dir.path(), human_cartpole(30)});
  StartMsg m;
  m.session = "x";
  mgr.start(m);
  try {
    mgr.start(m);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), "duplicate-session");
  }
  try {
    mgr.get("nope");
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), "unknown-session");
  }
  StartMsg racer;
  racer.session = "r";
  racer.profile = "racer-human";
  racer.overrides = {"encoder.path=/nonexistent/ae"};
  try {
    mgr.start(racer);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), "start-failed");
  }
  StartMsg bad = m;
  bad.session = "../evil";
  EXPECT_THROW(mgr.start(bad), ProtocolError);
  auto list = mgr.list();
  ASSERT_EQ(list.at("sessions").size(), 1u);
  EXPECT_EQ(list.at("sessions")[0].at("id"), "x");
  EXPECT_EQ(list.at("sessions")[0].at("mode"), "human");
}

TEST(Manager, ConcurrentSessionsKeepSeparateLogs) {
  dcoach::testing::TempDir dir("svc");
  SessionManager mgr({dir.path(), human_cartpole(0)});
  StartMsg a, b;
  a.session = "one";
  a.mode = "simulated-teacher";
  b.session = "two";
  b.mode = "simulated-teacher";
  b.overrides = {"session.seed=9"};
  auto sa = mgr.start(a, 200), sb = mgr.start(b, 200);
  ASSERT_TRUE(sa->wait_finished(10s));
  ASSERT_TRUE(sb->wait_finished(10s));
  auto ra = mgr.stop("one"), rb = mgr.stop("two");
  EXPECT_NE(ra.log, rb.log);
  EXPECT_TRUE(harness::replay_log(ra.log).matches());
  EXPECT_TRUE(harness::replay_log(rb.log).matches());
  EXPECT_NE(Agent::load(ra.snapshot).weights_checksum(), Agent::load(rb.snapshot).weights_checksum());
}

TEST(StaticFiles, PathsStayInsideRoot) {
  const std::filesystem::path root = "/srv/ui";
  EXPECT_EQ(*static_path(root, "/"), root / "index.html");
  EXPECT_EQ(*static_path(root, "/app.js?x=1"), root / "app.js");
  EXPECT_EQ(*static_path(root, "/a/b/../c.css"), root / "a/c.css");
  EXPECT_FALSE(static_path(root, "/../etc/passwd"));
  EXPECT_FALSE(static_path(root, "/a/../../x"));
  EXPECT_FALSE(static_path(root, "relative"));
  EXPECT_EQ(mime_type("x.html"), "text/html; charset=utf-8");
  EXPECT_EQ(mime_type("x.js"), "text/javascript");
}

namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = boost::asio::ip::tcp;

std::pair<unsigned, std::string> http_get(unsigned short port, const std::string& target) {
  boost::asio::io_context ioc;
  beast::tcp_stream stream(ioc);
  stream.connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), port));
  http::request<http::empty_body> req{http::verb::get, target, 11};
  req.set(http::field::host, "localhost");
  http::write(stream, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(stream, buf, res);
  return {res.result_int(), res.body()};
}

struct WsClient {
  boost::asio::io_context ioc;
  websocket::stream<tcp::socket> ws{ioc};
  explicit WsClient(unsigned short port) {
    ws.next_layer().connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), port));
    ws.handshake("localhost", "/ws");
  }
  void send(const nlohmann::json& j) { ws.write(boost::asio::buffer(j.dump())); }
  nlohmann::json recv() {
    beast::flat_buffer buf;
    ws.read(buf);
    return nlohmann::json::parse(beast::buffers_to_string(buf.data()));
  }
  // Next message of the given type, skipping frames and other traffic.
  nlohmann::json recv_type(const std::string& type, int max = 500) {
    for (int i = 0; i < max; ++i) {
      auto j = recv();
      if (j.at("type") == type) return j;
    }
    throw std::runtime_error("no '" + type + "' message");
  }
};

}  // namespace

TEST(ServerTest, HttpListsSessionsAndServesStaticFiles) {
  dcoach::testing::TempDir dir("svc"), ui("ui");
  {
    std::ofstream(ui / "index.html") << "<html>hi</html>";
  }
  SessionManager mgr({dir.path(), human_cartpole(20)});
  Server server(mgr, {"127.0.0.1", 0, ui.path(), 1});
  server.start();
  auto [st, body] = http_get(server.port(), "/api/sessions");
  EXPECT_EQ(st, 200u);
  EXPECT_EQ(nlohmann::json::parse(body).at("sessions").size(), 0u);
  StartMsg m;
  m.session = "live";
  mgr.start(m);
  auto listed = nlohmann::json::parse(http_get(server.port(), "/api/sessions").second);
  ASSERT_EQ(listed.at("sessions").size(), 1u);
  EXPECT_EQ(listed.at("v"), 1);
  EXPECT_EQ(http_get(server.port(), "/").second, "<html>hi</html>");
  EXPECT_EQ(http_get(server.port(), "/missing.js").first, 404u);
  EXPECT_EQ(http_get(server.port(), "/../secret").first, 400u);
  server.stop();
}

TEST(ServerTest, WebSocketSessionLifecycle) {
  dcoach::testing::TempDir dir("svc");
  SessionManager mgr({dir.path(), human_cartpole(20)});
  Server server(mgr, {"127.0.0.1", 0, dir.path(), 1});
  server.start();
  WsClient c(server.port());
  c.send({{"v", 1}, {"type", "start"}, {"session", "w1"}, {"profile", "cartpole-human"}, {"fps", 20}});
  auto started = c.recv_type("started");
  EXPECT_EQ(started.at("session"), "w1");
  std::uint64_t last_t = 0;
  for (int i = 0; i < 5; ++i) {
    auto f = c.recv_type("frame");
    EXPECT_GT(f.at("t").get<std::uint64_t>(), last_t);
    last_t = f.at("t");
    EXPECT_EQ(base64_decode(f.at("frame").get<std::string>()).size(),
              f.at("width").get<std::size_t>() * f.at("height").get<std::size_t>());
  }
  c.send({{"v", 1}, {"type", "feedback"}, {"session", "w1"}, {"h", {1}}, {"ts", 42}});
  auto ack = c.recv_type("ack");
  EXPECT_EQ(ack.at("client_ts"), 42);
  if (ack.at("status") == "applied") {
    EXPECT_GE(ack.at("bound_t").get<std::uint64_t>(), last_t);
  }
  c.send({{"v", 1}, {"type", "feedback"}, {"session", "nope"}, {"h", {1}}});
  EXPECT_EQ(c.recv_type("error").at("code"), "unknown-session");
  c.send({{"v", 1}, {"type", "start"}, {"session", "w1"}});
  EXPECT_EQ(c.recv_type("error").at("code"), "duplicate-session");
  c.send({{"v", 1}, {"type", "stop"}, {"session", "w1"}});
  auto stopped = c.recv_type("stopped");
  EXPECT_EQ(stopped.at("status"), "stopped");
  EXPECT_TRUE(std::filesystem::exists(stopped.at("snapshot").get<std::string>()));
  c.send({{"v", 1}, {"type", "stop"}, {"session", "w1"}});
  EXPECT_EQ(c.recv_type("stopped").at("status"), "already-stopped");
  c.send({{"v", 1}, {"type", "list"}});
  EXPECT_EQ(c.recv_type("sessions").at("sessions").size(), 1u);
  c.ws.close(websocket::close_code::normal);
  server.stop();
}

TEST(ServerTest, SessionSurvivesReconnect) {
  dcoach::testing::TempDir dir("svc");
  SessionManager mgr({dir.path(), human_cartpole(20)});
  Server server(mgr, {"127.0.0.1", 0, dir.path(), 1});
  server.start();
  std::uint64_t seen = 0;
  {
    WsClient c(server.port());
    c.send({{"v", 1}, {"type", "start"}, {"session", "keep"}});
    seen = c.recv_type("frame").at("t");
    c.ws.close(websocket::close_code::normal);
  }
  std::this_thread::sleep_for(300ms);
  WsClient d(server.port());
  d.send({{"v", 1}, {"type", "subscribe"}, {"session", "keep"}});
  auto f = d.recv_type("frame");
  EXPECT_GT(f.at("t").get<std::uint64_t>(), seen + 3);
  EXPECT_TRUE(mgr.get("keep")->running());
  server.stop();
}
