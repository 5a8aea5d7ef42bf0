#include <gtest/gtest.h>

#include <sstream>

#include "dcoach/agent/agent.hpp"
#include "test_util.hpp"

using namespace dcoach;
using dcoach::testing::TempDir;

namespace {

AgentConfig small_config(std::size_t K = 200, std::size_t N = 50, std::size_t b = 10, bool buffer = true) {
  AgentConfig c;
  c.buffer_capacity = K;
  c.buffer_sample_size = N;
  c.update_interval = b;
  c.learning_rate = 0.01;
  c.buffer_enabled = buffer;
  return c;
}

nn::Network small_policy(std::uint64_t seed, std::size_t d = 1) { return make_policy_network(Shape{4}, {8}, d, seed); }

Tensor state_of(std::uint64_t i) {
  std::mt19937_64 rng(1000 + i);
  std::uniform_real_distribution<float> u(-1, 1);
  Tensor s(Shape{4});
  for (auto& v : s) v = u(rng);
  return s;
}

// Reference single SGD step written against nn-core directly.
void reference_update(nn::Network& net, const Tensor& x, const Tensor& y, double lr) {
  auto r = nn::backward(net, x, y);
  nn::sgd_step(net, r.grads, static_cast<float>(lr));
}

}  // namespace

TEST(Label, ErrorIsFeedbackTimesMagnitude) {
  CorrectionConfig c;
  c.e = 0.25;
  Tensor a(Shape{3}, {0.1f, 0.1f, 0.1f});
  auto y = make_label(a, FeedbackSignal({1, 0, -1}), c);
  EXPECT_FLOAT_EQ(y[0], static_cast<float>(0.1f + 0.25));
  EXPECT_FLOAT_EQ(y[1], 0.1f);
  EXPECT_FLOAT_EQ(y[2], static_cast<float>(0.1f - 0.25));
}

TEST(Label, ClampsAboveOne) {
  auto y = make_label(Tensor(Shape{1}, {0.5f}), FeedbackSignal({1}), CorrectionConfig{});
  EXPECT_EQ(y[0], 1.0f);
}

TEST(Label, ComponentwiseThreeDims) {
  auto y = make_label(Tensor(Shape{3}, {0.2f, -0.3f, 0.0f}), FeedbackSignal({0, 1, -1}), CorrectionConfig{});
  EXPECT_FLOAT_EQ(y[0], 0.2f);
  EXPECT_FLOAT_EQ(y[1], 0.7f);
  EXPECT_FLOAT_EQ(y[2], -1.0f);
}

TEST(Label, Subtracts) {
  auto y = make_label(Tensor(Shape{1}, {0.4f}), FeedbackSignal({-1}), CorrectionConfig{});
  EXPECT_FLOAT_EQ(y[0], -0.6f);
}

TEST(Label, ZeroFeedbackRejected) {
  EXPECT_THROW(make_label(Tensor(Shape{1}, {0.4f}), FeedbackSignal({0}), CorrectionConfig{}), FeedbackError);
  EXPECT_THROW(FeedbackSignal({2}), FeedbackError);
}

TEST(Label, AlwaysInRange) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1, 1);
  std::uniform_int_distribution<int> hd(-1, 1);
  CorrectionConfig c;
  c.e = 1.7;
  for (int i = 0; i < 1000; ++i) {
    Tensor a(Shape{3});
    std::vector<int> h(3);
    for (auto& v : a) v = u(rng);
    for (auto& v : h) v = hd(rng);
    if (std::all_of(h.begin(), h.end(), [](int v) { return v == 0; })) h[0] = 1;
    auto y = make_label(a, FeedbackSignal(h), c);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_LE(std::abs(y[j]), 1.0f);
      if (h[j] == 0) {
        EXPECT_EQ(y[j], a[j]);  // decoupled: unadvised dims keep the executed action
      }
    }
  }
}

TEST(CoupledMap, RacerTable) {
  CorrectionConfig c;
  c.mode = CorrectionMode::coupled;
  c.coupled_map = racer_coupled_map();
  EXPECT_EQ(map_coupled("forward", c).h, (std::vector<int>{0, 1, -1}));
  EXPECT_EQ(map_coupled("left", c).h, (std::vector<int>{-1, -1, 0}));
  EXPECT_EQ(map_coupled("back", c).h, (std::vector<int>{0, -1, 1}));
  EXPECT_EQ(map_coupled("right", c).h, (std::vector<int>{1, -1, 0}));
  try {
    map_coupled("jump", c);
    FAIL();
  } catch (const FeedbackError& e) {
    EXPECT_NE(std::string(e.what()).find("back, forward, left, right"), std::string::npos);
  }
  CorrectionConfig d;
  EXPECT_THROW(map_coupled("forward", d), FeedbackError);
}

TEST(Buffer, FifoEvictionAtCapacity) {
  ReplayBuffer b(3, 2, 1);
  for (int i = 0; i < 5; ++i) b.push({Tensor(Shape{1}, {float(i)}), Tensor(Shape{1}, {0.f})});
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].state[0], 2.0f);
  EXPECT_EQ(b[2].state[0], 4.0f);
}

TEST(Buffer, SampleClampsToSize) {
  ReplayBuffer b(10, 50, 1);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 3; ++i) b.push({Tensor(Shape{1}, {float(i)}), Tensor(Shape{1}, {0.f})});
  EXPECT_EQ(b.sample_indices(rng), (std::vector<std::size_t>{0, 1, 2}));
  ReplayBuffer big(100, 5, 1);
  for (int i = 0; i < 20; ++i) big.push({Tensor(Shape{1}, {float(i)}), Tensor(Shape{1}, {0.f})});
  auto idx = big.sample_indices(rng);
  EXPECT_EQ(idx.size(), 5u);
  for (auto i : idx) EXPECT_LT(i, 20u);
}

TEST(Agent, ZeroWeightPolicyActsZero) {
  auto net = small_policy(1);
  for (auto& p : net.params()) {
    p.weights.fill(0);
    p.bias.fill(0);
  }
  Agent a(net, small_config(), 0);
  auto act = a.act(state_of(0));
  EXPECT_EQ(act[0], 0.0f);
}

TEST(Agent, ActionsInRangeAndPure) {
  Agent a(small_policy(2, 3), small_config(), 0);
  for (int i = 0; i < 50; ++i) {
    auto s = state_of(i);
    for (auto& v : s) v *= 20;
    auto x = a.act(s);
    for (auto v : x) EXPECT_LE(std::abs(v), 1.0f);
    EXPECT_EQ(x, a.act(s));
  }
  EXPECT_THROW(a.act(Tensor(Shape{3})), nn::NetworkError);
}

TEST(Agent, PolicyMustEndInTanh) {
  nn::Network lin(Shape{2}, {nn::LayerSpec::dense(1, nn::Activation::linear)});
  EXPECT_THROW(Agent(lin, small_config(), 0), nn::NetworkError);
}

TEST(Agent, FirstFeedbackSingleUpdateOnly) {
  auto net = small_policy(3);
  Agent a(net, small_config(), 0);
  const auto s = state_of(0);
  const auto act = a.act(s);
  auto out = a.feedback_step(s, act, FeedbackSignal({1}));
  EXPECT_EQ(a.buffer().size(), 1u);
  EXPECT_EQ(out.batch_size, 0u);
  EXPECT_EQ(a.single_updates(), 1u);
  EXPECT_EQ(a.batch_updates(), 0u);
  reference_update(net, s, make_label(act, FeedbackSignal({1}), CorrectionConfig{}), 0.01);
  EXPECT_TRUE(a.policy() == net);
}

// Second feedback: single-pair step, then a batch of the (one-entry) buffer, then append.
TEST(Agent, FeedbackOrderMatchesReference) {
  auto net = small_policy(4);
  Agent a(net, small_config(), 0);
  const auto s0 = state_of(0), s1 = state_of(1);
  const auto a0 = a.act(s0);
  a.feedback_step(s0, a0, FeedbackSignal({1}));
  const auto a1 = a.act(s1);
  auto out = a.feedback_step(s1, a1, FeedbackSignal({-1}));
  EXPECT_EQ(out.batch_size, 1u);

  const auto y0 = make_label(a0, FeedbackSignal({1}), CorrectionConfig{});
  const auto y1 = make_label(a1, FeedbackSignal({-1}), CorrectionConfig{});
  reference_update(net, s0, y0, 0.01);
  reference_update(net, s1, y1, 0.01);
  reference_update(net, Tensor(Shape{1, 4}, s0.values()), Tensor(Shape{1, 1}, y0.values()), 0.01);
  EXPECT_TRUE(a.policy() == net);
  ASSERT_EQ(a.buffer().size(), 2u);
  EXPECT_EQ(a.buffer()[1].state, s1);
  EXPECT_EQ(a.buffer()[1].label, y1);
}

TEST(Agent, FullBufferEvictsOldest) {
  Agent a(small_policy(5), small_config(200, 50, 10), 0);
  for (int i = 0; i < 201; ++i) {
    auto s = state_of(i);
    a.feedback_step(s, a.act(s), FeedbackSignal({i % 2 ? 1 : -1}));
  }
  ASSERT_EQ(a.buffer().size(), 200u);
  EXPECT_EQ(a.buffer()[0].state, state_of(1));
  EXPECT_EQ(a.buffer()[199].state, state_of(200));
}

TEST(Agent, FeedbackMovesOutputTowardLabel) {
  auto cfg = small_config();
  cfg.learning_rate = 1e-3;
  Agent a(small_policy(6), cfg, 0);
  const auto s = state_of(3);
  const auto act = a.act(s);
  auto out = a.feedback_step(s, act, FeedbackSignal({1}));
  EXPECT_LT(std::abs(a.act(s)[0] - out.label[0]), std::abs(act[0] - out.label[0]));
}

TEST(Periodic, EmptyBufferNeverUpdates) {
  Agent a(small_policy(7), small_config(), 0);
  const auto before = a.policy();
  for (int t = 0; t < 30; ++t) EXPECT_FALSE(a.periodic_step());
  EXPECT_TRUE(a.policy() == before);
  EXPECT_EQ(a.steps(), 30u);
}

TEST(Periodic, FiresExactlyAtMultiplesOfB) {
  Agent a(small_policy(8), small_config(200, 50, 10), 0);
  auto s = state_of(0);
  a.feedback_step(s, a.act(s), FeedbackSignal({1}));
  for (std::uint64_t t = 1; t <= 100; ++t) {
    const auto before = a.policy();
    const bool fired = a.periodic_step();
    EXPECT_EQ(a.steps(), t);
    EXPECT_EQ(fired, t % 10 == 0) << "t=" << t;
    EXPECT_EQ(!(a.policy() == before), fired) << "t=" << t;
  }
  EXPECT_EQ(a.periodic_updates(), 10u);
  EXPECT_EQ(a.buffer().size(), 1u);
}

TEST(Periodic, BatchIsWholeSmallBuffer) {
  auto net = small_policy(9);
  Agent a(net, small_config(200, 50, 1), 0);
  std::vector<Tensor> states, labels;
  for (int i = 0; i < 3; ++i) {
    auto s = state_of(i);
    auto act = a.act(s);
    a.feedback_step(s, act, FeedbackSignal({1}));
  }
  for (const auto& e : a.buffer().entries()) {
    states.push_back(e.state);
    labels.push_back(e.label);
  }
  nn::Network ref = a.policy();
  a.periodic_step();
  std::vector<const Tensor*> sp, lp;
  for (std::size_t i = 0; i < 3; ++i) {
    sp.push_back(&states[i]);
    lp.push_back(&labels[i]);
  }
  reference_update(ref, stack<float>(sp), stack<float>(lp), 0.01);
  EXPECT_TRUE(a.policy() == ref);
}

// Buffer off: only single-pair updates, buffer stays empty, periodic never fires.
TEST(BufferOff, EqualsSinglePairUpdatesOnly) {
  auto net = small_policy(10);
  Agent a(net, small_config(200, 50, 10, false), 0);
  for (std::uint64_t t = 0; t < 200; ++t) {
    const auto s = state_of(t);
    const auto act = a.act(s);
    if (t % 3 == 0) {
      FeedbackSignal h({t % 2 ? 1 : -1});
      auto out = a.feedback_step(s, act, h);
      EXPECT_EQ(out.batch_size, 0u);
      reference_update(net, s, make_label(act, h, CorrectionConfig{}), 0.01);
    }
    EXPECT_FALSE(a.periodic_step());
    ASSERT_TRUE(a.policy() == net) << "t=" << t;
  }
  EXPECT_EQ(a.buffer().size(), 0u);
  EXPECT_EQ(a.batch_updates(), 0u);
  EXPECT_EQ(a.periodic_updates(), 0u);
}

TEST(Agent, NoFeedbackOffIntervalLeavesWeights) {
  Agent a(small_policy(11), small_config(200, 50, 10), 0);
  auto s = state_of(0);
  a.feedback_step(s, a.act(s), FeedbackSignal({1}));
  const auto before = a.policy();
  for (int t = 1; t < 10; ++t) a.periodic_step();
  EXPECT_TRUE(a.policy() == before);
}

namespace {
void drive(Agent& a, std::uint64_t from, std::uint64_t to) {
  for (std::uint64_t t = from; t < to; ++t) {
    auto s = state_of(t);
    auto act = a.act(s);
    if (t % 4 == 1) a.feedback_step(s, act, FeedbackSignal({t % 8 == 1 ? 1 : -1}));
    a.periodic_step();
  }
}
}  // namespace

TEST(Agent, DeterministicGivenSeed) {
  Agent a(small_policy(12), small_config(20, 5, 3), 77), b(small_policy(12), small_config(20, 5, 3), 77);
  drive(a, 0, 300);
  drive(b, 0, 300);
  EXPECT_TRUE(a.policy() == b.policy());
  EXPECT_EQ(a.weights_checksum(), b.weights_checksum());
}

TEST(Snapshot, RoundTripActs) {
  TempDir dir("agent");
  Agent a(small_policy(13, 2), small_config(20, 5, 3), 1);
  drive(a, 0, 0);
  a.save(dir / "a.dcsn");
  auto b = Agent::load(dir / "a.dcsn");
  EXPECT_EQ(a.act(state_of(5)), b.act(state_of(5)));
}

TEST(Snapshot, RestoreThenContinueMatchesUninterrupted) {
  auto cfg = small_config(20, 5, 3);
  cfg.optimizer.kind = nn::OptimizerKind::adam;
  Agent a(small_policy(14), cfg, 9);
  Agent ref(small_policy(14), cfg, 9);
  drive(a, 0, 100);
  std::stringstream ss;
  a.save(ss);
  auto b = Agent::load(ss);
  EXPECT_EQ(b.steps(), 100u);
  EXPECT_EQ(b.buffer().size(), a.buffer().size());
  EXPECT_EQ(b.config(), a.config());
  drive(b, 100, 250);
  drive(ref, 0, 250);
  EXPECT_TRUE(b.policy() == ref.policy());
}

TEST(Snapshot, CorruptionRejected) {
  Agent a(small_policy(15), small_config(20, 5, 3), 1);
  drive(a, 0, 50);
  std::stringstream ss;
  a.save(ss);
  std::string bytes = ss.str();
  for (std::size_t pos : {std::size_t{2}, bytes.size() / 2, bytes.size() - 3}) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x5a);
    std::istringstream in(bad);
    EXPECT_THROW(Agent::load(in), FormatError);
  }
  std::istringstream trunc(bytes.substr(0, bytes.size() / 3));
  EXPECT_THROW(Agent::load(trunc), FormatError);
}

TEST(Snapshot, VersionMismatchRejected) {
  Agent a(small_policy(16), small_config(), 1);
  std::stringstream ss;
  a.save(ss);
  std::string body = ss.str().substr(0, ss.str().size() - 8);
  body[4] = 7;
  std::ostringstream os;
  os << body;
  BinaryWriter w(os);
  w.u64(fnv1a(std::as_bytes(std::span(body.data(), body.size()))));
  std::istringstream in(os.str());
  try {
    Agent::load(in);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 7"), std::string::npos);
  }
}
