#include <catch2/catch_amalgamated.hpp>

#include "evmatch/backbone.hpp"
#include "evmatch/gradcheck.hpp"
#include "evmatch/optim.hpp"
#include "evmatch/sets.hpp"

using namespace evmatch;

TEST_CASE("halting scores with zero weights are exactly 0.5") {
  Rng rng(1);
  ParamStore ps;
  HaltingParams hp = make_halting_params(ps, "h", 8, 4, rng);
  hp.w1.mutable_value() = Tensor(hp.w1.shape());
  hp.w2.mutable_value() = Tensor(hp.w2.shape());
  Var tokens = Var::constant(rng.normal_tensor({3 * 4, 8}, 1.0));
  Var h = halting_scores(tokens, hp, 3, 4);
  REQUIRE(h.shape() == Shape{3, 4});
  for (int64_t i = 0; i < h.value().numel(); ++i) REQUIRE(h.value()[i] == 0.5);
}

TEST_CASE("halting scores live strictly inside (0,1) and rise with the head bias") {
  Rng rng(2);
  ParamStore ps;
  HaltingParams hp = make_halting_params(ps, "h", 8, 4, rng);
  Var tokens = Var::constant(rng.normal_tensor({2 * 5, 8}, 1.0));
  Tensor h0 = halting_scores(tokens, hp, 2, 5).value();
  hp.b2.mutable_value()[0] += 1.0;
  Tensor h1 = halting_scores(tokens, hp, 2, 5).value();
  for (int64_t i = 0; i < h0.numel(); ++i) {
    REQUIRE(h0[i] > 0.0);
    REQUIRE(h0[i] < 1.0);
    REQUIRE(h1[i] > h0[i]);
  }
}

TEST_CASE("halting scores gradcheck vs tokens under 1e-6") {
  Rng rng(3);
  ParamStore ps;
  HaltingParams hp = make_halting_params(ps, "h", 6, 4, rng);
  double err = grad_check(
      [&](const std::vector<Var>& in) { return mean_all(halting_scores(in[0], hp, 2, 3)); },
      {rng.normal_tensor({6, 6}, 1.0)});
  REQUIRE(err < 1e-6);
}

TEST_CASE("halting schedule: spec cases") {
  SECTION("first-step halt, empty-sum remainder") {
    Tensor h({4, 1}, {0.995, 0.9, 0.9, 0.9});
    auto n = halting_schedule(h, 0.01);
    REQUIRE(n[0] == 1);
    HaltingState st = build_halting_state(Var::constant(h), 0.01);
    REQUIRE(st.remainder.value()[0] == 1.0);
  }
  SECTION("two-step halt") {
    Tensor h({2, 1}, {0.5, 0.6});
    auto n = halting_schedule(h, 0.01);
    REQUIRE(n[0] == 2);
    HaltingState st = build_halting_state(Var::constant(h), 0.01);
    REQUIRE(st.remainder.value()[0] == 0.5);
    REQUIRE(st.ponder.value()[0] == Catch::Approx(2.5));
  }
  SECTION("never reaching the threshold clamps to T") {
    Tensor h({4, 1}, {0.001, 0.001, 0.001, 0.001});
    auto n = halting_schedule(h, 0.01);
    REQUIRE(n[0] == 4);
    HaltingState st = build_halting_state(Var::constant(h), 0.01);
    REQUIRE(st.remainder.value()[0] == Catch::Approx(0.997));
  }
}

TEST_CASE("ponder loss: all tokens halting at step 1 cost exactly 2") {
  Tensor h({3, 4});
  for (int64_t n = 0; n < 4; ++n) h.at2(0, n) = 0.999;
  HaltingState st = build_halting_state(Var::constant(h), 0.01);
  REQUIRE(st.ponder.value()[0] == 2.0);
}

TEST_CASE("halting distribution (h^1..h^{N-1}, R) is a probability vector") {
  Rng rng(5);
  int64_t bins = 5, spatial = 2000;
  Tensor h({bins, spatial});
  for (int64_t i = 0; i < h.numel(); ++i) h[i] = rng.uniform(0.001, 0.999);
  HaltingState st = build_halting_state(Var::constant(h), 0.01);
  for (int64_t n = 0; n < spatial; ++n) {
    int64_t nn = st.n_steps[static_cast<size_t>(n)];
    double sum = st.remainder.value()[n];
    REQUIRE(st.remainder.value()[n] >= 0.0);
    for (int64_t c = 0; c + 1 < nn; ++c) {
      REQUIRE(h.at2(c, n) >= 0.0);
      sum += h.at2(c, n);
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-12);
    // ponder bound per token: N + R in [2 - eps', T + 1]
    double contrib = static_cast<double>(nn) + st.remainder.value()[n];
    REQUIRE(contrib >= 2.0 - 1e-12);
    REQUIRE(contrib <= static_cast<double>(bins) + 1.0 + 1e-12);
  }
}

TEST_CASE("attention bias: log of remaining mass, -inf past N_n") {
  Tensor h({3, 2});
  h.at2(0, 0) = 0.5;
  h.at2(1, 0) = 0.6;  // token 0: halts at step 2
  h.at2(0, 1) = 0.1;
  h.at2(1, 1) = 0.2;
  h.at2(2, 1) = 0.3;  // token 1: never reaches 0.99 -> N = 3
  HaltingState st = build_halting_state(Var::constant(h), 0.01);
  const Tensor& b = st.bias.value();
  REQUIRE(b.at2(0, 0) == 0.0);  // tau=1: empty sum
  REQUIRE(b.at2(1, 0) == Catch::Approx(std::log(0.5)).margin(1e-15));
  REQUIRE(b.at2(2, 0) == kNegInf);  // tau=3 > N_0=2
  REQUIRE(b.at2(0, 1) == 0.0);
  REQUIRE(b.at2(1, 1) == Catch::Approx(std::log(0.9)).margin(1e-15));
  REQUIRE(b.at2(2, 1) == Catch::Approx(std::log(0.7)).margin(1e-15));

  // exp(bias) equals the un-halted probability mass for tau <= N_n.
  for (int64_t n = 0; n < 2; ++n) {
    double mass = 1.0;
    for (int64_t c = 0; c < 3; ++c) {
      if (c + 1 > st.n_steps[static_cast<size_t>(n)]) break;
      REQUIRE(std::abs(std::exp(b.at2(c, n)) - mass) < 1e-12);
      mass -= h.at2(c, n);
    }
  }

  // bias non-increasing in tau
  Rng rng(6);
  Tensor hr({4, 50});
  for (int64_t i = 0; i < hr.numel(); ++i) hr[i] = rng.uniform(0.01, 0.99);
  HaltingState str = build_halting_state(Var::constant(hr), 0.01);
  for (int64_t n = 0; n < 50; ++n)
    for (int64_t c = 1; c < 4; ++c)
      REQUIRE(str.bias.value().at2(c, n) <= str.bias.value().at2(c - 1, n));
}

TEST_CASE("-inf bias entries yield exactly zero attention weight downstream") {
  Rng rng(7);
  ParamStore ps;
  BlockParams blk = make_block_params(ps, "b", 8, 2, rng);
  int64_t bins = 3, spatial = 4;
  Tensor h({bins, spatial});
  for (int64_t n = 0; n < spatial; ++n) h.at2(0, n) = n == 0 ? 0.995 : 0.1;  // token 0 halts at 1
  HaltingState st = build_halting_state(Var::constant(h), 0.01);
  Var tokens = Var::constant(rng.normal_tensor({bins * spatial, 8}, 1.0));
  std::vector<Tensor> attn;
  spatial_attention(blk, tokens, bins, spatial, 2, st.bias, nullptr, &attn);
  // channels 2 and 3 (c=1,2): key 0 is halted -> weight exactly 0 from all queries
  for (const Tensor& w : attn)  // [T*S x S] per head
    for (int64_t c = 1; c < bins; ++c)
      for (int64_t q = 0; q < spatial; ++q) REQUIRE(w.at2(c * spatial + q, 0) == 0.0);
}

TEST_CASE("gradients flow from the bias back into halting scores") {
  Rng rng(8);
  ParamStore ps;
  BlockParams blk = make_block_params(ps, "b", 8, 2, rng);
  int64_t bins = 3, spatial = 3;
  Tensor h0 = rng.uniform_tensor({bins, spatial}, 0.05, 0.3);
  Tensor tokens = rng.normal_tensor({bins * spatial, 8}, 1.0);
  double err = grad_check(
      [&](const std::vector<Var>& in) {
        HaltingState st = build_halting_state(in[0], 0.01);
        Var out = spatial_attention(blk, Var::constant(tokens), bins, spatial, 2, st.bias);
        return add(mean_all(square(out)), scale(st.ponder, 0.1));
      },
      {h0});
  REQUIRE(err < 1e-4);
}

TEST_CASE("flops report: no halting means zero reduction") {
  std::vector<int64_t> n_steps(10, 4);
  FlopsReport r = flops_report(n_steps, 4, 10, 16);
  REQUIRE(r.dense_spatial == r.pruned_spatial);
  REQUIRE(r.reduction_percent == 0.0);
  REQUIRE(r.dense_spatial == 4 * spatial_attention_macs(10, 16));
}

TEST_CASE("flops report: full halt at step 1 with T=4 reduces by exactly 75%") {
  std::vector<int64_t> n_steps(10, 1);
  FlopsReport r = flops_report(n_steps, 4, 10, 16);
  REQUIRE(r.reduction_percent == Catch::Approx(75.0));
  REQUIRE(r.pruned_spatial * 4 == r.dense_spatial);
}

TEST_CASE("instrumented MAC counter matches flops_report exactly on random schedules") {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    int64_t bins = 3, spatial = 6, dim = 8;
    ParamStore ps;
    BlockParams blk = make_block_params(ps, "b" + std::to_string(trial), dim, 2, rng);
    Tensor h({bins, spatial});
    for (int64_t i = 0; i < h.numel(); ++i) h[i] = rng.uniform(0.05, 0.8);
    HaltingState st = build_halting_state(Var::constant(h), 0.01);
    Var tokens = Var::constant(rng.normal_tensor({bins * spatial, dim}, 1.0));
    MacCounter mac;
    spatial_attention_pruned(blk, tokens, bins, spatial, 2, st.bias, st.active, &mac);
    FlopsReport r = flops_report(st.n_steps, bins, spatial, dim);
    REQUIRE(mac.total() == r.pruned_spatial);
    MacCounter dense;
    spatial_attention(blk, tokens, bins, spatial, 2, st.bias, &dense);
    REQUIRE(dense.total() == r.dense_spatial);
  }
}

TEST_CASE("hard pruning copies halted tokens through and matches soft attention elsewhere") {
  Rng rng(10);
  int64_t bins = 3, spatial = 5, dim = 8;
  ParamStore ps;
  BlockParams blk = make_block_params(ps, "b", dim, 2, rng);
  Tensor h({bins, spatial});
  for (int64_t i = 0; i < h.numel(); ++i) h[i] = rng.uniform(0.2, 0.7);
  HaltingState st = build_halting_state(Var::constant(h), 0.01);
  Tensor toks = rng.normal_tensor({bins * spatial, dim}, 1.0);
  Var soft = spatial_attention(blk, Var::constant(toks), bins, spatial, 2, st.bias);
  Var hard = spatial_attention_pruned(blk, Var::constant(toks), bins, spatial, 2, st.bias,
                                      st.active, nullptr);
  bool saw_halted = false;
  for (int64_t c = 0; c < bins; ++c)
    for (int64_t n = 0; n < spatial; ++n) {
      bool active = st.n_steps[static_cast<size_t>(n)] >= c + 1;
      for (int64_t d = 0; d < dim; ++d) {
        double hv = hard.value().at2(c * spatial + n, d);
        if (active) {
          REQUIRE(hv == Catch::Approx(soft.value().at2(c * spatial + n, d)).margin(1e-10));
        } else {
          REQUIRE(hv == toks.at2(c * spatial + n, d));  // copy-through, exact
          saw_halted = true;
        }
      }
    }
  REQUIRE(saw_halted);
}

TEST_CASE("push-pull: larger ponder weight drives the mean halt step down") {
  // Tiny training loop over the halting head only: loss = task proxy that
  // wants late halting + gamma * ponder. Rising gamma must win tokens over
  // to earlier halting.
  auto mean_steps_after_training = [](double gamma) {
    Rng rng(11);
    ParamStore ps;
    HaltingParams hp = make_halting_params(ps, "h", 8, 8, rng);
    Tensor tokens = rng.normal_tensor({4 * 16, 8}, 1.0);
    AdamW::Options opt;
    opt.lr = 3e-2;
    opt.weight_decay = 0.0;
    opt.total_steps = 200;
    AdamW adam(opt);
    for (int step = 0; step < 200; ++step) {
      Var h = halting_scores(Var::constant(tokens), hp, 4, 16);
      HaltingState st = build_halting_state(h, 0.01);
      // proxy task: reward un-halted mass in late channels (sum of bias exp)
      Var task = neg(mean_all(sub(Var::constant(Tensor::full({4, 16}, 1.0)), h)));
      Var loss = add(task, scale(st.ponder, gamma));
      auto grads = backward(loss);
      for (auto& [name, v] : ps.all()) {
        Tensor g = grads.grad_or_zero(v);
        adam.update(name, v.mutable_value(), g);
      }
      adam.advance();
    }
    Var h = halting_scores(Var::constant(tokens), hp, 4, 16);
    auto n = halting_schedule(h.value(), 0.01);
    double mean = 0;
    for (int64_t s : n) mean += static_cast<double>(s);
    return mean / static_cast<double>(n.size());
  };
  double lo = mean_steps_after_training(0.005);
  double hi = mean_steps_after_training(0.5);
  REQUIRE(hi < lo);
}
