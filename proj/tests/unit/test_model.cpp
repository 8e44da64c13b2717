#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace tempcircuit;
using tc_test::lively_weights;
using tc_test::sample_tokens;
using tc_test::small_config;

namespace {

double final_logprob(const Mat& logits, TokenId t) { return log_softmax(logits.row(logits.rows() - 1))(t); }

}  // namespace

TEST_CASE("forward is deterministic bit for bit") {
  const Weights w = lively_weights(small_config());
  const auto toks = sample_tokens();
  const Mat a = forward(w, toks).logits;
  const Mat b = forward(w, toks).logits;
  CHECK(a.cwiseEqual(b).all());
}

TEST_CASE("forward rejects bad input") {
  const Weights w = lively_weights(small_config());
  const std::vector<TokenId> bad{1, 11};
  CHECK_THROWS_AS(forward(w, bad), std::out_of_range);
  const std::vector<TokenId> too_long(7, 1);
  CHECK_THROWS_AS(forward(w, too_long), std::out_of_range);

  HookSpec hooks;
  hooks.add(ZeroHeadOutput{NodeId::attn(5, 0)});
  CHECK_THROWS_AS(forward(w, sample_tokens(), hooks), std::out_of_range);

  HookSpec past_end;
  past_end.add(RestoreResidual{0, 4, 6, Mat::Zero(2, 8)});
  CHECK_THROWS_AS(forward(w, sample_tokens(), past_end), std::out_of_range);
}

TEST_CASE("zeroing a head whose W_o is zero changes nothing") {
  Weights w = lively_weights(small_config());
  w.layers[0].heads[0].wo.setZero();
  HookSpec hooks;
  hooks.add(ZeroHeadOutput{NodeId::attn(0, 0)});
  CHECK(forward(w, sample_tokens()).logits.cwiseEqual(forward(w, sample_tokens(), hooks).logits).all());
}

TEST_CASE("zero ablation equals patching the output with zeros") {
  const Weights w = lively_weights(small_config());
  const auto toks = sample_tokens();
  HookSpec zero;
  zero.add(ZeroHeadOutput{NodeId::attn(1, 1)});
  HookSpec patch;
  patch.add(PatchNodeOutput{NodeId::attn(1, 1), 0, 5, Mat::Zero(5, 8)});
  CHECK((forward(w, toks, zero).logits - forward(w, toks, patch).logits).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("residual stream is the sum of node outputs") {
  for (bool rms : {false, true}) {
    const ModelConfig cfg = small_config(rms);
    const Weights w = lively_weights(cfg);
    const auto fwd = forward(w, sample_tokens());
    Mat sum = Mat::Zero(5, cfg.d_model);
    for (int n = 0; n + 1 < node_count(cfg); ++n) sum += fwd.cache.node_out[n];
    CHECK((sum - fwd.cache.resid_pre[cfg.n_layers]).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("attention is causal and rows are distributions") {
  const Weights w = lively_weights(small_config());
  const auto fwd = forward(w, sample_tokens());
  for (const auto& layer : fwd.cache.heads) {
    for (const auto& hc : layer) {
      for (int i = 0; i < 5; ++i) {
        CHECK(std::abs(hc.attn.row(i).sum() - 1.0) < 1e-6);
        for (int j = i + 1; j < 5; ++j) CHECK(hc.attn(i, j) == 0.0);
      }
    }
  }
}

TEST_CASE("restoring every residual with clean values reproduces the clean run") {
  const ModelConfig cfg = small_config();
  const Weights w = lively_weights(cfg);
  const auto toks = sample_tokens();
  const auto clean = forward(w, toks);

  Mat noisy = clean.cache.node_out[0];
  SplitMix64 rng(5);
  for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] += 3.0 * rng.normal();
  HookSpec hooks;
  hooks.add(PatchNodeOutput{NodeId::input(), 0, 5, noisy});
  const Mat corrupted = forward(w, toks, hooks).logits;
  CHECK((corrupted - clean.logits).cwiseAbs().maxCoeff() > 1e-3);

  for (int l = 0; l <= cfg.n_layers; ++l) hooks.add(RestoreResidual{l, 0, 5, clean.cache.resid_pre[l]});
  CHECK((forward(w, toks, hooks).logits - clean.logits).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("edge patches are local to the destination slot") {
  const ModelConfig cfg = small_config();
  const Weights w = lively_weights(cfg);
  const auto toks = sample_tokens();
  const auto base = forward(w, toks);

  const Edge e{NodeId::attn(0, 0), NodeId::attn(1, 0), EdgeSlot::Q};
  HookSpec hooks;
  hooks.add(PatchEdgeInput{e, Mat::Constant(5, cfg.d_model, 0.7)});
  const auto patched = forward(w, toks, hooks);

  const auto& hb = base.cache.heads[1];
  const auto& hp = patched.cache.heads[1];
  CHECK((hp[0].in_q - hb[0].in_q).cwiseAbs().maxCoeff() > 1e-3);
  CHECK(hp[0].in_k.cwiseEqual(hb[0].in_k).all());
  CHECK(hp[0].in_v.cwiseEqual(hb[0].in_v).all());
  CHECK(hp[1].in_q.cwiseEqual(hb[1].in_q).all());
  CHECK(patched.cache.mlps[0].in.cwiseEqual(base.cache.mlps[0].in).all());
  // The patched slot reads resid - out_src + replacement.
  const Mat expect = hb[0].in_q - base.cache.out(cfg, e.src) + Mat::Constant(5, cfg.d_model, 0.7);
  CHECK((hp[0].in_q - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("loss_logit_diff arithmetic") {
  Mat logits = Mat::Zero(2, 4);
  logits(1, 2) = 2.0;
  logits(1, 3) = 0.5;
  CHECK(loss_logit_diff(logits, 2, 3) == doctest::Approx(1.5));
  CHECK(loss_logit_diff(logits, 1, 1) == 0.0);
  const Mat shifted = logits.array() + 17.25;
  CHECK(loss_logit_diff(shifted, 2, 3) == doctest::Approx(1.5));
  CHECK_THROWS_AS(loss_logit_diff(logits, 4, 0), std::out_of_range);
}

TEST_CASE("backward: identical targets give zero gradient") {
  const Weights w = lively_weights(small_config());
  const auto g = backward(w, sample_tokens(), LossSpec::logit_diff(3, 3));
  for (const Mat& m : g.slot_in) CHECK(m.cwiseAbs().maxCoeff() == 0.0);
  double total = 0.0;
  visit_params(*g.params, [&](const std::string&, std::span<const double> v) {
    for (double x : v) total += std::abs(x);
  });
  CHECK(total == 0.0);
}

TEST_CASE("backward: outputs with no downstream path get zero gradient") {
  const ModelConfig cfg = small_config();
  const Weights w = lively_weights(cfg);
  const auto g = backward(w, sample_tokens(), LossSpec::nll(4));
  // The last MLP is position-wise and only the final row reaches the loss.
  const Mat& gm = g.node_out[node_index(cfg, NodeId::mlp(cfg.n_layers - 1))];
  CHECK(gm.topRows(4).cwiseAbs().maxCoeff() == 0.0);
  CHECK(gm.row(4).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("backward rejects tokens outside the vocabulary") {
  const Weights w = lively_weights(small_config());
  CHECK_THROWS_AS(backward(w, sample_tokens(), LossSpec::nll(11)), std::out_of_range);
}

TEST_CASE("parameter gradients match central differences") {
  for (bool rms : {false, true}) {
    const Weights w = lively_weights(small_config(rms), 1.5);
    for (const auto& loss : {LossSpec::nll(4), LossSpec::logit_diff(4, 6)}) {
      const auto r = grad_check(w, sample_tokens(), loss, 100, 1e-4, 17);
      CHECK(r.n_checked == 100);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("grad_check on an all-zero model passes") {
  const Weights w = zero_weights(small_config());
  CHECK(grad_check(w, sample_tokens(), LossSpec::nll(2), 20, 1e-4).max_rel_error == 0.0);
}

TEST_CASE("larger finite-difference steps give larger error") {
  const Weights w = lively_weights(small_config());
  const auto coarse = grad_check(w, sample_tokens(), LossSpec::nll(4), 100, 1e-2, 3);
  const auto fine = grad_check(w, sample_tokens(), LossSpec::nll(4), 100, 1e-4, 3);
  CHECK(coarse.max_rel_error > fine.max_rel_error);
}

// Perturbing an edge replacement moves the destination slot input by the
// same amount, so dL/d(replacement) is exactly the slot gradient.
TEST_CASE("slot-input gradients match central differences through edge patches") {
  const ModelConfig cfg = small_config();
  const Weights w = lively_weights(cfg);
  const auto toks = sample_tokens();
  const auto loss = LossSpec::nll(5);
  const auto base = forward(w, toks);
  const auto g = backward(w, base.cache, {}, loss);

  const std::vector<Edge> edges{{NodeId::input(), NodeId::attn(0, 1), EdgeSlot::K},
                                {NodeId::attn(0, 0), NodeId::attn(1, 1), EdgeSlot::V},
                                {NodeId::mlp(0), NodeId::mlp(1), EdgeSlot::MlpIn},
                                {NodeId::attn(1, 0), NodeId::logits(), EdgeSlot::LogitsIn}};
  const double h = 1e-5;
  for (const Edge& e : edges) {
    const Mat& src = base.cache.out(cfg, e.src);
    const Mat& analytic = g.slot(cfg, e.dst, e.slot);
    for (int t = 0; t < 5; ++t) {
      for (int d = 0; d < cfg.d_model; d += 3) {
        Mat up = src, down = src;
        up(t, d) += h;
        down(t, d) -= h;
        HookSpec hu, hd;
        hu.add(PatchEdgeInput{e, up});
        hd.add(PatchEdgeInput{e, down});
        const double numeric =
            (evaluate_loss(forward(w, toks, hu).logits, loss) - evaluate_loss(forward(w, toks, hd).logits, loss)) /
            (2 * h);
        CHECK(analytic(t, d) == doctest::Approx(numeric).epsilon(1e-5).scale(1e-4));
      }
    }
  }
}

TEST_CASE("gradients under hooks match central differences") {
  const ModelConfig cfg = small_config();
  const Weights w = lively_weights(cfg);
  const auto toks = sample_tokens();
  const auto clean = forward(w, toks);

  HookSpec hooks;
  hooks.add(PatchEdgeInput{{NodeId::attn(0, 1), NodeId::mlp(1), EdgeSlot::MlpIn}, Mat::Constant(5, 8, -0.2)});
  hooks.add(ZeroHeadOutput{NodeId::attn(1, 0)});
  hooks.add(RestoreResidual{1, 2, 3, clean.cache.resid_pre[1].middleRows(2, 1)});
  hooks.add(AddToHeadValue{1, 1, 1, Vec::Constant(4, 0.5), 2.0, ValueTap::Value});
  const auto loss = LossSpec::logit_diff(3, 8);
  const auto fwd = forward(w, toks, hooks);
  const auto g = backward(w, fwd.cache, hooks, loss);

  Weights probe = w;
  std::vector<std::span<double>> blocks;
  visit_params(probe, [&](const std::string&, std::span<double> v) { blocks.push_back(v); });
  std::vector<std::span<const double>> grads;
  visit_params(*g.params, [&](const std::string&, std::span<const double> v) { grads.push_back(v); });

  SplitMix64 rng(11);
  const double h = 1e-5;
  double worst = 0.0;
  for (int s = 0; s < 150; ++s) {
    const auto b = rng.below(blocks.size());
    const auto i = rng.below(blocks[b].size());
    const double saved = blocks[b][i];
    blocks[b][i] = saved + h;
    const double up = evaluate_loss(forward(probe, toks, hooks).logits, loss);
    blocks[b][i] = saved - h;
    const double down = evaluate_loss(forward(probe, toks, hooks).logits, loss);
    blocks[b][i] = saved;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - grads[b][i]) / std::max({std::abs(numeric), std::abs(grads[b][i]), 1e-7}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("value injection taps") {
  const ModelConfig cfg = small_config();
  const Weights w = lively_weights(cfg);
  const auto toks = sample_tokens();
  const Mat base = forward(w, toks).logits;

  HookSpec zero_coef;
  zero_coef.add(AddToHeadValue{1, 0, 2, Vec::Constant(4, 3.0), 0.0, ValueTap::Value});
  CHECK(forward(w, toks, zero_coef).logits.cwiseEqual(base).all());

  for (auto tap : {ValueTap::Value, ValueTap::Mixed}) {
    HookSpec hooks;
    hooks.add(AddToHeadValue{1, 0, 2, Vec::Constant(4, 1.0), 1.0, tap});
    const auto f = forward(w, toks, hooks);
    CHECK((f.logits - base).cwiseAbs().maxCoeff() > 1e-6);
    if (tap == ValueTap::Mixed) {
      // Only row 2 of the head output moves.
      const auto clean = forward(w, toks);
      const Mat diff = f.cache.out(cfg, NodeId::attn(1, 0)) - clean.cache.out(cfg, NodeId::attn(1, 0));
      CHECK(diff.row(0).cwiseAbs().maxCoeff() == 0.0);
      CHECK(diff.row(3).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("greedy generation") {
  const Weights w = lively_weights(small_config());
  const std::vector<TokenId> prompt{1, 4, 7};
  CHECK(generate_greedy(w, prompt, 0) == prompt);
  const auto a = generate_greedy(w, prompt, 3);
  CHECK(a.size() == 6);
  CHECK(a == generate_greedy(w, prompt, 3));
  const Mat logits = forward(w, prompt).logits;
  CHECK(a[3] == argmax_token(logits.row(2)));
  CHECK_THROWS_AS(generate_greedy(w, prompt, 4), std::length_error);
}

TEST_CASE("argmax breaks ties toward the lowest id") {
  RowVec row(5);
  row << 0.1, 0.9, 0.3, 0.9, 0.9;
  CHECK(argmax_token(row) == 1);
}

TEST_CASE("init is float-representable and seeded") {
  const ModelConfig cfg = small_config();
  const Weights a = init_weights(cfg);
  const Weights b = init_weights(cfg);
  CHECK(a.tok_emb.cwiseEqual(b.tok_emb).all());
  visit_params(a, [](const std::string&, std::span<const double> v) {
    for (double x : v) REQUIRE(static_cast<double>(static_cast<float>(x)) == x);
  });
  CHECK(param_count(cfg) > 0);
  CHECK(std::abs(final_logprob(forward(a, sample_tokens()).logits, 0)) < 10.0);
}

TEST_CASE("config validation") {
  ModelConfig cfg = small_config();
  cfg.d_head = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.n_layers = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("node labels and indices") {
  const ModelConfig cfg = small_config();
  CHECK(NodeId::attn(15, 0).label() == "a15.h0");
  CHECK(NodeId::parse("a3.h1") == NodeId::attn(3, 1));
  CHECK(NodeId::parse("m2") == NodeId::mlp(2));
  CHECK(NodeId::parse("input") == NodeId::input());
  CHECK_THROWS_AS(NodeId::parse("a1"), std::invalid_argument);
  for (int i = 0; i < node_count(cfg); ++i) CHECK(node_index(cfg, node_at(cfg, i)) == i);
  CHECK(node_at(cfg, 3) == NodeId::mlp(0));
  CHECK(slot_count(cfg) == 2 * (3 * 2 + 1) + 1);
}
