#include "tempcircuit/model.hpp"

#include "tempcircuit/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace tempcircuit {

namespace {

constexpr double kRmsEps = 1e-5;

Mat rms_norm(const Mat& x) {
  Mat y(x.rows(), x.cols());
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double scale = 1.0 / std::sqrt(x.row(r).squaredNorm() * inv_d + kRmsEps);
    y.row(r) = x.row(r) * scale;
  }
  return y;
}

Mat rms_norm_backward(const Mat& x, const Mat& gy) {
  Mat gx(x.rows(), x.cols());
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double scale = 1.0 / std::sqrt(x.row(r).squaredNorm() * inv_d + kRmsEps);
    const double proj = x.row(r).dot(gy.row(r));
    gx.row(r) = scale * gy.row(r) - (scale * scale * scale * proj * inv_d) * x.row(r);
  }
  return gx;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * kInvSqrt2);
  return cdf + x * pdf;
}

// Directives grouped by what they touch, so the passes can look them up.
struct HookIndex {
  std::vector<std::vector<const PatchEdgeInput*>> edges_into_slot;
  std::vector<std::vector<const PatchNodeOutput*>> node_patches;
  std::vector<char> zeroed;
  std::vector<std::vector<const AddToHeadValue*>> value_adds;
  std::vector<std::vector<const RestoreResidual*>> restores;

  HookIndex(const ModelConfig& cfg, const HookSpec& hooks)
      : edges_into_slot(slot_count(cfg)),
        node_patches(node_count(cfg)),
        zeroed(node_count(cfg), 0),
        value_adds(static_cast<std::size_t>(cfg.n_layers * cfg.n_heads)),
        restores(cfg.n_layers + 1) {
    for (const auto& hook : hooks.directives) {
      if (const auto* z = std::get_if<ZeroHeadOutput>(&hook)) {
        zeroed[node_index(cfg, z->node)] = 1;
      } else if (const auto* p = std::get_if<PatchNodeOutput>(&hook)) {
        node_patches[node_index(cfg, p->node)].push_back(p);
      } else if (const auto* e = std::get_if<PatchEdgeInput>(&hook)) {
        edges_into_slot[slot_index(cfg, e->edge.dst, e->edge.slot)].push_back(e);
      } else if (const auto* a = std::get_if<AddToHeadValue>(&hook)) {
        value_adds[a->layer * cfg.n_heads + a->head].push_back(a);
      } else if (const auto* r = std::get_if<RestoreResidual>(&hook)) {
        restores[r->layer].push_back(r);
      }
    }
  }

  void apply_output_hooks(int node, Mat& out) const {
    if (zeroed[node]) out.setZero();
    for (const auto* p : node_patches[node]) out.middleRows(p->pos_begin, p->pos_end - p->pos_begin) = p->values;
  }

  // Rows of a node's output that are constants under the hooks.
  void mask_fixed_rows(int node, Mat& grad) const {
    if (zeroed[node]) {
      grad.setZero();
      return;
    }
    for (const auto* p : node_patches[node]) grad.middleRows(p->pos_begin, p->pos_end - p->pos_begin).setZero();
  }

  void apply_restores(int layer, Mat& resid) const {
    for (const auto* r : restores[layer]) resid.middleRows(r->pos_begin, r->pos_end - r->pos_begin) = r->values;
  }
};

void check_positions(int begin, int end, int seq_len, const char* what) {
  if (begin < 0 || end > seq_len || begin >= end) {
    throw std::out_of_range(std::string(what) + ": position range outside sequence");
  }
}

void check_tokens(const ModelConfig& cfg, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_seq_len) throw std::out_of_range("forward: sequence exceeds max_seq_len");
  for (TokenId t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) throw std::out_of_range("forward: token id " + std::to_string(t) + " out of range");
  }
}

void check_target(const ModelConfig& cfg, TokenId t) {
  if (t < 0 || t >= cfg.vocab_size) throw std::out_of_range("loss token " + std::to_string(t) + " outside vocabulary");
}

template <typename Fn>
void for_each_block(const ModelConfig& cfg, Fn&& fn) {
  // fn(name, rows, cols, fan_in)
  fn(std::string("tok_emb"), cfg.vocab_size, cfg.d_model, cfg.d_model);
  fn(std::string("pos_emb"), cfg.max_seq_len, cfg.d_model, cfg.d_model);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    for (int h = 0; h < cfg.n_heads; ++h) {
      const std::string ph = p + "attn." + std::to_string(h) + ".";
      fn(ph + "wq", cfg.d_model, cfg.d_head, cfg.d_model);
      fn(ph + "wk", cfg.d_model, cfg.d_head, cfg.d_model);
      fn(ph + "wv", cfg.d_model, cfg.d_head, cfg.d_model);
      fn(ph + "wo", cfg.d_head, cfg.d_model, cfg.d_head);
    }
    fn(p + "mlp.w_in", cfg.d_model, cfg.d_mlp, cfg.d_model);
    fn(p + "mlp.b_in", 1, cfg.d_mlp, 0);
    fn(p + "mlp.w_out", cfg.d_mlp, cfg.d_model, cfg.d_mlp);
    fn(p + "mlp.b_out", 1, cfg.d_model, 0);
  }
  fn(std::string("unembed"), cfg.d_model, cfg.vocab_size, cfg.d_model);
}

template <typename W, typename Fn>
void visit_impl(W& w, Fn&& fn) {
  fn(std::string("tok_emb"), w.tok_emb.data(), w.tok_emb.size());
  fn(std::string("pos_emb"), w.pos_emb.data(), w.pos_emb.size());
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& layer = w.layers[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      auto& hw = layer.heads[h];
      const std::string ph = p + "attn." + std::to_string(h) + ".";
      fn(ph + "wq", hw.wq.data(), hw.wq.size());
      fn(ph + "wk", hw.wk.data(), hw.wk.size());
      fn(ph + "wv", hw.wv.data(), hw.wv.size());
      fn(ph + "wo", hw.wo.data(), hw.wo.size());
    }
    fn(p + "mlp.w_in", layer.w_in.data(), layer.w_in.size());
    fn(p + "mlp.b_in", layer.b_in.data(), layer.b_in.size());
    fn(p + "mlp.w_out", layer.w_out.data(), layer.w_out.size());
    fn(p + "mlp.b_out", layer.b_out.data(), layer.b_out.size());
  }
  fn(std::string("unembed"), w.unembed.data(), w.unembed.size());
}

}  // namespace

Weights zero_weights(const ModelConfig& cfg) {
  cfg.validate();
  Weights w;
  w.config = cfg;
  w.tok_emb = Mat::Zero(cfg.vocab_size, cfg.d_model);
  w.pos_emb = Mat::Zero(cfg.max_seq_len, cfg.d_model);
  w.layers.resize(cfg.n_layers);
  for (auto& layer : w.layers) {
    layer.heads.resize(cfg.n_heads);
    for (auto& hw : layer.heads) {
      hw.wq = Mat::Zero(cfg.d_model, cfg.d_head);
      hw.wk = Mat::Zero(cfg.d_model, cfg.d_head);
      hw.wv = Mat::Zero(cfg.d_model, cfg.d_head);
      hw.wo = Mat::Zero(cfg.d_head, cfg.d_model);
    }
    layer.w_in = Mat::Zero(cfg.d_model, cfg.d_mlp);
    layer.b_in = RowVec::Zero(cfg.d_mlp);
    layer.w_out = Mat::Zero(cfg.d_mlp, cfg.d_model);
    layer.b_out = RowVec::Zero(cfg.d_model);
  }
  w.unembed = Mat::Zero(cfg.d_model, cfg.vocab_size);
  return w;
}

Weights init_weights(const ModelConfig& cfg) {
  Weights w = zero_weights(cfg);
  SplitMix64 rng(cfg.seed);
  std::vector<int> fan_ins;
  for_each_block(cfg, [&](const std::string&, int, int, int fan_in) { fan_ins.push_back(fan_in); });
  std::size_t block = 0;
  visit_params(w, [&](const std::string&, std::span<double> values) {
    const int fan_in = fan_ins[block++];
    if (fan_in == 0) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : values) v = rng.uniform(-bound, bound);
  });
  round_to_float(w);
  return w;
}

void visit_params(Weights& w, const std::function<void(const std::string&, std::span<double>)>& fn) {
  visit_impl(w, [&](const std::string& name, double* data, Eigen::Index n) {
    fn(name, std::span<double>(data, static_cast<std::size_t>(n)));
  });
}

void visit_params(const Weights& w, const std::function<void(const std::string&, std::span<const double>)>& fn) {
  visit_impl(w, [&](const std::string& name, const double* data, Eigen::Index n) {
    fn(name, std::span<const double>(data, static_cast<std::size_t>(n)));
  });
}

std::size_t param_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for_each_block(cfg, [&](const std::string&, int rows, int cols, int) { n += static_cast<std::size_t>(rows) * cols; });
  return n;
}

void round_to_float(Weights& w) {
  visit_params(w, [](const std::string&, std::span<double> values) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
  });
}

bool all_finite(const Weights& w) {
  bool ok = true;
  visit_params(w, [&](const std::string&, std::span<const double> values) {
    for (double v : values) ok = ok && std::isfinite(v);
  });
  return ok;
}

void validate_hooks(const ModelConfig& cfg, int seq_len, const HookSpec& hooks) {
  for (const auto& hook : hooks.directives) {
    if (const auto* z = std::get_if<ZeroHeadOutput>(&hook)) {
      if (!node_exists(cfg, z->node) || z->node.kind == NodeKind::Logits) {
        throw std::out_of_range("ZeroHeadOutput: no such node " + z->node.label());
      }
    } else if (const auto* p = std::get_if<PatchNodeOutput>(&hook)) {
      if (!node_exists(cfg, p->node) || p->node.kind == NodeKind::Logits) {
        throw std::out_of_range("PatchNodeOutput: no such node " + p->node.label());
      }
      check_positions(p->pos_begin, p->pos_end, seq_len, "PatchNodeOutput");
      if (p->values.rows() != p->pos_end - p->pos_begin || p->values.cols() != cfg.d_model) {
        throw std::invalid_argument("PatchNodeOutput: values shape mismatch");
      }
    } else if (const auto* e = std::get_if<PatchEdgeInput>(&hook)) {
      if (!edge_is_legal(cfg, e->edge)) {
        throw std::out_of_range("PatchEdgeInput: no such edge " + e->edge.src.label() + "->" + e->edge.dst.label());
      }
      if (e->replacement.rows() != seq_len || e->replacement.cols() != cfg.d_model) {
        throw std::invalid_argument("PatchEdgeInput: replacement shape mismatch");
      }
    } else if (const auto* a = std::get_if<AddToHeadValue>(&hook)) {
      if (!node_exists(cfg, NodeId::attn(a->layer, a->head))) throw std::out_of_range("AddToHeadValue: no such head");
      check_positions(a->position, a->position + 1, seq_len, "AddToHeadValue");
      if (a->vector.size() != cfg.d_head) throw std::invalid_argument("AddToHeadValue: vector must have d_head entries");
    } else if (const auto* r = std::get_if<RestoreResidual>(&hook)) {
      if (r->layer < 0 || r->layer > cfg.n_layers) throw std::out_of_range("RestoreResidual: layer out of range");
      check_positions(r->pos_begin, r->pos_end, seq_len, "RestoreResidual");
      if (r->values.rows() != r->pos_end - r->pos_begin || r->values.cols() != cfg.d_model) {
        throw std::invalid_argument("RestoreResidual: values shape mismatch");
      }
    }
  }
}

ForwardResult forward(const Weights& w, std::span<const TokenId> tokens, const HookSpec& hooks) {
  const ModelConfig& cfg = w.config;
  check_tokens(cfg, tokens);
  const int seq = static_cast<int>(tokens.size());
  validate_hooks(cfg, seq, hooks);
  const HookIndex index(cfg, hooks);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));

  ActivationCache c;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.node_out.resize(node_count(cfg));
  c.resid_pre.resize(cfg.n_layers + 1);
  c.heads.resize(cfg.n_layers);
  c.mlps.resize(cfg.n_layers);

  auto slot_input = [&](const Mat& resid, int slot) {
    Mat x = resid;
    for (const auto* e : index.edges_into_slot[slot]) {
      x += e->replacement - c.node_out[node_index(cfg, e->edge.src)];
    }
    return x;
  };
  auto normed = [&](const Mat& x) { return cfg.use_rmsnorm ? rms_norm(x) : x; };

  Mat x0(seq, cfg.d_model);
  for (int t = 0; t < seq; ++t) x0.row(t) = w.tok_emb.row(tokens[t]) + w.pos_emb.row(t);
  index.apply_output_hooks(0, x0);
  c.node_out[0] = x0;
  Mat resid = std::move(x0);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& lw = w.layers[l];
    index.apply_restores(l, resid);
    c.resid_pre[l] = resid;

    c.heads[l].resize(cfg.n_heads);
    Mat head_sum = Mat::Zero(seq, cfg.d_model);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const NodeId node = NodeId::attn(l, h);
      const HeadWeights& hw = lw.heads[h];
      HeadCache& hc = c.heads[l][h];
      hc.in_q = slot_input(resid, slot_index(cfg, node, EdgeSlot::Q));
      hc.in_k = slot_input(resid, slot_index(cfg, node, EdgeSlot::K));
      hc.in_v = slot_input(resid, slot_index(cfg, node, EdgeSlot::V));
      hc.q = normed(hc.in_q) * hw.wq;
      hc.k = normed(hc.in_k) * hw.wk;
      hc.v = normed(hc.in_v) * hw.wv;
      const auto& adds = index.value_adds[l * cfg.n_heads + h];
      for (const auto* a : adds) {
        if (a->tap == ValueTap::Value) hc.v.row(a->position) += a->coefficient * a->vector.transpose();
      }

      const Mat scores = (hc.q * hc.k.transpose()) * scale;
      hc.attn = Mat::Zero(seq, seq);
      for (int i = 0; i < seq; ++i) {
        const double m = scores.row(i).head(i + 1).maxCoeff();
        double total = 0.0;
        for (int j = 0; j <= i; ++j) {
          const double e = std::exp(scores(i, j) - m);
          hc.attn(i, j) = e;
          total += e;
        }
        hc.attn.row(i).head(i + 1) /= total;
      }
      hc.z = hc.attn * hc.v;
      for (const auto* a : adds) {
        if (a->tap == ValueTap::Mixed) hc.z.row(a->position) += a->coefficient * a->vector.transpose();
      }

      const int ni = node_index(cfg, node);
      Mat out = hc.z * hw.wo;
      index.apply_output_hooks(ni, out);
      head_sum += out;
      c.node_out[ni] = std::move(out);
    }
    resid += head_sum;

    const NodeId mlp = NodeId::mlp(l);
    MlpCache& mc = c.mlps[l];
    mc.in = slot_input(resid, slot_index(cfg, mlp, EdgeSlot::MlpIn));
    mc.pre = (normed(mc.in) * lw.w_in).rowwise() + lw.b_in;
    mc.act = mc.pre.unaryExpr([](double v) { return gelu(v); });
    Mat out = (mc.act * lw.w_out).rowwise() + lw.b_out;
    const int mi = node_index(cfg, mlp);
    index.apply_output_hooks(mi, out);
    resid += out;
    c.node_out[mi] = std::move(out);
  }

  index.apply_restores(cfg.n_layers, resid);
  c.resid_pre[cfg.n_layers] = resid;
  c.logits_in = slot_input(resid, slot_index(cfg, NodeId::logits(), EdgeSlot::LogitsIn));
  c.logits = normed(c.logits_in) * w.unembed;

  ForwardResult result;
  result.logits = c.logits;
  result.cache = std::move(c);
  return result;
}

RowVec log_softmax(const Eigen::Ref<const RowVec>& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

double loss_logit_diff(const Mat& logits, TokenId target, TokenId foil) {
  if (logits.rows() == 0) throw std::invalid_argument("loss_logit_diff: empty logits");
  if (target < 0 || target >= logits.cols() || foil < 0 || foil >= logits.cols()) {
    throw std::out_of_range("loss_logit_diff: token outside vocabulary");
  }
  const auto last = logits.rows() - 1;
  return logits(last, target) - logits(last, foil);
}

double loss_nll(const Mat& logits, TokenId target) {
  if (logits.rows() == 0) throw std::invalid_argument("loss_nll: empty logits");
  if (target < 0 || target >= logits.cols()) throw std::out_of_range("loss_nll: token outside vocabulary");
  return -log_softmax(logits.row(logits.rows() - 1))(target);
}

double evaluate_loss(const Mat& logits, const LossSpec& loss) {
  return loss.kind == LossSpec::Kind::LogitDiff ? loss_logit_diff(logits, loss.target, loss.foil)
                                                : loss_nll(logits, loss.target);
}

Gradients backward(const Weights& w, const ActivationCache& cache, const HookSpec& hooks, const LossSpec& loss,
                   const BackwardOptions& opts) {
  const ModelConfig& cfg = w.config;
  check_target(cfg, loss.target);
  if (loss.kind == LossSpec::Kind::LogitDiff) check_target(cfg, loss.foil);
  const int seq = cache.seq_len();
  const int last = seq - 1;
  const HookIndex index(cfg, hooks);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
  auto normed = [&](const Mat& x) { return cfg.use_rmsnorm ? rms_norm(x) : x; };
  auto norm_back = [&](const Mat& x, Mat g) { return cfg.use_rmsnorm ? rms_norm_backward(x, g) : g; };

  Gradients g;
  g.loss = evaluate_loss(cache.logits, loss);
  g.node_out.resize(node_count(cfg));
  g.slot_in.resize(slot_count(cfg));
  if (opts.param_grads) g.params = zero_weights(cfg);
  Weights* pg = opts.param_grads ? &*g.params : nullptr;

  RowVec dlogits = RowVec::Zero(cfg.vocab_size);
  if (loss.kind == LossSpec::Kind::LogitDiff) {
    dlogits(loss.target) += 1.0;
    dlogits(loss.foil) -= 1.0;
  } else {
    dlogits = log_softmax(cache.logits.row(last)).array().exp();
    dlogits(loss.target) -= 1.0;
  }

  // Gradient reaching an upstream node through a patched edge is removed
  // from that node's accumulated gradient when we get to it.
  std::vector<Mat> detached(node_count(cfg));
  auto detach_patched_edges = [&](int slot, const Mat& gslot) {
    for (const auto* e : index.edges_into_slot[slot]) {
      Mat& d = detached[node_index(cfg, e->edge.src)];
      if (d.size() == 0) d = Mat::Zero(seq, cfg.d_model);
      d += gslot;
    }
  };
  auto cut_restored_rows = [&](int layer, Mat& acc) {
    for (const auto* r : index.restores[layer]) {
      const int n = r->pos_end - r->pos_begin;
      acc.middleRows(r->pos_begin, n).setZero();
      for (Mat& d : detached) {
        if (d.size() != 0) d.middleRows(r->pos_begin, n).setZero();
      }
    }
  };
  auto output_grad = [&](int ni, const Mat& acc) {
    Mat go = acc;
    if (detached[ni].size() != 0) go -= detached[ni];
    g.node_out[ni] = go;
    index.mask_fixed_rows(ni, go);
    return go;
  };

  {
    const Mat n_final = normed(cache.logits_in);
    if (pg) pg->unembed += n_final.row(last).transpose() * dlogits;
    Mat g_n = Mat::Zero(seq, cfg.d_model);
    g_n.row(last) = dlogits * w.unembed.transpose();
    const int slot = slot_index(cfg, NodeId::logits(), EdgeSlot::LogitsIn);
    g.slot_in[slot] = norm_back(cache.logits_in, std::move(g_n));
    detach_patched_edges(slot, g.slot_in[slot]);
  }
  Mat acc = g.slot_in[slot_index(cfg, NodeId::logits(), EdgeSlot::LogitsIn)];
  cut_restored_rows(cfg.n_layers, acc);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerWeights& lw = w.layers[l];
    {
      const NodeId mlp = NodeId::mlp(l);
      const MlpCache& mc = cache.mlps[l];
      const Mat go = output_grad(node_index(cfg, mlp), acc);
      const Mat g_act = go * lw.w_out.transpose();
      const Mat g_pre = g_act.cwiseProduct(mc.pre.unaryExpr([](double v) { return gelu_grad(v); }));
      if (pg) {
        LayerWeights& gl = pg->layers[l];
        gl.b_out += go.colwise().sum();
        gl.w_out += mc.act.transpose() * go;
        gl.w_in += normed(mc.in).transpose() * g_pre;
        gl.b_in += g_pre.colwise().sum();
      }
      const int slot = slot_index(cfg, mlp, EdgeSlot::MlpIn);
      g.slot_in[slot] = norm_back(mc.in, g_pre * lw.w_in.transpose());
      detach_patched_edges(slot, g.slot_in[slot]);
      acc += g.slot_in[slot];
    }

    Mat heads_in = Mat::Zero(seq, cfg.d_model);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const NodeId node = NodeId::attn(l, h);
      const HeadWeights& hw = lw.heads[h];
      const HeadCache& hc = cache.heads[l][h];
      const Mat go = output_grad(node_index(cfg, node), acc);
      const Mat g_z = go * hw.wo.transpose();
      const Mat g_attn = g_z * hc.v.transpose();
      const Mat g_v = hc.attn.transpose() * g_z;
      Mat g_scores = Mat::Zero(seq, seq);
      for (int i = 0; i < seq; ++i) {
        const double dot = g_attn.row(i).head(i + 1).dot(hc.attn.row(i).head(i + 1));
        for (int j = 0; j <= i; ++j) g_scores(i, j) = hc.attn(i, j) * (g_attn(i, j) - dot) * scale;
      }
      const Mat g_q = g_scores * hc.k;
      const Mat g_k = g_scores.transpose() * hc.q;
      if (pg) {
        HeadWeights& gh = pg->layers[l].heads[h];
        gh.wo += hc.z.transpose() * go;
        gh.wq += normed(hc.in_q).transpose() * g_q;
        gh.wk += normed(hc.in_k).transpose() * g_k;
        gh.wv += normed(hc.in_v).transpose() * g_v;
      }
      const int sq = slot_index(cfg, node, EdgeSlot::Q);
      const int sk = slot_index(cfg, node, EdgeSlot::K);
      const int sv = slot_index(cfg, node, EdgeSlot::V);
      g.slot_in[sq] = norm_back(hc.in_q, g_q * hw.wq.transpose());
      g.slot_in[sk] = norm_back(hc.in_k, g_k * hw.wk.transpose());
      g.slot_in[sv] = norm_back(hc.in_v, g_v * hw.wv.transpose());
      for (int s : {sq, sk, sv}) {
        detach_patched_edges(s, g.slot_in[s]);
        heads_in += g.slot_in[s];
      }
    }
    acc += heads_in;
    cut_restored_rows(l, acc);
  }

  const Mat go = output_grad(0, acc);
  if (pg) {
    for (int t = 0; t < seq; ++t) {
      pg->tok_emb.row(cache.tokens[t]) += go.row(t);
      pg->pos_emb.row(t) += go.row(t);
    }
  }

  if (!std::isfinite(g.loss)) throw NumericError("backward: non-finite loss");
  for (const Mat& m : g.slot_in) {
    if (!m.allFinite()) throw NumericError("backward: non-finite slot gradient");
  }
  if (pg && !all_finite(*pg)) throw NumericError("backward: non-finite parameter gradient");
  return g;
}

Gradients backward(const Weights& w, std::span<const TokenId> tokens, const LossSpec& loss,
                   const BackwardOptions& opts) {
  const auto fwd = forward(w, tokens);
  return backward(w, fwd.cache, HookSpec{}, loss, opts);
}

GradCheckResult grad_check(const Weights& w, std::span<const TokenId> tokens, const LossSpec& loss, int n_samples,
                           double h, std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("grad_check: n_samples must be >= 1");
  const Gradients g = backward(w, tokens, loss);

  std::vector<std::span<double>> blocks;
  Weights probe = w;
  visit_params(probe, [&](const std::string&, std::span<double> values) { blocks.push_back(values); });
  std::vector<std::span<const double>> grad_blocks;
  visit_params(*g.params, [&](const std::string&, std::span<const double> values) { grad_blocks.push_back(values); });

  // Pick a block uniformly, then a coordinate within it, so small blocks
  // (biases, position rows) get sampled as often as the big matrices.
  SplitMix64 rng(seed);
  GradCheckResult result;
  for (int s = 0; s < n_samples; ++s) {
    const std::size_t b = rng.below(blocks.size());
    const std::size_t i = rng.below(blocks[b].size());
    double& x = blocks[b][i];
    const double saved = x;
    x = saved + h;
    const double up = evaluate_loss(forward(probe, tokens).logits, loss);
    x = saved - h;
    const double down = evaluate_loss(forward(probe, tokens).logits, loss);
    x = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grad_blocks[b][i];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-7});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(numeric - analytic) / denom);
    ++result.n_checked;
  }
  return result;
}

TokenId argmax_token(const Eigen::Ref<const RowVec>& row) {
  TokenId best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = static_cast<TokenId>(i);
  }
  return best;
}

std::vector<TokenId> generate_greedy(const Weights& w, std::span<const TokenId> prompt, int max_new_tokens,
                                     const HookSpec& hooks) {
  if (max_new_tokens < 0) throw std::invalid_argument("generate_greedy: negative max_new_tokens");
  if (static_cast<int>(prompt.size()) + max_new_tokens > w.config.max_seq_len) {
    throw std::length_error("generate_greedy: prompt plus new tokens exceeds max_seq_len");
  }
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  for (int step = 0; step < max_new_tokens; ++step) {
    const auto fwd = forward(w, seq, hooks);
    seq.push_back(argmax_token(fwd.logits.row(fwd.logits.rows() - 1)));
  }
  return seq;
}

}  // namespace tempcircuit
