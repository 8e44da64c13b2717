#pragma once

#include "tempcircuit/model.hpp"
#include "tempcircuit/rng.hpp"

#include <vector>

namespace tc_test {

using namespace tempcircuit;

// A 2-layer model small enough for exhaustive finite differences.
inline ModelConfig small_config(bool rmsnorm = false) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.d_head = 4;
  cfg.d_mlp = 12;
  cfg.vocab_size = 11;
  cfg.max_seq_len = 6;
  cfg.use_rmsnorm = rmsnorm;
  cfg.seed = 99;
  return cfg;
}

// init_weights draws biases as zero and the +-1/sqrt(fan_in) scale keeps
// activations small; scaling up makes attention patterns non-uniform.
inline Weights lively_weights(const ModelConfig& cfg, double gain = 2.5) {
  Weights w = init_weights(cfg);
  SplitMix64 rng(cfg.seed + 1);
  visit_params(w, [&](const std::string& name, std::span<double> values) {
    for (double& v : values) {
      v = name.ends_with("b_in") || name.ends_with("b_out") ? rng.uniform(-0.3, 0.3) : v * gain;
    }
  });
  return w;
}

inline std::vector<TokenId> sample_tokens() { return {1, 4, 7, 2, 9}; }

}  // namespace tc_test
