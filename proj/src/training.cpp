#include "tempcircuit/training.hpp"

#include "tempcircuit/format.hpp"
#include "tempcircuit/parallel.hpp"
#include "tempcircuit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tempcircuit {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || steps < 0 || batch_size < 1 || eval_every < 1) {
    throw std::invalid_argument("train config: lr, batch_size and eval_every must be positive, steps >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0) || weight_decay < 0.0) {
    throw std::invalid_argument("train config: bad Adam hyperparameters");
  }
  for (const auto& [style, weight] : template_weights) {
    if (weight < 0.0) throw std::invalid_argument("train config: negative template weight");
  }
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json weights = nlohmann::json::object();
  for (const auto& [style, weight] : cfg.template_weights) weights[std::string(style_name(style))] = weight;
  return {{"lr", cfg.lr},
          {"schedule", cfg.schedule == LrSchedule::Cosine ? "cosine" : "constant"},
          {"steps", cfg.steps},
          {"batch_size", cfg.batch_size},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"adam_eps", cfg.adam_eps},
          {"weight_decay", cfg.weight_decay},
          {"template_weights", weights},
          {"eval_every", cfg.eval_every},
          {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig cfg;
    cfg.lr = j.value("lr", cfg.lr);
    cfg.steps = j.value("steps", cfg.steps);
    if (j.contains("schedule")) {
      const auto name = j.at("schedule").get<std::string>();
      if (name != "cosine" && name != "constant") throw ParseError("train config: unknown schedule " + name);
      cfg.schedule = name == "cosine" ? LrSchedule::Cosine : LrSchedule::Constant;
    }
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("template_weights")) {
      for (const auto& [name, weight] : j.at("template_weights").items()) {
        cfg.template_weights[parse_style(name)] = weight.get<double>();
      }
    }
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what());
  }
}

ModelConfig model_config_for(const FactBase& fb, const Tokenizer& tok, ModelConfig base) {
  base.vocab_size = tok.size();
  std::size_t longest = 0;
  for (const auto& p : enumerate_prompts(fb, tok)) longest = std::max(longest, p.tokens.size());
  // Room for the appended object placeholder and two generated tokens.
  base.max_seq_len = std::max(base.max_seq_len, static_cast<int>(longest) + 2);
  base.validate();
  return base;
}

double eval_accuracy(const Weights& w, std::span<const LabeledPrompt> prompts) {
  if (prompts.empty()) throw std::invalid_argument("eval_accuracy: empty prompt set");
  std::vector<char> hit(prompts.size(), 0);
  parallel_for(prompts.size(), [&](std::size_t i) {
    const Mat logits = forward(w, prompts[i].tokens).logits;
    hit[i] = argmax_token(logits.row(logits.rows() - 1)) == prompts[i].answer;
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(prompts.size());
}

namespace {

struct AdamState {
  Weights m;
  Weights v;
  int t = 0;
};

void adam_step(Weights& w, const Weights& grad, AdamState& s, const TrainConfig& cfg, double lr) {
  ++s.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, s.t);
  const double c2 = 1.0 - std::pow(cfg.beta2, s.t);
  std::vector<std::span<const double>> g;
  visit_params(grad, [&](const std::string&, std::span<const double> v) { g.push_back(v); });
  std::vector<std::span<double>> m, v;
  visit_params(s.m, [&](const std::string&, std::span<double> x) { m.push_back(x); });
  visit_params(s.v, [&](const std::string&, std::span<double> x) { v.push_back(x); });
  std::size_t b = 0;
  visit_params(w, [&](const std::string&, std::span<double> p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[b][i] = cfg.beta1 * m[b][i] + (1.0 - cfg.beta1) * g[b][i];
      v[b][i] = cfg.beta2 * v[b][i] + (1.0 - cfg.beta2) * g[b][i] * g[b][i];
      const double update = (m[b][i] / c1) / (std::sqrt(v[b][i] / c2) + cfg.adam_eps);
      p[i] -= lr * (update + cfg.weight_decay * p[i]);
    }
    ++b;
  });
}

void accumulate(Weights& into, const Weights& g, double scale) {
  std::vector<std::span<const double>> src;
  visit_params(g, [&](const std::string&, std::span<const double> v) { src.push_back(v); });
  std::size_t b = 0;
  visit_params(into, [&](const std::string&, std::span<double> dst) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[b][i];
    ++b;
  });
}

}  // namespace

TrainResult train(const ModelConfig& model_config, const FactBase& fb, const TrainConfig& cfg) {
  cfg.validate();
  const Tokenizer tok = build_tokenizer(fb);
  if (model_config.vocab_size < tok.size()) throw std::invalid_argument("train: vocabulary does not cover the fact base");
  const auto prompts = enumerate_prompts(fb, tok);
  for (const auto& p : prompts) {
    if (static_cast<int>(p.tokens.size()) > model_config.max_seq_len) {
      throw std::invalid_argument("train: prompt longer than max_seq_len");
    }
  }

  std::vector<LabeledPrompt> temporal, invariant;
  for (const auto& p : prompts) (p.kind == FactKind::Temporal ? temporal : invariant).push_back(p);

  // Sampling distribution: each style gets its weight, split evenly over its prompts.
  std::map<TemplateStyle, int> per_style;
  for (const auto& p : prompts) ++per_style[p.style];
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& p : prompts) {
    const auto it = cfg.template_weights.find(p.style);
    const double weight = it == cfg.template_weights.end() ? 1.0 : it->second;
    total += weight / per_style[p.style];
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw std::invalid_argument("train: all template weights are zero");

  TrainResult result;
  result.weights = init_weights(model_config);
  AdamState adam{zero_weights(model_config), zero_weights(model_config), 0};
  SplitMix64 rng(derive_seed(cfg.seed, 2));

  auto record = [&](int step, double loss) {
    result.history.push_back({step, loss, eval_accuracy(result.weights, temporal), eval_accuracy(result.weights, invariant)});
  };

  double window_loss = 0.0;
  int window_steps = 0;
  std::vector<std::size_t> batch(cfg.batch_size);
  std::vector<Gradients> grads(cfg.batch_size);
  for (int step = 1; step <= cfg.steps; ++step) {
    for (auto& idx : batch) {
      const double r = rng.uniform() * total;
      idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
      idx = std::min(idx, prompts.size() - 1);
    }
    parallel_for(batch.size(), [&](std::size_t i) {
      grads[i] = backward(result.weights, prompts[batch[i]].tokens, LossSpec::nll(prompts[batch[i]].answer));
    });

    Weights sum = zero_weights(model_config);
    double loss = 0.0;
    for (const auto& g : grads) {
      loss += g.loss;
      accumulate(sum, *g.params, 1.0 / cfg.batch_size);
    }
    loss /= cfg.batch_size;
    if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at step " + std::to_string(step));
    const double lr = cfg.schedule == LrSchedule::Cosine
                          ? 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * (step - 1) / cfg.steps))
                          : cfg.lr;
    adam_step(result.weights, sum, adam, cfg, lr);
    if (!all_finite(result.weights)) throw NumericError("train: non-finite weights after step " + std::to_string(step));

    result.step_losses.push_back(loss);
    window_loss += loss;
    ++window_steps;
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      record(step, window_loss / window_steps);
      window_loss = 0.0;
      window_steps = 0;
    }
  }

  round_to_float(result.weights);
  if (cfg.steps == 0) record(0, std::nan(""));
  result.temporal_acc = eval_accuracy(result.weights, temporal);
  result.invariant_acc = eval_accuracy(result.weights, invariant);
  return result;
}

void write_metrics_csv(std::ostream& out, std::span<const TrainMetrics> history) {
  out << "step,loss,temporal_acc,invariant_acc\n";
  for (const auto& m : history) {
    out << m.step << ',' << fmt_num(m.loss) << ',' << fmt_num(m.temporal_acc) << ',' << fmt_num(m.invariant_acc) << '\n';
  }
}

}  // namespace tempcircuit
