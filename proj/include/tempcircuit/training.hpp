#pragma once

#include "tempcircuit/dataset.hpp"
#include "tempcircuit/model.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <ostream>
#include <vector>

namespace tempcircuit {

enum class LrSchedule : std::uint8_t { Constant, Cosine };

struct TrainConfig {
  double lr = 1e-3;
  LrSchedule schedule = LrSchedule::Cosine;  // cosine decays lr to 0 at the last step
  int steps = 3000;
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  // Relative sampling weight of each template style; missing styles get 1.
  std::map<TemplateStyle, double> template_weights;
  int eval_every = 250;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainMetrics {
  int step = 0;
  double loss = 0.0;  // mean batch loss since the previous record
  double temporal_acc = 0.0;
  double invariant_acc = 0.0;
};

struct TrainResult {
  Weights weights;
  std::vector<TrainMetrics> history;
  std::vector<double> step_losses;
  double temporal_acc = 0.0;
  double invariant_acc = 0.0;
};

// Model config for a fact base: vocabulary and sequence length filled in.
ModelConfig model_config_for(const FactBase& fb, const Tokenizer& tok, ModelConfig base = {});

// Cross-entropy on the answer at the final position, Adam with decoupled
// weight decay. Throws NumericError when the loss stops being finite.
TrainResult train(const ModelConfig& model_config, const FactBase& fb, const TrainConfig& cfg);

// Fraction of prompts whose final-position argmax is the answer.
double eval_accuracy(const Weights& w, std::span<const LabeledPrompt> prompts);

void write_metrics_csv(std::ostream& out, std::span<const TrainMetrics> history);

}  // namespace tempcircuit
