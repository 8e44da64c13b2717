#pragma once

#include "tempcircuit/attribution.hpp"
#include "tempcircuit/graph.hpp"

#include <nlohmann/json.hpp>

namespace tempcircuit {

// Which distance the exponential decay uses.
enum class CrsDistance : std::uint8_t {
  Shortfall,  // max(B - P, 0)
  MainText,   // max(B, 0), kept for comparison
};

struct CRSParams {
  double alpha = 1.0;
  double sf_bothpos = 1.0;
  double sf_bothneg = 0.5;
  double sf_bneg_cpos = 0.8;
  double sf_bpos_cneg = 0.6;
  double epsilon = 1e-9;
  CrsDistance distance = CrsDistance::Shortfall;

  void validate() const;
};

nlohmann::json crs_params_to_json(const CRSParams& p);
CRSParams crs_params_from_json(const nlohmann::json& j);

// Circuit Reproduction Score in (0, 100]. B is the full model's metric, P the
// circuit's. B > 0 and P >= B scores 100; otherwise
// 100 * sign_factor * exp(-alpha * d / (|B| + epsilon)). Zero counts as positive.
double crs(double B, double P, const CRSParams& params = {});

// Mean clean-run metric over the pairs.
double eval_baseline(const Weights& w, std::span<const PromptPair> pairs, Metric metric);
// Mean metric of run_with_circuit over the pairs.
double eval_graph(const Weights& w, const CircuitGraph& circuit, std::span<const PromptPair> pairs, Metric metric);

struct CRSReport {
  double B = 0.0;
  double P = 0.0;
  double score = 0.0;
  CRSParams params;
  std::optional<CircuitProvenance> provenance;
};

CRSReport crs_report(const Weights& w, const CircuitGraph& circuit, std::span<const PromptPair> pairs, Metric metric,
                     const CRSParams& params = {});
nlohmann::json crs_report_json(const CRSReport& report);

}  // namespace tempcircuit
