#include "tempcircuit/crs.hpp"

#include "tempcircuit/parallel.hpp"

#include <cmath>

namespace tempcircuit {

void CRSParams::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("crs: alpha must be > 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("crs: epsilon must be > 0");
  for (double sf : {sf_bothpos, sf_bothneg, sf_bneg_cpos, sf_bpos_cneg}) {
    if (!(sf > 0.0 && sf <= 1.0)) throw std::invalid_argument("crs: sign factors must lie in (0, 1]");
  }
}

nlohmann::json crs_params_to_json(const CRSParams& p) {
  return {{"alpha", p.alpha},
          {"sf_bothpos", p.sf_bothpos},
          {"sf_bothneg", p.sf_bothneg},
          {"sf_bneg_cpos", p.sf_bneg_cpos},
          {"sf_bpos_cneg", p.sf_bpos_cneg},
          {"epsilon", p.epsilon},
          {"distance", p.distance == CrsDistance::Shortfall ? "shortfall" : "main_text"}};
}

CRSParams crs_params_from_json(const nlohmann::json& j) {
  try {
    CRSParams p;
    p.alpha = j.value("alpha", p.alpha);
    p.sf_bothpos = j.value("sf_bothpos", p.sf_bothpos);
    p.sf_bothneg = j.value("sf_bothneg", p.sf_bothneg);
    p.sf_bneg_cpos = j.value("sf_bneg_cpos", p.sf_bneg_cpos);
    p.sf_bpos_cneg = j.value("sf_bpos_cneg", p.sf_bpos_cneg);
    p.epsilon = j.value("epsilon", p.epsilon);
    const auto distance = j.value("distance", std::string("shortfall"));
    if (distance != "shortfall" && distance != "main_text") throw ParseError("crs: unknown distance " + distance);
    p.distance = distance == "shortfall" ? CrsDistance::Shortfall : CrsDistance::MainText;
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("crs params: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what());
  }
}

double crs(double B, double P, const CRSParams& params) {
  params.validate();
  if (!std::isfinite(B) || !std::isfinite(P)) throw NumericError("crs: non-finite input");
  if (B > 0.0 && P >= B) return 100.0;
  const bool b_pos = B >= 0.0;
  const bool p_pos = P >= 0.0;
  const double sf = b_pos ? (p_pos ? params.sf_bothpos : params.sf_bpos_cneg)
                          : (p_pos ? params.sf_bneg_cpos : params.sf_bothneg);
  const double d = params.distance == CrsDistance::Shortfall ? std::max(B - P, 0.0) : std::max(B, 0.0);
  return 100.0 * sf * std::exp(-params.alpha * d / (std::abs(B) + params.epsilon));
}

namespace {

double mean_of(std::size_t n, const std::function<double(std::size_t)>& fn) {
  std::vector<double> values(n);
  parallel_for(n, [&](std::size_t i) { values[i] = fn(i); });
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(n);
}

}  // namespace

double eval_baseline(const Weights& w, std::span<const PromptPair> pairs, Metric metric) {
  if (pairs.empty()) throw std::invalid_argument("eval_baseline: empty dataset");
  return mean_of(pairs.size(), [&](std::size_t i) {
    return metric_value(forward(w, pairs[i].clean.tokens).logits, pairs[i], metric);
  });
}

double eval_graph(const Weights& w, const CircuitGraph& circuit, std::span<const PromptPair> pairs, Metric metric) {
  if (pairs.empty()) throw std::invalid_argument("eval_graph: empty dataset");
  return mean_of(pairs.size(), [&](std::size_t i) {
    return metric_value(run_with_circuit(w, circuit, pairs[i]), pairs[i], metric);
  });
}

CRSReport crs_report(const Weights& w, const CircuitGraph& circuit, std::span<const PromptPair> pairs, Metric metric,
                     const CRSParams& params) {
  CRSReport r;
  r.B = eval_baseline(w, pairs, metric);
  r.P = eval_graph(w, circuit, pairs, metric);
  r.score = crs(r.B, r.P, params);
  r.params = params;
  r.provenance = circuit.provenance;
  return r;
}

nlohmann::json crs_report_json(const CRSReport& report) {
  nlohmann::json j{{"B", report.B}, {"P", report.P}, {"crs", report.score}, {"params", crs_params_to_json(report.params)}};
  if (report.provenance) {
    const auto& p = *report.provenance;
    j["circuit_provenance"] = {{"fact", p.fact}, {"year", p.year}, {"template", p.template_id}, {"tau", p.tau},
                               {"top_n", p.top_n}, {"metric", p.metric}, {"ig_steps", p.ig_steps}, {"n_pairs", p.n_pairs}};
  } else {
    j["circuit_provenance"] = nullptr;
  }
  return j;
}

}  // namespace tempcircuit
