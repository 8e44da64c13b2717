#include "helpers.hpp"
#include "tempcircuit/crs.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace tempcircuit;
using tc_test::lively_weights;
using tc_test::small_config;

namespace {

// The scoring rule written out directly: cap at 100 when a positive baseline
// is met, otherwise sign factor times exp(-alpha * shortfall / (|B| + eps)).
double crs_oracle(double B, double P, double alpha = 1.0, double eps = 1e-9) {
  if (B > 0 && P >= B) return 100.0;
  double sf = 0.0;
  if (B >= 0) {
    sf = P >= 0 ? 1.0 : 0.6;
  } else {
    sf = P >= 0 ? 0.8 : 0.5;
  }
  return 100.0 * sf * std::exp(-alpha * std::max(B - P, 0.0) / (std::abs(B) + eps));
}

}  // namespace

TEST_CASE("worked CRS examples") {
  struct Case {
    double B, P, hand;
  };
  const Case cases[] = {{2.0, 3.0, 100.0},
                        {1.0, 0.5, 60.653065971263345},
                        {-1.0, -0.5, 50.0},
                        {-1.0, -2.0, 18.393972058572118},
                        {-1.0, 0.3, 80.0}};
  CRSParams exact;
  exact.epsilon = std::numeric_limits<double>::min();
  for (const auto& c : cases) {
    CAPTURE(c.B);
    CAPTURE(c.P);
    CHECK(std::abs(crs(c.B, c.P) - crs_oracle(c.B, c.P)) <= 1e-9);
    CHECK(std::abs(crs(c.B, c.P, exact) - c.hand) <= 1e-12 * c.hand);
  }
}

TEST_CASE("CRS is invariant to a joint positive rescaling") {
  CRSParams exact;
  exact.epsilon = std::numeric_limits<double>::min();
  const std::pair<double, double> points[] = {{2.0, 3.0}, {1.0, 0.5}, {-1.0, -0.5}, {-1.0, -2.0},
                                              {-1.0, 0.3}, {3.0, -1.0}, {0.7, 0.69}};
  for (const auto& [B, P] : points) {
    for (double c : {0.5, 2.0, 10.0}) {
      CHECK(crs(c * B, c * P, exact) == doctest::Approx(crs(B, P, exact)).epsilon(1e-12));
      CHECK(crs(c * B, c * P) == doctest::Approx(crs(B, P)).epsilon(1e-8));
    }
  }
}

TEST_CASE("CRS at the baseline and monotone in the shortfall") {
  for (double B : {0.3, 1.0, 25.0}) CHECK(crs(B, B) == 100.0);
  for (double B : {-0.3, -1.0, -25.0}) CHECK(crs(B, B) == doctest::Approx(50.0));
  double previous = 100.0;
  for (double P = 2.0; P >= -4.0; P -= 0.25) {
    const double score = crs(2.0, P);
    CHECK(score <= previous);
    CHECK(score >= 0.0);
    previous = score;
  }
  CHECK(crs(0.0, 0.0) == 100.0);
}

TEST_CASE("alpha sharpens the penalty; main-text distance ignores P") {
  CRSParams sharp;
  sharp.alpha = 3.0;
  CHECK(crs(1.0, 0.5, sharp) == doctest::Approx(crs_oracle(1.0, 0.5, 3.0)));
  CRSParams main_text;
  main_text.distance = CrsDistance::MainText;
  CHECK(crs(1.0, 0.5, main_text) == doctest::Approx(100.0 * std::exp(-1.0)));
  CHECK(crs(1.0, 0.9, main_text) == doctest::Approx(100.0 * std::exp(-1.0)));
}

TEST_CASE("CRS input and parameter errors") {
  CHECK_THROWS_AS(crs(std::nan(""), 1.0), NumericError);
  CHECK_THROWS_AS(crs(1.0, std::numeric_limits<double>::infinity()), NumericError);
  CRSParams bad;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(crs(1.0, 0.5, bad), std::invalid_argument);
  bad = {};
  bad.sf_bothneg = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("CRS parameter JSON round-trip") {
  CRSParams p;
  p.alpha = 2.5;
  p.sf_bpos_cneg = 0.7;
  p.distance = CrsDistance::MainText;
  const CRSParams back = crs_params_from_json(crs_params_to_json(p));
  CHECK(back.alpha == p.alpha);
  CHECK(back.sf_bpos_cneg == p.sf_bpos_cneg);
  CHECK(back.distance == CrsDistance::MainText);
  CHECK_THROWS_AS(crs_params_from_json({{"distance", "euclid"}}), ParseError);
  CHECK_THROWS_AS(crs_params_from_json({{"alpha", "fast"}}), ParseError);
}

TEST_CASE("full graph scores 100, empty circuit scores the corrupted run") {
  const ModelConfig cfg = small_config();
  const Weights w = lively_weights(cfg);
  std::vector<PromptPair> pairs(2);
  pairs[0].clean.tokens = {1, 4, 7, 2, 9};
  pairs[0].corrupted.tokens = {1, 5, 7, 2, 9};
  pairs[1].clean.tokens = {3, 4, 8, 2, 1};
  pairs[1].corrupted.tokens = {3, 4, 8, 6, 1};
  for (auto& p : pairs) {
    const Mat cl = forward(w, p.clean.tokens).logits;
    const Mat co = forward(w, p.corrupted.tokens).logits;
    p.clean.answer = argmax_token(cl.row(cl.rows() - 1));
    p.corrupted.answer = argmax_token(co.row(co.rows() - 1));
    if (p.corrupted.answer == p.clean.answer) p.corrupted.answer = (p.clean.answer + 1) % cfg.vocab_size;
  }
  const CircuitGraph full = full_graph(cfg);
  const CRSReport r = crs_report(w, full, pairs, Metric::LogitDiff);
  CHECK(r.P == r.B);
  CHECK(r.B > 0.0);
  CHECK(r.score == 100.0);

  const CircuitGraph empty = prune(full, std::vector<double>(full.edges.size(), 0.0), 1.0, kNoLimit);
  double corrupted_mean = 0.0;
  for (const auto& p : pairs) corrupted_mean += metric_value(forward(w, p.corrupted.tokens).logits, p, Metric::LogitDiff);
  corrupted_mean /= 2.0;
  CHECK(eval_graph(w, empty, pairs, Metric::LogitDiff) == doctest::Approx(corrupted_mean).epsilon(1e-12));
  CHECK_THROWS_AS(eval_baseline(w, std::vector<PromptPair>{}, Metric::LogitDiff), std::invalid_argument);

  const auto j = crs_report_json(r);
  CHECK(j["crs"] == 100.0);
  CHECK(j["circuit_provenance"].is_null());
}
