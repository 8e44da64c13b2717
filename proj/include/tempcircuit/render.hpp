#pragma once

#include "tempcircuit/types.hpp"

#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace tempcircuit {

// A numeric table with row and column labels, as stored in the heatmap,
// attention-map and success-count CSVs.
struct LabeledMatrix {
  std::vector<std::string> label_columns;  // e.g. {"position", "token"}
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  Mat values;
};

// Leading columns named "position", "token" or "layer" become the row label
// (joined by a space); the rest must be numeric. Throws ParseError.
LabeledMatrix read_matrix_csv(std::istream& in);

// Header "position,token,<key positions>", one row per query.
void write_attention_csv(std::ostream& out, const Mat& attn, std::span<const std::string> words);

struct SvgOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::optional<double> vmin;  // defaults to the data range
  std::optional<double> vmax;
};

// Standalone SVG: one shaded rectangle per cell, white to dark blue.
std::string heatmap_svg(const LabeledMatrix& m, const SvgOptions& opts = {});

}  // namespace tempcircuit
