#include "tempcircuit/render.hpp"

#include "tempcircuit/format.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace tempcircuit {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool is_label_column(const std::string& name) { return name == "position" || name == "token" || name == "layer"; }

double parse_number(const std::string& text, int line) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("csv line " + std::to_string(line) + ": not a number: '" + text + "'");
  }
  return v;
}

std::string xml_escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

}  // namespace

LabeledMatrix read_matrix_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("csv: empty input");
  const auto header = split_csv_line(line);
  std::size_t n_labels = 0;
  while (n_labels < header.size() && is_label_column(header[n_labels])) ++n_labels;
  if (n_labels == header.size()) throw ParseError("csv: no numeric columns");

  LabeledMatrix m;
  m.label_columns.assign(header.begin(), header.begin() + static_cast<std::ptrdiff_t>(n_labels));
  m.col_labels.assign(header.begin() + static_cast<std::ptrdiff_t>(n_labels), header.end());
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " cells, got " + std::to_string(cells.size()));
    }
    std::string label;
    for (std::size_t i = 0; i < n_labels; ++i) label += (i ? " " : "") + cells[i];
    m.row_labels.push_back(label);
    std::vector<double> row;
    for (std::size_t i = n_labels; i < cells.size(); ++i) row.push_back(parse_number(cells[i], line_no));
    rows.push_back(std::move(row));
  }
  m.values = Mat::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.col_labels.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

void write_attention_csv(std::ostream& out, const Mat& attn, std::span<const std::string> words) {
  if (attn.rows() != attn.cols() || static_cast<Eigen::Index>(words.size()) != attn.rows()) {
    throw std::invalid_argument("write_attention_csv: need a square map and one word per position");
  }
  out << "position,token";
  for (Eigen::Index k = 0; k < attn.cols(); ++k) out << ',' << k;
  out << '\n';
  for (Eigen::Index q = 0; q < attn.rows(); ++q) {
    out << q << ',' << words[q];
    for (Eigen::Index k = 0; k < attn.cols(); ++k) out << ',' << fmt_num(attn(q, k));
    out << '\n';
  }
}

std::string heatmap_svg(const LabeledMatrix& m, const SvgOptions& opts) {
  constexpr int kCell = 28;
  constexpr int kLeft = 150;
  constexpr int kTop = 50;
  const auto rows = static_cast<int>(m.values.rows());
  const auto cols = static_cast<int>(m.values.cols());
  const double lo = opts.vmin.value_or(m.values.size() ? m.values.minCoeff() : 0.0);
  const double hi = opts.vmax.value_or(m.values.size() ? m.values.maxCoeff() : 1.0);
  const double span = hi > lo ? hi - lo : 1.0;
  const int width = kLeft + cols * kCell + 20;
  const int height = kTop + rows * kCell + 50;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"Helvetica, Arial, sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opts.title.empty()) {
    svg << "<text x=\"" << kLeft << "\" y=\"20\" font-size=\"14\">" << xml_escape(opts.title) << "</text>\n";
  }
  for (int c = 0; c < cols; ++c) {
    const std::string& label = c < static_cast<int>(m.col_labels.size()) ? m.col_labels[c] : std::to_string(c);
    svg << "<text x=\"" << kLeft + c * kCell + kCell / 2 << "\" y=\"" << kTop - 6 << "\" text-anchor=\"middle\">"
        << xml_escape(label) << "</text>\n";
  }
  for (int r = 0; r < rows; ++r) {
    const std::string& label = r < static_cast<int>(m.row_labels.size()) ? m.row_labels[r] : std::to_string(r);
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + r * kCell + kCell / 2 + 4 << "\" text-anchor=\"end\">"
        << xml_escape(label) << "</text>\n";
    for (int c = 0; c < cols; ++c) {
      const double v = m.values(r, c);
      const double t = std::clamp((v - lo) / span, 0.0, 1.0);
      // White (255,255,255) to dark blue (8,48,107).
      const int red = static_cast<int>(std::lround(255 - t * (255 - 8)));
      const int green = static_cast<int>(std::lround(255 - t * (255 - 48)));
      const int blue = static_cast<int>(std::lround(255 - t * (255 - 107)));
      svg << "<rect x=\"" << kLeft + c * kCell << "\" y=\"" << kTop + r * kCell << "\" width=\"" << kCell
          << "\" height=\"" << kCell << "\" fill=\"rgb(" << red << ',' << green << ',' << blue
          << ")\" stroke=\"#dddddd\"><title>" << fmt_num(v) << "</title></rect>\n";
    }
  }
  if (!opts.x_label.empty()) {
    svg << "<text x=\"" << kLeft + cols * kCell / 2 << "\" y=\"" << kTop + rows * kCell + 25
        << "\" text-anchor=\"middle\">" << xml_escape(opts.x_label) << "</text>\n";
  }
  if (!opts.y_label.empty()) {
    svg << "<text x=\"12\" y=\"" << kTop + rows * kCell / 2 << "\" transform=\"rotate(-90 12 " << kTop + rows * kCell / 2
        << ")\" text-anchor=\"middle\">" << xml_escape(opts.y_label) << "</text>\n";
  }
  svg << "<text x=\"" << kLeft << "\" y=\"" << height - 8 << "\" fill=\"#555555\">range " << fmt_num(lo) << " to "
      << fmt_num(hi) << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace tempcircuit
