#include "diffreg/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "diffreg/errors.hpp"
#include "diffreg/grid.hpp"

namespace diffreg {
namespace {

double dice_of(const torch::Tensor& a, const torch::Tensor& b) {
  const double sa = a.sum().item<double>();
  const double sb = b.sum().item<double>();
  if (sa + sb == 0.0) return 1.0;
  return 2.0 * (a & b).sum().item<double>() / (sa + sb);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

DiceReport dice(const torch::Tensor& pred_labels, const torch::Tensor& true_labels,
                std::span<const int64_t> class_ids, bool include_union) {
  if (!pred_labels.sizes().equals(true_labels.sizes())) {
    throw ShapeError("label maps differ in extent");
  }
  auto pred = torch::round(pred_labels.detach()).to(torch::kLong);
  auto truth = torch::round(true_labels.detach()).to(torch::kLong);

  DiceReport report;
  report.class_ids.assign(class_ids.begin(), class_ids.end());
  auto pred_union = torch::zeros_like(pred, torch::kBool);
  auto true_union = torch::zeros_like(truth, torch::kBool);
  double total = 0.0;
  for (int64_t c : class_ids) {
    auto a = pred == c;
    auto b = truth == c;
    pred_union |= a;
    true_union |= b;
    report.per_class.push_back(dice_of(a, b));
    total += report.per_class.back();
  }
  report.union_dice = dice_of(pred_union, true_union);
  size_t terms = report.per_class.size();
  if (include_union) {
    total += report.union_dice;
    ++terms;
  }
  report.mean = terms ? total / static_cast<double>(terms) : 1.0;
  return report;
}

DiceReport dice(const Volume& pred_labels, const Volume& true_labels,
                std::span<const int64_t> class_ids, bool include_union) {
  return dice(pred_labels.data, true_labels.data, class_ids, include_union);
}

double folding_percent(const torch::Tensor& disp) {
  auto det = grid::jacobian_determinant(disp.detach().to(torch::kFloat64));
  const auto folded = (det <= 0.0).sum().item<int64_t>();
  return 100.0 * static_cast<double>(folded) / static_cast<double>(det.numel());
}

double folding_percent(const DisplacementField& disp) { return folding_percent(disp.batched()); }

double jacobian_sd(const torch::Tensor& disp) {
  auto det = grid::jacobian_determinant(disp.detach().to(torch::kFloat64));
  return det.std(/*unbiased=*/false).item<double>();
}

double jacobian_sd(const DisplacementField& disp) { return jacobian_sd(disp.batched()); }

std::string format_number(double value) { return fmt::format("{:.9g}", value); }

void write_results_csv(const std::filesystem::path& path, std::span<const int64_t> class_ids,
                       std::span<const EvaluationRow> rows, bool append) {
  const bool header = !append || !std::filesystem::exists(path) ||
                      std::filesystem::file_size(path) == 0;
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot open results file " + path.string());
  if (header) {
    out << "run_id,pair_id";
    for (int64_t c : class_ids) out << ",dice_" << c;
    out << ",dice_mean,folding_percent,jacobian_sd\n";
  }
  for (const auto& row : rows) {
    if (row.class_dice.size() != class_ids.size()) {
      throw ShapeError("results row has the wrong number of class scores");
    }
    out << row.run_id << ',' << row.pair_id;
    for (double d : row.class_dice) out << ',' << format_number(d);
    out << ',' << format_number(row.mean_dice) << ',' << format_number(row.folding_percent)
        << ',' << format_number(row.jacobian_sd) << '\n';
  }
  if (!out) throw IoError("failed writing results file " + path.string());
}

std::vector<EvaluationRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing results file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("results file " + path.string() + " is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 5 || header[0] != "run_id" || header[1] != "pair_id") {
    throw IoError("results file " + path.string() + " has an unexpected header");
  }
  const size_t classes = header.size() - 5;
  std::vector<EvaluationRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw IoError("malformed row in " + path.string() + ": " + line);
    }
    EvaluationRow row;
    row.run_id = cells[0];
    row.pair_id = cells[1];
    try {
      for (size_t c = 0; c < classes; ++c) row.class_dice.push_back(std::stod(cells[2 + c]));
      row.mean_dice = std::stod(cells[2 + classes]);
      row.folding_percent = std::stod(cells[3 + classes]);
      row.jacobian_sd = std::stod(cells[4 + classes]);
    } catch (const std::exception&) {
      throw IoError("non-numeric value in " + path.string() + ": " + line);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace diffreg
