#include "diffreg/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>

#include "diffreg/errors.hpp"

namespace diffreg {
namespace {

struct Stat {
  double mean = 0.0;
  double sd = 0.0;
};

Stat stat_of(const std::vector<SummaryRow>& rows, const std::string& variant,
             const std::string& metric) {
  std::vector<double> v;
  for (const auto& r : rows) {
    if (r.variant == variant && r.metric == metric && std::isfinite(r.value)) v.push_back(r.value);
  }
  Stat s;
  if (v.empty()) return Stat{std::nan(""), 0.0};
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.sd += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(s.sd / static_cast<double>(v.size()));
  return s;
}

std::vector<std::string> variants_in_order(const std::vector<SummaryRow>& rows) {
  std::vector<std::string> names;
  for (const auto& r : rows) {
    if (std::find(names.begin(), names.end(), r.variant) == names.end()) names.push_back(r.variant);
  }
  return names;
}

void require_rows(const std::vector<SummaryRow>& rows) {
  if (rows.empty()) throw DomainError("results contain no rows; nothing to plot");
}

void save_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

/// Draws one bar panel at horizontal offset `x0`.
std::string bar_panel(const std::vector<std::string>& names, const std::vector<Stat>& stats,
                      const std::string& title, double x0, const char* colour) {
  constexpr double width = 360, height = 260, top = 40, bottom = 60, left = 50;
  double hi = 0.0;
  for (const auto& s : stats) {
    if (std::isfinite(s.mean)) hi = std::max(hi, s.mean + s.sd);
  }
  if (hi <= 0.0) hi = 1.0;
  hi *= 1.1;
  const double plot_h = height - top - bottom;
  const double slot = (width - left - 10) / static_cast<double>(std::max<size_t>(names.size(), 1));
  std::string svg = fmt::format(
      "<text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n"
      "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n"
      "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{}</text>\n"
      "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">0</text>\n",
      x0 + width / 2, title, x0 + left, top, x0 + left, top + plot_h, x0 + left - 4, top + 4,
      fmt::format("{:.3g}", hi), x0 + left - 4, top + plot_h);
  for (size_t i = 0; i < names.size(); ++i) {
    const auto& s = stats[i];
    const double cx = x0 + left + slot * (static_cast<double>(i) + 0.5);
    const double value = std::isfinite(s.mean) ? s.mean : 0.0;
    const double h = plot_h * value / hi;
    svg += fmt::format(
        "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"{}\"/>\n",
        cx - slot * 0.35, top + plot_h - h, slot * 0.7, h, colour);
    const double y_lo = top + plot_h * (1.0 - std::max(0.0, value - s.sd) / hi);
    const double y_hi = top + plot_h * (1.0 - (value + s.sd) / hi);
    svg += fmt::format(
        "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n",
        cx, y_lo, y_hi);
    svg += fmt::format(
        "<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n"
        "<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"9\" text-anchor=\"middle\">{:.4g}</text>\n",
        cx, top + plot_h + 16, names[i], cx, top + plot_h - h - 4, value);
  }
  return svg;
}

torch::Tensor central_slice(const torch::Tensor& t) {
  auto v = t.detach().to(torch::kFloat64);
  while (v.dim() > 2 && v.size(0) == 1) v = v.squeeze(0);
  if (v.dim() == 3) v = v.select(0, v.size(0) / 2);
  if (v.dim() != 2) throw ShapeError("panel input must be a 2D or 3D volume");
  return v.contiguous();
}

}  // namespace

Rgb det_color(double det) {
  if (!(det > 0.0)) return kFoldingColor;
  // Map log(det) in [-1, 1] onto blue-white-red.
  const double x = std::clamp(std::log(det), -1.0, 1.0);
  const auto fade = [](double f) { return static_cast<uint8_t>(std::lround(255.0 * (1.0 - f))); };
  if (x < 0.0) return Rgb{fade(-x), fade(-x), 255};
  return Rgb{255, fade(x), fade(x)};
}

void plot_ablation_bars(const std::vector<SummaryRow>& rows, const std::filesystem::path& svg) {
  require_rows(rows);
  const auto names = variants_in_order(rows);
  std::vector<Stat> dice_stats, fold_stats;
  for (const auto& n : names) {
    dice_stats.push_back(stat_of(rows, n, "dice_mean"));
    fold_stats.push_back(stat_of(rows, n, "folding_percent"));
  }
  std::string body = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"740\" height=\"270\">\n"
                     "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  body += bar_panel(names, dice_stats, "mean DICE", 0, "#4c72b0");
  body += bar_panel(names, fold_stats, "|J|&lt;=0 (%)", 370, "#c44e52");
  body += "</svg>\n";
  save_text(svg, body);
}

void plot_gamma_sweep(const std::vector<SummaryRow>& rows, const std::filesystem::path& svg) {
  require_rows(rows);
  std::map<double, std::pair<Stat, Stat>> points;
  for (const auto& name : variants_in_order(rows)) {
    const auto fdg = stat_of(rows, name, "fdg");
    const auto gamma = stat_of(rows, name, "gamma");
    if (!std::isfinite(gamma.mean) || fdg.mean != 1.0) continue;
    points[gamma.mean] = {stat_of(rows, name, "dice_mean"), stat_of(rows, name, "folding_percent")};
  }
  if (points.empty()) throw DomainError("results contain no guided variants to sweep");

  constexpr double width = 360, height = 260, top = 40, bottom = 50, left = 50, right = 20;
  const double g_hi = std::max(points.rbegin()->first, 1e-9);
  std::string body = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"740\" height=\"270\">\n"
                     "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const auto panel = [&](double x0, const std::string& title, bool use_dice, const char* colour) {
    double hi = 0.0;
    for (const auto& [g, s] : points) {
      const auto& st = use_dice ? s.first : s.second;
      if (std::isfinite(st.mean)) hi = std::max(hi, st.mean);
    }
    hi = hi > 0.0 ? hi * 1.1 : 1.0;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    std::string out = fmt::format(
        "<text x=\"{0}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{7}</text>\n"
        "<line x1=\"{1}\" y1=\"{2}\" x2=\"{1}\" y2=\"{3}\" stroke=\"black\"/>\n"
        "<line x1=\"{1}\" y1=\"{3}\" x2=\"{4}\" y2=\"{3}\" stroke=\"black\"/>\n"
        "<text x=\"{5}\" y=\"{6}\" font-size=\"11\" text-anchor=\"middle\">gamma</text>\n",
        x0 + width / 2, x0 + left, top, top + plot_h, x0 + left + plot_w, x0 + left + plot_w / 2,
        top + plot_h + 32, title);
    std::string path;
    for (const auto& [g, s] : points) {
      const auto& st = use_dice ? s.first : s.second;
      const double x = x0 + left + plot_w * g / g_hi;
      const double y = top + plot_h * (1.0 - (std::isfinite(st.mean) ? st.mean : 0.0) / hi);
      path += fmt::format("{}{:.1f},{:.1f}", path.empty() ? "M" : " L", x, y);
      out += fmt::format(
          "<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n"
          "<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"9\" text-anchor=\"middle\">{:.4g}</text>\n"
          "<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\" text-anchor=\"middle\">{:g}</text>\n",
          x, y, colour, x, y - 6, st.mean, x, top + plot_h + 14, g);
    }
    out += fmt::format("<path d=\"{}\" stroke=\"{}\" fill=\"none\"/>\n", path, colour);
    return out;
  };
  body += panel(0, "mean DICE vs gamma", true, "#4c72b0");
  body += panel(370, "|J|&lt;=0 (%) vs gamma", false, "#c44e52");
  body += "</svg>\n";
  save_text(svg, body);
}

void write_png(const std::filesystem::path& path, int64_t width, int64_t height,
               const std::vector<uint8_t>& rgb) {
  if (static_cast<int64_t>(rgb.size()) != width * height * 3) {
    throw ShapeError("pixel buffer does not match image size");
  }
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(rgb.data() + y * width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void plot_registration_panels(const torch::Tensor& fixed, const torch::Tensor& moving,
                              const torch::Tensor& warped, const torch::Tensor& det,
                              const std::filesystem::path& png, int64_t zoom) {
  const std::array<torch::Tensor, 4> slices{central_slice(fixed), central_slice(moving),
                                            central_slice(warped), central_slice(det)};
  const int64_t h = slices[0].size(0), w = slices[0].size(1);
  for (const auto& s : slices) {
    if (s.size(0) != h || s.size(1) != w) throw ShapeError("panel inputs differ in extent");
  }
  double lo = slices[0].min().item<double>(), hi = slices[0].max().item<double>();
  for (size_t i = 1; i < 3; ++i) {
    lo = std::min(lo, slices[i].min().item<double>());
    hi = std::max(hi, slices[i].max().item<double>());
  }
  const double range = hi > lo ? hi - lo : 1.0;
  constexpr int64_t gap = 4;
  const int64_t width = 4 * w * zoom + 3 * gap, height = h * zoom;
  std::vector<uint8_t> rgb(static_cast<size_t>(width * height * 3), 255);
  for (int64_t p = 0; p < 4; ++p) {
    const auto acc = slices[p].accessor<double, 2>();
    for (int64_t y = 0; y < height; ++y) {
      for (int64_t x = 0; x < w * zoom; ++x) {
        const double v = acc[y / zoom][x / zoom];
        Rgb c;
        if (p < 3) {
          const auto g = static_cast<uint8_t>(std::lround(255.0 * std::clamp((v - lo) / range, 0.0, 1.0)));
          c = Rgb{g, g, g};
        } else {
          c = det_color(v);
        }
        auto* px = &rgb[static_cast<size_t>((y * width + p * (w * zoom + gap) + x) * 3)];
        px[0] = c.r;
        px[1] = c.g;
        px[2] = c.b;
      }
    }
  }
  write_png(png, width, height, rgb);
}

}  // namespace diffreg
