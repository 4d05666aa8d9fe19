#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "rcms/engine.hpp"

namespace rcms {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string label(double v) { return fmt::format("{:.4g}", v); }

}  // namespace

std::vector<std::filesystem::path> plot_summary(const std::vector<SummaryRow>& rows, const std::filesystem::path& dir) {
  std::map<std::string, std::map<std::string, std::vector<const SummaryRow*>>> by_metric;
  std::string axis;
  for (const auto& r : rows) {
    if (r.metric == "failed" || !std::isfinite(r.mean)) continue;
    by_metric[r.metric][r.scheme].push_back(&r);
    axis = r.axis;
  }
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (auto& [metric, schemes] : by_metric) {
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (auto& [scheme, points] : schemes) {
      std::sort(points.begin(), points.end(), [](auto* a, auto* b) { return a->value < b->value; });
      for (const auto* p : points) {
        x0 = std::min(x0, p->value);
        x1 = std::max(x1, p->value);
        y0 = std::min({y0, p->ci_low, p->mean});
        y1 = std::max({y1, p->ci_high, p->mean});
      }
    }
    if (x1 == x0) {
      x0 -= 1.0;
      x1 += 1.0;
    }
    if (y1 == y0) {
      y0 -= 1.0;
      y1 += 1.0;
    }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    const double pw = kWidth - kLeft - kRight;
    const double ph = kHeight - kTop - kBottom;
    auto sx = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        kWidth, kHeight);
    svg += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
                       kLeft + pw / 2, escape(metric));
    svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n", kLeft,
                       kTop, pw, ph);
    for (int i = 0; i <= 4; ++i) {
      const double xv = x0 + (x1 - x0) * i / 4.0;
      const double yv = y0 + (y1 - y0) * i / 4.0;
      svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", sx(xv), kTop + ph + 18,
                         label(xv));
      svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", kLeft - 6, sy(yv) + 4, label(yv));
      svg += fmt::format("<line x1=\"{0}\" x2=\"{1}\" y1=\"{2}\" y2=\"{2}\" stroke=\"#ddd\"/>\n", kLeft, kLeft + pw,
                         sy(yv));
    }
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", kLeft + pw / 2, kHeight - 10,
                       escape(axis));

    std::size_t color = 0;
    for (const auto& [scheme, points] : schemes) {
      const char* stroke = kColors[color++ % std::size(kColors)];
      std::string band;
      for (const auto* p : points) band += fmt::format("{},{} ", sx(p->value), sy(p->ci_high));
      for (auto it = points.rbegin(); it != points.rend(); ++it)
        band += fmt::format("{},{} ", sx((*it)->value), sy((*it)->ci_low));
      svg += fmt::format("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n", band, stroke);
      std::string line;
      for (const auto* p : points) line += fmt::format("{},{} ", sx(p->value), sy(p->mean));
      svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", line, stroke);
      for (const auto* p : points)
        svg += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n", sx(p->value), sy(p->mean), stroke);
      const double ly = kTop + 14.0 * static_cast<double>(color);
      svg += fmt::format("<line x1=\"{0}\" x2=\"{1}\" y1=\"{2}\" y2=\"{2}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                         kLeft + pw + 10, kLeft + pw + 30, ly, stroke);
      svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", kLeft + pw + 35, ly + 4, escape(scheme));
    }
    svg += "</svg>\n";

    const auto file = dir / (metric + ".svg");
    std::ofstream out(file);
    if (!out) throw Error(Errc::InvalidArgument, fmt::format("cannot write '{}'", file.string()));
    out << svg;
    written.push_back(file);
  }
  return written;
}

}  // namespace rcms
