#pragma once
// Loss-curve rendering from a losses.jsonl log to an 8-bit RGB PNG: one
// auto-scaled panel per loss term, iteration on the horizontal axis.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nirsfs/error.hpp"
#include "nirsfs/image_io.hpp"

namespace nirsfs {

inline const std::array<std::string, 5> kLossTerms{"d_loss", "g_bce", "l_p", "l_ang", "l_curl"};

struct LossLog {
  std::vector<double> iterations;
  std::map<std::string, std::vector<std::pair<double, double>>> series;  // term -> (iteration, value)
  std::size_t records = 0;
  std::size_t corrupt_lines = 0;
};

/// Lines that are not JSON objects with a numeric "iteration" count as corrupt.
inline LossLog read_loss_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open loss log", path);
  LossLog log;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      ++log.corrupt_lines;
      continue;
    }
    if (!j.is_object() || !j.contains("iteration") || !j.at("iteration").is_number()) {
      ++log.corrupt_lines;
      continue;
    }
    const double it = j.at("iteration").get<double>();
    log.iterations.push_back(it);
    for (const auto& term : kLossTerms) {
      if (j.contains(term) && j.at(term).is_number()) log.series[term].push_back({it, j.at(term).get<double>()});
    }
    ++log.records;
  }
  return log;
}

struct PlotReport {
  std::vector<std::string> plotted;
  std::vector<std::string> missing;
  std::size_t records = 0;
  std::size_t corrupt_lines = 0;
};

namespace detail {

// 5×7 glyphs, one byte per row, bit 4 = leftmost column.
inline const std::map<char, std::array<std::uint8_t, 7>>& glyphs() {
  static const std::map<char, std::array<std::uint8_t, 7>> g{
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'.', {0, 0, 0, 0, 0, 0x0C, 0x0C}},                {'-', {0, 0, 0, 0x1F, 0, 0, 0}},
      {'+', {0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0}},       {'_', {0, 0, 0, 0, 0, 0, 0x1F}},
      {'a', {0, 0, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},       {'b', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E}},
      {'c', {0, 0, 0x0E, 0x10, 0x10, 0x11, 0x0E}},       {'d', {0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F}},
      {'e', {0, 0, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},       {'g', {0, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E}},
      {'i', {0x04, 0, 0x0C, 0x04, 0x04, 0x04, 0x0E}},    {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'n', {0, 0, 0x16, 0x19, 0x11, 0x11, 0x11}},       {'o', {0, 0, 0x0E, 0x11, 0x11, 0x11, 0x0E}},
      {'p', {0, 0, 0x1E, 0x11, 0x1E, 0x10, 0x10}},       {'r', {0, 0, 0x16, 0x19, 0x10, 0x10, 0x10}},
      {'s', {0, 0, 0x0E, 0x10, 0x0E, 0x01, 0x1E}},       {'t', {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},
      {'u', {0, 0, 0x11, 0x11, 0x11, 0x13, 0x0D}},
  };
  return g;
}

struct Canvas {
  std::size_t width, height;
  std::vector<std::uint16_t> rgb;

  Canvas(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 255) {}

  void set(long x, long y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= long(width) || y >= long(height)) return;
    for (int k = 0; k < 3; ++k) rgb[(std::size_t(y) * width + std::size_t(x)) * 3 + std::size_t(k)] = c[std::size_t(k)];
  }

  void line(long x0, long y0, long x1, long y1, std::array<std::uint8_t, 3> c) {
    const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void text(long x, long y, const std::string& s, std::array<std::uint8_t, 3> c) {
    for (char ch : s) {
      const auto it = glyphs().find(ch);
      if (it != glyphs().end())
        for (int r = 0; r < 7; ++r)
          for (int col = 0; col < 5; ++col)
            if (it->second[std::size_t(r)] & (0x10 >> col)) set(x + col, y + r, c);
      x += 6;
    }
  }
};

inline std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace detail

/// Writes the PNG and reports which terms were drawn. Throws EmptyInput when
/// the log holds no usable record.
inline PlotReport plot_losses(const std::string& log_path, const std::string& png_path) {
  const LossLog log = read_loss_log(log_path);
  if (log.records == 0) throw EmptyInput("loss log has no usable records: " + log_path);

  PlotReport rep;
  rep.records = log.records;
  rep.corrupt_lines = log.corrupt_lines;
  for (const auto& t : kLossTerms) (log.series.count(t) ? rep.plotted : rep.missing).push_back(t);
  if (rep.plotted.empty()) throw EmptyInput("loss log carries none of the known loss terms: " + log_path);

  constexpr std::size_t kWidth = 800, kPanel = 120, kLeft = 64, kRight = 16, kTop = 8, kGap = 10;
  const std::size_t height = kTop + rep.plotted.size() * (kPanel + kGap) + 14;
  detail::Canvas cv(kWidth, height);
  const std::array<std::array<std::uint8_t, 3>, 5> colors{
      {{200, 40, 40}, {40, 120, 200}, {30, 150, 60}, {150, 60, 170}, {210, 130, 20}}};
  const std::array<std::uint8_t, 3> axis{110, 110, 110}, ink{20, 20, 20};

  const auto [it_lo, it_hi] = std::minmax_element(log.iterations.begin(), log.iterations.end());
  const double x0 = *it_lo, x1 = std::max(*it_hi, *it_lo + 1.0);
  const long plot_w = long(kWidth - kLeft - kRight);

  for (std::size_t k = 0; k < rep.plotted.size(); ++k) {
    const std::string& term = rep.plotted[k];
    const auto& pts = log.series.at(term);
    const std::size_t ci = std::size_t(std::find(kLossTerms.begin(), kLossTerms.end(), term) - kLossTerms.begin());
    const long top = long(kTop + k * (kPanel + kGap)), bottom = top + long(kPanel) - 1;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& [_, v] : pts)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    if (!std::isfinite(lo)) lo = hi = 0.0;
    if (hi - lo < 1e-12) {
      hi += 0.5;
      lo -= 0.5;
    }
    cv.line(long(kLeft), top, long(kLeft), bottom, axis);
    cv.line(long(kLeft), bottom, long(kWidth - kRight), bottom, axis);
    cv.text(4, top, detail::short_number(hi), ink);
    cv.text(4, bottom - 6, detail::short_number(lo), ink);
    cv.text(long(kLeft) + 8, top + 2, term, colors[ci]);
    bool have_prev = false;
    long px = 0, py = 0;
    for (const auto& [it, v] : pts) {
      if (!std::isfinite(v)) {
        have_prev = false;
        continue;
      }
      const long x = long(kLeft) + long(std::lround((it - x0) / (x1 - x0) * double(plot_w)));
      const long y = bottom - long(std::lround((v - lo) / (hi - lo) * double(kPanel - 4)));
      if (have_prev) cv.line(px, py, x, y, colors[ci]);
      else cv.set(x, y, colors[ci]);
      px = x;
      py = y;
      have_prev = true;
    }
  }
  const long base = long(height) - 10;
  cv.text(long(kLeft), base, detail::short_number(x0), ink);
  cv.text(long(kWidth / 2) - 27, base, "iteration", ink);
  const std::string right = detail::short_number(x1);
  cv.text(long(kWidth - kRight) - long(6 * right.size()), base, right, ink);
  io::write_png(png_path, cv.width, cv.height, 3, 8, cv.rgb);
  return rep;
}

}  // namespace nirsfs
