/* Copyright 2026 The FGFusion Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Static SVG charts: precision-recall curves from an evaluation report and
// bar charts from an ablation table. Output is a pure function of the input.

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "fgfusion/metrics.hpp"

namespace fgf {

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline constexpr std::array<const char*, 6> kPalette{"#1f77b4", "#d62728", "#2ca02c",
                                                     "#ff7f0e", "#9467bd", "#8c564b"};

struct Frame {
  double w = 480, h = 360, left = 60, right = 20, top = 40, bottom = 50;
  double px(double x) const { return left + x * (w - left - right); }
  double py(double y) const { return h - bottom - y * (h - top - bottom); }
};

inline std::string svg_open(const Frame& f, const std::string& title) {
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.w) + "\" height=\"" +
       num(f.h) + "\" viewBox=\"0 0 " + num(f.w) + " " + num(f.h) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(f.w / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">" + xml_escape(title) + "</text>\n";
  return s;
}

// Unit-interval y axis with gridlines every 0.2.
inline std::string y_axis(const Frame& f, const std::string& label) {
  std::string s;
  for (int i = 0; i <= 5; ++i) {
    double y = f.py(i / 5.0);
    s += "<line x1=\"" + num(f.left) + "\" y1=\"" + num(y) + "\" x2=\"" + num(f.w - f.right) +
         "\" y2=\"" + num(y) + "\" stroke=\"#dddddd\"/>\n";
    s += "<text x=\"" + num(f.left - 6) + "\" y=\"" + num(y + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(i / 5.0) +
         "</text>\n";
  }
  s += "<text x=\"16\" y=\"" + num((f.top + f.h - f.bottom) / 2) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 " +
       num((f.top + f.h - f.bottom) / 2) + ")\">" + xml_escape(label) + "</text>\n";
  s += "<line x1=\"" + num(f.left) + "\" y1=\"" + num(f.py(0)) + "\" x2=\"" + num(f.w - f.right) +
       "\" y2=\"" + num(f.py(0)) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(f.left) + "\" y1=\"" + num(f.py(0)) + "\" x2=\"" + num(f.left) +
       "\" y2=\"" + num(f.py(1)) + "\" stroke=\"black\"/>\n";
  return s;
}

}  // namespace detail

// One chart per class: the 40-point interpolated precision of every
// evaluable difficulty. Returns (class name, svg) pairs in report order.
inline std::vector<std::pair<std::string, std::string>> pr_curve_svgs(const EvalReport& r) {
  std::vector<int> classes;
  for (const auto& c : r.cells) {
    if (c.evaluable && std::find(classes.begin(), classes.end(), c.cls) == classes.end()) {
      classes.push_back(c.cls);
    }
  }
  std::vector<std::pair<std::string, std::string>> out;
  detail::Frame f;
  for (int cls : classes) {
    std::string s = detail::svg_open(f, std::string(class_name(cls)) + " precision-recall");
    s += detail::y_axis(f, "precision");
    for (int i = 0; i <= 5; ++i) {
      double x = f.px(i / 5.0);
      s += "<text x=\"" + detail::num(x) + "\" y=\"" + detail::num(f.py(0) + 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           detail::num(i / 5.0) + "</text>\n";
    }
    s += "<text x=\"" + detail::num((f.left + f.w - f.right) / 2) + "\" y=\"" +
         detail::num(f.h - 12) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">recall</text>\n";
    std::size_t k = 0;
    for (const auto& c : r.cells) {
      if (c.cls != cls || !c.evaluable) continue;
      const char* color = detail::kPalette[k % detail::kPalette.size()];
      std::string pts;
      for (std::size_t i = 0; i < c.precision.size(); ++i) {
        double rec = static_cast<double>(i + 1) / static_cast<double>(c.precision.size());
        pts += (i ? " " : "") + detail::num(f.px(rec)) + "," + detail::num(f.py(c.precision[i]));
      }
      s += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
      double ly = f.top + 14 + 16 * static_cast<double>(k);
      s += "<text x=\"" + detail::num(f.w - f.right - 4) + "\" y=\"" + detail::num(ly) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" + color +
           "\">" + difficulty_name(c.difficulty) + " AP " + detail::num(c.ap) + "</text>\n";
      ++k;
    }
    s += "</svg>\n";
    out.emplace_back(class_name(cls), std::move(s));
  }
  return out;
}

struct Bar {
  std::string label;
  double value = 0;  // in [0, 1]
};

// Vertical bars on a unit axis, in the given order.
inline std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                                 const std::vector<Bar>& bars) {
  detail::Frame f;
  f.w = std::max(480.0, 80.0 + 70.0 * static_cast<double>(bars.size()));
  f.bottom = 70;
  std::string s = detail::svg_open(f, title);
  s += detail::y_axis(f, y_label);
  double slot = (f.w - f.left - f.right) / static_cast<double>(std::max<std::size_t>(1, bars.size()));
  for (std::size_t i = 0; i < bars.size(); ++i) {
    double v = std::clamp(bars[i].value, 0.0, 1.0);
    double x = f.left + slot * (static_cast<double>(i) + 0.2);
    s += "<rect x=\"" + detail::num(x) + "\" y=\"" + detail::num(f.py(v)) + "\" width=\"" +
         detail::num(slot * 0.6) + "\" height=\"" + detail::num(f.py(0) - f.py(v)) + "\" fill=\"" +
         detail::kPalette[0] + "\"/>\n";
    double cx = x + slot * 0.3;
    s += "<text x=\"" + detail::num(cx) + "\" y=\"" + detail::num(f.py(v) - 4) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
         detail::num(bars[i].value) + "</text>\n";
    s += "<text x=\"" + detail::num(cx) + "\" y=\"" + detail::num(f.py(0) + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
         detail::xml_escape(bars[i].label) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace fgf
