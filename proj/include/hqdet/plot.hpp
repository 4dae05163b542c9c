#pragma once

// FROC plot rendering: one curve + bootstrap band per model, legend annotated
// with each model's AP.

#include <optional>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hqdet/eval.hpp"

namespace hqdet {

struct FrocSeries {
  std::string label;
  eval::FrocCurve curve;
  std::optional<eval::BootstrapBand> band;
  std::optional<double> ap_mean;  // shown in the legend when present
};

inline void plot_froc(const std::vector<FrocSeries>& series, const std::string& path,
                      int width = 900, int height = 640) {
  const int ml = 80, mr = 30, mt = 40, mb = 70;  // margins
  const int pw = width - ml - mr, ph = height - mt - mb;
  double max_fppi = 1.0;
  for (const auto& s : series)
    for (const auto& p : s.curve.points) max_fppi = std::max(max_fppi, p.fppi);
  max_fppi = std::ceil(max_fppi * 1.05 * 2) / 2.0;

  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  auto X = [&](double fppi) { return ml + static_cast<int>(fppi / max_fppi * pw); };
  auto Y = [&](double sens) { return mt + ph - static_cast<int>(sens * ph); };

  // axes and grid
  for (int i = 0; i <= 10; ++i) {
    double s = i / 10.0;
    cv::line(img, {ml, Y(s)}, {width - mr, Y(s)}, cv::Scalar(230, 230, 230));
    char lab[16];
    std::snprintf(lab, sizeof(lab), "%.1f", s);
    cv::putText(img, lab, {ml - 45, Y(s) + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(60, 60, 60), 1, cv::LINE_AA);
  }
  for (int i = 0; i <= 8; ++i) {
    double f = max_fppi * i / 8.0;
    cv::line(img, {X(f), mt}, {X(f), height - mb}, cv::Scalar(240, 240, 240));
    char lab[16];
    std::snprintf(lab, sizeof(lab), "%.2f", f);
    cv::putText(img, lab, {X(f) - 18, height - mb + 22}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                cv::Scalar(60, 60, 60), 1, cv::LINE_AA);
  }
  cv::rectangle(img, {ml, mt}, {width - mr, height - mb}, cv::Scalar(0, 0, 0), 1);
  cv::putText(img, "false positives per image", {ml + pw / 2 - 100, height - 20},
              cv::FONT_HERSHEY_SIMPLEX, 0.55, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::putText(img, "sensitivity", {10, mt - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.55,
              cv::Scalar(0, 0, 0), 1, cv::LINE_AA);

  const cv::Scalar palette[] = {{180, 60, 30},  {30, 90, 200}, {30, 150, 60},
                                {140, 40, 160}, {20, 140, 200}, {90, 90, 90}};
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    cv::Scalar color = palette[si % 6];
    if (s.band) {
      std::vector<cv::Point> poly;
      const auto& b = *s.band;
      for (size_t k = 0; k < s.curve.points.size(); ++k)
        poly.emplace_back(X(s.curve.points[k].fppi), Y(b.upper[k]));
      for (size_t k = s.curve.points.size(); k-- > 0;)
        poly.emplace_back(X(s.curve.points[k].fppi), Y(b.lower[k]));
      cv::Mat overlay = img.clone();
      cv::fillPoly(overlay, std::vector<std::vector<cv::Point>>{poly}, color);
      cv::addWeighted(overlay, 0.18, img, 0.82, 0, img);
    }
    for (size_t k = 1; k < s.curve.points.size(); ++k) {
      const auto& a = s.curve.points[k - 1];
      const auto& b = s.curve.points[k];
      cv::line(img, {X(a.fppi), Y(a.sensitivity.value_or(0.0))},
               {X(b.fppi), Y(b.sensitivity.value_or(0.0))}, color, 2, cv::LINE_AA);
    }
    for (const auto& p : s.curve.points)
      cv::circle(img, {X(p.fppi), Y(p.sensitivity.value_or(0.0))}, 3, color, -1, cv::LINE_AA);

    std::string label = s.label;
    if (s.ap_mean) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), " (AP %.3f)", *s.ap_mean);
      label += buf;
    }
    int ly = mt + 22 + static_cast<int>(si) * 22;
    cv::line(img, {width - mr - 220, ly - 5}, {width - mr - 190, ly - 5}, color, 3);
    cv::putText(img, label, {width - mr - 182, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  }
  if (!cv::imwrite(path, img)) throw std::runtime_error("cannot write plot: " + path);
}

}  // namespace hqdet
