#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace imgap {

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

/// One evaluation checkpoint of a training run.
struct CurveRow {
  std::int64_t env_steps = 0;
  double sr_teacher = kNotApplicable;
  double sr_student = kNotApplicable;
  double loss_contrastive = kNotApplicable;
  double loss_alignment = kNotApplicable;
  double loss_stability = kNotApplicable;
  double tau = kNotApplicable;
  double mean_return = kNotApplicable;
};

using CurveSeries = std::vector<CurveRow>;

inline constexpr const char* kCurveHeader =
    "env_steps,sr_teacher,sr_student,loss_contrastive,loss_alignment,loss_stability,tau,mean_return";

inline std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string to_csv_line(const CurveRow& r) {
  std::string s = std::to_string(r.env_steps);
  for (double v : {r.sr_teacher, r.sr_student, r.loss_contrastive, r.loss_alignment, r.loss_stability, r.tau,
                   r.mean_return}) {
    s += ',';
    s += format_value(v);
  }
  return s;
}

inline void write_csv(std::ostream& os, const CurveSeries& rows) {
  os << kCurveHeader << '\n';
  for (const auto& r : rows) os << to_csv_line(r) << '\n';
}

}  // namespace imgap
