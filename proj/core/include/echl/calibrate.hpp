#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "echl/metrics.hpp"

namespace echl {

// Validation-fitted temperatures and decision thresholds, frozen at test
// time. In global mode every temps[k] equals t_global; per-label temperatures
// are pulled toward t_global by an L2 penalty whose weight is l2 scaled by
// 1/n_validation_rows.
struct CalibrationModel {
  enum class Mode { global, per_label };

  Mode mode = Mode::global;
  double t_global = 1.0;
  std::vector<double> temps;       // one per label, > 0
  std::vector<double> thresholds;  // one per label, in [0,1]; empty until fitted
  double beta = 1.0;
  double l2 = 1.0;
  std::size_t bins = 15;
};

const char* to_string(CalibrationModel::Mode m);
CalibrationModel::Mode calib_mode_from_string(const std::string& s);

// Mean binary cross-entropy of sigmoid(z/T) over every (row,label) pair.
double mean_nll(const EvalTable& logits, double temperature);
double mean_nll(const EvalTable& logits, std::span<const double> temps);

// Minimizes validation NLL over T = exp(t), t in [-4,4], by golden-section
// search. Per-label mode fits t_global first, then each label independently
// with the L2 pull. A label whose validation column is single-class keeps
// t_global. The result never has higher validation NLL than T = 1.
CalibrationModel fit_temperature(const EvalTable& val_logits, CalibrationModel::Mode mode,
                                 double l2);

// p = sigmoid(z / T_k); rank-preserving per label, so AUC is untouched.
EvalTable apply_temperature(const EvalTable& logits, const CalibrationModel& cal);

// Per label, scans every distinct validation probability (plus a 0.5
// sentinel) and keeps the F_beta maximizer; ties go to the lowest threshold.
// Labels without validation positives fall back to 0.5.
void fit_thresholds(CalibrationModel& cal, const EvalTable& val_probs, double beta);

// y_hat[n,k] = [p >= thresholds[k]], row-major n x k.
std::vector<std::uint8_t> decide(const EvalTable& probs, const CalibrationModel& cal);

nlohmann::json calibration_to_json(const CalibrationModel& cal);
CalibrationModel calibration_from_json(const nlohmann::json& doc);

}  // namespace echl
